mod common;

use std::time::Duration;

use feedloop_core::finetune::{make_cv_folds, HyperParams, SweepGrid};
use feedloop_core::FinetuneExample;
use feedloop_gateway::{JobHandle, MockConfig};
use feedloop_pipeline::finetune::launch_final_finetune;
use feedloop_pipeline::sweep::{example_ids, JobState, SweepState};
use feedloop_pipeline::{run_sweep, PipelineError, SweepConfig};

use common::Counting;

fn examples(n: usize) -> Vec<FinetuneExample> {
    (0..n)
        .map(|i| FinetuneExample::new(format!("prompt {i}\n\nTL;DR:"), &format!("Summary {i}.")))
        .collect()
}

fn quick() -> SweepConfig {
    SweepConfig {
        poll_interval: Duration::from_millis(1),
        ..SweepConfig::default()
    }
}

#[tokio::test]
async fn failed_points_are_excluded_and_reported() {
    let bad = HyperParams::new(0.05, 0.01);
    let backend = Counting::new(MockConfig {
        failing_points: vec![bad],
        ..MockConfig::default()
    });
    let data = examples(10);
    let folds = make_cv_folds(&example_ids(10), 5, 0).unwrap();
    let out = run_sweep(&backend.gateway(), &data, &SweepGrid::default(), &folds, &quick())
        .await
        .unwrap();
    assert_eq!(out.excluded.len(), 1);
    assert_eq!(out.excluded[0].0, bad);
    assert_ne!(out.result.best, bad);
    assert_eq!(out.result.table.len(), 30);
}

#[tokio::test]
async fn single_point_grid_selects_that_point() {
    let backend = Counting::new(MockConfig::default());
    let grid = SweepGrid {
        learning_rate_multipliers: vec![0.2],
        prompt_loss_weights: vec![0.1],
        ..SweepGrid::default()
    };
    let folds = make_cv_folds(&example_ids(10), 5, 0).unwrap();
    let out = run_sweep(&backend.gateway(), &examples(10), &grid, &folds, &quick()).await.unwrap();
    assert_eq!(out.result.best, HyperParams::new(0.2, 0.1));
    assert_eq!(Counting::get(&backend.submits), 5);
}

#[tokio::test]
async fn resumes_from_checkpoint_without_resubmitting_finished_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.json");
    let cfg = SweepConfig {
        checkpoint: Some(path.clone()),
        ..quick()
    };
    let data = examples(20);
    let folds = make_cv_folds(&example_ids(20), 5, 1).unwrap();
    let grid = SweepGrid::default();
    let first = Counting::new(MockConfig::default());
    let full = run_sweep(&first.gateway(), &data, &grid, &folds, &cfg).await.unwrap();
    assert_eq!(full.submitted_now, 150);

    // Simulate an interruption: two jobs never started, one was in flight
    // with a live handle, one with a handle the provider forgot.
    let mut state = SweepState::load(&path).unwrap().unwrap();
    state.jobs[0].state = JobState::Pending;
    state.jobs[1].state = JobState::Pending;
    let live = match &state.jobs[2].state {
        JobState::Succeeded { handle, .. } => handle.clone(),
        other => panic!("{other:?}"),
    };
    state.jobs[2].state = JobState::Submitted { handle: live };
    state.jobs[3].state = JobState::Submitted {
        handle: JobHandle("forgotten".into()),
    };
    state.save(&path).unwrap();

    let second = Counting::new(MockConfig::default());
    let resumed = run_sweep(&second.gateway(), &data, &grid, &folds, &cfg).await.unwrap();
    assert_eq!(resumed.submitted_now, 3);
    assert_eq!(Counting::get(&second.submits), 3);
    assert_eq!(resumed.result, full.result);
}

#[tokio::test]
async fn checkpoint_from_another_sweep_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.json");
    let cfg = SweepConfig {
        checkpoint: Some(path.clone()),
        ..quick()
    };
    let folds = make_cv_folds(&example_ids(10), 5, 0).unwrap();
    let backend = Counting::new(MockConfig::default());
    run_sweep(&backend.gateway(), &examples(10), &SweepGrid::default(), &folds, &cfg)
        .await
        .unwrap();
    let mut other = examples(10);
    other[0] = FinetuneExample::new("changed", "x.");
    let err = run_sweep(&backend.gateway(), &other, &SweepGrid::default(), &folds, &cfg)
        .await
        .unwrap_err();
    assert!(matches!(err, PipelineError::Checkpoint { .. }));
}

#[tokio::test]
async fn interrupted_sweep_leaves_a_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.json");
    let cfg = SweepConfig {
        checkpoint: Some(path.clone()),
        parallelism: 1,
        ..quick()
    };
    let data = examples(10);
    let folds = make_cv_folds(&example_ids(10), 5, 0).unwrap();
    let grid = SweepGrid::default();
    let backend = Counting::new(MockConfig::default());
    let gw = backend.gateway().with_concurrency(1);
    let _ = tokio::time::timeout(Duration::from_millis(30), run_sweep(&gw, &data, &grid, &folds, &cfg)).await;
    let state = SweepState::load(&path).unwrap().unwrap();
    assert_eq!(state.jobs.len(), 150);

    let resumed = run_sweep(&backend.gateway(), &data, &grid, &folds, &cfg).await.unwrap();
    let fresh = run_sweep(&backend.gateway(), &data, &grid, &folds, &quick()).await.unwrap();
    assert_eq!(resumed.result, fresh.result);
}

#[tokio::test]
async fn final_job_uses_full_dataset_and_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let record = dir.path().join("final.json");
    let backend = Counting::new(MockConfig::default());
    let job = launch_final_finetune(&backend.gateway(), &examples(100), HyperParams::new(0.05, 0.01), Some(&record))
        .await
        .unwrap();
    assert_eq!((job.batch_size, job.epochs, job.n_examples), (256, 4, 100));
    let saved: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&record).unwrap()).unwrap();
    assert_eq!(saved["handle"], job.handle.0);
    assert!(launch_final_finetune(&backend.gateway(), &[], HyperParams::new(0.05, 0.01), None)
        .await
        .is_err());
}

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::Path;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use futures::future::join_all;

use feedloop_core::analytics::{
    incorporation_stats, win_rate, win_rate_by_initial_rank, IncorporationJudgment, RankingRecord,
    INITIAL_SUMMARY_TAG,
};
use feedloop_core::finetune::{export_dataset, make_cv_folds, HyperParams, SweepGrid, SweepResult};
use feedloop_core::prompts::TemplateSet;
use feedloop_core::report::{emit_report, ReportFormat};
use feedloop_core::stats::Proportion;
use feedloop_core::store::{read_records, RecordKind, RecordLog};
use feedloop_core::word_removal::{
    evaluate_exact_match, format_accuracy_table, generate_benchmark, Lexicon, WordRemovalInstance,
};
use feedloop_core::{FeedbackRecord, GeneratedOutput, RefinementBatch, Strategy, TaskInput};
use feedloop_gateway::{Gateway, GatewayConfig, JobStatus};
use feedloop_pipeline::bench::{run_benchmark, Prediction};
use feedloop_pipeline::finetune::{launch_final_finetune, read_dataset, write_dataset};
use feedloop_pipeline::sweep::example_ids;
use feedloop_pipeline::{refine_corpus, run_sweep, Refiner, SweepConfig};

use crate::{BenchCommand, Cli, Command, DataDir, OutputFormat};

pub async fn run(cli: Cli) -> Result<()> {
    let config = cli.config.clone();
    let gateway = |texts: &[&str]| build_gateway(config.as_deref(), texts);
    match cli.command {
        Command::Summarize { data, seed } => summarize(&data, seed, gateway).await,
        Command::Refine {
            data,
            strategy,
            candidates,
            seed,
        } => refine(&data, &strategy, candidates, seed, gateway).await,
        Command::Bench(cmd) => bench(cmd, gateway).await,
        Command::Analyze {
            rankings,
            judgments,
            pairs,
            by_initial_rank,
            methods,
            format,
            out,
        } => analyze(
            rankings.as_deref(),
            judgments.as_deref(),
            &pairs,
            by_initial_rank.as_deref(),
            &methods,
            format,
            out.as_deref(),
        ),
        Command::Export { data, strategy, out } => export(&data, &strategy, &out),
        Command::Sweep {
            dataset,
            folds,
            seed,
            state,
            parallelism,
            poll_secs,
            learning_rates,
            prompt_loss_weights,
            out,
        } => {
            let mut grid = SweepGrid::default();
            if let Some(lr) = learning_rates {
                grid.learning_rate_multipliers = lr;
            }
            if let Some(plw) = prompt_loss_weights {
                grid.prompt_loss_weights = plw;
            }
            let cfg = SweepConfig {
                parallelism,
                poll_interval: Duration::from_secs(poll_secs),
                checkpoint: state,
            };
            sweep(&dataset, folds, seed, &grid, &cfg, out.as_deref(), gateway(&[])?).await
        }
        Command::Finetune {
            dataset,
            sweep,
            learning_rate_multiplier,
            prompt_loss_weight,
            record,
            wait,
            poll_secs,
        } => {
            let params = match (sweep, learning_rate_multiplier, prompt_loss_weight) {
                (_, Some(lr), Some(plw)) => HyperParams::new(lr, plw),
                (Some(path), _, _) => read_json::<SweepResult>(&path)?.best,
                _ => bail!("give either --sweep or both --learning-rate-multiplier and --prompt-loss-weight"),
            };
            finetune(&dataset, params, record.as_deref(), wait, poll_secs, gateway(&[])?).await
        }
        Command::Serve {
            data_dir,
            port,
            host,
            static_dir,
        } => {
            let config = feedloop_service::ServiceConfig {
                data_dir,
                static_dir,
                addr: SocketAddr::new(host, port),
            };
            feedloop_service::serve(config).await.context("annotation service")
        }
    }
}

fn build_gateway(config: Option<&Path>, vocabulary: &[&str]) -> Result<Gateway> {
    let mut cfg = match config {
        Some(path) => GatewayConfig::load(path)?,
        None => GatewayConfig::default(),
    };
    cfg.apply_env()?;
    Ok(cfg.build(vocabulary.iter().copied())?)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn templates(dir: Option<&Path>) -> Result<TemplateSet> {
    Ok(match dir {
        Some(d) => TemplateSet::load_dir(d)?,
        None => TemplateSet::default(),
    })
}

struct Corpus {
    tasks: Vec<TaskInput>,
    outputs: Vec<GeneratedOutput>,
    feedback: Vec<FeedbackRecord>,
}

impl Corpus {
    fn load(dir: &Path) -> Result<Self> {
        let tasks: Vec<TaskInput> = read_records(&RecordKind::Tasks.path_in(dir))?;
        if tasks.is_empty() {
            bail!("no tasks in {}", RecordKind::Tasks.path_in(dir).display());
        }
        Ok(Corpus {
            tasks,
            outputs: read_records(&RecordKind::Outputs.path_in(dir))?,
            feedback: read_records(&RecordKind::Feedback.path_in(dir))?,
        })
    }

    /// Texts the mock's bag-of-words vocabulary is built from.
    fn texts(&self) -> Vec<&str> {
        let mut v: Vec<&str> = Vec::new();
        for t in &self.tasks {
            v.push(&t.title);
            v.push(&t.body);
        }
        v.extend(self.outputs.iter().map(|o| o.text.as_str()));
        v.extend(self.feedback.iter().map(|f| f.text.as_str()));
        v
    }
}

async fn summarize(data: &DataDir, seed: u64, gateway: impl Fn(&[&str]) -> Result<Gateway>) -> Result<()> {
    let corpus = Corpus::load(&data.data_dir)?;
    let refiner = Refiner::new(gateway(&corpus.texts())?).with_templates(templates(data.templates.as_deref())?);
    let done: std::collections::HashSet<&str> = corpus
        .outputs
        .iter()
        .filter(|o| o.method_tag.as_deref() == Some(INITIAL_SUMMARY_TAG))
        .map(|o| o.task_id.as_str())
        .collect();
    let pending: Vec<&TaskInput> = corpus.tasks.iter().filter(|t| !done.contains(t.task_id.as_str())).collect();
    let results = join_all(pending.iter().map(|t| refiner.generate_initial(t, seed))).await;
    let mut log = RecordLog::<GeneratedOutput>::open(RecordKind::Outputs.path_in(&data.data_dir))?;
    let mut written = 0;
    for (task, outcome) in pending.iter().zip(results) {
        match outcome {
            Ok(out) => {
                log.append(&out)?;
                written += 1;
            }
            Err(e) => eprintln!("skipped {}: {e}", task.task_id),
        }
    }
    println!("{written} initial summaries written, {} already present", done.len());
    Ok(())
}

async fn refine(
    data: &DataDir,
    strategy: &str,
    candidates: usize,
    seed: u64,
    gateway: impl Fn(&[&str]) -> Result<Gateway>,
) -> Result<()> {
    let strategy: Strategy = strategy.parse()?;
    let corpus = Corpus::load(&data.data_dir)?;
    let refiner = Refiner::new(gateway(&corpus.texts())?)
        .with_templates(templates(data.templates.as_deref())?)
        .with_candidates(candidates);
    let result = refine_corpus(&refiner, &corpus.tasks, &corpus.outputs, &corpus.feedback, strategy, seed).await;
    let mut log = RecordLog::<RefinementBatch>::open(RecordKind::Batches.path_in(&data.data_dir))?;
    for b in &result.batches {
        log.append(b)?;
    }
    for (task, reason) in &result.skipped {
        eprintln!("skipped {task}: {reason}");
    }
    println!("{} {strategy} batches written, {} tasks skipped", result.batches.len(), result.skipped.len());
    Ok(())
}

async fn bench(cmd: BenchCommand, gateway: impl Fn(&[&str]) -> Result<Gateway>) -> Result<()> {
    match cmd {
        BenchCommand::Generate {
            lexicon,
            per_k,
            seed,
            out,
        } => {
            let lexicon = match lexicon {
                Some(p) => Lexicon::load(&p)?,
                None => Lexicon::placeholder(),
            };
            let instances = generate_benchmark(&lexicon, per_k, seed)?;
            feedloop_core::store::write_records(&out, &instances)?;
            println!("{} instances written to {}", instances.len(), out.display());
        }
        BenchCommand::Run {
            instances,
            out,
            templates: dir,
        } => {
            let instances: Vec<WordRemovalInstance> = read_records(&instances)?;
            let run = run_benchmark(&gateway(&[])?, &templates(dir.as_deref())?, &instances).await?;
            feedloop_core::store::write_records(&out, &run.predictions)?;
            for (id, reason) in &run.failures {
                eprintln!("no prediction for {id}: {reason}");
            }
            println!(
                "{} predictions written to {}, {} failures",
                run.predictions.len(),
                out.display(),
                run.failures.len()
            );
        }
        BenchCommand::Score { instances, runs, json } => {
            let instances: Vec<WordRemovalInstance> = read_records(&instances)?;
            let mut rows = Vec::new();
            for spec in &runs {
                let (tag, path) = spec
                    .split_once('=')
                    .ok_or_else(|| anyhow!("--run takes TAG=PATH, got `{spec}`"))?;
                let preds: Vec<Prediction> = read_records(Path::new(path))?;
                let map: BTreeMap<String, String> =
                    preds.into_iter().map(|p| (p.instance_id, p.completion)).collect();
                rows.push((tag.to_string(), evaluate_exact_match(&map, &instances)?));
            }
            if json {
                let obj: BTreeMap<&str, _> = rows.iter().map(|(t, r)| (t.as_str(), r)).collect();
                println!("{}", serde_json::to_string_pretty(&obj)?);
            } else {
                print!("{}", format_accuracy_table(&rows));
            }
        }
    }
    Ok(())
}

fn parse_pair(s: &str) -> Result<(String, String)> {
    match s.split_once(':') {
        Some((a, b)) if !a.is_empty() && !b.is_empty() && a != b => Ok((a.to_string(), b.to_string())),
        _ => bail!("--pair takes two distinct methods as A:B, got `{s}`"),
    }
}

#[allow(clippy::too_many_arguments)]
fn analyze(
    rankings: Option<&Path>,
    judgments: Option<&Path>,
    pairs: &[String],
    by_initial_rank: Option<&str>,
    methods: &[String],
    format: OutputFormat,
    out: Option<&Path>,
) -> Result<()> {
    if rankings.is_none() && judgments.is_none() {
        bail!("nothing to analyze: give --rankings and/or --judgments");
    }
    let mut reports = Vec::new();
    let mut buckets = Vec::new();
    if let Some(path) = rankings {
        let records: Vec<RankingRecord> = read_records(path)?;
        for r in &records {
            if let Some(v) = r.violations().first() {
                bail!("ranking for `{}` by `{}` violates {v}", r.item_id, r.evaluator_id);
            }
        }
        for p in pairs {
            let (a, b) = parse_pair(p)?;
            reports.push(win_rate(&records, &a, &b)?);
        }
        if let Some(method) = by_initial_rank {
            buckets = win_rate_by_initial_rank(&records, method, INITIAL_SUMMARY_TAG)?;
        }
    } else if !pairs.is_empty() || by_initial_rank.is_some() {
        bail!("--pair and --by-initial-rank need --rankings");
    }
    let mut incorporation = Vec::new();
    if let Some(path) = judgments {
        let js: Vec<IncorporationJudgment> = read_records(path)?;
        for j in &js {
            j.check()?;
        }
        let mut tags: Vec<String> = methods.to_vec();
        if tags.is_empty() {
            tags = js.iter().map(|j| j.method_tag.clone()).collect();
            tags.sort();
            tags.dedup();
        }
        incorporation = tags.iter().map(|m| incorporation_stats(&js, m)).collect();
    }

    match format {
        OutputFormat::Csv | OutputFormat::Plot => {
            let out = out.ok_or_else(|| anyhow!("--out is required for csv and plot output"))?;
            let fmt = if format == OutputFormat::Csv {
                ReportFormat::Csv
            } else {
                ReportFormat::Plot
            };
            emit_report(&reports, fmt, out)?;
            println!("{} reports written to {}", reports.len(), out.display());
        }
        OutputFormat::Json => {
            let doc = serde_json::json!({
                "win_rates": reports,
                "by_initial_rank": buckets,
                "incorporation": incorporation,
            });
            let text = serde_json::to_string_pretty(&doc)?;
            match out {
                Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
                None => println!("{text}"),
            }
        }
        OutputFormat::Table => {
            let mut s = String::new();
            if !reports.is_empty() {
                s.push_str("| method | baseline | n | win rate (%) | excluded |\n|---|---|---|---|---|\n");
                for r in &reports {
                    let cell = Proportion { n: r.n_items, p: r.p, se: r.se }.percent_cell();
                    let _ = writeln!(s, "| {} | {} | {} | {cell} | {} |", r.method_a, r.method_b, r.n_items, r.excluded);
                }
            }
            if !buckets.is_empty() {
                s.push_str("\n| initial rank | n | win rate (%) |\n|---|---|---|\n");
                for b in &buckets {
                    let cell = b.report.as_ref().map_or("-".to_string(), |r| {
                        Proportion { n: r.n_items, p: r.p, se: r.se }.percent_cell()
                    });
                    let _ = writeln!(s, "| {} | {} | {cell} |", b.baseline_rank, b.n_records);
                }
            }
            if !incorporation.is_empty() {
                s.push_str("\n| method | n | at least one (%) | more than one (%) | all (%) |\n|---|---|---|---|---|\n");
                for i in &incorporation {
                    let _ = writeln!(
                        s,
                        "| {} | {} | {} | {} | {} |",
                        i.method_tag,
                        i.n,
                        i.at_least_one.percent_cell(),
                        i.more_than_one.percent_cell(),
                        i.all_points.percent_cell()
                    );
                }
            }
            match out {
                Some(p) => std::fs::write(p, s).with_context(|| format!("writing {}", p.display()))?,
                None => {
                    let mut stdout = std::io::stdout().lock();
                    stdout.write_all(s.as_bytes())?;
                }
            }
        }
    }
    Ok(())
}

fn export(data: &DataDir, strategy: &str, out: &Path) -> Result<()> {
    let strategy: Strategy = strategy.parse()?;
    let tasks: Vec<TaskInput> = read_records(&RecordKind::Tasks.path_in(&data.data_dir))?;
    let batches: Vec<RefinementBatch> = read_records(&RecordKind::Batches.path_in(&data.data_dir))?;
    let chosen: Vec<RefinementBatch> = batches.into_iter().filter(|b| b.strategy == strategy).collect();
    if chosen.is_empty() {
        bail!("no {strategy} batches in {}", data.data_dir.display());
    }
    let examples = export_dataset(&chosen, &tasks, &templates(data.templates.as_deref())?)?;
    write_dataset(out, &examples)?;
    println!("{} examples written to {}", examples.len(), out.display());
    Ok(())
}

async fn sweep(
    dataset: &Path,
    folds: usize,
    seed: u64,
    grid: &SweepGrid,
    cfg: &SweepConfig,
    out: Option<&Path>,
    gateway: Gateway,
) -> Result<()> {
    let examples = read_dataset(dataset)?;
    let folds = make_cv_folds(&example_ids(examples.len()), folds, seed)?;
    let outcome = run_sweep(&gateway, &examples, grid, &folds, cfg).await?;
    let r = &outcome.result;
    println!("| learning rate multiplier | prompt loss weight | mean validation loss |\n|---|---|---|");
    for row in &r.table {
        let loss = row.mean_loss.map_or_else(|| "failed".to_string(), |l| format!("{l:.6}"));
        println!(
            "| {} | {} | {loss} |",
            row.params.learning_rate_multiplier, row.params.prompt_loss_weight
        );
    }
    for (p, reason) in &outcome.excluded {
        eprintln!(
            "excluded ({}, {}): {reason}",
            p.learning_rate_multiplier, p.prompt_loss_weight
        );
    }
    println!(
        "best: learning_rate_multiplier={} prompt_loss_weight={} mean_loss={:.6} ({} jobs submitted)",
        r.best.learning_rate_multiplier, r.best.prompt_loss_weight, r.best_mean_loss, outcome.submitted_now
    );
    if let Some(path) = out {
        std::fs::write(path, serde_json::to_string_pretty(r)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

async fn finetune(
    dataset: &Path,
    params: HyperParams,
    record: Option<&Path>,
    wait: bool,
    poll_secs: u64,
    gateway: Gateway,
) -> Result<()> {
    let examples = read_dataset(dataset)?;
    let job = launch_final_finetune(&gateway, &examples, params, record).await?;
    println!(
        "submitted {} ({} examples, batch size {}, {} epochs, learning_rate_multiplier={}, prompt_loss_weight={})",
        job.handle.0,
        job.n_examples,
        job.batch_size,
        job.epochs,
        params.learning_rate_multiplier,
        params.prompt_loss_weight
    );
    if !wait {
        return Ok(());
    }
    loop {
        match gateway.poll_finetune(&job.handle).await? {
            JobStatus::Queued | JobStatus::Running => tokio::time::sleep(Duration::from_secs(poll_secs)).await,
            JobStatus::Succeeded { validation_loss } => {
                println!("succeeded, validation loss {validation_loss:.6}");
                return Ok(());
            }
            JobStatus::Failed { reason } => bail!("finetune job {} failed: {reason}", job.handle.0),
        }
    }
}

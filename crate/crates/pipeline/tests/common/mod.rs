#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use async_trait::async_trait;

use feedloop_core::{DecodingParams, EmbeddingVector, FeedbackRecord, GeneratedOutput, TaskInput, Timestamp};
use feedloop_gateway::{
    Backend, FinetuneJobSpec, Gateway, JobHandle, JobStatus, MockBackend, MockConfig, Result, RetryPolicy,
};

/// Delegates to the mock and counts calls per operation.
pub struct Counting {
    pub inner: MockBackend,
    pub completions: AtomicUsize,
    pub embeds: AtomicUsize,
    pub submits: AtomicUsize,
    pub polls: AtomicUsize,
}

impl Counting {
    pub fn new(config: MockConfig) -> Arc<Self> {
        Arc::new(Counting {
            inner: MockBackend::new(config),
            completions: AtomicUsize::new(0),
            embeds: AtomicUsize::new(0),
            submits: AtomicUsize::new(0),
            polls: AtomicUsize::new(0),
        })
    }

    pub fn gateway(self: &Arc<Self>) -> Gateway {
        Gateway::new(self.clone()).with_retry(RetryPolicy::immediate())
    }

    pub fn get(c: &AtomicUsize) -> usize {
        c.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl Backend for Counting {
    fn model_tag(&self) -> &str {
        self.inner.model_tag()
    }

    async fn complete_one(&self, p: &str, d: &DecodingParams, s: Option<u64>, i: usize) -> Result<String> {
        self.completions.fetch_add(1, Ordering::SeqCst);
        self.inner.complete_one(p, d, s, i).await
    }

    async fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        self.embeds.fetch_add(1, Ordering::SeqCst);
        self.inner.embed(text).await
    }

    async fn submit_finetune(&self, spec: &FinetuneJobSpec) -> Result<JobHandle> {
        self.submits.fetch_add(1, Ordering::SeqCst);
        self.inner.submit_finetune(spec).await
    }

    async fn poll_finetune(&self, h: &JobHandle) -> Result<JobStatus> {
        self.polls.fetch_add(1, Ordering::SeqCst);
        self.inner.poll_finetune(h).await
    }
}

const POSTS: [(&str, &str, &str); 10] = [
    ("Roommate eats my food", "My roommate keeps eating the leftovers I label in the fridge. I asked him twice to stop and he laughs it off.", "Mention that you already asked him twice."),
    ("Boss calls after hours", "My manager phones me at night about tasks that could wait until morning. I feel I cannot refuse.", "Say the calls are about tasks that could wait."),
    ("Friend borrowed money", "A close friend borrowed three hundred dollars last spring and has not mentioned it since. I need the money for rent.", "Include the amount and that rent is due."),
    ("Noisy upstairs neighbours", "The people upstairs play drums every night until two in the morning. Knocking on their door did nothing.", "Note the drums and the time they stop."),
    ("Sister skips my wedding", "My sister says she will not attend my wedding because it conflicts with a concert she bought tickets for.", "The reason is a concert, say so."),
    ("Dog barks at strangers", "Our rescue dog barks at every stranger on walks. Training classes helped a little but not enough.", "Mention the training classes."),
    ("Coworker takes credit", "A coworker presented my analysis to the director as his own work. I have the emails proving I wrote it.", "Add that you have emails as proof."),
    ("Parents want me home", "My parents want me to move back home after graduation, but I have a job offer in another city.", "Mention the job offer in another city."),
    ("Landlord ignores repairs", "The heating in my flat broke in November and the landlord has ignored four repair requests.", "Say how many requests were ignored."),
    ("Gym partner quits", "My gym partner quit after two weeks and now I struggle to stay motivated to go alone.", "Focus on motivation to go alone."),
];

pub fn corpus() -> Vec<TaskInput> {
    POSTS
        .iter()
        .enumerate()
        .map(|(i, (title, body, _))| TaskInput {
            task_id: format!("post-{i:03}"),
            title: title.to_string(),
            body: body.to_string(),
            source_tag: "fixture".into(),
        })
        .collect()
}

pub fn feedback_for(initials: &[GeneratedOutput]) -> Vec<FeedbackRecord> {
    initials
        .iter()
        .map(|o| {
            let i: usize = o.task_id.trim_start_matches("post-").parse().unwrap();
            FeedbackRecord {
                feedback_id: format!("fb-{i:03}"),
                task_id: o.task_id.clone(),
                output_id: o.output_id.clone(),
                text: POSTS[i].2.to_string(),
                annotator_id: "annotator-1".into(),
                created_at: Timestamp::from_unix(1_700_000_000),
            }
        })
        .collect()
}

pub fn vocabulary_texts() -> Vec<&'static str> {
    POSTS.iter().flat_map(|(t, b, f)| [*t, *b, *f]).collect()
}

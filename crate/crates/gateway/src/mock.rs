//! Offline backend. Every answer is a pure function of its inputs, derived
//! through SHA-256, so runs reproduce across processes and machines.

use std::collections::HashMap;

use async_trait::async_trait;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use feedloop_core::finetune::HyperParams;
use feedloop_core::prompts::parse_word_removal_prompt;
use feedloop_core::word_removal::{build_target, parse_sentence};
use feedloop_core::{DecodingMode, DecodingParams, EmbeddingVector};

use crate::backend::Backend;
use crate::error::{GatewayError, Result};
use crate::types::{FinetuneJobSpec, JobHandle, JobStatus};

pub const DEFAULT_HASH_DIM: usize = 64;
const HANDLE_PREFIX: &str = "mockft";

/// Bag-of-words tokens: whitespace split, lowercased, with punctuation
/// trimmed from both ends.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Tokens in order of first appearance across `texts`.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Vocabulary::default();
        for text in texts {
            for tok in tokenize(text) {
                if !v.index.contains_key(&tok) {
                    v.index.insert(tok.clone(), v.tokens.len());
                    v.tokens.push(tok);
                }
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Count vector; out-of-vocabulary tokens are ignored.
    pub fn vectorize(&self, text: &str) -> Vec<f64> {
        let mut counts = vec![0.0; self.tokens.len()];
        for tok in tokenize(text) {
            if let Some(&i) = self.index.get(&tok) {
                counts[i] += 1.0;
            }
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingMode {
    Hash { dim: usize },
    BagOfWords(Vocabulary),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockConfig {
    pub model_tag: String,
    /// Share of word-removal prompts answered wrongly, decided per prompt.
    pub error_rate: f64,
    pub embedding: EmbeddingMode,
    /// Hyperparameters with the lowest synthetic validation loss.
    pub planted_optimum: HyperParams,
    /// Grid points whose finetune jobs fail.
    pub failing_points: Vec<HyperParams>,
}

impl Default for MockConfig {
    fn default() -> Self {
        MockConfig {
            model_tag: "mock".into(),
            error_rate: 0.0,
            embedding: EmbeddingMode::Hash { dim: DEFAULT_HASH_DIM },
            planted_optimum: HyperParams::new(0.05, 0.01),
            failing_points: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    config: MockConfig,
}

impl MockBackend {
    pub fn new(config: MockConfig) -> Self {
        MockBackend { config }
    }

    pub fn config(&self) -> &MockConfig {
        &self.config
    }

    /// The completion for one sample, before stop-sequence truncation.
    pub fn completion(&self, prompt: &str, decoding: &DecodingParams, seed: Option<u64>, index: usize) -> String {
        let decoding_key = serde_json::to_string(decoding).expect("decoding serializes");
        let mut rng = match decoding.mode {
            DecodingMode::Greedy => rng_for(&[b"complete", prompt.as_bytes(), decoding_key.as_bytes()]),
            DecodingMode::Nucleus => rng_for(&[
                b"complete",
                prompt.as_bytes(),
                decoding_key.as_bytes(),
                &seed.map_or([0xff; 9], |s| tagged(s, 1)),
                &(index as u64).to_le_bytes(),
            ]),
        };
        let text = match self.solve_word_removal(prompt) {
            Some(answer) => answer,
            None => summarize(prompt, &mut rng),
        };
        limit_tokens(&text, decoding.max_tokens as usize)
    }

    fn solve_word_removal(&self, prompt: &str) -> Option<String> {
        let req = parse_word_removal_prompt(prompt)?;
        let offensive = parse_sentence(&req.sentence)?;
        if req.words_to_remove.iter().any(|w| !offensive.contains(w)) {
            return None;
        }
        let mut remove = req.words_to_remove.clone();
        if unit(&[b"word-removal-error", prompt.as_bytes()]) < self.config.error_rate {
            let wrong = offensive.iter().find(|w| !remove.contains(w));
            match wrong {
                Some(w) => {
                    remove.pop();
                    remove.push(w.clone());
                }
                None => {
                    remove.remove(0);
                }
            }
        }
        let target = build_target(&offensive, &remove).ok()?;
        Some(match target.strip_prefix(req.completion_prefix.as_str()) {
            Some(rest) => rest.to_string(),
            None => format!(" {target}"),
        })
    }

    /// Synthetic validation loss: a per-dataset base plus a penalty that
    /// grows with log distance from the planted optimum.
    pub fn validation_loss(&self, spec: &FinetuneJobSpec) -> f64 {
        let base = 0.4 + 0.2 * unit(&[b"finetune-base", &dataset_digest(spec)]);
        base + 0.05 * planted_distance(spec.params(), self.config.planted_optimum)
    }
}

/// Squared log distance between two hyperparameter settings. Zero only at
/// the optimum itself.
pub fn planted_distance(p: HyperParams, optimum: HyperParams) -> f64 {
    const PLW_OFFSET: f64 = 0.01;
    let lr = (p.learning_rate_multiplier / optimum.learning_rate_multiplier).ln();
    let plw = ((p.prompt_loss_weight + PLW_OFFSET) / (optimum.prompt_loss_weight + PLW_OFFSET)).ln();
    lr * lr + plw * plw
}

#[async_trait]
impl Backend for MockBackend {
    fn model_tag(&self) -> &str {
        &self.config.model_tag
    }

    async fn complete_one(
        &self,
        prompt: &str,
        decoding: &DecodingParams,
        seed: Option<u64>,
        sample_index: usize,
    ) -> Result<String> {
        Ok(self.completion(prompt, decoding, seed, sample_index))
    }

    async fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        if text.is_empty() {
            return Err(GatewayError::invalid("cannot embed empty text"));
        }
        Ok(EmbeddingVector::new(match &self.config.embedding {
            EmbeddingMode::Hash { dim } => {
                let mut rng = rng_for(&[b"embed", text.as_bytes()]);
                (0..*dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
            }
            EmbeddingMode::BagOfWords(vocab) => vocab.vectorize(text),
        }))
    }

    /// Jobs finish at submission; the handle carries the outcome, so no
    /// state is kept between calls.
    async fn submit_finetune(&self, spec: &FinetuneJobSpec) -> Result<JobHandle> {
        spec.check()?;
        let id = hex(&dataset_digest(spec)[..8]);
        let params = spec.params();
        let outcome = if self.config.failing_points.contains(&params) {
            "failed".to_string()
        } else {
            format!("{:016x}", self.validation_loss(spec).to_bits())
        };
        let lr = params.learning_rate_multiplier.to_bits();
        let plw = params.prompt_loss_weight.to_bits();
        Ok(JobHandle(format!("{HANDLE_PREFIX}-{id}-{lr:016x}{plw:016x}-{outcome}")))
    }

    async fn poll_finetune(&self, handle: &JobHandle) -> Result<JobStatus> {
        let unknown = || GatewayError::UnknownJob(handle.0.clone());
        let mut parts = handle.0.splitn(4, '-');
        if parts.next() != Some(HANDLE_PREFIX) {
            return Err(unknown());
        }
        let (_id, _params, outcome) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), Some(c)) if a.len() == 16 && b.len() == 32 => (a, b, c),
            _ => return Err(unknown()),
        };
        if outcome == "failed" {
            return Ok(JobStatus::Failed {
                reason: "mock failure for this grid point".into(),
            });
        }
        let bits = u64::from_str_radix(outcome, 16).map_err(|_| unknown())?;
        Ok(JobStatus::Succeeded {
            validation_loss: f64::from_bits(bits),
        })
    }
}

fn dataset_digest(spec: &FinetuneJobSpec) -> [u8; 32] {
    let mut h = Sha256::new();
    for (tag, set) in [(b"train", &spec.dataset), (b"valid", &spec.validation)] {
        h.update(tag);
        for ex in set {
            for field in [&ex.prompt, &ex.completion] {
                h.update((field.len() as u64).to_le_bytes());
                h.update(field.as_bytes());
            }
        }
    }
    h.finalize().into()
}

fn tagged(v: u64, tag: u8) -> [u8; 9] {
    let mut out = [tag; 9];
    out[..8].copy_from_slice(&v.to_le_bytes());
    out
}

fn digest(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}

fn rng_for(parts: &[&[u8]]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(digest(parts))
}

/// Uniform in [0, 1).
fn unit(parts: &[&[u8]]) -> f64 {
    let d = digest(parts);
    let v = u64::from_le_bytes(d[..8].try_into().unwrap());
    (v >> 11) as f64 / (1u64 << 53) as f64
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Keeps the first `max` whitespace-delimited tokens, preserving the
/// original spacing between them.
fn limit_tokens(text: &str, max: usize) -> String {
    let mut seen = 0;
    let mut in_token = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            in_token = false;
        } else if !in_token {
            if seen == max {
                return text[..i].trim_end().to_string();
            }
            seen += 1;
            in_token = true;
        }
    }
    text.to_string()
}

const LABELS: [&str; 5] = ["TITLE: ", "Text: ", "Summary: ", "Feedback: ", "TL;DR:"];

/// Splits a summarization prompt into labelled blocks. Paragraph breaks
/// inside a block stay with that block.
fn prompt_blocks(prompt: &str) -> HashMap<&'static str, String> {
    let mut blocks: HashMap<&'static str, String> = HashMap::new();
    let mut current: Option<&'static str> = None;
    for chunk in prompt.split("\n\n") {
        match LABELS.iter().find(|l| chunk.starts_with(**l)) {
            Some(label) => {
                current = Some(label);
                blocks.insert(label, chunk[label.len()..].to_string());
            }
            None => {
                if let Some(label) = current {
                    let b = blocks.get_mut(label).unwrap();
                    b.push_str("\n\n");
                    b.push_str(chunk);
                }
            }
        }
    }
    blocks
}

/// Builds summary-like text from words of the post, leaning on feedback
/// words by a per-sample weight so candidates differ in how much of the
/// feedback they echo.
fn summarize(prompt: &str, rng: &mut ChaCha8Rng) -> String {
    let blocks = prompt_blocks(prompt);
    let pool = |labels: &[&str]| -> Vec<String> {
        labels
            .iter()
            .filter_map(|l| blocks.get(l))
            .flat_map(|b| tokenize(b).collect::<Vec<_>>())
            .collect()
    };
    let mut base = pool(&["TITLE: ", "Text: ", "Summary: "]);
    if base.is_empty() {
        base = tokenize(prompt).collect();
    }
    if base.is_empty() {
        base.push("summary".into());
    }
    let feedback = pool(&["Feedback: "]);
    let feedback_weight = if feedback.is_empty() { 0.0 } else { rng.gen_range(0.0..0.8) };

    let mut out = String::new();
    let lead = rng.gen_range(0..10);
    out.push_str(match lead {
        0..=1 => "\n",
        2 => " - ",
        _ => " ",
    });
    let sentences = rng.gen_range(1..=3);
    for s in 0..sentences {
        if s > 0 {
            out.push(' ');
        }
        let len = rng.gen_range(5..=10);
        let words: Vec<&str> = (0..len)
            .map(|_| {
                let from = if rng.gen_bool(feedback_weight) { &feedback } else { &base };
                from.choose(rng).expect("pool nonempty").as_str()
            })
            .collect();
        let mut sentence = words.join(" ");
        if let Some(first) = sentence.get(..1) {
            sentence.replace_range(..1, &first.to_uppercase());
        }
        out.push_str(&sentence);
        out.push(if rng.gen_bool(0.1) { '!' } else { '.' });
    }
    if rng.gen_bool(0.2) {
        let tail = rng.gen_range(2..=4);
        for _ in 0..tail {
            out.push(' ');
            out.push_str(base.choose(rng).unwrap());
        }
    }
    out
}

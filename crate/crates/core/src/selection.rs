//! Candidate post-processing, cosine scoring and selection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{EmbeddingVector, QualityFlag, Strategy};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub candidate_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Postprocessed {
    pub text: String,
    pub flag: Option<QualityFlag>,
}

const TERMINATORS: [char; 3] = ['.', '!', '?'];

/// Strips leading non-alphanumeric characters, then drops everything after
/// the last sentence terminator. Text without any terminator is kept
/// (whitespace-trimmed) and flagged as unterminated.
pub fn postprocess_summary(text: &str) -> Postprocessed {
    let start = text.find(char::is_alphanumeric).unwrap_or(text.len());
    let body = &text[start..];
    match body.rfind(TERMINATORS) {
        Some(end) => Postprocessed {
            text: body[..=end].to_string(),
            flag: None,
        },
        None => Postprocessed {
            text: body.trim_end().to_string(),
            flag: Some(QualityFlag::Unterminated),
        },
    }
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.values.len() != b.values.len() {
        return Err(Error::DimensionMismatch {
            left: a.values.len(),
            right: b.values.len(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(Error::ZeroNorm);
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Index of the maximum score, lowest index on ties. NaN never wins.
pub fn argmax_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_nan() {
            continue;
        }
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i)
}

/// Picks one of `n_candidates` according to `strategy`.
///
/// `without_feedback` batches have no feedback to score against, so they are
/// selected uniformly at random like `random_of_n`.
pub fn select(
    strategy: Strategy,
    n_candidates: usize,
    scores: Option<&[f64]>,
    seed: Option<u64>,
) -> Result<usize> {
    if n_candidates == 0 {
        return Err(Error::invalid("cannot select from an empty candidate list"));
    }
    match strategy {
        Strategy::BestOfN => {
            let scores = scores.ok_or(Error::MissingScores)?;
            if scores.len() != n_candidates {
                return Err(Error::invalid(format!(
                    "{} scores for {n_candidates} candidates",
                    scores.len()
                )));
            }
            argmax_first(scores).ok_or(Error::MissingScores)
        }
        Strategy::RandomOfN | Strategy::WithoutFeedback => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(0));
            Ok(rng.gen_range(0..n_candidates))
        }
        Strategy::First => Ok(0),
    }
}

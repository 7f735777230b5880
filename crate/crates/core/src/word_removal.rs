//! Synthetic targeted word-removal benchmark.
//!
//! Sentences follow the fixed grammar
//! `You are such a W1, and a nice person, and a W2, and an W3.` and targets
//! drop the removed clauses and the commas:
//! `You are such a nice person and an W3.`

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompts::contains_word;
use crate::stats::Proportion;

pub const LEXICON_SIZE: usize = 25;
pub const MAX_OFFENSIVE: usize = 10;
pub const MAX_REMOVED: usize = 3;
pub const DEFAULT_SENTENCES_PER_K: usize = 50;
pub const COMPLETION_PREFIX: &str = "You are";

const SENTENCE_OPENING: &str = "You are such ";
const NICE_PERSON: &str = "nice person";
const SENTENCE_JOINER: &str = ", and ";
const TARGET_JOINER: &str = " and ";

const PLACEHOLDER_LEXICON: &str = include_str!("../data/lexicon.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    words: Vec<String>,
}

impl Lexicon {
    pub fn new(words: Vec<String>) -> Result<Self> {
        if words.len() != LEXICON_SIZE {
            return Err(Error::invalid(format!(
                "lexicon must have exactly {LEXICON_SIZE} words, got {}",
                words.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for w in &words {
            if w.is_empty() || !w.chars().all(|c| c.is_alphabetic() && !c.is_uppercase()) {
                return Err(Error::invalid(format!(
                    "lexicon word `{w}` must be a single lowercase word"
                )));
            }
            if w == "nice" || w == "person" {
                return Err(Error::invalid(format!("lexicon word `{w}` clashes with the sentence frame")));
            }
            if !seen.insert(w.as_str()) {
                return Err(Error::invalid(format!("duplicate lexicon word `{w}`")));
            }
        }
        Ok(Lexicon { words })
    }

    /// One word per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_string)
                .collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Mild stand-in words; swap in a real lexicon with [`Lexicon::load`].
    pub fn placeholder() -> Self {
        Self::parse(PLACEHOLDER_LEXICON).expect("shipped lexicon is valid")
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordRemovalInstance {
    pub instance_id: String,
    pub k: usize,
    pub offensive_words: Vec<String>,
    pub l: usize,
    pub words_to_remove: Vec<String>,
    pub sentence: String,
    pub target: String,
    pub completion_prefix: String,
}

impl WordRemovalInstance {
    /// Names of violated invariants; empty when the instance is well formed.
    pub fn violations(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !(1..=MAX_OFFENSIVE).contains(&self.k) || self.offensive_words.len() != self.k {
            out.push("k in [1,10] offensive words");
        }
        if !(1..=MAX_REMOVED).contains(&self.l)
            || self.l > self.k
            || self.words_to_remove.len() != self.l
        {
            out.push("l in [1,3] with l ≤ k");
        }
        let offensive: BTreeSet<&str> = self.offensive_words.iter().map(String::as_str).collect();
        let removed: BTreeSet<&str> = self.words_to_remove.iter().map(String::as_str).collect();
        if removed.len() != self.words_to_remove.len() || !removed.is_subset(&offensive) {
            out.push("words_to_remove ⊆ offensive_words, no duplicates");
        }
        if !self.sentence.contains(NICE_PERSON)
            || !self.offensive_words.iter().all(|w| contains_word(&self.sentence, w))
        {
            out.push("sentence contains every offensive word and the phrase \"nice person\"");
        }
        let kept: Vec<&str> = self
            .offensive_words
            .iter()
            .map(String::as_str)
            .filter(|w| !removed.contains(w))
            .collect();
        let target_ok = !self.words_to_remove.iter().any(|w| contains_word(&self.target, w))
            && self.target.contains(NICE_PERSON)
            && in_order(&self.target, &kept);
        if !target_ok {
            out.push("target contains no word from words_to_remove and retains all other content words of sentence in order");
        }
        out
    }

    /// The completion a perfect model would produce after the prefix.
    pub fn target_completion(&self) -> &str {
        self.target
            .strip_prefix(&self.completion_prefix)
            .unwrap_or(&self.target)
    }
}

fn in_order(text: &str, words: &[&str]) -> bool {
    let tokens: Vec<&str> = text
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()))
        .collect();
    let mut pos = 0;
    for w in words {
        match tokens[pos..].iter().position(|t| t == w) {
            Some(i) => pos += i + 1,
            None => return false,
        }
    }
    true
}

/// "an" before a vowel-initial word, otherwise "a".
pub fn article(word: &str) -> &'static str {
    match word.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

fn clause(word: &str) -> String {
    format!("{} {word}", article(word))
}

fn clauses(offensive_words: &[impl AsRef<str>], keep: impl Fn(&str) -> bool) -> Vec<String> {
    let mut out = Vec::with_capacity(offensive_words.len() + 1);
    for (i, w) in offensive_words.iter().enumerate() {
        if i == 1 {
            out.push(clause(NICE_PERSON));
        }
        if keep(w.as_ref()) {
            out.push(clause(w.as_ref()));
        }
    }
    if offensive_words.len() <= 1 {
        out.push(clause(NICE_PERSON));
    }
    out
}

pub fn build_sentence(offensive_words: &[impl AsRef<str>]) -> Result<String> {
    if offensive_words.is_empty() || offensive_words.len() > MAX_OFFENSIVE {
        return Err(Error::invalid(format!(
            "sentence needs 1 to {MAX_OFFENSIVE} offensive words, got {}",
            offensive_words.len()
        )));
    }
    let parts = clauses(offensive_words, |_| true);
    Ok(format!("{SENTENCE_OPENING}{}.", parts.join(SENTENCE_JOINER)))
}

/// Rebuilds the sentence without the removed words, clauses joined by
/// " and " and no commas.
pub fn build_target(
    offensive_words: &[impl AsRef<str>],
    words_to_remove: &[impl AsRef<str>],
) -> Result<String> {
    if offensive_words.is_empty() || offensive_words.len() > MAX_OFFENSIVE {
        return Err(Error::invalid(format!(
            "sentence needs 1 to {MAX_OFFENSIVE} offensive words, got {}",
            offensive_words.len()
        )));
    }
    let removed: BTreeSet<&str> = words_to_remove.iter().map(AsRef::as_ref).collect();
    for w in &removed {
        if !offensive_words.iter().any(|o| o.as_ref() == *w) {
            return Err(Error::invalid(format!("`{w}` is not one of the sentence's offensive words")));
        }
    }
    let parts = clauses(offensive_words, |w| !removed.contains(w));
    Ok(format!("{SENTENCE_OPENING}{}.", parts.join(TARGET_JOINER)))
}

/// Inverse of [`build_sentence`]: the offensive words in order, or `None` if
/// the text does not follow the sentence grammar.
pub fn parse_sentence(sentence: &str) -> Option<Vec<String>> {
    let inner = sentence.trim().strip_prefix(SENTENCE_OPENING)?.strip_suffix('.')?;
    let mut words = Vec::new();
    let mut saw_nice = false;
    for (i, part) in inner.split(SENTENCE_JOINER).enumerate() {
        let (art, noun) = part.split_once(' ')?;
        if noun == NICE_PERSON {
            if saw_nice || i != 1 {
                return None;
            }
            saw_nice = true;
            if art != "a" {
                return None;
            }
            continue;
        }
        if noun.contains(' ') || art != article(noun) {
            return None;
        }
        words.push(noun.to_string());
    }
    if !saw_nice || words.is_empty() {
        return None;
    }
    (build_sentence(&words).ok()? == sentence.trim()).then_some(words)
}

pub fn generate_benchmark(
    lexicon: &Lexicon,
    sentences_per_k: usize,
    seed: u64,
) -> Result<Vec<WordRemovalInstance>> {
    if sentences_per_k < 1 {
        return Err(Error::invalid("sentences_per_k must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = lexicon.words();
    let mut out = Vec::with_capacity(sentences_per_k * expected_instances_per_sentence_set());
    for k in 1..=MAX_OFFENSIVE {
        for s in 0..sentences_per_k {
            let offensive: Vec<String> = index::sample(&mut rng, pool.len(), k)
                .into_iter()
                .map(|i| pool[i].clone())
                .collect();
            let sentence = build_sentence(&offensive)?;
            for l in 1..=k.min(MAX_REMOVED) {
                let mut picked = index::sample(&mut rng, k, l).into_vec();
                picked.sort_unstable();
                let words_to_remove: Vec<String> =
                    picked.iter().map(|&i| offensive[i].clone()).collect();
                let target = build_target(&offensive, &words_to_remove)?;
                out.push(WordRemovalInstance {
                    instance_id: format!("k{k:02}-s{s:03}-l{l}"),
                    k,
                    offensive_words: offensive.clone(),
                    l,
                    words_to_remove,
                    sentence: sentence.clone(),
                    target,
                    completion_prefix: COMPLETION_PREFIX.to_string(),
                });
            }
        }
    }
    Ok(out)
}

/// Σ_{k=1..10} min(3, k).
fn expected_instances_per_sentence_set() -> usize {
    (1..=MAX_OFFENSIVE).map(|k| k.min(MAX_REMOVED)).sum()
}

/// Number of instances [`generate_benchmark`] emits.
pub fn benchmark_size(sentences_per_k: usize) -> usize {
    sentences_per_k * expected_instances_per_sentence_set()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub n: usize,
    pub correct: usize,
    pub missing: usize,
    pub accuracy: Proportion,
    pub by_k: BTreeMap<usize, Proportion>,
    pub by_l: BTreeMap<usize, Proportion>,
}

/// Exact match of `completion_prefix + completion` against the target,
/// after stripping trailing whitespace from the prediction.
pub fn is_exact_match(instance: &WordRemovalInstance, completion: &str) -> bool {
    let full = format!("{}{}", instance.completion_prefix, completion);
    full.trim_end() == instance.target
}

pub fn evaluate_exact_match(
    predictions: &BTreeMap<String, String>,
    instances: &[WordRemovalInstance],
) -> Result<AccuracyReport> {
    let known: BTreeSet<&str> = instances.iter().map(|i| i.instance_id.as_str()).collect();
    if let Some(unknown) = predictions.keys().find(|id| !known.contains(id.as_str())) {
        return Err(Error::Unknown {
            what: "instance",
            id: unknown.clone(),
        });
    }
    let mut correct = 0;
    let mut missing = 0;
    let mut by_k: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let mut by_l: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for inst in instances {
        let hit = match predictions.get(&inst.instance_id) {
            Some(c) => is_exact_match(inst, c),
            None => {
                missing += 1;
                false
            }
        };
        correct += hit as usize;
        for (map, key) in [(&mut by_k, inst.k), (&mut by_l, inst.l)] {
            let e = map.entry(key).or_default();
            e.0 += hit as usize;
            e.1 += 1;
        }
    }
    let prop = |m: BTreeMap<usize, (usize, usize)>| {
        m.into_iter()
            .map(|(k, (c, n))| (k, Proportion::from_count(c as f64, n)))
            .collect()
    };
    Ok(AccuracyReport {
        n: instances.len(),
        correct,
        missing,
        accuracy: Proportion::from_count(correct as f64, instances.len()),
        by_k: prop(by_k),
        by_l: prop(by_l),
    })
}

/// Markdown table with one row per backend. Tags of the form
/// `family/size` are pivoted into rows by family and columns by size.
pub fn format_accuracy_table(rows: &[(String, AccuracyReport)]) -> String {
    let mut families: Vec<String> = Vec::new();
    let mut columns: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(String, String), String> = BTreeMap::new();
    for (tag, report) in rows {
        let (family, column) = match tag.split_once('/') {
            Some((f, c)) => (f.to_string(), c.to_string()),
            None => (tag.clone(), "accuracy (%)".to_string()),
        };
        if !families.contains(&family) {
            families.push(family.clone());
        }
        if !columns.contains(&column) {
            columns.push(column.clone());
        }
        cells.insert((family, column), report.accuracy.percent_cell());
    }
    let mut out = format!("| backend | {} |\n", columns.join(" | "));
    out.push_str(&format!("|---|{}\n", "---|".repeat(columns.len())));
    for f in &families {
        let row: Vec<&str> = columns
            .iter()
            .map(|c| cells.get(&(f.clone(), c.clone())).map_or("-", String::as_str))
            .collect();
        out.push_str(&format!("| {f} | {} |\n", row.join(" | ")));
    }
    out
}

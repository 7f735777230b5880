//! Instruction prompts for summarization, refinement and word removal.
//!
//! Templates are plain text with `{name}` placeholders. The shipped defaults
//! live in `templates/` and are frozen by golden tests; operators can load
//! alternatives from a directory with [`TemplateSet::load_dir`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{FeedbackRecord, GeneratedOutput, TaskInput};
use crate::error::{Error, Result};

/// Final line of every summarization prompt.
pub const SUMMARY_ANCHOR: &str = "TL;DR:";

const INITIAL_SUMMARY: &str = include_str!("../templates/initial_summary.txt");
const REFINE_WITH_FEEDBACK: &str = include_str!("../templates/refine_with_feedback.txt");
const REFINE_WITHOUT_FEEDBACK: &str = include_str!("../templates/refine_without_feedback.txt");
const WORD_REMOVAL: &str = include_str!("../templates/word_removal.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateTag {
    InitialSummary,
    RefineWithFeedback,
    RefineWithoutFeedback,
    WordRemoval,
}

impl TemplateTag {
    pub const ALL: [TemplateTag; 4] = [
        TemplateTag::InitialSummary,
        TemplateTag::RefineWithFeedback,
        TemplateTag::RefineWithoutFeedback,
        TemplateTag::WordRemoval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateTag::InitialSummary => "initial_summary",
            TemplateTag::RefineWithFeedback => "refine_with_feedback",
            TemplateTag::RefineWithoutFeedback => "refine_without_feedback",
            TemplateTag::WordRemoval => "word_removal",
        }
    }

    fn required_placeholders(self) -> &'static [&'static str] {
        match self {
            TemplateTag::InitialSummary => &["title", "text"],
            TemplateTag::RefineWithFeedback => &["title", "text", "summary", "feedback"],
            TemplateTag::RefineWithoutFeedback => &["title", "text", "summary"],
            TemplateTag::WordRemoval => &["sentence", "removal", "completion_prefix"],
        }
    }

    fn default_source(self) -> &'static str {
        match self {
            TemplateTag::InitialSummary => INITIAL_SUMMARY,
            TemplateTag::RefineWithFeedback => REFINE_WITH_FEEDBACK,
            TemplateTag::RefineWithoutFeedback => REFINE_WITHOUT_FEEDBACK,
            TemplateTag::WordRemoval => WORD_REMOVAL,
        }
    }
}

impl fmt::Display for TemplateTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub completion_prefix: String,
    pub template_tag: TemplateTag,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Placeholder(String),
}

/// A parsed template. Substitution is single-pass, so placeholder values
/// that themselves contain `{...}` are inserted literally.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    segments: Vec<Segment>,
}

impl Template {
    pub fn parse(source: &str) -> Result<Self> {
        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut rest = source;
        while let Some(open) = rest.find('{') {
            literal.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let name_len = after
                .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
                .unwrap_or(after.len());
            if name_len > 0 && after[name_len..].starts_with('}') {
                if !literal.is_empty() {
                    segments.push(Segment::Literal(std::mem::take(&mut literal)));
                }
                segments.push(Segment::Placeholder(after[..name_len].to_string()));
                rest = &after[name_len + 1..];
            } else {
                literal.push('{');
                rest = after;
            }
        }
        literal.push_str(rest);
        if !literal.is_empty() {
            segments.push(Segment::Literal(literal));
        }
        Ok(Template { segments })
    }

    pub fn placeholders(&self) -> impl Iterator<Item = &str> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Placeholder(name) => Some(name.as_str()),
            Segment::Literal(_) => None,
        })
    }

    pub fn render(&self, values: &BTreeMap<&str, &str>) -> Result<String> {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Literal(s) => out.push_str(s),
                Segment::Placeholder(name) => {
                    let value = values.get(name.as_str()).ok_or_else(|| {
                        Error::Template(format!("no value for placeholder `{name}`"))
                    })?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }

    /// Inverse of [`Template::render`]: recovers placeholder values from a
    /// rendered text. Each placeholder extends to the first occurrence of the
    /// following literal, so values must not contain that literal.
    pub fn match_text(&self, text: &str) -> Option<BTreeMap<String, String>> {
        let mut values = BTreeMap::new();
        let mut rest = text;
        let mut pending: Option<&str> = None;
        for seg in &self.segments {
            match seg {
                Segment::Literal(lit) => {
                    match pending.take() {
                        Some(name) => {
                            let at = rest.find(lit.as_str())?;
                            values.insert(name.to_string(), rest[..at].to_string());
                            rest = &rest[at + lit.len()..];
                        }
                        None => rest = rest.strip_prefix(lit.as_str())?,
                    }
                }
                Segment::Placeholder(name) => {
                    if pending.is_some() {
                        return None;
                    }
                    pending = Some(name);
                }
            }
        }
        match pending {
            Some(name) => {
                values.insert(name.to_string(), rest.to_string());
            }
            None if !rest.is_empty() => return None,
            None => {}
        }
        Some(values)
    }

    fn ends_with_placeholder(&self, name: &str) -> bool {
        matches!(self.segments.last(), Some(Segment::Placeholder(n)) if n == name)
    }

    fn ends_with_literal(&self, suffix: &str) -> bool {
        matches!(self.segments.last(), Some(Segment::Literal(s)) if s.ends_with(suffix))
    }
}

#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<TemplateTag, Template>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        let templates = TemplateTag::ALL
            .into_iter()
            .map(|tag| {
                let t = Template::parse(tag.default_source()).expect("shipped template parses");
                (tag, t)
            })
            .collect();
        TemplateSet { templates }
    }
}

impl TemplateSet {
    /// Loads `<tag>.txt` files from `dir`; tags without a file keep the
    /// shipped default. A single trailing newline in a file is ignored.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut set = TemplateSet::default();
        for tag in TemplateTag::ALL {
            let path = dir.join(format!("{}.txt", tag.as_str()));
            if !path.exists() {
                continue;
            }
            let source = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let source = source.strip_suffix('\n').unwrap_or(&source);
            set.set(tag, Template::parse(source)?)?;
        }
        Ok(set)
    }

    pub fn set(&mut self, tag: TemplateTag, template: Template) -> Result<()> {
        for required in tag.required_placeholders() {
            if !template.placeholders().any(|p| p == *required) {
                return Err(Error::Template(format!(
                    "{tag} template lacks placeholder `{{{required}}}`"
                )));
            }
        }
        let anchored = match tag {
            TemplateTag::WordRemoval => template.ends_with_placeholder("completion_prefix"),
            _ => template.ends_with_literal(SUMMARY_ANCHOR),
        };
        if !anchored {
            return Err(Error::Template(format!(
                "{tag} template must end with its completion anchor"
            )));
        }
        self.templates.insert(tag, template);
        Ok(())
    }

    fn get(&self, tag: TemplateTag) -> &Template {
        &self.templates[&tag]
    }

    pub fn render_initial_summary(&self, task: &TaskInput) -> Result<RenderedPrompt> {
        let values = BTreeMap::from([("title", task.title.trim()), ("text", task.body.trim())]);
        Ok(RenderedPrompt {
            text: self.get(TemplateTag::InitialSummary).render(&values)?,
            completion_prefix: String::new(),
            template_tag: TemplateTag::InitialSummary,
        })
    }

    pub fn render_refinement_with_feedback(
        &self,
        task: &TaskInput,
        summary: &GeneratedOutput,
        feedback: &FeedbackRecord,
    ) -> Result<RenderedPrompt> {
        check_summary(task, summary)?;
        if feedback.task_id != task.task_id {
            return Err(Error::CrossTask {
                what: "feedback",
                id: feedback.feedback_id.clone(),
                expected: task.task_id.clone(),
                actual: feedback.task_id.clone(),
            });
        }
        if feedback.output_id != summary.output_id {
            return Err(Error::invalid(format!(
                "feedback `{}` is about output `{}`, not `{}`",
                feedback.feedback_id, feedback.output_id, summary.output_id
            )));
        }
        let values = BTreeMap::from([
            ("title", task.title.trim()),
            ("text", task.body.trim()),
            ("summary", summary.text.trim()),
            ("feedback", feedback.text.trim()),
        ]);
        Ok(RenderedPrompt {
            text: self.get(TemplateTag::RefineWithFeedback).render(&values)?,
            completion_prefix: String::new(),
            template_tag: TemplateTag::RefineWithFeedback,
        })
    }

    pub fn render_refinement_without_feedback(
        &self,
        task: &TaskInput,
        summary: &GeneratedOutput,
    ) -> Result<RenderedPrompt> {
        check_summary(task, summary)?;
        let values = BTreeMap::from([
            ("title", task.title.trim()),
            ("text", task.body.trim()),
            ("summary", summary.text.trim()),
        ]);
        Ok(RenderedPrompt {
            text: self.get(TemplateTag::RefineWithoutFeedback).render(&values)?,
            completion_prefix: String::new(),
            template_tag: TemplateTag::RefineWithoutFeedback,
        })
    }

    pub fn render_word_removal(
        &self,
        sentence: &str,
        words_to_remove: &[impl AsRef<str>],
        completion_prefix: &str,
    ) -> Result<RenderedPrompt> {
        let sentence = sentence.trim();
        let words: Vec<&str> = words_to_remove.iter().map(|w| w.as_ref().trim()).collect();
        if words.is_empty() || words.len() > 3 {
            return Err(Error::invalid(format!(
                "expected 1 to 3 words to remove, got {}",
                words.len()
            )));
        }
        for w in &words {
            if !contains_word(sentence, w) {
                return Err(Error::invalid(format!("word `{w}` does not occur in sentence")));
            }
        }
        let removal = removal_phrase(&words);
        let prefix = completion_prefix.trim();
        let values = BTreeMap::from([
            ("sentence", sentence),
            ("removal", removal.as_str()),
            ("completion_prefix", prefix),
        ]);
        Ok(RenderedPrompt {
            text: self.get(TemplateTag::WordRemoval).render(&values)?,
            completion_prefix: prefix.to_string(),
            template_tag: TemplateTag::WordRemoval,
        })
    }
}

/// Fields recovered from a word-removal prompt rendered with the default
/// template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordRemovalRequest {
    pub sentence: String,
    pub words_to_remove: Vec<String>,
    pub completion_prefix: String,
}

pub fn parse_word_removal_prompt(text: &str) -> Option<WordRemovalRequest> {
    let template = Template::parse(WORD_REMOVAL).ok()?;
    let mut values = template.match_text(text)?;
    let removal = values.remove("removal")?;
    let words: Vec<String> = if let Some(one) = removal.strip_prefix("word ") {
        vec![one.to_string()]
    } else {
        let list = removal.strip_prefix("words ")?;
        let (init, last) = list.rsplit_once(" and ")?;
        init.split(", ").chain([last]).map(str::to_string).collect()
    };
    if words.iter().any(|w| w.is_empty() || w.contains(' ')) {
        return None;
    }
    Some(WordRemovalRequest {
        sentence: values.remove("sentence")?,
        words_to_remove: words,
        completion_prefix: values.remove("completion_prefix")?,
    })
}

fn check_summary(task: &TaskInput, summary: &GeneratedOutput) -> Result<()> {
    if summary.task_id != task.task_id {
        return Err(Error::CrossTask {
            what: "summary",
            id: summary.output_id.clone(),
            expected: task.task_id.clone(),
            actual: summary.task_id.clone(),
        });
    }
    Ok(())
}

/// "word w" for one word; "words a, b and c" for several.
pub fn removal_phrase(words: &[&str]) -> String {
    match words {
        [] => String::new(),
        [one] => format!("word {one}"),
        [init @ .., last] => format!("words {} and {last}", init.join(", ")),
    }
}

/// Whole-word containment, ignoring surrounding punctuation.
pub fn contains_word(text: &str, word: &str) -> bool {
    !word.is_empty()
        && text
            .split_whitespace()
            .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()))
            .any(|t| t == word)
}

pub fn render_initial_summary(task: &TaskInput) -> Result<RenderedPrompt> {
    TemplateSet::default().render_initial_summary(task)
}

pub fn render_refinement_with_feedback(
    task: &TaskInput,
    summary: &GeneratedOutput,
    feedback: &FeedbackRecord,
) -> Result<RenderedPrompt> {
    TemplateSet::default().render_refinement_with_feedback(task, summary, feedback)
}

pub fn render_refinement_without_feedback(
    task: &TaskInput,
    summary: &GeneratedOutput,
) -> Result<RenderedPrompt> {
    TemplateSet::default().render_refinement_without_feedback(task, summary)
}

pub fn render_word_removal(
    sentence: &str,
    words_to_remove: &[impl AsRef<str>],
    completion_prefix: &str,
) -> Result<RenderedPrompt> {
    TemplateSet::default().render_word_removal(sentence, words_to_remove, completion_prefix)
}

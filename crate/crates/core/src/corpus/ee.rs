//! Annotated event-extraction corpus in the DuEE JSON-lines shape.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::jsonl::{read_jsonl, write_jsonl};
use super::schema::{EventSchema, EventTypeDef};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArgumentSpan {
    pub role: String,
    pub argument: String,
    /// Character offset of `argument` inside the sentence text.
    #[serde(rename = "argument_start_index")]
    pub start: usize,
}

impl ArgumentSpan {
    /// Exclusive end offset in characters.
    pub fn end(&self) -> usize {
        self.start + self.argument.chars().count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedEvent {
    pub event_type: String,
    pub arguments: Vec<ArgumentSpan>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    pub id: String,
    pub text: String,
    #[serde(rename = "event_list")]
    pub events: Vec<AnnotatedEvent>,
}

impl AnnotatedSentence {
    pub fn chars(&self) -> Vec<char> {
        self.text.chars().collect()
    }
}

#[derive(Deserialize)]
struct RawArgument {
    role: String,
    argument: String,
    #[serde(default)]
    argument_start_index: Option<usize>,
}

#[derive(Deserialize)]
struct RawEvent {
    event_type: String,
    #[serde(default)]
    arguments: Vec<RawArgument>,
}

#[derive(Deserialize)]
struct RawSentence {
    id: String,
    text: String,
    #[serde(default)]
    event_list: Vec<RawEvent>,
}

#[derive(Clone, Debug, Default)]
pub struct EeCorpus {
    pub sentences: Vec<AnnotatedSentence>,
    /// Records dropped because an argument could not be located in the text
    /// or, after [`EeCorpus::retain_schema`], used an unknown type/role.
    pub skipped: usize,
}

/// Finds `needle` in `hay` by characters, returning the first start offset.
pub fn find_chars(hay: &[char], needle: &[char]) -> Option<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return None;
    }
    (0..=hay.len() - needle.len()).find(|&i| &hay[i..i + needle.len()] == needle)
}

fn resolve(raw: RawSentence) -> Option<AnnotatedSentence> {
    let chars: Vec<char> = raw.text.chars().collect();
    let mut events = Vec::with_capacity(raw.event_list.len());
    for ev in raw.event_list {
        let mut arguments = Vec::with_capacity(ev.arguments.len());
        for arg in ev.arguments {
            let needle: Vec<char> = arg.argument.chars().collect();
            let given = arg.argument_start_index.filter(|&s| {
                s + needle.len() <= chars.len() && !needle.is_empty() && chars[s..s + needle.len()] == needle[..]
            });
            let start = given.or_else(|| find_chars(&chars, &needle))?;
            arguments.push(ArgumentSpan {
                role: arg.role,
                argument: arg.argument,
                start,
            });
        }
        events.push(AnnotatedEvent {
            event_type: ev.event_type,
            arguments,
        });
    }
    Some(AnnotatedSentence {
        id: raw.id,
        text: raw.text,
        events,
    })
}

/// Parses JSON-lines text; see [`load_ee_corpus`].
pub fn parse_ee_corpus(path_for_errors: &Path, text: &str) -> Result<EeCorpus> {
    let mut corpus = EeCorpus::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawSentence =
            serde_json::from_str(line).map_err(|source| crate::Error::JsonLine {
                path: path_for_errors.to_owned(),
                line: i + 1,
                source,
            })?;
        match resolve(raw) {
            Some(s) => corpus.sentences.push(s),
            None => corpus.skipped += 1,
        }
    }
    Ok(corpus)
}

/// Loads a DuEE-shaped JSON-lines corpus. Argument spans come from
/// `argument_start_index` when it is present and consistent, otherwise from
/// the first occurrence of the argument string. Records with an argument
/// absent from the text are skipped and counted.
pub fn load_ee_corpus(path: impl AsRef<Path>) -> Result<EeCorpus> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
    parse_ee_corpus(path, &text)
}

pub fn write_ee_corpus(path: impl AsRef<Path>, sentences: &[AnnotatedSentence]) -> Result<()> {
    write_jsonl(path, sentences)
}

/// Reads a corpus previously written by [`write_ee_corpus`] without span repair.
pub fn read_ee_corpus_exact(path: impl AsRef<Path>) -> Result<Vec<AnnotatedSentence>> {
    read_jsonl(path)
}

impl EeCorpus {
    /// Drops sentences using an event type or role outside `schema`.
    pub fn retain_schema(&mut self, schema: &EventSchema) {
        let before = self.sentences.len();
        self.sentences.retain(|s| {
            s.events.iter().all(|e| {
                e.arguments
                    .iter()
                    .all(|a| schema.has_pair(&e.event_type, &a.role))
            })
        });
        self.skipped += before - self.sentences.len();
    }
}

/// Infers a schema from annotations: types and roles in first-appearance order.
pub fn infer_schema(sentences: &[AnnotatedSentence]) -> Result<EventSchema> {
    let mut defs: Vec<EventTypeDef> = Vec::new();
    for s in sentences {
        for e in &s.events {
            let pos = match defs.iter().position(|d| d.name == e.event_type) {
                Some(p) => p,
                None => {
                    defs.push(EventTypeDef {
                        name: e.event_type.clone(),
                        roles: Vec::new(),
                    });
                    defs.len() - 1
                }
            };
            for a in &e.arguments {
                if !defs[pos].roles.contains(&a.role) {
                    defs[pos].roles.push(a.role.clone());
                }
            }
        }
    }
    defs.retain(|d| !d.roles.is_empty());
    EventSchema::new(defs)
}

//! BIO tag space over (event type, role) slots and its transition mask.

use std::collections::HashMap;

use crate::corpus::{AnnotatedSentence, EventSchema};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tag {
    O,
    /// Beginning of a span filling slot `k`.
    B(usize),
    /// Continuation of a span filling slot `k`.
    I(usize),
}

/// Tags `O, B-s0, I-s0, B-s1, I-s1, ...` with slots in schema order.
#[derive(Clone, Debug)]
pub struct TagSpace {
    slots: Vec<(String, String)>,
    slot_index: HashMap<(String, String), usize>,
    mask: Vec<bool>,
}

impl TagSpace {
    pub fn new(schema: &EventSchema) -> Self {
        let mut slots = Vec::new();
        for t in schema.types() {
            for r in &t.roles {
                slots.push((t.name.clone(), r.clone()));
            }
        }
        let slot_index = slots
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        let mut ts = TagSpace {
            slots,
            slot_index,
            mask: Vec::new(),
        };
        let n = ts.len();
        ts.mask = (0..n * n)
            .map(|k| ts.allowed(Some(k / n), k % n))
            .collect();
        ts
    }

    pub fn len(&self) -> usize {
        1 + 2 * self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn slots(&self) -> &[(String, String)] {
        &self.slots
    }

    pub fn slot(&self, event_type: &str, role: &str) -> Option<usize> {
        self.slot_index
            .get(&(event_type.to_owned(), role.to_owned()))
            .copied()
    }

    pub fn index(&self, tag: Tag) -> usize {
        match tag {
            Tag::O => 0,
            Tag::B(k) => 1 + 2 * k,
            Tag::I(k) => 2 + 2 * k,
        }
    }

    pub fn tag(&self, index: usize) -> Tag {
        if index == 0 {
            Tag::O
        } else if index % 2 == 1 {
            Tag::B((index - 1) / 2)
        } else {
            Tag::I((index - 2) / 2)
        }
    }

    pub fn name(&self, index: usize) -> String {
        match self.tag(index) {
            Tag::O => "O".into(),
            Tag::B(k) => format!("B-{}:{}", self.slots[k].0, self.slots[k].1),
            Tag::I(k) => format!("I-{}:{}", self.slots[k].0, self.slots[k].1),
        }
    }

    /// Whether `to` may follow `from`; `None` is the sequence start.
    pub fn allowed(&self, from: Option<usize>, to: usize) -> bool {
        match self.tag(to) {
            Tag::I(k) => matches!(from.map(|f| self.tag(f)), Some(Tag::B(j) | Tag::I(j)) if j == k),
            _ => true,
        }
    }

    /// Row-major `n × n` matrix of allowed transitions.
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn start_allowed(&self) -> Vec<bool> {
        (0..self.len()).map(|t| self.allowed(None, t)).collect()
    }

    /// Returns the first illegal transition as `(from, to, position)`.
    pub fn first_violation(&self, path: &[usize]) -> Option<(String, String, usize)> {
        let mut prev = None;
        for (i, &t) in path.iter().enumerate() {
            if !self.allowed(prev, t) {
                let from = prev.map_or_else(|| "START".to_owned(), |p| self.name(p));
                return Some((from, self.name(t), i));
            }
            prev = Some(t);
        }
        None
    }

    pub fn check_path(&self, path: &[usize]) -> Result<()> {
        match self.first_violation(path) {
            None => Ok(()),
            Some((from, to, position)) => Err(Error::IllegalTransition { from, to, position }),
        }
    }

    /// Gold tags for a sentence. Overlapping spans keep the earlier-listed one.
    pub fn encode(&self, sentence: &AnnotatedSentence) -> Vec<usize> {
        let n = sentence.text.chars().count();
        let mut tags = vec![0; n];
        for e in &sentence.events {
            for a in &e.arguments {
                let Some(k) = self.slot(&e.event_type, &a.role) else { continue };
                let (s, t) = (a.start, a.end().min(n));
                if s >= t || tags[s..t].iter().any(|&x| x != 0) {
                    continue;
                }
                tags[s] = self.index(Tag::B(k));
                for x in &mut tags[s + 1..t] {
                    *x = self.index(Tag::I(k));
                }
            }
        }
        tags
    }
}

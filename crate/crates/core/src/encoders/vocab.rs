//! Word vocabulary and the fused title/argument/role token sequence.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::NewsItem;

pub const PAD: usize = 0;
/// Stands in for a sequence whose tokens are all out of vocabulary.
pub const EMPTY: usize = 1;
pub const EMPTY_TOKEN: &str = "<empty>";

/// Lowercased whitespace tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Role names split on whitespace, hyphens and underscores.
pub fn tokenize_role(role: &str) -> Vec<String> {
    role.split(|c: char| c.is_whitespace() || c == '-' || c == '_')
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct WordVocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for WordVocab {
    fn from(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i + 2))
            .collect();
        Self { words, index }
    }
}

impl From<WordVocab> for Vec<String> {
    fn from(v: WordVocab) -> Self {
        v.words
    }
}

impl WordVocab {
    /// Every token of titles, arguments, role names and category names.
    pub fn build(news: &[NewsItem]) -> Self {
        let mut set = BTreeSet::new();
        for n in news {
            set.extend(n.title.iter().flat_map(|t| tokenize(t)));
            set.extend(tokenize(&n.category));
            for e in &n.events {
                for a in &e.arguments {
                    set.extend(tokenize(&a.argument));
                    set.extend(tokenize_role(&a.role));
                }
            }
        }
        set.remove(EMPTY_TOKEN);
        Self::from(set.into_iter().collect::<Vec<_>>())
    }

    /// Number of rows in the embedding table, reserved ids included.
    pub fn len(&self) -> usize {
        self.words.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        match id {
            PAD => None,
            EMPTY => Some(EMPTY_TOKEN),
            i => self.words.get(i - 2).map(String::as_str),
        }
    }
}

/// Title tokens, then argument tokens of every event, then the role tokens
/// of those arguments in the same order.
pub fn input_tokens(news: &NewsItem, roles_and_arguments: bool) -> Vec<String> {
    let mut out: Vec<String> = news.title.iter().flat_map(|t| tokenize(t)).collect();
    if roles_and_arguments {
        let args = news.events.iter().flat_map(|e| &e.arguments);
        out.extend(args.clone().flat_map(|a| tokenize(&a.argument)));
        out.extend(args.flat_map(|a| tokenize_role(&a.role)));
    }
    out
}

/// Vocabulary ids of [`input_tokens`], out-of-vocabulary tokens dropped and
/// truncated to `max_len`; `[EMPTY]` when nothing survives.
pub fn build_input_sequence(
    news: &NewsItem,
    vocab: &WordVocab,
    max_len: usize,
    roles_and_arguments: bool,
) -> Vec<usize> {
    let mut ids: Vec<usize> = input_tokens(news, roles_and_arguments)
        .iter()
        .filter_map(|t| vocab.id(t))
        .take(max_len)
        .collect();
    if ids.is_empty() {
        ids.push(EMPTY);
    }
    ids
}

//! News metadata and impression logs.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ee::ArgumentSpan;
use super::jsonl::{read_jsonl, write_jsonl};
use crate::error::{Error, Result};

/// One extracted event: a type, its role-filling arguments and coarse class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub event_type: String,
    pub arguments: Vec<ArgumentSpan>,
    pub class: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewsItem {
    pub news_id: String,
    pub title: Vec<String>,
    pub category: String,
    pub body: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<EventRecord>,
}

impl NewsItem {
    /// Distinct event types in first-appearance order.
    pub fn event_types(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for e in &self.events {
            if !out.contains(&e.event_type.as_str()) {
                out.push(&e.event_type);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpressionLog {
    pub user_id: String,
    /// Epoch seconds.
    #[serde(rename = "ts")]
    pub timestamp: i64,
    pub candidates: Vec<String>,
    pub clicked: Vec<String>,
}

impl ImpressionLog {
    pub fn is_clicked(&self, news_id: &str) -> bool {
        self.clicked.iter().any(|c| c == news_id)
    }

    pub fn non_clicked(&self) -> impl Iterator<Item = &String> {
        self.candidates.iter().filter(|c| !self.is_clicked(c))
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::Data(format!(
                "impression of user {} at {} has no candidates",
                self.user_id, self.timestamp
            )));
        }
        let cands: HashSet<&String> = self.candidates.iter().collect();
        if let Some(c) = self.clicked.iter().find(|c| !cands.contains(c)) {
            return Err(Error::Data(format!(
                "impression of user {} at {} clicks {c} which is not a candidate",
                self.user_id, self.timestamp
            )));
        }
        Ok(())
    }
}

/// Checks uniqueness of news ids and that every impression references known news.
pub fn check_integrity(news: &[NewsItem], impressions: &[ImpressionLog]) -> Result<()> {
    let mut ids = HashSet::with_capacity(news.len());
    for n in news {
        if !ids.insert(n.news_id.as_str()) {
            return Err(Error::Data(format!("duplicate news_id {}", n.news_id)));
        }
    }
    let mut dangling = BTreeSet::new();
    for imp in impressions {
        imp.validate()?;
        for c in &imp.candidates {
            if !ids.contains(c.as_str()) {
                dangling.insert(c.clone());
            }
        }
    }
    if dangling.is_empty() {
        Ok(())
    } else {
        Err(Error::DanglingNews(dangling.into_iter().collect()))
    }
}

pub fn load_news(path: impl AsRef<Path>) -> Result<Vec<NewsItem>> {
    read_jsonl(path)
}

pub fn load_impressions(path: impl AsRef<Path>) -> Result<Vec<ImpressionLog>> {
    read_jsonl(path)
}

/// Loads both log files and checks referential integrity.
pub fn load_logs(
    news_path: impl AsRef<Path>,
    impressions_path: impl AsRef<Path>,
) -> Result<(Vec<NewsItem>, Vec<ImpressionLog>)> {
    let news = load_news(news_path)?;
    let impressions = load_impressions(impressions_path)?;
    check_integrity(&news, &impressions)?;
    Ok((news, impressions))
}

pub fn write_news(path: impl AsRef<Path>, news: &[NewsItem]) -> Result<()> {
    write_jsonl(path, news)
}

pub fn write_impressions(path: impl AsRef<Path>, impressions: &[ImpressionLog]) -> Result<()> {
    write_jsonl(path, impressions)
}

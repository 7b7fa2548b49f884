//! Per-user click timelines.

use std::collections::HashMap;

use crate::corpus::ImpressionLog;

/// Clicks of every user sorted by timestamp, ties by news id.
#[derive(Clone, Debug, Default)]
pub struct ClickHistory {
    clicks: HashMap<String, Vec<(i64, String)>>,
}

impl ClickHistory {
    pub fn from_logs<'a>(logs: impl IntoIterator<Item = &'a ImpressionLog>) -> Self {
        let mut clicks: HashMap<String, Vec<(i64, String)>> = HashMap::new();
        for log in logs {
            let entry = clicks.entry(log.user_id.clone()).or_default();
            entry.extend(log.clicked.iter().map(|c| (log.timestamp, c.clone())));
        }
        for v in clicks.values_mut() {
            v.sort();
        }
        Self { clicks }
    }

    /// The latest `max_len` clicks strictly before `before`, oldest first.
    pub fn recent(&self, user: &str, before: i64, max_len: usize) -> Vec<&str> {
        let Some(all) = self.clicks.get(user) else {
            return Vec::new();
        };
        let end = all.partition_point(|(ts, _)| *ts < before);
        let start = end.saturating_sub(max_len);
        all[start..end].iter().map(|(_, n)| n.as_str()).collect()
    }

    /// Every click of `user`, oldest first.
    pub fn all(&self, user: &str) -> Vec<&str> {
        self.recent(user, i64::MAX, usize::MAX)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(user: &str, ts: i64, clicked: &[&str]) -> ImpressionLog {
        ImpressionLog {
            user_id: user.into(),
            timestamp: ts,
            candidates: clicked.iter().map(|s| s.to_string()).collect(),
            clicked: clicked.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn keeps_latest_strictly_earlier_clicks() {
        let logs = vec![
            log("u", 30, &["c"]),
            log("u", 10, &["a"]),
            log("u", 20, &["b"]),
            log("v", 5, &["z"]),
        ];
        let h = ClickHistory::from_logs(&logs);
        assert_eq!(h.recent("u", 30, 15), ["a", "b"]);
        assert_eq!(h.recent("u", 31, 2), ["b", "c"]);
        assert!(h.recent("u", 10, 15).is_empty());
        assert!(h.recent("w", 100, 15).is_empty());
        assert_eq!(h.all("u"), ["a", "b", "c"]);
    }
}

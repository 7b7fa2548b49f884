//! Impression-level ranking metrics.

use serde::{Deserialize, Serialize};

use crate::corpus::ImpressionLog;
use crate::error::{Error, Result};

/// `P(score_pos > score_neg) + ½·P(tie)` over all positive/negative pairs;
/// `None` unless both classes are present.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0usize;
    for (sp, _) in scores.iter().zip(labels).filter(|e| *e.1) {
        for (sn, _) in scores.iter().zip(labels).filter(|e| !*e.1) {
            pairs += 1;
            if sp > sn {
                wins += 1.0;
            } else if sp == sn {
                wins += 0.5;
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

/// Pooled AUC over every positive/negative pair of all impressions, by
/// rank sums with mid-ranks for ties.
pub fn global_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Candidate indices by descending score; ties keep candidate order.
pub fn rank_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

fn has_both(ranked: &[bool]) -> bool {
    ranked.iter().any(|&l| l) && ranked.iter().any(|&l| !l)
}

/// Mean reciprocal rank of the positives in `ranked` (labels in ranked order).
pub fn mrr(ranked: &[bool]) -> Option<f64> {
    if !has_both(ranked) {
        return None;
    }
    let (sum, n) = ranked
        .iter()
        .enumerate()
        .filter(|e| *e.1)
        .fold((0.0, 0usize), |(s, n), (i, _)| (s + 1.0 / (i + 1) as f64, n + 1));
    Some(sum / n as f64)
}

/// Binary-relevance NDCG@k of labels in ranked order.
pub fn ndcg(ranked: &[bool], k: usize) -> Option<f64> {
    if !has_both(ranked) {
        return None;
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|e| *e.1)
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum();
    let n_pos = ranked.iter().filter(|&&l| l).count();
    let ideal: f64 = (0..n_pos.min(k)).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
    Some(dcg / ideal)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AucMode {
    /// Mean of per-impression AUCs.
    #[default]
    Impression,
    /// One AUC over all pooled candidates.
    Global,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpressionMetrics {
    pub user_id: String,
    pub ts: i64,
    pub auc: f64,
    pub mrr: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auc: f64,
    pub mrr: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
    pub auc_mode: AucMode,
    /// Impressions that lack a clicked or a non-clicked candidate.
    pub n_excluded: usize,
    pub n_impressions: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_impression: Vec<ImpressionMetrics>,
}

/// Scores `scores[i][j]` belong to candidate `j` of `impressions[i]`.
pub fn evaluate(scores: &[Vec<f64>], impressions: &[ImpressionLog], mode: AucMode) -> Result<MetricReport> {
    if scores.len() != impressions.len() {
        return Err(Error::Data(format!(
            "{} score lists for {} impressions",
            scores.len(),
            impressions.len()
        )));
    }
    let mut per = Vec::new();
    let mut excluded = 0;
    let mut pooled_scores = Vec::new();
    let mut pooled_labels = Vec::new();
    for (s, imp) in scores.iter().zip(impressions) {
        if s.len() != imp.candidates.len() {
            return Err(Error::Data(format!(
                "impression of {} at {} has {} candidates but {} scores",
                imp.user_id,
                imp.timestamp,
                imp.candidates.len(),
                s.len()
            )));
        }
        let labels: Vec<bool> = imp.candidates.iter().map(|c| imp.is_clicked(c)).collect();
        let Some(a) = auc(s, &labels) else {
            excluded += 1;
            continue;
        };
        pooled_scores.extend_from_slice(s);
        pooled_labels.extend_from_slice(&labels);
        let ranked: Vec<bool> = rank_order(s).into_iter().map(|i| labels[i]).collect();
        per.push(ImpressionMetrics {
            user_id: imp.user_id.clone(),
            ts: imp.timestamp,
            auc: a,
            mrr: mrr(&ranked).expect("both classes"),
            ndcg5: ndcg(&ranked, 5).expect("both classes"),
            ndcg10: ndcg(&ranked, 10).expect("both classes"),
        });
    }
    if per.is_empty() {
        return Err(Error::Empty("impressions with both clicked and non-clicked candidates"));
    }
    let mean = |f: fn(&ImpressionMetrics) -> f64| per.iter().map(f).sum::<f64>() / per.len() as f64;
    let auc = match mode {
        AucMode::Impression => mean(|m| m.auc),
        AucMode::Global => global_auc(&pooled_scores, &pooled_labels).expect("both classes"),
    };
    Ok(MetricReport {
        auc,
        mrr: mean(|m| m.mrr),
        ndcg5: mean(|m| m.ndcg5),
        ndcg10: mean(|m| m.ndcg10),
        auc_mode: mode,
        n_excluded: excluded,
        n_impressions: per.len(),
        per_impression: per,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_examples() {
        assert_eq!(auc(&[0.9, 0.1], &[true, false]), Some(1.0));
        assert_eq!(auc(&[0.3, 0.3], &[true, false]), Some(0.5));
        assert_eq!(auc(&[0.3, 0.3], &[true, true]), None);
        assert_eq!(mrr(&[true, false]), Some(1.0));
        assert_eq!(mrr(&[false, false, false, true, false]), Some(0.25));
        assert!((mrr(&[true, false, true]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(ndcg(&[true, false, false], 5), Some(1.0));
        assert!((ndcg(&[false, true, false], 5).unwrap() - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert_eq!(ndcg(&[false, false, true], 2), Some(0.0));
    }

    #[test]
    fn global_auc_with_ties() {
        let s = [0.5, 0.5, 0.2, 0.9];
        let l = [true, false, false, true];
        assert_eq!(global_auc(&s, &l), auc(&s, &l));
    }

    #[test]
    fn evaluate_excludes_degenerate() {
        let imp = |c: &[&str], k: &[&str]| ImpressionLog {
            user_id: "u".into(),
            timestamp: 1,
            candidates: c.iter().map(|s| s.to_string()).collect(),
            clicked: k.iter().map(|s| s.to_string()).collect(),
        };
        let imps = vec![imp(&["a", "b"], &["a"]), imp(&["a", "b"], &["a", "b"])];
        let r = evaluate(&[vec![1.0, 0.0], vec![1.0, 0.0]], &imps, AucMode::Impression).unwrap();
        assert_eq!((r.n_impressions, r.n_excluded), (1, 1));
        assert_eq!(r.auc, 1.0);
        assert!(evaluate(&[vec![1.0, 0.0]], &imps[1..], AucMode::Impression).is_err());
        assert!(evaluate(&[vec![1.0]], &imps[..1], AucMode::Impression).is_err());
    }
}

//! Scoring predicted event annotations against gold annotations.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::AnnotatedSentence;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeScore {
    /// Share of predicted (sentence, type) records whose sentence has a gold
    /// event of that type; `None` when the type was never predicted.
    pub precision: Option<f64>,
    pub n_predicted: usize,
    /// Sentence-level balanced accuracy of the "sentence has this type"
    /// decision; `None` unless gold has both positive and negative sentences.
    pub balanced_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EeReport {
    /// Mean of per-type precision over types with at least one prediction.
    pub macro_precision: Option<f64>,
    /// Mean per-type balanced accuracy over types where it is defined.
    pub macro_auc_like: Option<f64>,
    pub span_precision: f64,
    pub span_recall: f64,
    /// F1 over (sentence, type, role, argument) tuples.
    pub span_f1: f64,
    pub per_type: BTreeMap<String, TypeScore>,
    pub n_sentences: usize,
}

type Tuple = (String, String, String, String);

fn tuples(s: &AnnotatedSentence) -> BTreeSet<Tuple> {
    let mut out = BTreeSet::new();
    for e in &s.events {
        for a in &e.arguments {
            out.insert((s.id.clone(), e.event_type.clone(), a.role.clone(), a.argument.clone()));
        }
    }
    out
}

fn types_of(s: &AnnotatedSentence) -> BTreeSet<&str> {
    s.events.iter().map(|e| e.event_type.as_str()).collect()
}

/// Compares predictions with gold; both must cover the same sentence ids.
pub fn eval_ee(predicted: &[AnnotatedSentence], gold: &[AnnotatedSentence]) -> Result<EeReport> {
    let gold_by_id: HashMap<&str, &AnnotatedSentence> = gold.iter().map(|s| (s.id.as_str(), s)).collect();
    if gold_by_id.len() != gold.len() {
        return Err(Error::Data("duplicate sentence ids in gold annotations".into()));
    }
    let pred_ids: BTreeSet<&str> = predicted.iter().map(|s| s.id.as_str()).collect();
    if pred_ids.len() != predicted.len() || pred_ids != gold_by_id.keys().copied().collect() {
        let missing: Vec<&str> = gold_by_id
            .keys()
            .copied()
            .filter(|id| !pred_ids.contains(id))
            .chain(pred_ids.iter().copied().filter(|id| !gold_by_id.contains_key(id)))
            .take(5)
            .collect();
        return Err(Error::Data(format!(
            "predicted and gold sentence sets are misaligned (e.g. {missing:?})"
        )));
    }

    let mut tp = 0usize;
    let mut n_pred = 0usize;
    let mut n_gold = 0usize;
    let mut precision_counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut all_types: BTreeSet<String> = BTreeSet::new();
    for p in predicted {
        let g = gold_by_id[p.id.as_str()];
        let (pt, gt) = (tuples(p), tuples(g));
        tp += pt.intersection(&gt).count();
        n_pred += pt.len();
        n_gold += gt.len();
        let gold_types = types_of(g);
        for e in &p.events {
            let c = precision_counts.entry(e.event_type.clone()).or_default();
            c.1 += 1;
            if gold_types.contains(e.event_type.as_str()) {
                c.0 += 1;
            }
        }
        all_types.extend(types_of(p).into_iter().map(str::to_owned));
        all_types.extend(gold_types.into_iter().map(str::to_owned));
    }

    let mut per_type = BTreeMap::new();
    for t in &all_types {
        let (mut pos, mut neg, mut tp_s, mut tn_s) = (0usize, 0usize, 0usize, 0usize);
        for p in predicted {
            let g = gold_by_id[p.id.as_str()];
            let truth = g.events.iter().any(|e| &e.event_type == t);
            let guess = p.events.iter().any(|e| &e.event_type == t);
            if truth {
                pos += 1;
                tp_s += usize::from(guess);
            } else {
                neg += 1;
                tn_s += usize::from(!guess);
            }
        }
        let balanced_accuracy =
            (pos > 0 && neg > 0).then(|| 0.5 * (tp_s as f64 / pos as f64 + tn_s as f64 / neg as f64));
        let (correct, total) = precision_counts.get(t).copied().unwrap_or((0, 0));
        per_type.insert(
            t.clone(),
            TypeScore {
                precision: (total > 0).then(|| correct as f64 / total as f64),
                n_predicted: total,
                balanced_accuracy,
            },
        );
    }
    let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let macro_precision = mean(per_type.values().filter_map(|s| s.precision).collect());
    let macro_auc_like = mean(per_type.values().filter_map(|s| s.balanced_accuracy).collect());

    let (span_precision, span_recall, span_f1) = if n_pred == 0 && n_gold == 0 {
        (1.0, 1.0, 1.0)
    } else {
        let p = if n_pred == 0 { 0.0 } else { tp as f64 / n_pred as f64 };
        let r = if n_gold == 0 { 0.0 } else { tp as f64 / n_gold as f64 };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        (p, r, f)
    };
    Ok(EeReport {
        macro_precision,
        macro_auc_like,
        span_precision,
        span_recall,
        span_f1,
        per_type,
        n_sentences: gold.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AnnotatedEvent, ArgumentSpan};

    fn sent(id: &str, events: &[(&str, &str, &str)]) -> AnnotatedSentence {
        let mut evs: Vec<AnnotatedEvent> = Vec::new();
        for (t, r, a) in events {
            let span = ArgumentSpan {
                role: (*r).into(),
                argument: (*a).into(),
                start: 0,
            };
            match evs.iter_mut().find(|e| e.event_type == *t) {
                Some(e) => e.arguments.push(span),
                None => evs.push(AnnotatedEvent {
                    event_type: (*t).into(),
                    arguments: vec![span],
                }),
            }
        }
        AnnotatedSentence {
            id: id.into(),
            text: String::new(),
            events: evs,
        }
    }

    #[test]
    fn identical_sets_score_one() {
        let gold = vec![sent("1", &[("A/x", "r", "a")]), sent("2", &[("B/y", "s", "b")])];
        let r = eval_ee(&gold, &gold).unwrap();
        assert_eq!(r.macro_precision, Some(1.0));
        assert_eq!(r.span_f1, 1.0);
        assert_eq!(r.macro_auc_like, Some(1.0));
    }

    #[test]
    fn empty_predictions() {
        let gold = vec![sent("1", &[("A/x", "r", "a")])];
        let pred = vec![sent("1", &[])];
        let r = eval_ee(&pred, &gold).unwrap();
        assert_eq!(r.macro_precision, None);
        assert_eq!(r.span_f1, 0.0);
    }

    #[test]
    fn one_right_one_wrong_is_half_precision() {
        let gold = vec![sent("1", &[("A/x", "r", "a")]), sent("2", &[("B/y", "s", "b")])];
        let pred = vec![sent("1", &[("A/x", "r", "a")]), sent("2", &[("A/x", "r", "b")])];
        let r = eval_ee(&pred, &gold).unwrap();
        assert_eq!(r.per_type["A/x"].precision, Some(0.5));
        assert_eq!(r.macro_precision, Some(0.5));
        assert!((r.span_f1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn misaligned_ids_are_rejected() {
        let gold = vec![sent("1", &[])];
        let pred = vec![sent("2", &[])];
        assert!(eval_ee(&pred, &gold).is_err());
    }
}

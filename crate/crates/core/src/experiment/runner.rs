//! Pipeline stages chained into variant runs, ablations and the
//! training-fraction study.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::variants::VariantSpec;
use crate::corpus::{
    check_integrity, generate_synthetic, subsample, time_split, EventSchema, ImpressionLog, NewsItem, Split,
    SplitSpec, SyntheticCorpus,
};
use crate::encoders::ClickHistory;
use crate::error::{Error, Result};
use crate::extractor::{eval_ee, extract_corpus, predict_annotated, train_ee, EeConfig, EeReport, EpochStats, TaggerModel};
use crate::graph::{build_graph, embed_graph, event_type_histories, GraphConfig, GraphEmbedding};
use crate::metrics::{evaluate, MetricReport};
use crate::predictor::{train_rec, RecModel, TrainHistory};

/// News with extracted events plus the time-ordered log split.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub schema: EventSchema,
    pub news: Vec<NewsItem>,
    pub split: Split,
}

impl PreparedData {
    pub fn new(schema: EventSchema, news: Vec<NewsItem>, impressions: &[ImpressionLog], spec: SplitSpec) -> Result<Self> {
        check_integrity(&news, impressions)?;
        Ok(Self {
            schema,
            news,
            split: time_split(impressions, spec)?,
        })
    }

    /// The same data with the training logs replaced.
    pub fn with_train(&self, train: Vec<ImpressionLog>) -> Self {
        Self {
            schema: self.schema.clone(),
            news: self.news.clone(),
            split: Split {
                train,
                val: self.split.val.clone(),
                test: self.split.test.clone(),
            },
        }
    }

    /// Clicks of all three splits; lookups only ever see earlier clicks.
    pub fn click_history(&self) -> ClickHistory {
        ClickHistory::from_logs(self.split.train.iter().chain(&self.split.val).chain(&self.split.test))
    }
}

pub struct EeStage {
    pub model: TaggerModel,
    pub epochs: Vec<EpochStats>,
    /// Scores on the held-out annotated sentences.
    pub report: EeReport,
}

/// Trains the extractor on the annotated sentences, scores it on the
/// held-out ones and attaches extracted events to every news item.
pub fn train_and_extract(corpus: &SyntheticCorpus, config: &EeConfig, seed: u64) -> Result<(EeStage, Vec<NewsItem>)> {
    let (model, epochs) = train_ee(&corpus.ee_train, &corpus.schema, config, seed)?;
    let report = eval_ee(&predict_annotated(&model, &corpus.ee_test)?, &corpus.ee_test)?;
    let news = extract_corpus(&model, &corpus.news)?;
    Ok((EeStage { model, epochs, report }, news))
}

/// Generates the synthetic corpus and runs extraction over it.
pub fn prepare_synthetic(config: &ExperimentConfig, seed: u64) -> Result<(SyntheticCorpus, EeStage, PreparedData)> {
    let corpus = generate_synthetic(&config.data.synthetic, seed)?;
    let (ee, news) = train_and_extract(&corpus, &config.ee, seed)?;
    let data = PreparedData::new(corpus.schema.clone(), news, &corpus.impressions, config.data.split)?;
    Ok((corpus, ee, data))
}

/// Co-occurrence graph of the training clicks and its node2vec embedding,
/// with cold-start vectors for schema types absent from the graph.
pub fn embed_event_types(
    schema: &EventSchema,
    news: &[NewsItem],
    train: &[ImpressionLog],
    config: &GraphConfig,
    seed: u64,
) -> Result<GraphEmbedding> {
    let histories = event_type_histories(news, train);
    let graph = build_graph(histories.values().map(Vec::as_slice), config.cooccurrence_window);
    let types = schema.event_type_names();
    embed_graph(graph, types.iter().map(String::as_str), config, seed)
}

/// Builds and trains the recommender of one variant on `data.split.train`.
pub fn train_variant(
    variant: &VariantSpec,
    data: &PreparedData,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(RecModel, TrainHistory)> {
    let emb = embed_event_types(&data.schema, &data.news, &data.split.train, &config.graph, seed)?;
    let mut model = RecModel::init(
        config.encoder.clone(),
        variant.channels,
        config.trainer.predictor.clone(),
        &data.news,
        &emb.embedding,
        &data.split.train,
        seed,
    )?;
    let history = train_rec(
        &mut model,
        &data.split.train,
        &data.split.val,
        &data.click_history(),
        &config.trainer.trainer,
        seed,
    )?;
    Ok((model, history))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantRun {
    pub variant: String,
    pub fraction: f64,
    pub seed: u64,
    pub report: MetricReport,
    pub history: TrainHistory,
}

/// Trains one variant and evaluates it on the test split.
pub fn run_variant(variant: &VariantSpec, data: &PreparedData, config: &ExperimentConfig, seed: u64) -> Result<VariantRun> {
    let (model, history) = train_variant(variant, data, config, seed)?;
    let scores = model.score_impressions(&data.split.test, &data.click_history())?;
    let mut report = evaluate(&scores, &data.split.test, config.eval.auc_mode)?;
    report.per_impression.clear();
    Ok(VariantRun {
        variant: variant.name.clone(),
        fraction: 1.0,
        seed,
        report,
        history,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub fraction: f64,
    pub variant: String,
    pub n_seeds: usize,
    pub auc: MeanStd,
    pub mrr: MeanStd,
    pub ndcg5: MeanStd,
    pub ndcg10: MeanStd,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<TableRow>,
}

impl ResultTable {
    /// Groups runs by (fraction, variant) in first-appearance order.
    pub fn from_runs(runs: &[VariantRun]) -> Self {
        let mut keys: Vec<(f64, &str)> = Vec::new();
        for r in runs {
            if !keys.contains(&(r.fraction, r.variant.as_str())) {
                keys.push((r.fraction, &r.variant));
            }
        }
        let rows = keys
            .into_iter()
            .map(|(f, v)| {
                let cell: Vec<&MetricReport> = runs
                    .iter()
                    .filter(|r| r.fraction == f && r.variant == v)
                    .map(|r| &r.report)
                    .collect();
                let stat = |g: fn(&MetricReport) -> f64| MeanStd::of(&cell.iter().map(|m| g(m)).collect::<Vec<_>>());
                TableRow {
                    fraction: f,
                    variant: v.to_owned(),
                    n_seeds: cell.len(),
                    auc: stat(|m| m.auc),
                    mrr: stat(|m| m.mrr),
                    ndcg5: stat(|m| m.ndcg5),
                    ndcg10: stat(|m| m.ndcg10),
                }
            })
            .collect();
        Self { rows }
    }

    pub fn row(&self, fraction: f64, variant: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.fraction == fraction && r.variant == variant)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "fraction,variant,n_seeds,auc_mean,auc_std,mrr_mean,mrr_std,ndcg5_mean,ndcg5_std,ndcg10_mean,ndcg10_std\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.fraction,
                r.variant,
                r.n_seeds,
                r.auc.mean,
                r.auc.std,
                r.mrr.mean,
                r.mrr.std,
                r.ndcg5.mean,
                r.ndcg5.std,
                r.ndcg10.mean,
                r.ndcg10.std
            );
        }
        s
    }
}

/// `n` consecutive seeds starting at `base`.
pub fn seeds(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| base.wrapping_add(i)).collect()
}

/// Every variant under every seed on the full training split.
pub fn run_ablation(
    data: &PreparedData,
    config: &ExperimentConfig,
    variants: &[VariantSpec],
    seeds: &[u64],
) -> Result<(ResultTable, Vec<VariantRun>)> {
    run_fraction_study(data, config, &[1.0], variants, seeds)
}

/// Every variant under every seed for each fraction of the training logs,
/// subsampled per user. Validation and test logs stay whole.
pub fn run_fraction_study(
    data: &PreparedData,
    config: &ExperimentConfig,
    fractions: &[f64],
    variants: &[VariantSpec],
    seeds: &[u64],
) -> Result<(ResultTable, Vec<VariantRun>)> {
    if fractions.is_empty() || variants.is_empty() || seeds.is_empty() {
        return Err(Error::Config("fractions, variants and seeds must be non-empty".into()));
    }
    let mut runs = Vec::new();
    for &f in fractions {
        for &seed in seeds {
            let sub = data.with_train(subsample(&data.split.train, f, seed)?);
            for v in variants {
                let mut run = run_variant(v, &sub, config, seed)?;
                run.fraction = f;
                runs.push(run);
            }
        }
    }
    Ok((ResultTable::from_runs(&runs), runs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_sample_std() {
        let m = MeanStd::of(&[1.0, 2.0, 3.0]);
        assert_eq!(m.mean, 2.0);
        assert!((m.std - 1.0).abs() < 1e-15);
        assert_eq!(MeanStd::of(&[4.0]).std, 0.0);
    }

    #[test]
    fn seeds_are_consecutive() {
        assert_eq!(seeds(5, 3), vec![5, 6, 7]);
    }
}

//! The end-to-end recommender: encoders plus scoring head.

use std::collections::HashMap;
use std::path::Path;

use eenr_tensor::{ParamStore, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::head::{group_loss, init_head, score_var};
use super::instances::{sample_instances, TrainInstance};
use crate::corpus::{read_json, write_json, write_jsonl, ImpressionLog, NewsItem};
use crate::encoders::{Binder, Channels, ClickHistory, EncoderConfig, EncoderMeta, Encoders, UserQuery};
use crate::error::{Error, Result};
use crate::graph::ETypeEmbedding;
use crate::metrics::{evaluate, AucMode};

const SCORE_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    pub hidden: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self { hidden: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub neg_ratio: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 128,
            learning_rate: 1e-3,
            neg_ratio: 4,
            patience: 3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Validation AUC before training, then after each epoch.
    pub val_auc: Vec<f64>,
    /// Epoch whose parameters were kept; 0 means the initial ones.
    pub best_epoch: usize,
    pub n_instances: usize,
    pub n_skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub news_id: String,
    pub prob: f64,
}

/// Ranked suggestion list of one impression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub user_id: String,
    pub ts: i64,
    pub ranked: Vec<RankedItem>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ModelMeta {
    encoder: EncoderMeta,
    predictor: PredictorConfig,
}

#[derive(Clone, Debug)]
pub struct RecModel {
    pub encoders: Encoders,
    pub predictor: PredictorConfig,
    pub store: ParamStore,
}

impl RecModel {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        encoder: EncoderConfig,
        channels: Channels,
        predictor: PredictorConfig,
        news: &[NewsItem],
        etypes: &ETypeEmbedding,
        train_logs: &[ImpressionLog],
        seed: u64,
    ) -> Result<Self> {
        let mut store = ParamStore::new();
        let encoders = Encoders::init(&mut store, encoder, channels, news, etypes, train_logs, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4EAD);
        init_head(&mut store, encoders.output_dim(), predictor.hidden, &mut rng)?;
        Ok(Self {
            encoders,
            predictor,
            store,
        })
    }

    /// Writes the parameter checkpoint and the JSON metadata.
    pub fn save(&self, params: &Path, meta: &Path) -> Result<()> {
        self.store.save(params)?;
        write_json(
            meta,
            &ModelMeta {
                encoder: self.encoders.meta().clone(),
                predictor: self.predictor.clone(),
            },
        )
    }

    pub fn load(params: &Path, meta: &Path, news: &[NewsItem]) -> Result<Self> {
        let m: ModelMeta = read_json(meta)?;
        Ok(Self {
            encoders: Encoders::from_meta(m.encoder, news)?,
            predictor: m.predictor,
            store: ParamStore::load(params)?,
        })
    }

    fn news_row(&self, id: &str) -> Result<usize> {
        self.encoders
            .news_row(id)
            .ok_or_else(|| Error::DanglingNews(vec![id.to_owned()]))
    }

    /// Mean grouped loss of `instances` on `tape` with trainable parameters.
    pub fn batch_loss<'t>(
        &self,
        tape: &'t Tape,
        instances: &[&TrainInstance],
        history: &ClickHistory,
        cold: &Tensor,
    ) -> Result<Var<'t>> {
        if instances.is_empty() {
            return Err(Error::Empty("instance batch"));
        }
        let mut local: HashMap<usize, usize> = HashMap::new();
        let mut rows = Vec::new();
        let mut slot = |row: usize| {
            *local.entry(row).or_insert_with(|| {
                rows.push(row);
                rows.len() - 1
            })
        };
        let group = 1 + instances[0].negatives.len();
        let mut cands = Vec::with_capacity(instances.len() * group);
        let mut queries = Vec::with_capacity(instances.len());
        for inst in instances {
            if 1 + inst.negatives.len() != group {
                return Err(Error::Data("instances differ in negative count".into()));
            }
            cands.push(slot(self.news_row(&inst.positive)?));
            for n in &inst.negatives {
                cands.push(slot(self.news_row(n)?));
            }
            let hist = history.recent(&inst.user_id, inst.timestamp, self.encoders.meta().config.history_len);
            let mut h = Vec::with_capacity(hist.len());
            for id in hist {
                h.push(slot(self.news_row(id)?));
            }
            queries.push(UserQuery {
                row: self.encoders.user_row(&inst.user_id),
                history: h,
            });
        }
        let mut b = Binder::new(&self.store, tape, true);
        let news = self.encoders.encode_news(&mut b, &rows)?;
        let cold = tape.constant(cold.clone());
        let users = self.encoders.encode_users(&mut b, news.nsem, &queries, cold)?;
        let user_rows: Vec<usize> = (0..instances.len()).flat_map(|i| std::iter::repeat_n(i, group)).collect();
        let scores = score_var(&mut b, news.full.gather(cands)?, users.gather(user_rows)?)?;
        group_loss(scores.reshape(vec![instances.len(), group])?)
    }

    /// Raw scores of every candidate of every impression. User histories
    /// are the clicks in `history` strictly before each impression.
    pub fn score_impressions(&self, impressions: &[ImpressionLog], history: &ClickHistory) -> Result<Vec<Vec<f64>>> {
        let matrix = self.encoders.encode_all(&self.store)?;
        let cold = matrix.mean_semantic();
        let mut out = Vec::with_capacity(impressions.len());
        for chunk in impressions.chunks(SCORE_CHUNK) {
            let tape = Tape::new();
            let mut b = Binder::new(&self.store, &tape, false);
            let nsem = tape.constant(matrix.nsem.clone());
            let full = tape.constant(matrix.full.clone());
            let mut queries = Vec::with_capacity(chunk.len());
            let mut cands = Vec::new();
            let mut user_rows = Vec::new();
            for (i, imp) in chunk.iter().enumerate() {
                let hist = history.recent(&imp.user_id, imp.timestamp, self.encoders.meta().config.history_len);
                queries.push(UserQuery {
                    row: self.encoders.user_row(&imp.user_id),
                    history: hist.into_iter().map(|id| self.news_row(id)).collect::<Result<_>>()?,
                });
                for c in &imp.candidates {
                    cands.push(self.news_row(c)?);
                    user_rows.push(i);
                }
            }
            if cands.is_empty() {
                out.extend(chunk.iter().map(|_| Vec::new()));
                continue;
            }
            let users = self
                .encoders
                .encode_users(&mut b, nsem, &queries, tape.constant(cold.clone()))?;
            let s = score_var(&mut b, full.gather(cands)?, users.gather(user_rows)?)?;
            let s = s.value();
            let mut k = 0;
            for imp in chunk {
                out.push(s.data()[k..k + imp.candidates.len()].to_vec());
                k += imp.candidates.len();
            }
        }
        Ok(out)
    }

    /// Candidates of one impression by descending softmax probability, ties by news id.
    pub fn rank(&self, impression: &ImpressionLog, history: &ClickHistory) -> Result<Vec<RankedItem>> {
        if impression.candidates.is_empty() {
            return Err(Error::Empty("candidate list"));
        }
        let scores = self.score_impressions(std::slice::from_ref(impression), history)?;
        Ok(rank_scores(&impression.candidates, &scores[0]))
    }

    pub fn predict(&self, impressions: &[ImpressionLog], history: &ClickHistory) -> Result<Vec<Prediction>> {
        let scores = self.score_impressions(impressions, history)?;
        Ok(impressions
            .iter()
            .zip(&scores)
            .map(|(imp, s)| Prediction {
                user_id: imp.user_id.clone(),
                ts: imp.timestamp,
                ranked: rank_scores(&imp.candidates, s),
            })
            .collect())
    }
}

/// Softmax over `scores`, sorted by descending probability then news id.
pub fn rank_scores(candidates: &[String], scores: &[f64]) -> Vec<RankedItem> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let mut out: Vec<RankedItem> = candidates
        .iter()
        .zip(&exps)
        .map(|(c, e)| RankedItem {
            news_id: c.clone(),
            prob: e / z,
        })
        .collect();
    out.sort_by(|a, b| b.prob.total_cmp(&a.prob).then_with(|| a.news_id.cmp(&b.news_id)));
    out
}

pub fn write_predictions(path: impl AsRef<Path>, predictions: &[Prediction]) -> Result<()> {
    write_jsonl(path, predictions)
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x2545_F491_4F6C_DD1D)
}

/// Trains every parameter end to end, keeping the parameters of the epoch
/// with the best validation AUC. Without validation impressions the last
/// epoch is kept.
pub fn train_rec(
    model: &mut RecModel,
    train: &[ImpressionLog],
    val: &[ImpressionLog],
    history: &ClickHistory,
    config: &TrainerConfig,
    seed: u64,
) -> Result<TrainHistory> {
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let probe = sample_instances(train, config.neg_ratio, seed)?;
    if probe.instances.is_empty() {
        return Err(Error::Empty("training instances"));
    }
    let mut out = TrainHistory {
        n_instances: probe.instances.len(),
        n_skipped: probe.skipped,
        ..TrainHistory::default()
    };
    let val_auc = |m: &RecModel| -> Result<Option<f64>> {
        if val.is_empty() {
            return Ok(None);
        }
        let scores = m.score_impressions(val, history)?;
        match evaluate(&scores, val, AucMode::Impression) {
            Ok(r) => Ok(Some(r.auc)),
            Err(Error::Empty(_)) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let mut best = val_auc(model)?;
    if let Some(a) = best {
        out.val_auc.push(a);
    }
    let mut best_store = model.store.clone();
    let mut since_best = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7EA1_0C);
    for epoch in 1..=config.epochs {
        let sampled = if epoch == 1 {
            probe.instances.clone()
        } else {
            sample_instances(train, config.neg_ratio, epoch_seed(seed, epoch))?.instances
        };
        let mut order: Vec<&TrainInstance> = sampled.iter().collect();
        order.shuffle(&mut rng);
        let cold = model.encoders.encode_all(&model.store)?.mean_semantic();
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let tape = Tape::new();
            let loss = model.batch_loss(&tape, batch, history, &cold)?;
            total += loss.item()? * batch.len() as f64;
            tape.backward(loss)?;
            model.store.collect_grads(&tape)?;
            model.store.step(config.learning_rate);
        }
        out.epoch_losses.push(total / order.len() as f64);
        match val_auc(model)? {
            Some(a) => {
                out.val_auc.push(a);
                if best.is_none_or(|b| a > b) {
                    best = Some(a);
                    best_store = model.store.clone();
                    out.best_epoch = epoch;
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= config.patience {
                        break;
                    }
                }
            }
            None => {
                best_store = model.store.clone();
                out.best_epoch = epoch;
            }
        }
    }
    model.store = best_store;
    Ok(out)
}

//! News and user encoders over a shared parameter store.

use std::collections::{BTreeSet, HashMap};

use eenr_tensor::{ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::history::ClickHistory;
use super::vocab::{build_input_sequence, tokenize, WordVocab, PAD};
use crate::corpus::{ImpressionLog, NewsItem};
use crate::error::{Error, Result};
use crate::graph::ETypeEmbedding;
use crate::nn::BiLstm;

pub const WORD_EMBEDDING: &str = "enc.word_emb";
pub const ALPHA: &str = "enc.alpha";
pub const ETYPE_EMBEDDING: &str = "enc.etype_emb";
pub const CATEGORY_EMBEDDING: &str = "enc.cat_emb";
pub const ATT_W: &str = "enc.att.w";
pub const ATT_B: &str = "enc.att.b";
pub const ATT_Q: &str = "enc.att.q";
pub const USER_ETD: &str = "enc.user_etd";
pub const USER_CD: &str = "enc.user_cd";
const LSTM: &str = "enc.lstm";
const CATEGORY_PROJECTION_SEED: u64 = 0xCA7E_6041;
const ENCODE_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub word_dim: usize,
    /// Hidden size per direction of the semantic encoder.
    pub d_sem: usize,
    pub category_dim: usize,
    pub history_len: usize,
    pub max_seq_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            word_dim: 300,
            d_sem: 128,
            category_dim: 50,
            history_len: 15,
            max_seq_len: 64,
        }
    }
}

/// Information sources beyond the title. A disabled channel contributes
/// zeros of its usual width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channels {
    pub roles_args: bool,
    pub etype: bool,
    pub category: bool,
}

impl Channels {
    pub const ALL: Channels = Channels {
        roles_args: true,
        etype: true,
        category: true,
    };
    pub const TITLE: Channels = Channels {
        roles_args: false,
        etype: false,
        category: false,
    };
}

impl Default for Channels {
    fn default() -> Self {
        Self::ALL
    }
}

/// Binds each parameter at most once per tape.
pub struct Binder<'s, 't> {
    store: &'s ParamStore,
    tape: &'t Tape,
    trainable: bool,
    cache: HashMap<String, Var<'t>>,
}

impl<'s, 't> Binder<'s, 't> {
    pub fn new(store: &'s ParamStore, tape: &'t Tape, trainable: bool) -> Self {
        Self {
            store,
            tape,
            trainable,
            cache: HashMap::new(),
        }
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn get(&mut self, name: &str) -> Result<Var<'t>> {
        if let Some(v) = self.cache.get(name) {
            return Ok(*v);
        }
        let v = if self.trainable {
            self.store.bind(self.tape, name)?
        } else {
            self.store.bind_frozen(self.tape, name)?
        };
        self.cache.insert(name.to_owned(), v);
        Ok(v)
    }
}

/// Everything besides parameters needed to rebuild [`Encoders`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderMeta {
    pub config: EncoderConfig,
    pub channels: Channels,
    pub vocab: WordVocab,
    /// Rows of the event-type table.
    pub event_types: Vec<String>,
    pub etype_dim: usize,
    /// Rows `1..` of the category table; row 0 is the unknown category.
    pub categories: Vec<String>,
    /// Rows `1..` of the user tables; row 0 is the cold user.
    pub users: Vec<String>,
}

#[derive(Clone, Debug)]
struct EncodedNews {
    tokens: Vec<usize>,
    etypes: Vec<usize>,
    category: usize,
}

/// Channel slices of a batch of news vectors, each with one row per news.
pub struct NewsBatch<'t> {
    pub nsem: Var<'t>,
    pub net: Var<'t>,
    pub nctg: Var<'t>,
    pub full: Var<'t>,
}

/// A user to encode: table row and history rows into a [`NewsBatch`].
#[derive(Clone, Debug, PartialEq)]
pub struct UserQuery {
    pub row: usize,
    pub history: Vec<usize>,
}

/// All news encoded with frozen parameters.
#[derive(Clone, Debug)]
pub struct NewsMatrix {
    pub full: Tensor,
    pub nsem: Tensor,
}

impl NewsMatrix {
    /// Column mean of the semantic vectors, the fallback for users without history.
    pub fn mean_semantic(&self) -> Tensor {
        let (n, d) = (self.nsem.rows(), self.nsem.cols());
        let mut out = vec![0.0; d];
        for i in 0..n {
            for (o, x) in out.iter_mut().zip(self.nsem.row(i)) {
                *o += x / n as f64;
            }
        }
        Tensor::matrix(1, d, out).expect("consistent shape")
    }
}

#[derive(Clone, Debug)]
pub struct Encoders {
    meta: EncoderMeta,
    lstm: BiLstm,
    news: Vec<EncodedNews>,
    news_index: HashMap<String, usize>,
    user_index: HashMap<String, usize>,
}

fn mean_rows(rows: &[&[f64]], dim: usize) -> Option<Vec<f64>> {
    if rows.is_empty() {
        return None;
    }
    let mut out = vec![0.0; dim];
    for r in rows {
        for (o, x) in out.iter_mut().zip(r.iter()) {
            *o += x;
        }
    }
    let n = rows.len() as f64;
    Some(out.into_iter().map(|x| x / n).collect())
}

impl Encoders {
    /// Creates and initializes every encoder parameter in `store`.
    ///
    /// The user tables start from averages over each user's clicks in
    /// `train_logs`.
    pub fn init(
        store: &mut ParamStore,
        config: EncoderConfig,
        channels: Channels,
        news: &[NewsItem],
        etypes: &ETypeEmbedding,
        train_logs: &[ImpressionLog],
        seed: u64,
    ) -> Result<Self> {
        if config.word_dim == 0 || config.d_sem == 0 || config.category_dim == 0 || config.max_seq_len == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        let etype_dim = etypes.dim().ok_or(Error::Empty("event-type embedding"))?;
        let categories: BTreeSet<&str> = news.iter().map(|n| n.category.as_str()).collect();
        let users: BTreeSet<&str> = train_logs.iter().map(|l| l.user_id.as_str()).collect();
        let meta = EncoderMeta {
            config: config.clone(),
            channels,
            vocab: WordVocab::build(news),
            event_types: etypes.vectors.keys().cloned().collect(),
            etype_dim,
            categories: categories.into_iter().map(str::to_owned).collect(),
            users: users.into_iter().map(str::to_owned).collect(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (v, wd, d) = (meta.vocab.len(), config.word_dim, config.d_sem);
        store.insert(WORD_EMBEDDING, Tensor::uniform(&[v, wd], 0.1, &mut rng))?;
        BiLstm::init(store, LSTM, wd, d, &mut rng)?;
        store.insert(ALPHA, Tensor::zeros(&[1, 1]))?;
        let et_rows: Vec<f64> = meta
            .event_types
            .iter()
            .flat_map(|t| etypes.get(t).expect("listed type").to_vec())
            .collect();
        store.insert(ETYPE_EMBEDDING, Tensor::matrix(meta.event_types.len(), etype_dim, et_rows)?)?;
        let cats = init_category_embeddings(
            &meta.categories,
            &meta.vocab,
            store.get(WORD_EMBEDDING)?,
            config.category_dim,
            seed,
        )?;
        store.insert(CATEGORY_EMBEDDING, cats)?;
        store.insert_uniform(ATT_W, &[d, d], &mut rng)?;
        store.insert(ATT_B, Tensor::zeros(&[1, d]))?;
        store.insert_uniform(ATT_Q, &[d, 1], &mut rng)?;
        // placeholders so that `from_meta` can index news before the user tables exist
        store.insert(USER_ETD, Tensor::zeros(&[1, etype_dim]))?;
        store.insert(USER_CD, Tensor::zeros(&[1, config.category_dim]))?;
        let enc = Self::from_meta(meta, news)?;
        let (etd, cd) = enc.initial_user_tables(store, train_logs)?;
        store.set(USER_ETD, etd)?;
        store.set(USER_CD, cd)?;
        Ok(enc)
    }

    /// Rebuilds the encoders of a saved model over `news`.
    pub fn from_meta(meta: EncoderMeta, news: &[NewsItem]) -> Result<Self> {
        let etype_index: HashMap<&str, usize> = meta
            .event_types
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i))
            .collect();
        let cat_index: HashMap<&str, usize> = meta
            .categories
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i + 1))
            .collect();
        let mut news_index = HashMap::new();
        let mut encoded = Vec::with_capacity(news.len());
        for (i, n) in news.iter().enumerate() {
            if news_index.insert(n.news_id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate news id {}", n.news_id)));
            }
            encoded.push(EncodedNews {
                tokens: build_input_sequence(n, &meta.vocab, meta.config.max_seq_len, meta.channels.roles_args),
                etypes: n
                    .event_types()
                    .into_iter()
                    .filter_map(|t| etype_index.get(t).copied())
                    .collect(),
                category: cat_index.get(n.category.as_str()).copied().unwrap_or(0),
            });
        }
        let user_index = meta
            .users
            .iter()
            .enumerate()
            .map(|(i, u)| (u.clone(), i + 1))
            .collect();
        Ok(Self {
            lstm: BiLstm::named(LSTM, meta.config.d_sem),
            meta,
            news: encoded,
            news_index,
            user_index,
        })
    }

    fn initial_user_tables(&self, store: &ParamStore, train_logs: &[ImpressionLog]) -> Result<(Tensor, Tensor)> {
        let et = store.get(ETYPE_EMBEDDING)?;
        let cat = store.get(CATEGORY_EMBEDDING)?;
        let (de, dc) = (self.meta.etype_dim, self.meta.config.category_dim);
        let history = ClickHistory::from_logs(train_logs);
        let mut etd = vec![0.0; de];
        let mut cd = vec![0.0; dc];
        for user in &self.meta.users {
            let clicked: Vec<&EncodedNews> = history
                .all(user)
                .into_iter()
                .filter_map(|id| self.news_index.get(id).map(|&i| &self.news[i]))
                .collect();
            let types: Vec<&[f64]> = clicked
                .iter()
                .flat_map(|n| n.etypes.iter().map(|&t| et.row(t)))
                .collect();
            etd.extend(mean_rows(&types, de).unwrap_or_else(|| vec![0.0; de]));
            let cats: Vec<&[f64]> = clicked.iter().map(|n| cat.row(n.category)).collect();
            cd.extend(mean_rows(&cats, dc).unwrap_or_else(|| vec![0.0; dc]));
        }
        let rows = self.meta.users.len() + 1;
        Ok((Tensor::matrix(rows, de, etd)?, Tensor::matrix(rows, dc, cd)?))
    }

    pub fn meta(&self) -> &EncoderMeta {
        &self.meta
    }

    pub fn channels(&self) -> Channels {
        self.meta.channels
    }

    pub fn d_sem(&self) -> usize {
        self.meta.config.d_sem
    }

    /// Width of news and user vectors.
    pub fn output_dim(&self) -> usize {
        self.meta.config.d_sem + self.meta.etype_dim + self.meta.config.category_dim
    }

    pub fn n_news(&self) -> usize {
        self.news.len()
    }

    pub fn news_row(&self, news_id: &str) -> Option<usize> {
        self.news_index.get(news_id).copied()
    }

    /// Row of `user_id` in the user tables; 0 for users unseen in training.
    pub fn user_row(&self, user_id: &str) -> usize {
        self.user_index.get(user_id).copied().unwrap_or(0)
    }

    /// Vocabulary ids fed to the semantic encoder for news row `i`.
    pub fn tokens(&self, i: usize) -> &[usize] {
        &self.news[i].tokens
    }

    /// `sigmoid(α)·fwd_final + (1 − sigmoid(α))·bwd_final`, one row per sequence.
    pub fn news_semantic<'t>(&self, b: &mut Binder<'_, 't>, seqs: &[Vec<usize>]) -> Result<Var<'t>> {
        let tape = b.tape();
        let emb = b.get(WORD_EMBEDDING)?;
        let states = self.lstm.run(tape, &mut |n| b.get(n), emb, seqs, PAD)?;
        let (f, bw) = states.finals()?;
        let a = b.get(ALPHA)?.sigmoid()?;
        Ok(f.mul(a)?.add(bw.mul(a.one_minus()?)?)?)
    }

    /// `[e_nsem, e_net, e_nctg]` for news rows `rows`.
    pub fn encode_news<'t>(&self, b: &mut Binder<'_, 't>, rows: &[usize]) -> Result<NewsBatch<'t>> {
        if rows.is_empty() {
            return Err(Error::Empty("news batch"));
        }
        let tape = b.tape();
        let n = rows.len();
        let seqs: Vec<Vec<usize>> = rows.iter().map(|&r| self.news[r].tokens.clone()).collect();
        let nsem = self.news_semantic(b, &seqs)?;
        let (de, dc) = (self.meta.etype_dim, self.meta.config.category_dim);
        let net = if self.meta.channels.etype {
            let t = self.meta.event_types.len();
            let mut avg = vec![0.0; n * t];
            for (i, &r) in rows.iter().enumerate() {
                let types = &self.news[r].etypes;
                for &k in types {
                    avg[i * t + k] += 1.0 / types.len() as f64;
                }
            }
            tape.constant(Tensor::matrix(n, t, avg)?).matmul(b.get(ETYPE_EMBEDDING)?)?
        } else {
            tape.constant(Tensor::zeros(&[n, de]))
        };
        let nctg = if self.meta.channels.category {
            b.get(CATEGORY_EMBEDDING)?.gather(rows.iter().map(|&r| self.news[r].category).collect())?
        } else {
            tape.constant(Tensor::zeros(&[n, dc]))
        };
        let full = tape.concat(&[nsem, net, nctg], 1)?;
        Ok(NewsBatch { nsem, net, nctg, full })
    }

    /// Unnormalized attention scores `qᵀ tanh(W e + b)`, one row per semantic vector.
    pub fn attention_scores<'t>(&self, b: &mut Binder<'_, 't>, nsem: Var<'t>) -> Result<Var<'t>> {
        let h = nsem.matmul(b.get(ATT_W)?)?.add(b.get(ATT_B)?)?.tanh()?;
        Ok(h.matmul(b.get(ATT_Q)?)?)
    }

    /// Softmax weights `[len, 1]` over rows `history` and the weighted sum `[1, d_sem]`.
    pub fn attend<'t>(
        &self,
        scores: Var<'t>,
        nsem: Var<'t>,
        history: &[usize],
    ) -> Result<(Var<'t>, Var<'t>)> {
        if history.is_empty() {
            return Err(Error::Empty("browsing history"));
        }
        let w = scores.gather(history.to_vec())?.softmax(0)?;
        let e = w.transpose()?.matmul(nsem.gather(history.to_vec())?)?;
        Ok((w, e))
    }

    /// Attention over a stack of history vectors `[len, d_sem]`.
    pub fn user_attention<'t>(&self, b: &mut Binder<'_, 't>, history: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let scores = self.attention_scores(b, history)?;
        let all: Vec<usize> = (0..history.shape()[0]).collect();
        self.attend(scores, history, &all)
    }

    /// `[e_usem, W^uetd[user], W^ucd[user]]` for each query; users without
    /// history take `cold` `[1, d_sem]` as their semantic part.
    pub fn encode_users<'t>(
        &self,
        b: &mut Binder<'_, 't>,
        nsem: Var<'t>,
        users: &[UserQuery],
        cold: Var<'t>,
    ) -> Result<Var<'t>> {
        if users.is_empty() {
            return Err(Error::Empty("user batch"));
        }
        let tape = b.tape();
        let scores = self.attention_scores(b, nsem)?;
        let mut sem = Vec::with_capacity(users.len());
        for u in users {
            sem.push(if u.history.is_empty() {
                cold
            } else {
                self.attend(scores, nsem, &u.history)?.1
            });
        }
        let usem = tape.concat(&sem, 0)?;
        let rows: Vec<usize> = users.iter().map(|u| u.row).collect();
        let n = users.len();
        let etd = if self.meta.channels.etype {
            b.get(USER_ETD)?.gather(rows.clone())?
        } else {
            tape.constant(Tensor::zeros(&[n, self.meta.etype_dim]))
        };
        let cd = if self.meta.channels.category {
            b.get(USER_CD)?.gather(rows)?
        } else {
            tape.constant(Tensor::zeros(&[n, self.meta.config.category_dim]))
        };
        Ok(tape.concat(&[usem, etd, cd], 1)?)
    }

    /// Encodes every news item with frozen parameters.
    pub fn encode_all(&self, store: &ParamStore) -> Result<NewsMatrix> {
        let n = self.news.len();
        if n == 0 {
            return Err(Error::Empty("news"));
        }
        let mut full = Vec::with_capacity(n * self.output_dim());
        let mut nsem = Vec::with_capacity(n * self.d_sem());
        let rows: Vec<usize> = (0..n).collect();
        for chunk in rows.chunks(ENCODE_CHUNK) {
            let tape = Tape::new();
            let mut b = Binder::new(store, &tape, false);
            let batch = self.encode_news(&mut b, chunk)?;
            full.extend_from_slice(batch.full.value().data());
            nsem.extend_from_slice(batch.nsem.value().data());
        }
        Ok(NewsMatrix {
            full: Tensor::matrix(n, self.output_dim(), full)?,
            nsem: Tensor::matrix(n, self.d_sem(), nsem)?,
        })
    }
}

/// Category rows: the mean word vector of the name's in-vocabulary tokens
/// mapped through a fixed random projection; names without known tokens get
/// random rows. Row 0 is the zero unknown-category row.
pub fn init_category_embeddings(
    categories: &[String],
    vocab: &WordVocab,
    words: &Tensor,
    dim: usize,
    seed: u64,
) -> Result<Tensor> {
    let wd = words.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(CATEGORY_PROJECTION_SEED);
    let proj = Tensor::uniform(&[wd, dim], 1.0 / (wd as f64).sqrt(), &mut rng);
    let mut oov_rng = ChaCha8Rng::seed_from_u64(seed ^ CATEGORY_PROJECTION_SEED);
    let mut out = vec![0.0; dim];
    for c in categories {
        let rows: Vec<&[f64]> = tokenize(c).iter().filter_map(|t| vocab.id(t)).map(|i| words.row(i)).collect();
        match mean_rows(&rows, wd) {
            Some(m) => {
                for j in 0..dim {
                    out.push((0..wd).map(|k| m[k] * proj.get2(k, j)).sum());
                }
            }
            None => out.extend(Tensor::uniform(&[dim], 0.1, &mut oov_rng).into_data()),
        }
    }
    Ok(Tensor::matrix(categories.len() + 1, dim, out)?)
}

//! Character-level BiLSTM-CRF tagger and its training loop.

use std::collections::HashMap;
use std::path::Path;

use eenr_tensor::{ParamStore, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::crf::{crf_nll, CrfStructure};
use super::tags::TagSpace;
use crate::corpus::{read_json, write_json, AnnotatedSentence, EventSchema};
use crate::error::{Error, Result};
use crate::nn::BiLstm;

pub const PAD: usize = 0;
pub const UNK: usize = 1;

pub const CHAR_EMBEDDING: &str = "ee.char_emb";
const OUT_W: &str = "ee.out.w";
const OUT_B: &str = "ee.out.b";
pub const TRANSITIONS: &str = "ee.transitions";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EeConfig {
    pub char_dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for EeConfig {
    fn default() -> Self {
        Self {
            char_dim: 64,
            hidden: 64,
            epochs: 25,
            batch_size: 16,
            learning_rate: 2e-2,
        }
    }
}

/// Character vocabulary with reserved padding and unknown rows.
#[derive(Clone, Debug, PartialEq)]
pub struct CharVocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl CharVocab {
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut set = std::collections::BTreeSet::new();
        for t in texts {
            set.extend(t.chars());
        }
        Self::from_chars(set.into_iter().collect())
    }

    fn from_chars(chars: Vec<char>) -> Self {
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i + 2)).collect();
        Self { chars, index }
    }

    /// Rows in the embedding table, reserved rows included.
    pub fn len(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(UNK)
    }

    pub fn ids(&self, chars: &[char]) -> Vec<usize> {
        chars.iter().map(|&c| self.id(c)).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    schema: EventSchema,
    chars: String,
    char_dim: usize,
    hidden: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-sentence NLL observed while training the epoch.
    pub mean_nll: f64,
}

pub struct TaggerModel {
    schema: EventSchema,
    tags: TagSpace,
    crf: CrfStructure,
    vocab: CharVocab,
    char_dim: usize,
    encoder: BiLstm,
    store: ParamStore,
}

impl TaggerModel {
    pub fn new(schema: &EventSchema, vocab: CharVocab, char_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        let tags = TagSpace::new(schema);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        store.insert_uniform(CHAR_EMBEDDING, &[vocab.len(), char_dim], &mut rng)?;
        let encoder = BiLstm::init(&mut store, "ee.lstm", char_dim, hidden, &mut rng)?;
        store.insert_uniform(OUT_W, &[2 * hidden, tags.len()], &mut rng)?;
        store.insert(OUT_B, Tensor::zeros(&[1, tags.len()]))?;
        store.insert(TRANSITIONS, Tensor::zeros(&[tags.len(), tags.len()]))?;
        Ok(Self {
            schema: schema.clone(),
            crf: CrfStructure::from_tags(&tags),
            tags,
            vocab,
            char_dim,
            encoder,
            store,
        })
    }

    pub fn schema(&self) -> &EventSchema {
        &self.schema
    }

    pub fn tags(&self) -> &TagSpace {
        &self.tags
    }

    pub fn crf(&self) -> &CrfStructure {
        &self.crf
    }

    pub fn vocab(&self) -> &CharVocab {
        &self.vocab
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn transitions(&self) -> &Tensor {
        self.store.get(TRANSITIONS).expect("transition parameter")
    }

    /// Log-softmax emission rows for every character of every sequence,
    /// stacked sequence by sequence, plus `(first_row, len)` segments.
    pub fn emission_vars<'t>(
        &self,
        tape: &'t Tape,
        seqs: &[Vec<usize>],
        trainable: bool,
    ) -> Result<(Var<'t>, Vec<(usize, usize)>)> {
        let store = &self.store;
        let mut bind = |n: &str| -> Result<Var<'t>> {
            Ok(if trainable {
                store.bind(tape, n)?
            } else {
                store.bind_frozen(tape, n)?
            })
        };
        let emb = bind(CHAR_EMBEDDING)?;
        let states = self.encoder.run(tape, &mut bind, emb, seqs, PAD)?;
        let h = states.positions()?;
        let logits = h.matmul(bind(OUT_W)?)?.add(bind(OUT_B)?)?;
        let em = logits.log_softmax(1)?;
        let mut segments = Vec::with_capacity(seqs.len());
        let mut start = 0;
        for s in seqs {
            segments.push((start, s.len()));
            start += s.len();
        }
        Ok((em, segments))
    }

    /// `[n_chars, n_tags]` log-probability rows.
    pub fn emissions(&self, chars: &[char]) -> Result<Tensor> {
        if chars.is_empty() {
            return Err(Error::Empty("character sequence"));
        }
        let tape = Tape::new();
        let (em, _) = self.emission_vars(&tape, &[self.vocab.ids(chars)], false)?;
        Ok((*em.value()).clone())
    }

    /// Viterbi tag paths for a batch of character sequences.
    pub fn decode_batch(&self, sentences: &[Vec<char>]) -> Result<Vec<Vec<usize>>> {
        let mut out = vec![Vec::new(); sentences.len()];
        let live: Vec<usize> = (0..sentences.len()).filter(|&i| !sentences[i].is_empty()).collect();
        if live.is_empty() {
            return Ok(out);
        }
        let seqs: Vec<Vec<usize>> = live.iter().map(|&i| self.vocab.ids(&sentences[i])).collect();
        let tape = Tape::new();
        let (em, segments) = self.emission_vars(&tape, &seqs, false)?;
        let em = em.value();
        let k = self.tags.len();
        let trans = self.transitions().data();
        for (&i, &(start, len)) in live.iter().zip(&segments) {
            out[i] = self.crf.viterbi(&em.data()[start * k..(start + len) * k], trans);
        }
        Ok(out)
    }

    /// Sum of CRF NLLs of `sentences` on `tape` with trainable parameters.
    pub fn nll_var<'t>(&self, tape: &'t Tape, sentences: &[&AnnotatedSentence]) -> Result<Var<'t>> {
        let seqs: Vec<Vec<usize>> = sentences.iter().map(|s| self.vocab.ids(&s.chars())).collect();
        let gold: Vec<Vec<usize>> = sentences.iter().map(|s| self.tags.encode(s)).collect();
        let (em, segments) = self.emission_vars(tape, &seqs, true)?;
        let trans = self.store.bind(tape, TRANSITIONS)?;
        crf_nll(tape, &self.crf, em, trans, &segments, &gold, Some(&self.tags))
    }

    /// Writes the parameter checkpoint and the JSON metadata (schema, vocabulary, sizes).
    pub fn save(&self, params: &Path, meta: &Path) -> Result<()> {
        self.store.save(params)?;
        write_json(
            meta,
            &ModelMeta {
                schema: self.schema.clone(),
                chars: self.vocab.chars.iter().collect(),
                char_dim: self.char_dim,
                hidden: self.encoder.hidden(),
            },
        )
    }

    pub fn load(params: &Path, meta: &Path) -> Result<Self> {
        let m: ModelMeta = read_json(meta)?;
        let vocab = CharVocab::from_chars(m.chars.chars().collect());
        let mut model = Self::new(&m.schema, vocab, m.char_dim, m.hidden, 0)?;
        let loaded = ParamStore::load(params)?;
        for name in model.store.names().map(str::to_owned).collect::<Vec<_>>() {
            let t = loaded.get(&name)?;
            if t.shape() != model.store.get(&name)?.shape() {
                return Err(Error::Data(format!("checkpoint parameter {name} has shape {:?}", t.shape())));
            }
            model.store.set(&name, t.clone())?;
        }
        Ok(model)
    }
}

/// Trains a fresh tagger on `sentences` by minimizing the mean CRF NLL.
pub fn train_ee(
    sentences: &[AnnotatedSentence],
    schema: &EventSchema,
    config: &EeConfig,
    seed: u64,
) -> Result<(TaggerModel, Vec<EpochStats>)> {
    let vocab = CharVocab::build(sentences.iter().map(|s| s.text.as_str()));
    let mut model = TaggerModel::new(schema, vocab, config.char_dim, config.hidden, seed)?;
    let history = continue_training(&mut model, sentences, config, seed)?;
    Ok((model, history))
}

/// Runs `config.epochs` more epochs on an existing model.
pub fn continue_training(
    model: &mut TaggerModel,
    sentences: &[AnnotatedSentence],
    config: &EeConfig,
    seed: u64,
) -> Result<Vec<EpochStats>> {
    let usable: Vec<&AnnotatedSentence> = sentences.iter().filter(|s| !s.text.is_empty()).collect();
    if usable.is_empty() {
        return Err(Error::Empty("event extraction corpus"));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_EE);
    let mut order: Vec<usize> = (0..usable.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&AnnotatedSentence> = chunk.iter().map(|&i| usable[i]).collect();
            let tape = Tape::new();
            let sum = model.nll_var(&tape, &batch)?;
            total += sum.item()?;
            let loss = sum.scale(1.0 / batch.len() as f64)?;
            tape.backward(loss)?;
            model.store.collect_grads(&tape)?;
            model.store.step(config.learning_rate);
        }
        history.push(EpochStats {
            epoch,
            mean_nll: total / usable.len() as f64,
        });
    }
    Ok(history)
}

//! Bidirectional LSTM over right-padded token batches.
//!
//! Batches are laid out time-major: row `t * batch + s` holds step `t` of
//! sequence `s`. The backward direction runs the same cell over reversed
//! sequences, so its step `t` of sequence `s` reads token `len_s - 1 - t`.

use eenr_tensor::{ParamStore, Tape, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};

/// Parameter names of one LSTM direction. Gate columns are `[i | f | g | o]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub wx: String,
    pub wh: String,
    pub b: String,
    pub hidden: usize,
}

impl LstmParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let p = Self::named(prefix, hidden);
        store.insert_uniform(&p.wx, &[d_in, 4 * hidden], rng)?;
        store.insert_uniform(&p.wh, &[hidden, 4 * hidden], rng)?;
        let bound = 1.0 / (hidden as f64).sqrt();
        store.insert(&p.b, Tensor::uniform(&[1, 4 * hidden], bound, rng))?;
        Ok(p)
    }

    pub fn named(prefix: &str, hidden: usize) -> Self {
        Self {
            wx: format!("{prefix}.wx"),
            wh: format!("{prefix}.wh"),
            b: format!("{prefix}.b"),
            hidden,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiLstm {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

impl BiLstm {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            fwd: LstmParams::init(store, &format!("{prefix}.fwd"), d_in, hidden, rng)?,
            bwd: LstmParams::init(store, &format!("{prefix}.bwd"), d_in, hidden, rng)?,
        })
    }

    pub fn named(prefix: &str, hidden: usize) -> Self {
        Self {
            fwd: LstmParams::named(&format!("{prefix}.fwd"), hidden),
            bwd: LstmParams::named(&format!("{prefix}.bwd"), hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden
    }

    /// Runs both directions over `seqs` (rows of `emb`); every sequence must
    /// be non-empty. Row `pad` of `emb` fills positions past a sequence end.
    pub fn run<'t>(
        &self,
        tape: &'t Tape,
        bind: &mut dyn FnMut(&str) -> Result<Var<'t>>,
        emb: Var<'t>,
        seqs: &[Vec<usize>],
        pad: usize,
    ) -> Result<BiStates<'t>> {
        if seqs.is_empty() || seqs.iter().any(Vec::is_empty) {
            return Err(Error::Empty("token sequence"));
        }
        let fwd = run_direction(tape, bind, &self.fwd, emb, &time_major(seqs, false, pad), seqs.len())?;
        let bwd = run_direction(tape, bind, &self.bwd, emb, &time_major(seqs, true, pad), seqs.len())?;
        Ok(BiStates {
            fwd,
            bwd,
            lens: seqs.iter().map(Vec::len).collect(),
        })
    }
}

/// Stacked hidden states of both directions, each `[max_len * batch, hidden]`.
pub struct BiStates<'t> {
    pub fwd: Var<'t>,
    pub bwd: Var<'t>,
    pub lens: Vec<usize>,
}

impl<'t> BiStates<'t> {
    fn batch(&self) -> usize {
        self.lens.len()
    }

    /// Final states `[batch, hidden]`: forward after the last token, backward
    /// after the first.
    pub fn finals(&self) -> Result<(Var<'t>, Var<'t>)> {
        let b = self.batch();
        let idx: Vec<usize> = self
            .lens
            .iter()
            .enumerate()
            .map(|(s, &l)| (l - 1) * b + s)
            .collect();
        Ok((self.fwd.gather(idx.clone())?, self.bwd.gather(idx)?))
    }

    /// Per-token states `[Σ len, 2 * hidden]`, sequence by sequence, with the
    /// forward and backward states of each token side by side.
    pub fn positions(&self) -> Result<Var<'t>> {
        let b = self.batch();
        let mut fi = Vec::new();
        let mut bi = Vec::new();
        for (s, &l) in self.lens.iter().enumerate() {
            for t in 0..l {
                fi.push(t * b + s);
                bi.push((l - 1 - t) * b + s);
            }
        }
        let tape = self.fwd.tape();
        Ok(tape.concat(&[self.fwd.gather(fi)?, self.bwd.gather(bi)?], 1)?)
    }
}

/// Token ids in time-major order, right-padded with `pad`.
pub fn time_major(seqs: &[Vec<usize>], reverse: bool, pad: usize) -> Vec<usize> {
    let b = seqs.len();
    let steps = seqs.iter().map(Vec::len).max().unwrap_or(0);
    let mut ids = vec![pad; steps * b];
    for (s, seq) in seqs.iter().enumerate() {
        let l = seq.len();
        for t in 0..l {
            ids[t * b + s] = if reverse { seq[l - 1 - t] } else { seq[t] };
        }
    }
    ids
}

fn run_direction<'t>(
    tape: &'t Tape,
    bind: &mut dyn FnMut(&str) -> Result<Var<'t>>,
    p: &LstmParams,
    emb: Var<'t>,
    ids: &[usize],
    batch: usize,
) -> Result<Var<'t>> {
    let h_dim = p.hidden;
    let wx = bind(&p.wx)?;
    let wh = bind(&p.wh)?;
    let bias = bind(&p.b)?;
    let steps = ids.len() / batch;
    let vocab = emb.shape()[0];
    // project the whole table once when that is cheaper than per-token rows
    let table = if vocab <= ids.len() {
        Some(emb.matmul(wx)?.add(bias)?)
    } else {
        None
    };
    let mut h = tape.constant(Tensor::zeros(&[batch, h_dim]));
    let mut c = tape.constant(Tensor::zeros(&[batch, h_dim]));
    let mut states = Vec::with_capacity(steps);
    for t in 0..steps {
        let rows = ids[t * batch..(t + 1) * batch].to_vec();
        let x = match table {
            Some(tb) => tb.gather(rows)?,
            None => emb.gather(rows)?.matmul(wx)?.add(bias)?,
        };
        let gates = x.add(h.matmul(wh)?)?;
        let i = gates.slice_cols(0, h_dim)?.sigmoid()?;
        let f = gates.slice_cols(h_dim, 2 * h_dim)?.sigmoid()?;
        let g = gates.slice_cols(2 * h_dim, 3 * h_dim)?.tanh()?;
        let o = gates.slice_cols(3 * h_dim, 4 * h_dim)?.sigmoid()?;
        c = f.mul(c)?.add(i.mul(g)?)?;
        h = o.mul(c.tanh()?)?;
        states.push(h);
    }
    Ok(tape.concat(&states, 0)?)
}

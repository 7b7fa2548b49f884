//! Linear-chain CRF: forward algorithm, Viterbi, marginals and the
//! negative log-likelihood as a differentiable tape operation.
//!
//! Emissions are row-major `n × k` slices; transitions are `k × k` with
//! `trans[i * k + j]` scoring tag `i` followed by tag `j`. Masked
//! transitions and masked start tags are excluded from every sum and max.

use std::rc::Rc;

use eenr_tensor::{logsumexp, CustomOp, Tape, Tensor, Var};

use super::tags::TagSpace;
use crate::error::{Error, Result};

/// Which transitions and start tags are legal.
#[derive(Clone, Debug)]
pub struct CrfStructure {
    n_tags: usize,
    mask: Vec<bool>,
    start: Vec<bool>,
}

impl CrfStructure {
    pub fn new(n_tags: usize, mask: Vec<bool>, start: Vec<bool>) -> Self {
        assert_eq!(mask.len(), n_tags * n_tags);
        assert_eq!(start.len(), n_tags);
        Self {
            n_tags,
            mask,
            start,
        }
    }

    pub fn unconstrained(n_tags: usize) -> Self {
        Self::new(n_tags, vec![true; n_tags * n_tags], vec![true; n_tags])
    }

    pub fn from_tags(tags: &TagSpace) -> Self {
        Self::new(tags.len(), tags.mask().to_vec(), tags.start_allowed())
    }

    pub fn n_tags(&self) -> usize {
        self.n_tags
    }

    pub fn allowed(&self, from: usize, to: usize) -> bool {
        self.mask[from * self.n_tags + to]
    }

    pub fn start_allowed(&self, tag: usize) -> bool {
        self.start[tag]
    }

    /// First illegal step of `path` as `(from, to, position)`; `from` is
    /// `None` at the start.
    pub fn violation(&self, path: &[usize]) -> Option<(Option<usize>, usize, usize)> {
        let first = *path.first()?;
        if !self.start[first] {
            return Some((None, first, 0));
        }
        path.windows(2)
            .enumerate()
            .find(|(_, w)| !self.allowed(w[0], w[1]))
            .map(|(i, w)| (Some(w[0]), w[1], i + 1))
    }

    /// `exp(trans - max)` with masked entries zeroed, and the shift `max`.
    fn exp_transitions(&self, trans: &[f64]) -> (Vec<f64>, f64) {
        let shift = trans
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|(&t, _)| t)
            .fold(f64::NEG_INFINITY, f64::max);
        let shift = if shift.is_finite() { shift } else { 0.0 };
        let e = trans
            .iter()
            .zip(&self.mask)
            .map(|(&t, &m)| if m { (t - shift).exp() } else { 0.0 })
            .collect();
        (e, shift)
    }

    /// Forward log-scores `alpha[t * k + j]`, computed with rescaled
    /// products so each step costs `k²` multiplications.
    fn forward(&self, em: &[f64], trans: &[f64]) -> Vec<f64> {
        let k = self.n_tags;
        let n = em.len() / k;
        let (et, shift) = self.exp_transitions(trans);
        let mut alpha = vec![f64::NEG_INFINITY; n * k];
        for j in 0..k {
            if self.start[j] {
                alpha[j] = em[j];
            }
        }
        let mut a = vec![0.0; k];
        let mut acc = vec![0.0; k];
        for t in 1..n {
            let prev = &alpha[(t - 1) * k..t * k];
            let m = max_finite(prev);
            for (x, &p) in a.iter_mut().zip(prev) {
                *x = (p - m).exp();
            }
            acc.fill(0.0);
            for (i, &ai) in a.iter().enumerate() {
                if ai == 0.0 {
                    continue;
                }
                for (s, &e) in acc.iter_mut().zip(&et[i * k..(i + 1) * k]) {
                    *s += ai * e;
                }
            }
            for j in 0..k {
                alpha[t * k + j] = acc[j].ln() + m + shift + em[t * k + j];
            }
        }
        alpha
    }

    fn backward(&self, em: &[f64], trans: &[f64]) -> Vec<f64> {
        let k = self.n_tags;
        let n = em.len() / k;
        let (et, shift) = self.exp_transitions(trans);
        let mut beta = vec![0.0; n * k];
        let mut b = vec![0.0; k];
        for t in (0..n.saturating_sub(1)).rev() {
            let next: Vec<f64> = (0..k).map(|j| em[(t + 1) * k + j] + beta[(t + 1) * k + j]).collect();
            let m = max_finite(&next);
            for (x, &v) in b.iter_mut().zip(&next) {
                *x = (v - m).exp();
            }
            for i in 0..k {
                let s: f64 = et[i * k..(i + 1) * k].iter().zip(&b).map(|(e, x)| e * x).sum();
                beta[t * k + i] = s.ln() + m + shift;
            }
        }
        beta
    }

    /// `log Σ exp(score(path))` over all legal paths.
    pub fn log_partition(&self, em: &[f64], trans: &[f64]) -> f64 {
        let k = self.n_tags;
        let n = em.len() / k;
        if n == 0 {
            return 0.0;
        }
        let alpha = self.forward(em, trans);
        logsumexp(&alpha[(n - 1) * k..])
    }

    /// Sum of emission and transition scores along `path`.
    pub fn path_score(&self, em: &[f64], trans: &[f64], path: &[usize]) -> f64 {
        let k = self.n_tags;
        let mut s = 0.0;
        for (t, &y) in path.iter().enumerate() {
            s += em[t * k + y];
            if t > 0 {
                s += trans[path[t - 1] * k + y];
            }
        }
        s
    }

    pub fn nll(&self, em: &[f64], trans: &[f64], gold: &[usize], tags: Option<&TagSpace>) -> Result<f64> {
        self.check_gold(gold, em.len() / self.n_tags.max(1), tags)?;
        Ok(self.log_partition(em, trans) - self.path_score(em, trans, gold))
    }

    fn check_gold(&self, gold: &[usize], n: usize, tags: Option<&TagSpace>) -> Result<()> {
        if gold.len() != n {
            return Err(Error::Data(format!(
                "gold path has {} tags for {n} positions",
                gold.len()
            )));
        }
        if let Some(&bad) = gold.iter().find(|&&g| g >= self.n_tags) {
            return Err(Error::Data(format!("tag index {bad} out of range")));
        }
        if let Some((from, to, position)) = self.violation(gold) {
            let name = |t: usize| tags.map_or_else(|| t.to_string(), |ts| ts.name(t));
            return Err(Error::IllegalTransition {
                from: from.map_or_else(|| "START".to_owned(), name),
                to: name(to),
                position,
            });
        }
        Ok(())
    }

    /// Highest-scoring legal path; ties go to the lowest tag index.
    pub fn viterbi(&self, em: &[f64], trans: &[f64]) -> Vec<usize> {
        let k = self.n_tags;
        let n = em.len() / k;
        if n == 0 {
            return Vec::new();
        }
        let mut delta = vec![f64::NEG_INFINITY; n * k];
        let mut back = vec![0usize; n * k];
        for j in 0..k {
            if self.start[j] {
                delta[j] = em[j];
            }
        }
        for t in 1..n {
            for j in 0..k {
                let mut best = f64::NEG_INFINITY;
                let mut arg = 0;
                for i in 0..k {
                    if !self.allowed(i, j) {
                        continue;
                    }
                    let s = delta[(t - 1) * k + i] + trans[i * k + j];
                    if s > best {
                        best = s;
                        arg = i;
                    }
                }
                delta[t * k + j] = best + em[t * k + j];
                back[t * k + j] = arg;
            }
        }
        let last = &delta[(n - 1) * k..];
        let mut y = 0;
        for j in 1..k {
            if last[j] > last[y] {
                y = j;
            }
        }
        let mut path = vec![0; n];
        path[n - 1] = y;
        for t in (1..n).rev() {
            y = back[t * k + y];
            path[t - 1] = y;
        }
        path
    }

    /// Node marginals `n × k` and summed edge marginals `k × k`.
    pub fn marginals(&self, em: &[f64], trans: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let k = self.n_tags;
        let n = em.len() / k;
        let mut node = vec![0.0; n * k];
        let mut edge = vec![0.0; k * k];
        if n == 0 {
            return (node, edge);
        }
        let alpha = self.forward(em, trans);
        let beta = self.backward(em, trans);
        let log_z = logsumexp(&alpha[(n - 1) * k..]);
        for (i, p) in node.iter_mut().enumerate() {
            *p = (alpha[i] + beta[i] - log_z).exp();
        }
        let (et, shift) = self.exp_transitions(trans);
        let mut p = vec![0.0; k];
        let mut q = vec![0.0; k];
        for t in 0..n - 1 {
            let ma = max_finite(&alpha[t * k..(t + 1) * k]);
            for i in 0..k {
                p[i] = (alpha[t * k + i] - ma).exp();
            }
            let next: Vec<f64> = (0..k).map(|j| em[(t + 1) * k + j] + beta[(t + 1) * k + j]).collect();
            let mb = max_finite(&next);
            for j in 0..k {
                q[j] = (next[j] - mb).exp();
            }
            let scale = (ma + mb + shift - log_z).exp();
            for i in 0..k {
                if p[i] == 0.0 {
                    continue;
                }
                let pi = p[i] * scale;
                let row = &et[i * k..(i + 1) * k];
                for j in 0..k {
                    edge[i * k + j] += pi * row[j] * q[j];
                }
            }
        }
        (node, edge)
    }
}

fn max_finite(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m.is_finite() {
        m
    } else {
        0.0
    }
}

/// Sum of CRF NLLs over segments of a stacked emission matrix, with
/// gradients computed during the forward pass.
struct CrfNllOp {
    grad_emissions: Tensor,
    grad_transitions: Tensor,
}

impl CustomOp for CrfNllOp {
    fn name(&self) -> &'static str {
        "crf_nll"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> eenr_tensor::Result<Vec<Option<Tensor>>> {
        let g = grad.item()?;
        let scaled = |t: &Tensor| t.map(|v| v * g);
        Ok(vec![
            needs[0].then(|| scaled(&self.grad_emissions)),
            needs[1].then(|| scaled(&self.grad_transitions)),
        ])
    }
}

/// Records `Σ_s nll(emissions[segment s], transitions, gold[s])` on the tape.
///
/// `segments` are `(first_row, len)` pairs into the `N × k` `emissions`.
pub fn crf_nll<'t>(
    tape: &'t Tape,
    crf: &CrfStructure,
    emissions: Var<'t>,
    transitions: Var<'t>,
    segments: &[(usize, usize)],
    gold: &[Vec<usize>],
    tags: Option<&TagSpace>,
) -> Result<Var<'t>> {
    let k = crf.n_tags;
    let em = emissions.value();
    let tr = transitions.value();
    if em.rank() != 2 || em.cols() != k || tr.shape() != [k, k] {
        return Err(Error::Data(format!(
            "crf_nll expects emissions [n, {k}] and transitions [{k}, {k}], got {:?} and {:?}",
            em.shape(),
            tr.shape()
        )));
    }
    if segments.len() != gold.len() {
        return Err(Error::Data("one gold path per segment required".into()));
    }
    let mut g_em = Tensor::zeros(em.shape());
    let mut g_tr = Tensor::zeros(tr.shape());
    let mut total = 0.0;
    for (&(start, len), path) in segments.iter().zip(gold) {
        let rows = &em.data()[start * k..(start + len) * k];
        total += crf.nll(rows, tr.data(), path, tags)?;
        let (node, edge) = crf.marginals(rows, tr.data());
        let ge = &mut g_em.data_mut()[start * k..(start + len) * k];
        for (a, b) in ge.iter_mut().zip(&node) {
            *a += b;
        }
        for (t, &y) in path.iter().enumerate() {
            ge[t * k + y] -= 1.0;
        }
        let gt = g_tr.data_mut();
        for (a, b) in gt.iter_mut().zip(&edge) {
            *a += b;
        }
        for w in path.windows(2) {
            gt[w[0] * k + w[1]] -= 1.0;
        }
    }
    let op = Rc::new(CrfNllOp {
        grad_emissions: g_em,
        grad_transitions: g_tr,
    });
    Ok(tape.custom(&[emissions, transitions], Tensor::scalar(total), op)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Every legal path with its score, by brute force.
    fn enumerate(crf: &CrfStructure, em: &[f64], tr: &[f64]) -> Vec<(Vec<usize>, f64)> {
        let k = crf.n_tags();
        let n = em.len() / k;
        let mut out = Vec::new();
        for code in 0..k.pow(n as u32) {
            let mut c = code;
            let path: Vec<usize> = (0..n)
                .map(|_| {
                    let y = c % k;
                    c /= k;
                    y
                })
                .collect();
            if crf.violation(&path).is_none() {
                out.push((path.clone(), crf.path_score(em, tr, &path)));
            }
        }
        out
    }

    #[test]
    fn single_token_partition_is_logsumexp() {
        let crf = CrfStructure::unconstrained(2);
        let z = crf.log_partition(&[0.3, -1.2], &[0.0; 4]);
        assert!((z - logsumexp(&[0.3, -1.2])).abs() < 1e-12);
        assert_eq!(crf.viterbi(&[0.3, -1.2], &[0.0; 4]), vec![0]);
    }

    #[test]
    fn small_instances_match_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (n, k) in [(2, 2), (3, 3)] {
            let crf = CrfStructure::unconstrained(k);
            let em: Vec<f64> = (0..n * k).map(|_| rng.random_range(-2.0..2.0)).collect();
            let tr: Vec<f64> = (0..k * k).map(|_| rng.random_range(-2.0..2.0)).collect();
            let paths = enumerate(&crf, &em, &tr);
            assert_eq!(paths.len(), k.pow(n as u32));
            let scores: Vec<f64> = paths.iter().map(|p| p.1).collect();
            assert!((crf.log_partition(&em, &tr) - logsumexp(&scores)).abs() < 1e-10);
        }
    }

    #[test]
    fn nll_saturates_and_counts_paths() {
        let crf = CrfStructure::unconstrained(3);
        let gold = [2, 0, 1];
        let mut em = vec![0.0; 9];
        for (t, &y) in gold.iter().enumerate() {
            em[t * 3 + y] = 100.0;
        }
        assert!(crf.nll(&em, &[0.0; 9], &gold, None).unwrap() < 1e-12);
        let uniform = crf.nll(&[0.0; 9], &[0.0; 9], &gold, None).unwrap();
        assert!((uniform - 27f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn uniform_nll_counts_only_legal_paths() {
        let schema = crate::corpus::EventSchema::new(vec![crate::corpus::EventTypeDef {
            name: "A/x".into(),
            roles: vec!["r".into()],
        }])
        .unwrap();
        let tags = TagSpace::new(&schema);
        let crf = CrfStructure::from_tags(&tags);
        // O, B, I over 2 tokens: legal = OO OB BO BB BI
        let v = crf.nll(&[0.0; 6], &[0.0; 9], &[1, 2], Some(&tags)).unwrap();
        assert!((v - 5f64.ln()).abs() < 1e-12);
        let err = crf.nll(&[0.0; 6], &[0.0; 9], &[0, 2], Some(&tags)).unwrap_err();
        assert!(err.to_string().contains("position 1"), "{err}");
    }

    #[test]
    fn single_legal_path_dominates() {
        let k = 3;
        let mut mask = vec![false; 9];
        mask[2 * 3 + 1] = true;
        mask[3 + 1] = true;
        let crf = CrfStructure::new(k, mask, vec![false, false, true]);
        let em = [5.0, 9.0, -3.0, 9.0, -7.0, 0.0, 4.0, -1.0, 8.0];
        assert_eq!(crf.viterbi(&em, &[0.0; 9]), vec![2, 1, 1]);
    }

    #[test]
    fn marginals_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let crf = CrfStructure::unconstrained(3);
        let em: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tr: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (node, edge) = crf.marginals(&em, &tr);
        for row in node.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!((edge.iter().sum::<f64>() - 3.0).abs() < 1e-12);
    }
}

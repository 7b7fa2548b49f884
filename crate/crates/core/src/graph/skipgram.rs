//! Skip-gram with negative sampling over node sequences, trained by plain
//! SGD with a linearly decaying learning rate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub epochs: usize,
    pub n_negatives: usize,
    pub learning_rate: f64,
}

pub struct SkipGramResult {
    /// Input vectors, one per node.
    pub vectors: Vec<Vec<f64>>,
    /// Mean loss per (center, context) pair in each epoch.
    pub epoch_losses: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    eenr_tensor::sigmoid(x)
}

/// Cumulative noise distribution proportional to `count^0.75`.
fn noise_table(walks: &[Vec<usize>], n_nodes: usize) -> Vec<f64> {
    let mut counts = vec![0.0; n_nodes];
    for w in walks {
        for &x in w {
            counts[x] += 1.0;
        }
    }
    let mut acc = 0.0;
    counts
        .iter()
        .map(|&c: &f64| {
            acc += c.powf(0.75);
            acc
        })
        .collect()
}

fn draw(cdf: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total = *cdf.last().expect("non-empty table");
    let u = rng.random::<f64>() * total;
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

pub fn skipgram_train(
    walks: &[Vec<usize>],
    n_nodes: usize,
    config: &SkipGramConfig,
    seed: u64,
) -> Result<SkipGramResult> {
    if config.dim == 0 {
        return Err(Error::Config("skip-gram dim must be positive".into()));
    }
    if walks.iter().all(Vec::is_empty) || n_nodes == 0 {
        return Err(Error::Empty("random walks"));
    }
    if let Some(bad) = walks.iter().flatten().find(|&&x| x >= n_nodes) {
        return Err(Error::Data(format!("walk visits node {bad} of {n_nodes}")));
    }
    let d = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5A_1D_6A4E);
    let bound = 0.5 / d as f64;
    let mut input: Vec<f64> = (0..n_nodes * d).map(|_| rng.random_range(-bound..bound)).collect();
    let mut output = vec![0.0; n_nodes * d];
    let cdf = noise_table(walks, n_nodes);

    let pairs_per_epoch: usize = walks
        .iter()
        .map(|w| {
            (0..w.len())
                .map(|i| {
                    let lo = i.saturating_sub(config.window);
                    let hi = (i + config.window).min(w.len() - 1);
                    hi - lo
                })
                .sum::<usize>()
        })
        .sum();
    let total_steps = (pairs_per_epoch * config.epochs).max(1) as f64;
    let mut step = 0usize;
    let mut grad = vec![0.0; d];
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let mut loss = 0.0;
        for w in walks {
            for i in 0..w.len() {
                let lo = i.saturating_sub(config.window);
                let hi = (i + config.window).min(w.len() - 1);
                for j in lo..=hi {
                    if j == i {
                        continue;
                    }
                    let lr = config.learning_rate * (1.0 - step as f64 / total_steps).max(1e-4);
                    step += 1;
                    let center = w[i];
                    let target = w[j];
                    grad.fill(0.0);
                    let v = &input[center * d..(center + 1) * d];
                    for k in 0..=config.n_negatives {
                        let (node, label) = if k == 0 {
                            (target, 1.0)
                        } else {
                            let neg = draw(&cdf, &mut rng);
                            if neg == target {
                                continue;
                            }
                            (neg, 0.0)
                        };
                        let u = &mut output[node * d..(node + 1) * d];
                        let dot: f64 = v.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
                        let s = sigmoid(dot);
                        loss -= if label > 0.0 {
                            s.max(1e-300).ln()
                        } else {
                            (1.0 - s).max(1e-300).ln()
                        };
                        let g = lr * (label - s);
                        for ((gr, uo), vi) in grad.iter_mut().zip(u.iter_mut()).zip(v) {
                            *gr += g * *uo;
                            *uo += g * vi;
                        }
                    }
                    for (x, g) in input[center * d..(center + 1) * d].iter_mut().zip(&grad) {
                        *x += g;
                    }
                }
            }
        }
        epoch_losses.push(loss / pairs_per_epoch.max(1) as f64);
    }
    let vectors = input.chunks(d).map(<[f64]>::to_vec).collect();
    Ok(SkipGramResult {
        vectors,
        epoch_losses,
    })
}

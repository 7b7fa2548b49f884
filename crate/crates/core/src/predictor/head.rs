//! Hadamard scoring head and the grouped softmax loss.

use eenr_tensor::{ParamStore, Tape, Tensor, Var};
use rand::Rng;

use crate::encoders::Binder;
use crate::error::{Error, Result};

pub const HEAD_W1: &str = "pred.w1";
pub const HEAD_B1: &str = "pred.b1";
pub const HEAD_W2: &str = "pred.w2";
pub const HEAD_B2: &str = "pred.b2";

pub fn init_head<R: Rng + ?Sized>(store: &mut ParamStore, input_dim: usize, hidden: usize, rng: &mut R) -> Result<()> {
    if input_dim == 0 || hidden == 0 {
        return Err(Error::Config("predictor dimensions must be positive".into()));
    }
    store.insert_uniform(HEAD_W1, &[input_dim, hidden], rng)?;
    store.insert(HEAD_B1, Tensor::zeros(&[1, hidden]))?;
    store.insert_uniform(HEAD_W2, &[hidden, 1], rng)?;
    store.insert(HEAD_B2, Tensor::zeros(&[1, 1]))?;
    Ok(())
}

/// Raw scores `[m, 1]` of `tanh((n ⊙ u)·W1 + b1)·W2 + b2` row by row.
pub fn score_var<'t>(b: &mut Binder<'_, 't>, news: Var<'t>, users: Var<'t>) -> Result<Var<'t>> {
    if news.shape() != users.shape() {
        return Err(Error::Data(format!(
            "news vectors {:?} and user vectors {:?} differ in shape",
            news.shape(),
            users.shape()
        )));
    }
    let h = news.mul(users)?.matmul(b.get(HEAD_W1)?)?.add(b.get(HEAD_B1)?)?.tanh()?;
    Ok(h.matmul(b.get(HEAD_W2)?)?.add(b.get(HEAD_B2)?)?)
}

/// Raw score of one news/user vector pair.
pub fn score(store: &ParamStore, e_news: &[f64], e_user: &[f64]) -> Result<f64> {
    if e_news.len() != e_user.len() {
        return Err(Error::Data(format!(
            "news vector has {} entries, user vector {}",
            e_news.len(),
            e_user.len()
        )));
    }
    let tape = Tape::new();
    let mut b = Binder::new(store, &tape, false);
    let n = tape.constant(Tensor::matrix(1, e_news.len(), e_news.to_vec())?);
    let u = tape.constant(Tensor::matrix(1, e_user.len(), e_user.to_vec())?);
    Ok(score_var(&mut b, n, u)?.item()?)
}

/// Mean over rows of `−log softmax(row)[0]`; column 0 holds the positive.
pub fn group_loss<'t>(scores: Var<'t>) -> Result<Var<'t>> {
    let shape = scores.shape();
    if shape.len() != 2 || shape[1] < 2 {
        return Err(Error::Data(format!("group scores of shape {shape:?}")));
    }
    Ok(scores.log_softmax(1)?.slice_cols(0, 1)?.mean()?.neg()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loss(scores: &[f64]) -> f64 {
        let tape = Tape::new();
        let s = tape.constant(Tensor::matrix(1, scores.len(), scores.to_vec()).unwrap());
        group_loss(s).unwrap().item().unwrap()
    }

    #[test]
    fn analytic_values() {
        assert!((loss(&[0.0; 5]) - 5f64.ln()).abs() < 1e-12);
        assert!(loss(&[100.0, 0.0, 0.0, 0.0, 0.0]) < 1e-40);
        let base = loss(&[0.3, -1.0, 2.0, 0.5, 0.0]);
        assert!((loss(&[10.3, 9.0, 12.0, 10.5, 10.0]) - base).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        init_head(&mut store, 3, 4, &mut rng).unwrap();
        assert!(score(&store, &[1.0; 3], &[1.0; 2]).is_err());
        let a = score(&store, &[0.5, -1.0, 2.0], &[1.0; 3]).unwrap();
        let b = score(&store, &[1.0; 3], &[0.5, -1.0, 2.0]).unwrap();
        assert_eq!(a, b);
    }
}

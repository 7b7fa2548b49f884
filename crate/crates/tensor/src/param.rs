//! Named parameters, the Adam optimizer, and the checkpoint format.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes   b"EENRPRM\0"
//! version  u32       1
//! count    u32       number of parameters
//! repeated count times, in name order:
//!   name_len u32, name (UTF-8)
//!   rank     u32, dims (u64 each)
//!   values   f64 × product(dims)
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EENRPRM\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    steps: u64,
    has_grad: bool,
}

impl Param {
    fn new(value: Tensor) -> Self {
        let n = value.numel();
        Self {
            grad: Tensor::zeros(value.shape()),
            value,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            steps: 0,
            has_grad: false,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}

/// Named trainable tensors plus their Adam state.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
    adam: AdamConfig,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_adam(adam: AdamConfig) -> Self {
        Self {
            params: BTreeMap::new(),
            adam,
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(TensorError::DuplicateParam(name.to_owned()));
        }
        self.params.insert(name.to_owned(), Param::new(value));
        Ok(())
    }

    /// Inserts a parameter initialized from `uniform(-1/√fan_in, 1/√fan_in)`
    /// where `fan_in` is the first dimension.
    pub fn insert_uniform<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        shape: &[usize],
        rng: &mut R,
    ) -> Result<()> {
        let fan_in = shape.first().copied().unwrap_or(1).max(1);
        let bound = 1.0 / (fan_in as f64).sqrt();
        self.insert(name, Tensor::uniform(shape, bound, rng))
    }

    /// Replaces the value of an existing parameter, resetting its optimizer state.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_owned()))?;
        *p = Param::new(value);
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| TensorError::UnknownParam(name.to_owned()))
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Puts the named parameter on `tape` as a gradient-receiving leaf.
    pub fn bind<'t>(&self, tape: &'t Tape, name: &str) -> Result<Var<'t>> {
        let value = self.get(name)?.clone();
        let var = tape.param(value);
        tape.bind(name, var);
        Ok(var)
    }

    /// Puts the named parameter on `tape` as a constant.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape, name: &str) -> Result<Var<'t>> {
        Ok(tape.constant(self.get(name)?.clone()))
    }

    /// Adds the gradients accumulated on `tape` into the bound parameters.
    pub fn collect_grads(&mut self, tape: &Tape) -> Result<()> {
        for (name, id) in tape.bindings() {
            let Some(g) = tape.grad_by_id(id) else { continue };
            let p = self
                .params
                .get_mut(&name)
                .ok_or(TensorError::UnknownParam(name))?;
            p.grad.add_assign(&g);
            p.has_grad = true;
        }
        Ok(())
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|p| &p.grad)
            .ok_or_else(|| TensorError::UnknownParam(name.to_owned()))
    }

    /// Adds `g` to the named gradient directly, bypassing a tape.
    pub fn accumulate(&mut self, name: &str, g: &Tensor) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_owned()))?;
        if p.grad.shape() != g.shape() {
            return Err(TensorError::Shape {
                op: "accumulate",
                shapes: vec![p.grad.shape().to_vec(), g.shape().to_vec()],
            });
        }
        p.grad.add_assign(g);
        p.has_grad = true;
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            if p.has_grad {
                p.grad.data_mut().fill(0.0);
                p.has_grad = false;
            }
        }
    }

    /// One Adam update on every parameter that received a gradient since the
    /// last step, then zeroes gradients.
    pub fn step(&mut self, learning_rate: f64) {
        let AdamConfig { beta1, beta2, eps } = self.adam;
        for p in self.params.values_mut() {
            if !p.has_grad {
                continue;
            }
            p.steps += 1;
            let t = p.steps as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            let g = p.grad.data();
            let values = p.value.data_mut();
            for i in 0..values.len() {
                let m = beta1 * p.first_moment[i] + (1.0 - beta1) * g[i];
                let v = beta2 * p.second_moment[i] + (1.0 - beta2) * g[i] * g[i];
                p.first_moment[i] = m;
                p.second_moment[i] = v;
                values[i] -= learning_rate * (m / c1) / ((v / c2).sqrt() + eps);
            }
        }
        self.zero_grad();
    }

    /// Copies values (not optimizer state) of every parameter present in both.
    pub fn copy_values_from(&mut self, other: &ParamStore) {
        for (name, p) in self.params.iter_mut() {
            if let Some(src) = other.params.get(name) {
                if src.value.shape() == p.value.shape() {
                    p.value = src.value.clone();
                }
            }
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for (name, p) in &self.params {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            let shape = p.value.shape();
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for &d in shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in p.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(TensorError::Checkpoint("bad magic header".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(TensorError::Checkpoint(format!(
                "unsupported version {version}"
            )));
        }
        let count = read_u32(&mut r)?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| TensorError::Checkpoint("parameter name is not UTF-8".into()))?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            store.insert(&name, Tensor::new(shape, data)?)?;
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_moves_against_gradient() {
        let mut store = ParamStore::new();
        store.insert("p", Tensor::scalar(1.0)).unwrap();
        store.accumulate("p", &Tensor::scalar(1.0)).unwrap();
        store.step(0.1);
        let p = store.get("p").unwrap().item().unwrap();
        assert!(p < 1.0);
        assert!((p - 1.0).abs() <= 0.1 + 1e-12);
        assert_eq!(store.grad("p").unwrap().item().unwrap(), 0.0);
    }

    #[test]
    fn zero_gradient_leaves_param_unchanged() {
        let mut store = ParamStore::new();
        store.insert("p", Tensor::vector(vec![0.25, -3.0])).unwrap();
        store.accumulate("p", &Tensor::zeros(&[2])).unwrap();
        store.step(0.5);
        assert_eq!(store.get("p").unwrap().data(), &[0.25, -3.0]);
    }

    #[test]
    fn step_without_gradients_is_noop() {
        let mut store = ParamStore::new();
        store.insert("p", Tensor::scalar(2.0)).unwrap();
        store.step(1.0);
        assert_eq!(store.get("p").unwrap().item().unwrap(), 2.0);
        assert_eq!(store.param("p").unwrap().steps(), 0);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        // f(p) = (p - 3)^2, closed-form minimum at 3
        let mut store = ParamStore::new();
        store.insert("p", Tensor::scalar(0.0)).unwrap();
        for _ in 0..500 {
            let tape = Tape::new();
            let p = store.bind(&tape, "p").unwrap();
            let d = p.add_scalar(-3.0).unwrap();
            let loss = d.mul(d).unwrap().sum().unwrap();
            tape.backward(loss).unwrap();
            store.collect_grads(&tape).unwrap();
            store.step(0.05);
        }
        let p = store.get("p").unwrap().item().unwrap();
        assert!((p - 3.0).abs() < 1e-2, "p = {p}");
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(0.0)).unwrap();
        assert!(matches!(
            store.insert("w", Tensor::scalar(1.0)),
            Err(TensorError::DuplicateParam(_))
        ));
    }

    #[test]
    fn bad_magic_rejected() {
        let bytes = b"NOTMAGIC\x01\x00\x00\x00\x00\x00\x00\x00".to_vec();
        assert!(ParamStore::read_from(&bytes[..]).is_err());
    }
}

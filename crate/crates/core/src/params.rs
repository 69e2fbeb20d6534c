//! Named parameter storage shared by all three models.
//!
//! Layers hold indices into a [`ParamStore`]; at forward time the whole
//! store is bound onto a fresh tape and layers look their vars up by index.

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PId(pub usize);

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> PId {
        self.params.push((name.into(), t));
        PId(self.params.len() - 1)
    }

    /// Uniform init in [-s, s] with s = sqrt(6 / (fan_in + fan_out)).
    pub fn add_xavier(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> PId {
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-s..s)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data).unwrap())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn name(&self, i: usize) -> &str {
        &self.params[i].0
    }

    pub fn value(&self, i: usize) -> &Tensor {
        &self.params[i].1
    }

    pub fn value_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.params[i].1
    }

    pub fn set_value(&mut self, i: usize, t: Tensor) {
        assert_eq!(self.params[i].1.shape(), t.shape(), "set_value shape");
        self.params[i].1 = t;
    }

    /// Bind every parameter as a leaf on the tape, in store order.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(_, t)| tape.leaf(t.clone()))
            .collect();
        Bound { vars }
    }

    /// Total scalar count, for curiosity and logs.
    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }
}

/// The tape vars of one binding of a store.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, p: PId) -> Var {
        self.vars[p.0]
    }

    /// Collect gradients for every parameter, zeros where none flowed.
    pub fn gradients(&self, tape: &Tape, grads: &crate::tape::Grads) -> Vec<Tensor> {
        self.vars
            .iter()
            .map(|&v| grads.get_or_zeros(v, tape.value(v).shape()))
            .collect()
    }
}

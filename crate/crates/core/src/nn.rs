//! Layers built on the tape: linear, GRU (uni/bi), causal conv, batch norm,
//! multi-head causal self-attention, dropout masks.

use crate::params::{Bound, PId, ParamStore};
use crate::tape::{scaled_dot_attention, Tape, Var};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: PId,
    pub b: PId,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = store.add_xavier(format!("{prefix}.w"), &[d_in, d_out], d_in, d_out, rng);
        let b = store.add(format!("{prefix}.b"), Tensor::zeros(&[d_out]));
        Linear { w, b }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Var {
        let y = tape.matmul(x, bound.var(self.w));
        tape.add_bias(y, bound.var(self.b))
    }
}

/// Standard reset/update-gate GRU cell; candidate uses tanh.
#[derive(Debug, Clone)]
pub struct Gru {
    pub wz: PId,
    pub uz: PId,
    pub bz: PId,
    pub wr: PId,
    pub ur: PId,
    pub br: PId,
    pub wh: PId,
    pub uh: PId,
    pub bh: PId,
    pub hidden: usize,
}

impl Gru {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = |store: &mut ParamStore, n: &str, din: usize, rng: &mut ChaCha8Rng| {
            store.add_xavier(format!("{prefix}.{n}"), &[din, hidden], din, hidden, rng)
        };
        let wz = w(store, "wz", d_in, rng);
        let uz = w(store, "uz", hidden, rng);
        let wr = w(store, "wr", d_in, rng);
        let ur = w(store, "ur", hidden, rng);
        let wh = w(store, "wh", d_in, rng);
        let uh = w(store, "uh", hidden, rng);
        let bz = store.add(format!("{prefix}.bz"), Tensor::zeros(&[hidden]));
        let br = store.add(format!("{prefix}.br"), Tensor::zeros(&[hidden]));
        let bh = store.add(format!("{prefix}.bh"), Tensor::zeros(&[hidden]));
        Gru {
            wz,
            uz,
            bz,
            wr,
            ur,
            br,
            wh,
            uh,
            bh,
            hidden,
        }
    }

    /// One step: x_t `[1, D]`, h `[1, H]` -> new h `[1, H]`.
    pub fn step(&self, tape: &mut Tape, bound: &Bound, x_t: Var, h: Var) -> Var {
        let zx = tape.matmul(x_t, bound.var(self.wz));
        let zh = tape.matmul(h, bound.var(self.uz));
        let z = tape.add(zx, zh);
        let z = tape.add_bias(z, bound.var(self.bz));
        let z = tape.sigmoid(z);

        let rx = tape.matmul(x_t, bound.var(self.wr));
        let rh = tape.matmul(h, bound.var(self.ur));
        let r = tape.add(rx, rh);
        let r = tape.add_bias(r, bound.var(self.br));
        let r = tape.sigmoid(r);

        let nx = tape.matmul(x_t, bound.var(self.wh));
        let rh2 = tape.mul(r, h);
        let nh = tape.matmul(rh2, bound.var(self.uh));
        let n = tape.add(nx, nh);
        let n = tape.add_bias(n, bound.var(self.bh));
        let n = tape.tanh(n);

        // h' = (1 - z) * n + z * h
        let one_minus_z = tape.affine_const(z, -1.0, 1.0);
        let a = tape.mul(one_minus_z, n);
        let b = tape.mul(z, h);
        tape.add(a, b)
    }

    /// Run over a whole `[T, D]` sequence from a zero initial state.
    /// `Backward` processes the reversed sequence and re-reverses outputs.
    pub fn forward_seq(&self, tape: &mut Tape, bound: &Bound, x: Var, dir: Direction) -> Var {
        let t_len = tape.value(x).rows();
        let order: Vec<usize> = match dir {
            Direction::Forward => (0..t_len).collect(),
            Direction::Backward => (0..t_len).rev().collect(),
        };
        let mut h = tape.constant(Tensor::zeros(&[1, self.hidden]));
        let mut outs = vec![Var(0); t_len];
        for &t in &order {
            let x_t = tape.row(x, t);
            h = self.step(tape, bound, x_t, h);
            outs[t] = h;
        }
        tape.concat_rows(&outs)
    }
}

/// Bidirectional GRU: concatenates forward and backward outputs per frame.
#[derive(Debug, Clone)]
pub struct BiGru {
    pub fwd: Gru,
    pub bwd: Gru,
}

impl BiGru {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        BiGru {
            fwd: Gru::new(store, &format!("{prefix}.fwd"), d_in, hidden, rng),
            bwd: Gru::new(store, &format!("{prefix}.bwd"), d_in, hidden, rng),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.fwd.hidden + self.bwd.hidden
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Var {
        let f = self.fwd.forward_seq(tape, bound, x, Direction::Forward);
        let b = self.bwd.forward_seq(tape, bound, x, Direction::Backward);
        tape.concat_cols(&[f, b])
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub kernel: PId,
    pub bias: PId,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        k: usize,
        c_in: usize,
        c_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let kernel = store.add_xavier(
            format!("{prefix}.kernel"),
            &[k, c_in, c_out],
            k * c_in,
            c_out,
            rng,
        );
        let bias = store.add(format!("{prefix}.bias"), Tensor::zeros(&[c_out]));
        Conv1d { kernel, bias }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Var {
        tape.conv1d_causal(x, bound.var(self.kernel), bound.var(self.bias))
    }
}

/// Batch norm layer; running statistics live here (not in the param store)
/// and are updated only by train-mode forwards.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: PId,
    pub beta: PId,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: store.add(format!("{prefix}.gamma"), Tensor::full(&[channels], 1.0)),
            beta: store.add(format!("{prefix}.beta"), Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Train-mode forward over `[T, C]`; updates running statistics.
    /// For T == 1 (single-frame prenet windows) batch statistics are
    /// undefined, so the stored running statistics are used instead.
    pub fn forward_train(&mut self, tape: &mut Tape, bound: &Bound, x: Var) -> Var {
        if tape.value(x).rows() < 2 {
            return self.forward_infer(tape, bound, x);
        }
        let (y, mean, var) = tape
            .batch_norm_train(x, bound.var(self.gamma), bound.var(self.beta), self.eps)
            .expect("T >= 2 checked above");
        for ((rm, rv), (m, v)) in self
            .running_mean
            .data_mut()
            .iter_mut()
            .zip(self.running_var.data_mut().iter_mut())
            .zip(mean.data().iter().zip(var.data()))
        {
            *rm = (1.0 - self.momentum) * *rm + self.momentum * m;
            *rv = (1.0 - self.momentum) * *rv + self.momentum * v;
        }
        y
    }

    pub fn forward_infer(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Var {
        tape.batch_norm_affine(
            x,
            bound.var(self.gamma),
            bound.var(self.beta),
            self.running_mean.clone(),
            self.running_var.clone(),
            self.eps,
        )
    }
}

/// Multi-head self-attention with residual connection and no layer norm.
/// Model dim d is split evenly across heads.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(heads > 0 && dim % heads == 0, "heads must divide model dim");
        MultiHeadAttention {
            wq: Linear::new(store, &format!("{prefix}.wq"), dim, dim, rng),
            wk: Linear::new(store, &format!("{prefix}.wk"), dim, dim, rng),
            wv: Linear::new(store, &format!("{prefix}.wv"), dim, dim, rng),
            wo: Linear::new(store, &format!("{prefix}.wo"), dim, dim, rng),
            heads,
            dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var, mask: &Tensor) -> Var {
        let dk = self.dim / self.heads;
        let q = self.wq.forward(tape, bound, x);
        let k = self.wk.forward(tape, bound, x);
        let v = self.wv.forward(tape, bound, x);
        let mut head_outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dk, dk);
            let kh = tape.slice_cols(k, h * dk, dk);
            let vh = tape.slice_cols(v, h * dk, dk);
            let o = scaled_dot_attention(tape, qh, kh, vh, mask)
                .expect("causal mask always leaves the diagonal open");
            head_outs.push(o);
        }
        let cat = tape.concat_cols(&head_outs);
        let proj = self.wo.forward(tape, bound, cat);
        tape.add(proj, x)
    }
}

/// Inverted-dropout mask: kept entries scaled by 1/(1-rate).
pub fn dropout_mask(shape: &[usize], rate: f64, rng: &mut ChaCha8Rng) -> Tensor {
    assert!((0.0..1.0).contains(&rate), "dropout rate in [0,1)");
    if rate == 0.0 {
        return Tensor::full(shape, 1.0);
    }
    let keep = 1.0 - rate;
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn gru_zero_weights_zero_output() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gru = Gru::new(&mut store, "g", 3, 4, &mut rng);
        // Zero every weight.
        for i in 0..store.len() {
            let z = Tensor::zeros(store.value(i).shape());
            store.set_value(i, z);
        }
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let x = tape.leaf(Tensor::new(vec![3, 3], vec![1.0; 9]).unwrap());
        let y = gru.forward_seq(&mut tape, &bound, x, Direction::Forward);
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gru_t1_directions_agree() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let gru = Gru::new(&mut store, "g", 2, 3, &mut rng);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let x = tape.leaf(Tensor::new(vec![1, 2], vec![0.5, -0.3]).unwrap());
        let f = gru.forward_seq(&mut tape, &bound, x, Direction::Forward);
        let b = gru.forward_seq(&mut tape, &bound, x, Direction::Backward);
        assert_eq!(tape.value(f).data(), tape.value(b).data());
    }

    #[test]
    fn bigru_concats_dims() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bi = BiGru::new(&mut store, "bi", 3, 5, &mut rng);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let x = tape.leaf(Tensor::new(vec![4, 3], vec![0.1; 12]).unwrap());
        let y = bi.forward(&mut tape, &bound, x);
        assert_eq!(tape.value(y).shape(), &[4, 10]);
    }

    #[test]
    fn dropout_mask_rate_zero_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = dropout_mask(&[2, 3], 0.0, &mut rng);
        assert!(m.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn attention_layer_shape_grid() {
        // Prenet dim must survive every (h, N) combination of the sweep grid.
        let dim = 64;
        for &h in &[1usize, 2, 4, 8] {
            for &n in &[1usize, 2, 3, 4] {
                let mut store = ParamStore::new();
                let mut rng = ChaCha8Rng::seed_from_u64(3);
                let layers: Vec<MultiHeadAttention> = (0..n)
                    .map(|i| {
                        MultiHeadAttention::new(&mut store, &format!("a{i}"), dim, h, &mut rng)
                    })
                    .collect();
                let mut tape = Tape::new();
                let bound = store.bind(&mut tape);
                let mut x = tape.leaf(Tensor::full(&[3, dim], 0.1));
                let mask = crate::tape::causal_mask(3);
                for l in &layers {
                    x = l.forward(&mut tape, &bound, x, &mask);
                }
                assert_eq!(tape.value(x).shape(), &[3, dim]);
            }
        }
    }
}

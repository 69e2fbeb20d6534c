//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Every forward op appends a node holding its output value plus a closure
//! that maps the output gradient to per-parent gradient contributions.
//! `backward` walks the tape in reverse and accumulates. Values are f64;
//! gradient checks and training share the same code path.

use crate::error::{Result, SvsError};
use crate::tensor::Tensor;

/// Additive sentinel for masked attention logits. Large enough that
/// exp(logit + sentinel) underflows to 0 against any realistic logit.
pub const MASKED: f64 = -1.0e30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub usize);

pub struct BackCtx<'a> {
    pub grad: &'a Tensor,
    pub out: &'a Tensor,
    pub parents: &'a [&'a Tensor],
}

type BackFn = Box<dyn Fn(&BackCtx) -> Vec<Tensor>>;

struct Node {
    parents: Vec<usize>,
    back: Option<BackFn>,
}

#[derive(Default)]
pub struct Tape {
    values: Vec<Tensor>,
    nodes: Vec<Node>,
}

pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros of the given shape if it never received one.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        match &self.grads[v.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    fn push(&mut self, value: Tensor, parents: Vec<usize>, back: Option<BackFn>) -> Var {
        self.values.push(value);
        self.nodes.push(Node { parents, back });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable leaf (parameter or input we want gradients for).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, vec![], None)
    }

    /// A constant; gradients flowing into it are simply discarded.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, vec![], None)
    }

    /// Reverse sweep from a scalar root. Returns one gradient slot per node.
    pub fn backward(&self, root: Var) -> Grads {
        assert_eq!(
            self.values[root.0].len(),
            1,
            "backward root must be a scalar"
        );
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));
        for i in (0..=root.0).rev() {
            let g = match &grads[i] {
                Some(g) => g.clone(),
                None => continue,
            };
            let node = &self.nodes[i];
            let back = match &node.back {
                Some(b) => b,
                None => continue,
            };
            let pvals: Vec<&Tensor> = node.parents.iter().map(|&p| &self.values[p]).collect();
            let ctx = BackCtx {
                grad: &g,
                out: &self.values[i],
                parents: &pvals,
            };
            let contribs = back(&ctx);
            debug_assert_eq!(contribs.len(), node.parents.len());
            for (&p, c) in node.parents.iter().zip(contribs) {
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&c),
                    slot => *slot = Some(c),
                }
            }
        }
        Grads { grads }
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        assert_eq!(va.shape(), vb.shape(), "add shapes");
        let mut out = va.clone();
        out.add_assign(vb);
        self.push(
            out,
            vec![a.0, b.0],
            Some(Box::new(|c: &BackCtx| {
                vec![c.grad.clone(), c.grad.clone()]
            })),
        )
    }

    pub fn add_n(&mut self, vars: &[Var]) -> Var {
        assert!(!vars.is_empty());
        let mut acc = vars[0];
        for &v in &vars[1..] {
            acc = self.add(acc, v);
        }
        acc
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        assert_eq!(va.shape(), vb.shape(), "sub shapes");
        let data: Vec<f64> = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x - y)
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data).unwrap();
        self.push(
            out,
            vec![a.0, b.0],
            Some(Box::new(|c: &BackCtx| {
                vec![c.grad.clone(), c.grad.map(|g| -g)]
            })),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        assert_eq!(va.shape(), vb.shape(), "mul shapes");
        let data: Vec<f64> = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data).unwrap();
        self.push(
            out,
            vec![a.0, b.0],
            Some(Box::new(|c: &BackCtx| {
                let da: Vec<f64> = c
                    .grad
                    .data()
                    .iter()
                    .zip(c.parents[1].data())
                    .map(|(g, y)| g * y)
                    .collect();
                let db: Vec<f64> = c
                    .grad
                    .data()
                    .iter()
                    .zip(c.parents[0].data())
                    .map(|(g, x)| g * x)
                    .collect();
                vec![
                    Tensor::new(c.parents[0].shape().to_vec(), da).unwrap(),
                    Tensor::new(c.parents[1].shape().to_vec(), db).unwrap(),
                ]
            })),
        )
    }

    /// y = mul * x + add (elementwise with scalar coefficients).
    pub fn affine_const(&mut self, a: Var, mul: f64, add: f64) -> Var {
        let out = self.value(a).map(|v| mul * v + add);
        self.push(
            out,
            vec![a.0],
            Some(Box::new(move |c: &BackCtx| vec![c.grad.map(|g| g * mul)])),
        )
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine_const(a, s, 0.0)
    }

    /// Elementwise multiply by a fixed tensor (dropout masks).
    pub fn mul_mask(&mut self, a: Var, mask: Tensor) -> Var {
        let va = self.value(a);
        assert_eq!(va.shape(), mask.shape(), "mul_mask shapes");
        let data: Vec<f64> = va
            .data()
            .iter()
            .zip(mask.data())
            .map(|(x, m)| x * m)
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data).unwrap();
        self.push(
            out,
            vec![a.0],
            Some(Box::new(move |c: &BackCtx| {
                let d: Vec<f64> = c
                    .grad
                    .data()
                    .iter()
                    .zip(mask.data())
                    .map(|(g, m)| g * m)
                    .collect();
                vec![Tensor::new(c.grad.shape().to_vec(), d).unwrap()]
            })),
        )
    }

    /// Add a fixed tensor (attention masks, frozen statistics).
    pub fn add_const(&mut self, a: Var, t: Tensor) -> Var {
        let va = self.value(a);
        assert_eq!(va.shape(), t.shape(), "add_const shapes");
        let data: Vec<f64> = va.data().iter().zip(t.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(va.shape().to_vec(), data).unwrap();
        self.push(
            out,
            vec![a.0],
            Some(Box::new(|c: &BackCtx| vec![c.grad.clone()])),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(
            out,
            vec![a.0],
            Some(Box::new(|c: &BackCtx| {
                let d: Vec<f64> = c
                    .grad
                    .data()
                    .iter()
                    .zip(c.out.data())
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                vec![Tensor::new(c.out.shape().to_vec(), d).unwrap()]
            })),
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(
            out,
            vec![a.0],
            Some(Box::new(|c: &BackCtx| {
                let d: Vec<f64> = c
                    .grad
                    .data()
                    .iter()
                    .zip(c.out.data())
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                vec![Tensor::new(c.out.shape().to_vec(), d).unwrap()]
            })),
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(
            out,
            vec![a.0],
            Some(Box::new(|c: &BackCtx| {
                let d: Vec<f64> = c
                    .grad
                    .data()
                    .iter()
                    .zip(c.parents[0].data())
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                vec![Tensor::new(c.grad.shape().to_vec(), d).unwrap()]
            })),
        )
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        assert_eq!(
            va.cols(),
            vb.rows(),
            "matmul {:?} x {:?}",
            va.shape(),
            vb.shape()
        );
        let out = va.matmul(vb);
        self.push(
            out,
            vec![a.0, b.0],
            Some(Box::new(|c: &BackCtx| {
                let da = c.grad.matmul(&c.parents[1].transpose());
                let db = c.parents[0].transpose().matmul(c.grad);
                vec![da, db]
            })),
        )
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(
            out,
            vec![a.0],
            Some(Box::new(|c: &BackCtx| vec![c.grad.transpose()])),
        )
    }

    /// Broadcast-add a bias row vector `[D]` to every row of `[T, D]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let vx = self.value(x);
        let vb = self.value(b);
        assert_eq!(vx.cols(), vb.cols(), "add_bias dims");
        let (t, d) = (vx.rows(), vx.cols());
        let mut data = vx.data().to_vec();
        for r in 0..t {
            for c in 0..d {
                data[r * d + c] += vb.data()[c];
            }
        }
        let out = Tensor::new(vec![t, d], data).unwrap();
        self.push(
            out,
            vec![x.0, b.0],
            Some(Box::new(|c: &BackCtx| {
                let (t, d) = (c.grad.rows(), c.grad.cols());
                let mut db = vec![0.0; d];
                for r in 0..t {
                    for j in 0..d {
                        db[j] += c.grad.data()[r * d + j];
                    }
                }
                vec![
                    c.grad.clone(),
                    Tensor::new(c.parents[1].shape().to_vec(), db).unwrap(),
                ]
            })),
        )
    }

    // ---- shape ops ----

    /// Select row `r` of `[T, D]` as `[1, D]`.
    pub fn row(&mut self, x: Var, r: usize) -> Var {
        let vx = self.value(x);
        let d = vx.cols();
        let out = Tensor::new(vec![1, d], vx.row(r).to_vec()).unwrap();
        let (t, ridx) = (vx.rows(), r);
        self.push(
            out,
            vec![x.0],
            Some(Box::new(move |c: &BackCtx| {
                let mut dx = Tensor::zeros(&[t, d]);
                dx.data_mut()[ridx * d..(ridx + 1) * d].copy_from_slice(c.grad.data());
                vec![dx]
            })),
        )
    }

    /// Stack `[1, D]` rows into `[T, D]`.
    pub fn concat_rows(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty());
        let d = self.value(rows[0]).cols();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            let v = self.value(r);
            assert_eq!(v.cols(), d, "concat_rows widths");
            assert_eq!(v.rows(), 1, "concat_rows expects row vectors");
            data.extend_from_slice(v.data());
        }
        let out = Tensor::new(vec![rows.len(), d], data).unwrap();
        self.push(
            out,
            rows.iter().map(|v| v.0).collect(),
            Some(Box::new(move |c: &BackCtx| {
                (0..c.parents.len())
                    .map(|i| {
                        Tensor::new(vec![1, d], c.grad.row(i).to_vec()).unwrap()
                    })
                    .collect()
            })),
        )
    }

    /// Concatenate matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let t = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; t * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let v = self.value(p);
            assert_eq!(v.rows(), t, "concat_cols row counts");
            for r in 0..t {
                data[r * total + off..r * total + off + w].copy_from_slice(v.row(r));
            }
            off += w;
        }
        let out = Tensor::new(vec![t, total], data).unwrap();
        self.push(
            out,
            parts.iter().map(|v| v.0).collect(),
            Some(Box::new(move |c: &BackCtx| {
                let mut grads = Vec::with_capacity(widths.len());
                let mut off = 0;
                for &w in &widths {
                    let mut g = Tensor::zeros(&[t, w]);
                    for r in 0..t {
                        g.data_mut()[r * w..(r + 1) * w]
                            .copy_from_slice(&c.grad.row(r)[off..off + w]);
                    }
                    grads.push(g);
                    off += w;
                }
                grads
            })),
        )
    }

    /// Columns `[start, start+len)` of `[T, D]`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let vx = self.value(x);
        let (t, d) = (vx.rows(), vx.cols());
        assert!(start + len <= d, "slice_cols out of range");
        let mut data = vec![0.0; t * len];
        for r in 0..t {
            data[r * len..(r + 1) * len].copy_from_slice(&vx.row(r)[start..start + len]);
        }
        let out = Tensor::new(vec![t, len], data).unwrap();
        self.push(
            out,
            vec![x.0],
            Some(Box::new(move |c: &BackCtx| {
                let mut dx = Tensor::zeros(&[t, d]);
                for r in 0..t {
                    dx.data_mut()[r * d + start..r * d + start + len]
                        .copy_from_slice(c.grad.row(r));
                }
                vec![dx]
            })),
        )
    }

    // ---- reductions & losses ----

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(
            Tensor::scalar(s),
            vec![a.0],
            Some(Box::new(|c: &BackCtx| {
                let g = c.grad.scalar_value();
                vec![Tensor::full(c.parents[0].shape(), g)]
            })),
        )
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Sum of squared differences against a fixed target.
    pub fn sse_const(&mut self, pred: Var, target: Tensor) -> Var {
        let vp = self.value(pred);
        assert_eq!(vp.shape(), target.shape(), "sse_const shapes");
        let s: f64 = vp
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        self.push(
            Tensor::scalar(s),
            vec![pred.0],
            Some(Box::new(move |c: &BackCtx| {
                let g = c.grad.scalar_value();
                let d: Vec<f64> = c.parents[0]
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(p, t)| 2.0 * g * (p - t))
                    .collect();
                vec![Tensor::new(c.parents[0].shape().to_vec(), d).unwrap()]
            })),
        )
    }

    /// Row-wise softmax of `[T, C]`.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let (t, cdim) = (va.rows(), va.cols());
        let mut data = vec![0.0; t * cdim];
        for r in 0..t {
            softmax_into(va.row(r), &mut data[r * cdim..(r + 1) * cdim]);
        }
        let out = Tensor::new(vec![t, cdim], data).unwrap();
        self.push(
            out,
            vec![a.0],
            Some(Box::new(move |c: &BackCtx| {
                let mut dz = vec![0.0; t * cdim];
                for r in 0..t {
                    let y = c.out.row(r);
                    let g = c.grad.row(r);
                    let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                    for j in 0..cdim {
                        dz[r * cdim + j] = y[j] * (g[j] - dot);
                    }
                }
                vec![Tensor::new(vec![t, cdim], dz).unwrap()]
            })),
        )
    }

    /// Sum over `(row, class)` pairs of the softmax cross-entropy
    /// `logsumexp(row) - logit[row][class]`.
    pub fn softmax_ce_rows(&mut self, logits: Var, targets: Vec<(usize, usize)>) -> Var {
        let vl = self.value(logits);
        let (t, cdim) = (vl.rows(), vl.cols());
        let mut loss = 0.0;
        for &(r, cls) in &targets {
            assert!(r < t && cls < cdim, "softmax_ce_rows target out of range");
            let row = vl.row(r);
            loss += log_sum_exp(row) - row[cls];
        }
        self.push(
            Tensor::scalar(loss),
            vec![logits.0],
            Some(Box::new(move |c: &BackCtx| {
                let g = c.grad.scalar_value();
                let mut dl = Tensor::zeros(&[t, cdim]);
                let mut sm = vec![0.0; cdim];
                for &(r, cls) in &targets {
                    softmax_into(c.parents[0].row(r), &mut sm);
                    for j in 0..cdim {
                        *dl.at_mut(r, j) += g * (sm[j] - if j == cls { 1.0 } else { 0.0 });
                    }
                }
                vec![dl]
            })),
        )
    }

    /// Sum of binary cross-entropies with logits over `(row, target)` pairs.
    /// `logits` is `[T, 1]`.
    pub fn bce_logits_rows(&mut self, logits: Var, targets: Vec<(usize, f64)>) -> Var {
        let vl = self.value(logits);
        assert_eq!(vl.cols(), 1, "bce_logits_rows expects [T,1]");
        let t = vl.rows();
        let mut loss = 0.0;
        for &(r, y) in &targets {
            let z = vl.row(r)[0];
            loss += softplus(z) - y * z;
        }
        self.push(
            Tensor::scalar(loss),
            vec![logits.0],
            Some(Box::new(move |c: &BackCtx| {
                let g = c.grad.scalar_value();
                let mut dl = Tensor::zeros(&[t, 1]);
                for &(r, y) in &targets {
                    let z = c.parents[0].row(r)[0];
                    *dl.at_mut(r, 0) += g * (sigmoid(z) - y);
                }
                vec![dl]
            })),
        )
    }

    // ---- embedding ----

    /// Gather rows of `table [V, D]` by index, producing `[indices.len(), D]`.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Var {
        let vt = self.value(table);
        let (v, d) = (vt.rows(), vt.cols());
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            assert!(i < v, "embedding index {} out of {}", i, v);
            data.extend_from_slice(vt.row(i));
        }
        let out = Tensor::new(vec![indices.len(), d], data).unwrap();
        let idx = indices.to_vec();
        self.push(
            out,
            vec![table.0],
            Some(Box::new(move |c: &BackCtx| {
                let mut dt = Tensor::zeros(&[v, d]);
                for (r, &i) in idx.iter().enumerate() {
                    let src = c.grad.row(r).to_vec();
                    for (j, s) in src.iter().enumerate() {
                        *dt.at_mut(i, j) += s;
                    }
                }
                vec![dt]
            })),
        )
    }

    // ---- convolution ----

    /// Causal 1-D convolution: `x [T, C_in]`, `kernel [k, C_in, C_out]`,
    /// `bias [C_out]`. k-1 zero frames are conceptually prepended so
    /// out[t] reads x[t-k+1..=t] only.
    pub fn conv1d_causal(&mut self, x: Var, kernel: Var, bias: Var) -> Var {
        let vx = self.value(x);
        let vk = self.value(kernel);
        let vb = self.value(bias);
        let (t, cin) = (vx.rows(), vx.cols());
        let kshape = vk.shape().to_vec();
        assert_eq!(kshape.len(), 3, "conv kernel must be [k, C_in, C_out]");
        let (k, kcin, cout) = (kshape[0], kshape[1], kshape[2]);
        assert_eq!(kcin, cin, "conv1d channel mismatch");
        assert_eq!(vb.len(), cout, "conv1d bias length");
        let mut out = vec![0.0; t * cout];
        for tt in 0..t {
            let orow = &mut out[tt * cout..(tt + 1) * cout];
            orow.copy_from_slice(vb.data());
            for j in 0..k {
                let s = tt as isize - (k as isize - 1) + j as isize;
                if s < 0 {
                    continue;
                }
                let xrow = vx.row(s as usize);
                for (ci, &xv) in xrow.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let kr = &vk.data()[(j * cin + ci) * cout..(j * cin + ci + 1) * cout];
                    for (o, &kv) in orow.iter_mut().zip(kr) {
                        *o += xv * kv;
                    }
                }
            }
        }
        let out = Tensor::new(vec![t, cout], out).unwrap();
        self.push(
            out,
            vec![x.0, kernel.0, bias.0],
            Some(Box::new(move |c: &BackCtx| {
                let vx = c.parents[0];
                let vk = c.parents[1];
                let mut dx = Tensor::zeros(&[t, cin]);
                let mut dk = Tensor::zeros(&[k, cin, cout]);
                let mut db = vec![0.0; cout];
                for tt in 0..t {
                    let g = c.grad.row(tt);
                    for (co, gv) in g.iter().enumerate() {
                        db[co] += gv;
                    }
                    for j in 0..k {
                        let s = tt as isize - (k as isize - 1) + j as isize;
                        if s < 0 {
                            continue;
                        }
                        let s = s as usize;
                        for ci in 0..cin {
                            let base = (j * cin + ci) * cout;
                            let mut acc = 0.0;
                            for co in 0..cout {
                                let kv = vk.data()[base + co];
                                acc += g[co] * kv;
                                dk.data_mut()[base + co] += vx.at(s, ci) * g[co];
                            }
                            *dx.at_mut(s, ci) += acc;
                        }
                    }
                }
                vec![dx, dk, Tensor::new(vec![cout], db).unwrap()]
            })),
        )
    }

    // ---- batch normalization ----

    /// Train-mode batch norm over `x [T, C]` using batch statistics.
    /// Returns the normalized output plus the batch mean and (biased)
    /// variance so the caller can update running statistics.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Tensor, Tensor)> {
        let vx = self.value(x);
        let (t, cdim) = (vx.rows(), vx.cols());
        if t < 2 {
            return Err(SvsError::Domain(
                "batch norm train mode needs at least 2 frames".into(),
            ));
        }
        let vg = self.value(gamma).clone();
        let vb = self.value(beta).clone();
        assert_eq!(vg.len(), cdim, "batch norm gamma length");
        let mut mean = vec![0.0; cdim];
        let mut var = vec![0.0; cdim];
        for r in 0..t {
            for c in 0..cdim {
                mean[c] += vx.at(r, c);
            }
        }
        for m in &mut mean {
            *m /= t as f64;
        }
        for r in 0..t {
            for c in 0..cdim {
                let d = vx.at(r, c) - mean[c];
                var[c] += d * d;
            }
        }
        for v in &mut var {
            *v /= t as f64;
        }
        let mut data = vec![0.0; t * cdim];
        for r in 0..t {
            for c in 0..cdim {
                let xhat = (vx.at(r, c) - mean[c]) / (var[c] + eps).sqrt();
                data[r * cdim + c] = vg.data()[c] * xhat + vb.data()[c];
            }
        }
        let mean_t = Tensor::new(vec![cdim], mean.clone()).unwrap();
        let var_t = Tensor::new(vec![cdim], var.clone()).unwrap();
        let out = Tensor::new(vec![t, cdim], data).unwrap();
        let v = self.push(
            out,
            vec![x.0, gamma.0, beta.0],
            Some(Box::new(move |c: &BackCtx| {
                let vx = c.parents[0];
                let vg = c.parents[1];
                let tn = t as f64;
                let mut dgamma = vec![0.0; cdim];
                let mut dbeta = vec![0.0; cdim];
                let mut gmean = vec![0.0; cdim];
                let mut gxhat_mean = vec![0.0; cdim];
                let mut xhat = vec![0.0; t * cdim];
                for r in 0..t {
                    for ch in 0..cdim {
                        let s = (var[ch] + eps).sqrt();
                        let xh = (vx.at(r, ch) - mean[ch]) / s;
                        xhat[r * cdim + ch] = xh;
                        let g = c.grad.at(r, ch);
                        dgamma[ch] += g * xh;
                        dbeta[ch] += g;
                        gmean[ch] += g;
                        gxhat_mean[ch] += g * xh;
                    }
                }
                for ch in 0..cdim {
                    gmean[ch] /= tn;
                    gxhat_mean[ch] /= tn;
                }
                let mut dx = Tensor::zeros(&[t, cdim]);
                for r in 0..t {
                    for ch in 0..cdim {
                        let s = (var[ch] + eps).sqrt();
                        let g = c.grad.at(r, ch);
                        *dx.at_mut(r, ch) = vg.data()[ch] / s
                            * (g - gmean[ch] - xhat[r * cdim + ch] * gxhat_mean[ch]);
                    }
                }
                vec![
                    dx,
                    Tensor::new(vec![cdim], dgamma).unwrap(),
                    Tensor::new(vec![cdim], dbeta).unwrap(),
                ]
            })),
        );
        Ok((v, mean_t, var_t))
    }

    /// Batch norm with fixed (stored) statistics; used at inference and for
    /// single-frame windows. gamma/beta still receive gradients.
    pub fn batch_norm_affine(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Tensor,
        var: Tensor,
        eps: f64,
    ) -> Var {
        let vx = self.value(x);
        let (t, cdim) = (vx.rows(), vx.cols());
        assert_eq!(mean.len(), cdim);
        let vg = self.value(gamma).clone();
        let vb = self.value(beta).clone();
        let mut data = vec![0.0; t * cdim];
        for r in 0..t {
            for c in 0..cdim {
                let xh = (vx.at(r, c) - mean.data()[c]) / (var.data()[c] + eps).sqrt();
                data[r * cdim + c] = vg.data()[c] * xh + vb.data()[c];
            }
        }
        let out = Tensor::new(vec![t, cdim], data).unwrap();
        self.push(
            out,
            vec![x.0, gamma.0, beta.0],
            Some(Box::new(move |c: &BackCtx| {
                let vx = c.parents[0];
                let vg = c.parents[1];
                let mut dx = Tensor::zeros(&[t, cdim]);
                let mut dgamma = vec![0.0; cdim];
                let mut dbeta = vec![0.0; cdim];
                for r in 0..t {
                    for ch in 0..cdim {
                        let s = (var.data()[ch] + eps).sqrt();
                        let xh = (vx.at(r, ch) - mean.data()[ch]) / s;
                        let g = c.grad.at(r, ch);
                        *dx.at_mut(r, ch) = g * vg.data()[ch] / s;
                        dgamma[ch] += g * xh;
                        dbeta[ch] += g;
                    }
                }
                vec![
                    dx,
                    Tensor::new(vec![cdim], dgamma).unwrap(),
                    Tensor::new(vec![cdim], dbeta).unwrap(),
                ]
            })),
        )
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax_into(row: &[f64], out: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - m).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Scaled dot-product attention with an additive mask.
/// `mask[i][j]` is 0 for attendable positions and [`MASKED`] otherwise.
pub fn scaled_dot_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    mask: &Tensor,
) -> Result<Var> {
    let dk = tape.value(q).cols();
    let t = tape.value(q).rows();
    if mask.shape() != [t, t] {
        return Err(SvsError::shape(
            "scaled_dot_attention",
            format!("mask {:?} vs sequence length {}", mask.shape(), t),
        ));
    }
    for r in 0..t {
        if mask.row(r).iter().all(|&m| m <= MASKED / 2.0) {
            return Err(SvsError::Domain(format!(
                "attention row {} is fully masked: no attendable position",
                r
            )));
        }
    }
    let qs = tape.scale(q, 1.0 / (dk as f64).sqrt());
    let kt = tape.transpose(k);
    let logits = tape.matmul(qs, kt);
    let masked = tape.add_const(logits, mask.clone());
    let weights = tape.softmax_rows(masked);
    Ok(tape.matmul(weights, v))
}

/// Strictly-upper-triangular causal mask: position t may attend to 0..=t.
pub fn causal_mask(len: usize) -> Tensor {
    let mut m = Tensor::zeros(&[len, len]);
    for i in 0..len {
        for j in (i + 1)..len {
            *m.at_mut(i, j) = MASKED;
        }
    }
    m
}

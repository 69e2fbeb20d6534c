//! Autoregressive spectral model: the same FC + biGRU context trunk as the
//! F0 model, but the uniGRU is fed a prenet summary of the last K output
//! frames. The prenet is FC -> causal conv -> batch norm -> positional code
//! -> causal multi-head self-attention -> FC with residual, and its output
//! is subject to heavy data dropout during training.

use super::{EpochStats, TrainLog, TrainOptions};
use crate::corpus::{Corpus, Split, SPEC_DIM};
use crate::error::{Result, SvsError};
use crate::nn::{dropout_mask, BatchNorm, BiGru, Conv1d, Gru, Linear, MultiHeadAttention};
use crate::optim::AdamState;
use crate::par;
use crate::params::{Bound, PId, ParamStore};
use crate::tape::{causal_mask, Tape, Var};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrenetConfig {
    pub fc_units: usize,
    pub fc_dropout: f64,
    pub conv_kernel: usize,
    /// Model dim of the conv / positional code / attention stack.
    pub conv_channels: usize,
    pub attn_layers: usize,
    pub heads: usize,
    /// History length K.
    pub history_len: usize,
}

impl Default for PrenetConfig {
    fn default() -> Self {
        PrenetConfig {
            fc_units: 64,
            fc_dropout: 0.1,
            conv_kernel: 2,
            conv_channels: 64,
            attn_layers: 3,
            heads: 2,
            history_len: 2,
        }
    }
}

impl PrenetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.history_len < 1 {
            return Err(SvsError::Data("history_len must be >= 1".into()));
        }
        if self.conv_channels % 2 != 0 {
            return Err(SvsError::Data(
                "conv_channels must be even for the sinusoidal positional code".into(),
            ));
        }
        if self.heads == 0 || self.conv_channels % self.heads != 0 {
            return Err(SvsError::Data(format!(
                "heads ({}) must divide conv_channels ({})",
                self.heads, self.conv_channels
            )));
        }
        if !(0.0..1.0).contains(&self.fc_dropout) {
            return Err(SvsError::Data("fc_dropout must be in [0,1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectralModelConfig {
    pub seed: u64,
    pub fc_units: usize,
    pub bigru_units: usize,
    pub unigru_units: usize,
    pub linear_units: usize,
    pub prenet: PrenetConfig,
    /// Probability of dropping the whole prenet feedback vector in training.
    pub feedback_dropout: f64,
}

impl Default for SpectralModelConfig {
    fn default() -> Self {
        // Desk-scale trunk widths; full-scale would be 512/256/128/256.
        SpectralModelConfig {
            seed: 2,
            fc_units: 64,
            bigru_units: 32,
            unigru_units: 32,
            linear_units: 64,
            prenet: PrenetConfig::default(),
            feedback_dropout: 0.75,
        }
    }
}

/// Sinusoidal positional code: p[2i] = sin(pos / 10000^(2i/d)),
/// p[2i+1] = cos(pos / 10000^(2i/d)). Rows are positions 0..n_pos-1.
pub fn positional_code(n_pos: usize, d: usize) -> Result<Tensor> {
    if d % 2 != 0 {
        return Err(SvsError::Data(format!(
            "positional code dim must be even, got {d}"
        )));
    }
    let mut out = Tensor::zeros(&[n_pos, d]);
    for pos in 0..n_pos {
        for i in 0..d / 2 {
            let rate = 10000f64.powf(2.0 * i as f64 / d as f64);
            let angle = pos as f64 / rate;
            *out.at_mut(pos, 2 * i) = angle.sin();
            *out.at_mut(pos, 2 * i + 1) = angle.cos();
        }
    }
    Ok(out)
}

/// How a prenet forward should treat dropout and batch-norm statistics.
pub enum PrenetMode<'a> {
    /// Batch statistics on the tape; (mean, var) pairs are collected for the
    /// caller to fold into the running statistics afterwards.
    Train {
        dropout_rng: &'a mut ChaCha8Rng,
        bn_updates: &'a mut Vec<(Tensor, Tensor)>,
    },
    /// Running statistics, no dropout.
    Infer,
}

pub struct Prenet {
    pub cfg: PrenetConfig,
    fc1: Linear,
    fc2: Linear,
    conv: Conv1d,
    pub bn: BatchNorm,
    attn: Vec<MultiHeadAttention>,
    final_fc: Linear,
    mask: Tensor,
    pos: Tensor,
}

impl Prenet {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        cfg: PrenetConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let fc1 = Linear::new(store, &format!("{prefix}.fc1"), in_dim, cfg.fc_units, rng);
        let fc2 = Linear::new(
            store,
            &format!("{prefix}.fc2"),
            cfg.fc_units,
            cfg.fc_units,
            rng,
        );
        let conv = Conv1d::new(
            store,
            &format!("{prefix}.conv"),
            cfg.conv_kernel,
            cfg.fc_units,
            cfg.conv_channels,
            rng,
        );
        let bn = BatchNorm::new(store, &format!("{prefix}.bn"), cfg.conv_channels);
        let attn = (0..cfg.attn_layers)
            .map(|i| {
                MultiHeadAttention::new(
                    store,
                    &format!("{prefix}.attn{i}"),
                    cfg.conv_channels,
                    cfg.heads,
                    rng,
                )
            })
            .collect();
        let final_fc = Linear::new(
            store,
            &format!("{prefix}.out"),
            cfg.conv_channels,
            cfg.conv_channels,
            rng,
        );
        let mask = causal_mask(cfg.history_len);
        let pos = positional_code(cfg.history_len, cfg.conv_channels)?;
        Ok(Prenet {
            cfg,
            fc1,
            fc2,
            conv,
            bn,
            attn,
            final_fc,
            mask,
            pos,
        })
    }

    /// Summarize a `[K, in_dim]` history window into a `[1, conv_channels]`
    /// feedback vector (the last window position).
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        history: Var,
        mode: &mut PrenetMode,
    ) -> Var {
        let h = self.fc1.forward(tape, bound, history);
        let h = tape.relu(h);
        let h = self.drop(tape, h, mode);
        let h = self.fc2.forward(tape, bound, h);
        let h = tape.relu(h);
        let h = self.drop(tape, h, mode);
        let h = self.conv.forward(tape, bound, h);
        // The normalization axis is the K-row history window, which is fully
        // known at inference time as well, so both modes normalize with the
        // window's own statistics; anything else would make the prenet a
        // different function at generation than during training. Single-row
        // windows have no statistics and fall back to the running-stat affine
        // so K = 1 stays trainable.
        let h = if self.cfg.history_len >= 2 {
            let (y, mean, var) = tape
                .batch_norm_train(h, bound.var(self.bn.gamma), bound.var(self.bn.beta), self.bn.eps)
                .expect("K >= 2 rows");
            if let PrenetMode::Train { bn_updates, .. } = mode {
                bn_updates.push((mean, var));
            }
            y
        } else {
            self.bn.forward_infer(tape, bound, h)
        };
        let h = tape.relu(h);
        let pos = tape.constant(self.pos.clone());
        let mut h = tape.add(h, pos);
        let attn_in = h;
        for layer in &self.attn {
            h = layer.forward(tape, bound, h, &self.mask);
        }
        let out = self.final_fc.forward(tape, bound, h);
        let out = tape.add(out, attn_in);
        tape.row(out, self.cfg.history_len - 1)
    }

    fn drop(&self, tape: &mut Tape, x: Var, mode: &mut PrenetMode) -> Var {
        match mode {
            PrenetMode::Train { dropout_rng, .. } if self.cfg.fc_dropout > 0.0 => {
                let m = dropout_mask(tape.value(x).shape(), self.cfg.fc_dropout, dropout_rng);
                tape.mul_mask(x, m)
            }
            _ => x,
        }
    }

    /// Fold collected train-mode batch statistics into the running stats.
    pub fn fold_bn_updates(&mut self, updates: &[(Tensor, Tensor)]) {
        for (mean, var) in updates {
            for ((rm, rv), (m, v)) in self
                .bn
                .running_mean
                .data_mut()
                .iter_mut()
                .zip(self.bn.running_var.data_mut().iter_mut())
                .zip(mean.data().iter().zip(var.data()))
            {
                *rm = (1.0 - self.bn.momentum) * *rm + self.bn.momentum * m;
                *rv = (1.0 - self.bn.momentum) * *rv + self.bn.momentum * v;
            }
        }
    }
}

/// One training utterance: context features plus z-scored target frames.
#[derive(Debug, Clone)]
pub struct SpecUtt {
    pub ctx: Vec<Vec<f64>>,
    pub frames_norm: Vec<Vec<f64>>,
}

pub struct SpectralModel {
    pub cfg: SpectralModelConfig,
    pub store: ParamStore,
    pub ctx_dim: usize,
    pub out_dim: usize,
    fc1: Linear,
    fc2: Linear,
    bigru: BiGru,
    unigru: Gru,
    lin: Linear,
    out: Linear,
    pub prenet: Prenet,
    pad_frame: PId,
}

impl SpectralModel {
    pub fn new(cfg: SpectralModelConfig, ctx_dim: usize) -> Result<Self> {
        cfg.prenet.validate()?;
        let out_dim = SPEC_DIM;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let fc1 = Linear::new(&mut store, "fc1", ctx_dim, cfg.fc_units, &mut rng);
        let fc2 = Linear::new(&mut store, "fc2", cfg.fc_units, cfg.fc_units, &mut rng);
        let bigru = BiGru::new(&mut store, "bigru", cfg.fc_units, cfg.bigru_units, &mut rng);
        let prenet = Prenet::new(&mut store, "prenet", out_dim, cfg.prenet.clone(), &mut rng)?;
        let uni_in = 2 * cfg.bigru_units + cfg.prenet.conv_channels;
        let unigru = Gru::new(&mut store, "unigru", uni_in, cfg.unigru_units, &mut rng);
        let lin = Linear::new(&mut store, "lin", cfg.unigru_units, cfg.linear_units, &mut rng);
        let out = Linear::new(&mut store, "out", cfg.linear_units, out_dim, &mut rng);
        let pad_frame = store.add("pad_frame", Tensor::zeros(&[1, out_dim]));
        Ok(SpectralModel {
            cfg,
            store,
            ctx_dim,
            out_dim,
            fc1,
            fc2,
            bigru,
            unigru,
            lin,
            out,
            prenet,
            pad_frame,
        })
    }

    fn ctx_stack(&self, tape: &mut Tape, bound: &Bound, ctx: &[Vec<f64>]) -> Var {
        let x = tape.constant(Tensor::from_rows(ctx));
        let h = self.fc1.forward(tape, bound, x);
        let h = tape.tanh(h);
        let h = self.fc2.forward(tape, bound, h);
        let h = tape.tanh(h);
        self.bigru.forward(tape, bound, h)
    }

    /// Build the `[K, out_dim]` history window ending at frame t-1. `get`
    /// supplies the row var for a valid past frame index.
    fn history_window(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        t: usize,
        mut get: impl FnMut(&mut Tape, usize) -> Var,
    ) -> Var {
        let k = self.cfg.prenet.history_len;
        let rows: Vec<Var> = (0..k)
            .map(|i| {
                let idx = t as isize - k as isize + i as isize;
                if idx < 0 {
                    bound.var(self.pad_frame)
                } else {
                    get(tape, idx as usize)
                }
            })
            .collect();
        tape.concat_rows(&rows)
    }

    /// Teacher-forced forward pass over normalized target frames.
    /// Returns predictions `[T, out_dim]`.
    pub fn forward_teacher_forced(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        utt: &SpecUtt,
        mode: &mut PrenetMode,
    ) -> Result<Var> {
        if utt.ctx.len() != utt.frames_norm.len() {
            return Err(SvsError::shape(
                "spectral forward",
                format!(
                    "ctx {} frames vs {} targets",
                    utt.ctx.len(),
                    utt.frames_norm.len()
                ),
            ));
        }
        let t_len = utt.ctx.len();
        let ctx_out = self.ctx_stack(tape, bound, &utt.ctx);
        let target_rows: Vec<Tensor> = utt
            .frames_norm
            .iter()
            .map(|f| Tensor::new(vec![1, self.out_dim], f.clone()).expect("row"))
            .collect();
        let mut h = tape.constant(Tensor::zeros(&[1, self.cfg.unigru_units]));
        let mut preds = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let window = self.history_window(tape, bound, t, |tp, idx| {
                tp.constant(target_rows[idx].clone())
            });
            let fb = self.prenet.forward(tape, bound, window, mode);
            let fb = self.drop_feedback(tape, fb, mode);
            let ctx_t = tape.row(ctx_out, t);
            let gin = tape.concat_cols(&[ctx_t, fb]);
            h = self.unigru.step(tape, bound, gin, h);
            let l = self.lin.forward(tape, bound, h);
            preds.push(self.out.forward(tape, bound, l));
        }
        Ok(tape.concat_rows(&preds))
    }

    /// Data dropout on the whole feedback vector: zeroed, never rescaled,
    /// so rate 1.0 fully severs the autoregressive link.
    fn drop_feedback(&self, tape: &mut Tape, fb: Var, mode: &mut PrenetMode) -> Var {
        match mode {
            PrenetMode::Train { dropout_rng, .. } if self.cfg.feedback_dropout > 0.0 => {
                let keep = if dropout_rng.gen::<f64>() < self.cfg.feedback_dropout {
                    0.0
                } else {
                    1.0
                };
                let shape = tape.value(fb).shape().to_vec();
                tape.mul_mask(fb, Tensor::full(&shape, keep))
            }
            _ => fb,
        }
    }

    /// Mean squared error per element against the normalized targets.
    pub fn loss(&self, tape: &mut Tape, preds: Var, utt: &SpecUtt) -> Var {
        let target = Tensor::from_rows(&utt.frames_norm);
        let n = target.len() as f64;
        let sse = tape.sse_const(preds, target);
        tape.scale(sse, 1.0 / n)
    }

    /// Mean per-element MSE across utterances (inference-mode prenet).
    pub fn evaluate_loss(&self, utts: &[SpecUtt]) -> Result<f64> {
        let results = par::map_indexed(utts.len(), |i| -> Result<(f64, usize)> {
            let mut tape = Tape::new();
            let bound = self.store.bind(&mut tape);
            let mut mode = PrenetMode::Infer;
            let preds = self.forward_teacher_forced(&mut tape, &bound, &utts[i], &mut mode)?;
            let target = Tensor::from_rows(&utts[i].frames_norm);
            let n = target.len();
            let sse = tape.sse_const(preds, target);
            Ok((tape.value(sse).scalar_value(), n))
        });
        let mut total = 0.0;
        let mut elems = 0usize;
        for r in results {
            let (s, n) = r?;
            total += s;
            elems += n;
        }
        Ok(total / elems.max(1) as f64)
    }

    pub fn train(
        &mut self,
        train: &[SpecUtt],
        val: &[SpecUtt],
        adam: &mut AdamState,
        opts: &TrainOptions,
    ) -> Result<TrainLog> {
        let mut log = TrainLog {
            best_val_loss: f64::INFINITY,
            ..Default::default()
        };
        let mut best: Option<(ParamStore, Tensor, Tensor)> = None;
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut step: u64 = 0;
        for epoch in 0..opts.epochs {
            let mut shuffle_rng =
                ChaCha8Rng::seed_from_u64(opts.seed ^ (epoch as u64).wrapping_mul(0x9e37));
            for i in (1..order.len()).rev() {
                let j = shuffle_rng.gen_range(0..=i);
                order.swap(i, j);
            }
            let mut epoch_sse = 0.0;
            let mut epoch_elems = 0usize;
            for batch in order.chunks(opts.batch_size.max(1)) {
                let step_base = step;
                let results = par::map_indexed(batch.len(), |bi| -> Result<_> {
                    let utt = &train[batch[bi]];
                    let mut rng = ChaCha8Rng::seed_from_u64(super::dropout_stream_seed(
                        opts.seed,
                        step_base,
                        batch[bi] as u64,
                    ));
                    let mut bn_updates = Vec::new();
                    let mut mode = PrenetMode::Train {
                        dropout_rng: &mut rng,
                        bn_updates: &mut bn_updates,
                    };
                    let mut tape = Tape::new();
                    let bound = self.store.bind(&mut tape);
                    let preds = self.forward_teacher_forced(&mut tape, &bound, utt, &mut mode)?;
                    let target = Tensor::from_rows(&utt.frames_norm);
                    let n = target.len();
                    let sse = tape.sse_const(preds, target);
                    let sse_val = tape.value(sse).scalar_value();
                    let grads = tape.backward(sse);
                    Ok((bound.gradients(&tape, &grads), sse_val, n, bn_updates))
                });
                let mut sum_grads: Option<Vec<Tensor>> = None;
                let mut batch_elems = 0usize;
                for r in results {
                    let (g, sse, n, bn_updates) = r?;
                    epoch_sse += sse;
                    batch_elems += n;
                    self.prenet.fold_bn_updates(&bn_updates);
                    match &mut sum_grads {
                        Some(acc) => {
                            for (a, gi) in acc.iter_mut().zip(&g) {
                                a.add_assign(gi);
                            }
                        }
                        None => sum_grads = Some(g),
                    }
                }
                epoch_elems += batch_elems;
                let scale = 1.0 / batch_elems.max(1) as f64;
                let grads: Vec<Tensor> = sum_grads
                    .unwrap()
                    .into_iter()
                    .map(|g| g.map(|v| v * scale))
                    .collect();
                adam.step(&mut self.store, &grads)?;
                step += 1;
            }
            let train_loss = epoch_sse / epoch_elems.max(1) as f64;
            if !train_loss.is_finite() {
                return Err(SvsError::Numeric(format!(
                    "spectral training diverged at epoch {epoch}: loss {train_loss}"
                )));
            }
            let val_loss = if val.is_empty() {
                train_loss
            } else {
                self.evaluate_loss(val)?
            };
            if val_loss < log.best_val_loss {
                log.best_val_loss = val_loss;
                log.best_epoch = epoch;
                best = Some((
                    self.store.clone(),
                    self.prenet.bn.running_mean.clone(),
                    self.prenet.bn.running_var.clone(),
                ));
            }
            log.epochs.push(EpochStats {
                epoch,
                train_loss,
                val_loss,
            });
        }
        if let Some((p, rm, rv)) = best {
            self.store = p;
            self.prenet.bn.running_mean = rm;
            self.prenet.bn.running_var = rv;
        }
        Ok(log)
    }

    /// Autoregressive generation of normalized frames.
    pub fn generate(&self, ctx: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let t_len = ctx.len();
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let ctx_out = self.ctx_stack(&mut tape, &bound, ctx);
        let mut h = tape.constant(Tensor::zeros(&[1, self.cfg.unigru_units]));
        let mut emitted: Vec<Var> = Vec::with_capacity(t_len);
        let mut frames = Vec::with_capacity(t_len);
        let mut mode = PrenetMode::Infer;
        for t in 0..t_len {
            let window = self.history_window(&mut tape, &bound, t, |_, idx| emitted[idx]);
            let fb = self.prenet.forward(&mut tape, &bound, window, &mut mode);
            let ctx_t = tape.row(ctx_out, t);
            let gin = tape.concat_cols(&[ctx_t, fb]);
            h = self.unigru.step(&mut tape, &bound, gin, h);
            let l = self.lin.forward(&mut tape, &bound, h);
            let y = self.out.forward(&mut tape, &bound, l);
            frames.push(tape.value(y).data().to_vec());
            emitted.push(y);
        }
        Ok(frames)
    }

    /// Build training utterances (z-scored frames) from a corpus split.
    pub fn prepare(&self, corpus: &Corpus, split: Split) -> Vec<SpecUtt> {
        corpus
            .split(split)
            .into_iter()
            .map(|u| SpecUtt {
                ctx: u.ctx.clone(),
                frames_norm: corpus.normalized_spec(u),
            })
            .collect()
    }
}

pub const SPECTRAL_CKPT_KIND: &str = "dar-spectral";

#[derive(Serialize, Deserialize)]
struct SpectralCkptConfig {
    cfg: SpectralModelConfig,
    ctx_dim: usize,
}

/// Batch-norm running statistics, carried outside the parameter store.
#[derive(Serialize, Deserialize)]
struct SpectralCkptStats {
    bn_running_mean: Vec<f64>,
    bn_running_var: Vec<f64>,
}

impl SpectralModel {
    pub fn to_checkpoint(
        &self,
        seed: u64,
        optimizer: Option<&AdamState>,
    ) -> Result<crate::checkpoint::Checkpoint> {
        let cfg = SpectralCkptConfig {
            cfg: self.cfg.clone(),
            ctx_dim: self.ctx_dim,
        };
        let config_json =
            serde_json::to_string(&cfg).map_err(|e| SvsError::Data(format!("config json: {e}")))?;
        let stats = SpectralCkptStats {
            bn_running_mean: self.prenet.bn.running_mean.data().to_vec(),
            bn_running_var: self.prenet.bn.running_var.data().to_vec(),
        };
        let stats_json =
            serde_json::to_string(&stats).map_err(|e| SvsError::Data(format!("stats json: {e}")))?;
        let optimizer_json = optimizer
            .map(serde_json::to_string)
            .transpose()
            .map_err(|e| SvsError::Data(format!("optimizer json: {e}")))?;
        Ok(crate::checkpoint::Checkpoint::from_store(
            SPECTRAL_CKPT_KIND,
            config_json,
            &self.store,
            stats_json,
            optimizer_json,
            seed,
        ))
    }

    pub fn from_checkpoint(
        ck: &crate::checkpoint::Checkpoint,
    ) -> Result<(SpectralModel, Option<AdamState>)> {
        if ck.kind != SPECTRAL_CKPT_KIND {
            return Err(SvsError::Data(format!(
                "checkpoint kind '{}' is not '{SPECTRAL_CKPT_KIND}'",
                ck.kind
            )));
        }
        let cfg: SpectralCkptConfig = serde_json::from_str(&ck.config_json)
            .map_err(|e| SvsError::Data(format!("config json: {e}")))?;
        let mut model = SpectralModel::new(cfg.cfg, cfg.ctx_dim)?;
        ck.restore_into(&mut model.store)?;
        let stats: SpectralCkptStats = serde_json::from_str(&ck.stats_json)
            .map_err(|e| SvsError::Data(format!("stats json: {e}")))?;
        let c = model.cfg.prenet.conv_channels;
        if stats.bn_running_mean.len() != c || stats.bn_running_var.len() != c {
            return Err(SvsError::Data("batch-norm stats length mismatch".into()));
        }
        model.prenet.bn.running_mean = Tensor::new(vec![c], stats.bn_running_mean)?;
        model.prenet.bn.running_var = Tensor::new(vec![c], stats.bn_running_var)?;
        let adam = ck
            .optimizer_json
            .as_deref()
            .map(serde_json::from_str)
            .transpose()
            .map_err(|e| SvsError::Data(format!("optimizer json: {e}")))?;
        Ok((model, adam))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::Checkpoint;

    fn tiny_model(k: usize) -> SpectralModel {
        let cfg = SpectralModelConfig {
            fc_units: 8,
            bigru_units: 4,
            unigru_units: 4,
            linear_units: 8,
            prenet: PrenetConfig {
                fc_units: 8,
                conv_channels: 8,
                attn_layers: 2,
                heads: 2,
                history_len: k,
                ..PrenetConfig::default()
            },
            ..SpectralModelConfig::default()
        };
        SpectralModel::new(cfg, 5).unwrap()
    }

    fn rand_utt(t: usize, d: usize, seed: u64) -> SpecUtt {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SpecUtt {
            ctx: (0..t)
                .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect(),
            frames_norm: (0..t)
                .map(|_| (0..SPEC_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect(),
        }
    }

    #[test]
    fn positional_code_values() {
        // d = 4, pos = 1: [sin 1, cos 1, sin 0.01, cos 0.01]
        let p = positional_code(2, 4).unwrap();
        assert_eq!(p.row(0), &[0.0, 1.0, 0.0, 1.0]);
        let r = p.row(1);
        assert!((r[0] - 0.8414709848).abs() < 1e-9);
        assert!((r[1] - 0.5403023059).abs() < 1e-9);
        assert!((r[2] - 0.0099998333).abs() < 1e-9);
        assert!((r[3] - 0.9999500004).abs() < 1e-9);
    }

    #[test]
    fn positional_code_rejects_odd_dim() {
        assert!(positional_code(3, 5).is_err());
    }

    #[test]
    fn causality_under_future_target_perturbation() {
        let m = tiny_model(2);
        let base = rand_utt(8, 5, 11);
        let mut pert = base.clone();
        for f in pert.frames_norm[4..].iter_mut() {
            for v in f.iter_mut() {
                *v += 0.5;
            }
        }
        let run = |utt: &SpecUtt| {
            let mut tape = Tape::new();
            let bound = m.store.bind(&mut tape);
            let mut mode = PrenetMode::Infer;
            let p = m.forward_teacher_forced(&mut tape, &bound, utt, &mut mode).unwrap();
            tape.value(p).clone()
        };
        let a = run(&base);
        let b = run(&pert);
        for t in 0..=4 {
            assert_eq!(a.row(t), b.row(t), "frame {t}");
        }
        assert_ne!(a.row(5), b.row(5), "perturbation must reach later frames");
    }

    #[test]
    fn dropout_rate_one_severs_feedback() {
        let mut m = tiny_model(2);
        m.cfg.feedback_dropout = 1.0;
        m.prenet.cfg.fc_dropout = 0.0;
        let base = rand_utt(6, 5, 3);
        let mut other = base.clone();
        for f in other.frames_norm.iter_mut() {
            for v in f.iter_mut() {
                *v = -*v;
            }
        }
        let run = |utt: &SpecUtt| {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut bn = Vec::new();
            let mut mode = PrenetMode::Train {
                dropout_rng: &mut rng,
                bn_updates: &mut bn,
            };
            let mut tape = Tape::new();
            let bound = m.store.bind(&mut tape);
            let p = m.forward_teacher_forced(&mut tape, &bound, utt, &mut mode).unwrap();
            tape.value(p).clone()
        };
        assert_eq!(run(&base), run(&other));
    }

    #[test]
    fn k1_trains_via_running_stat_fallback() {
        let mut m = tiny_model(1);
        let utts = vec![rand_utt(6, 5, 21), rand_utt(7, 5, 22)];
        let mut adam = AdamState::new(crate::optim::AdamConfig::constant(0.01), &m.store);
        let opts = TrainOptions {
            epochs: 3,
            batch_size: 2,
            seed: 1,
        };
        let log = m.train(&utts, &[], &mut adam, &opts).unwrap();
        assert!(log.epochs.last().unwrap().train_loss.is_finite());
    }

    #[test]
    fn short_training_reduces_loss() {
        let mut m = tiny_model(2);
        let utts = vec![rand_utt(10, 5, 31), rand_utt(12, 5, 32), rand_utt(9, 5, 33)];
        let before = m.evaluate_loss(&utts).unwrap();
        let mut adam = AdamState::new(crate::optim::AdamConfig::constant(0.01), &m.store);
        let opts = TrainOptions {
            epochs: 15,
            batch_size: 3,
            seed: 5,
        };
        m.train(&utts, &[], &mut adam, &opts).unwrap();
        let after = m.evaluate_loss(&utts).unwrap();
        assert!(
            after < before,
            "loss should drop: before {before}, after {after}"
        );
    }

    #[test]
    fn generation_deterministic_and_shaped() {
        let m = tiny_model(2);
        let ctx = rand_utt(9, 5, 41).ctx;
        let a = m.generate(&ctx).unwrap();
        let b = m.generate(&ctx).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 9);
        assert!(a.iter().all(|f| f.len() == SPEC_DIM));
    }

    #[test]
    fn checkpoint_carries_bn_running_stats() {
        let mut m = tiny_model(2);
        // make running stats non-default so the round trip is meaningful
        m.prenet.bn.running_mean = Tensor::full(&[8], 0.25);
        m.prenet.bn.running_var = Tensor::full(&[8], 2.0);
        let ck = m.to_checkpoint(7, None).unwrap();
        let (m2, _) = SpectralModel::from_checkpoint(&ck).unwrap();
        assert_eq!(m2.prenet.bn.running_mean, m.prenet.bn.running_mean);
        assert_eq!(m2.prenet.bn.running_var, m.prenet.bn.running_var);
        assert_eq!(ck.to_bytes(), Checkpoint::from_bytes(&ck.to_bytes()).unwrap().to_bytes());
    }

    #[test]
    fn bn_updates_collected_per_frame() {
        let m = tiny_model(2);
        let utt = rand_utt(5, 5, 51);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut bn = Vec::new();
        let mut mode = PrenetMode::Train {
            dropout_rng: &mut rng,
            bn_updates: &mut bn,
        };
        let mut tape = Tape::new();
        let bound = m.store.bind(&mut tape);
        m.forward_teacher_forced(&mut tape, &bound, &utt, &mut mode).unwrap();
        assert_eq!(bn.len(), 5);
    }
}

//! Baseline non-autoregressive model: stacked biGRUs with a frame-wise
//! linear output over [statics | delta | delta-delta | vuv], trained with
//! MSE and decoded through per-dimension MLPG using global residual
//! variances.

use super::{EpochStats, TrainLog, TrainOptions};
use crate::codec::F0Contour;
use crate::corpus::{Corpus, FeatureStats, Split, Utterance, SPEC_DIM};
use crate::error::{Result, SvsError};
use crate::mlpg::{compute_deltas, mlpg};
use crate::nn::{BiGru, Linear};
use crate::optim::AdamState;
use crate::par;
use crate::params::{Bound, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Static feature dims: 40 MCCs + energy + interpolated log-F0.
pub const STATIC_DIM: usize = SPEC_DIM + 1;
/// Output layout: three delta streams plus one V/UV dim.
pub const OUT_DIM: usize = 3 * STATIC_DIM + 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub seed: u64,
    pub units: usize,
    pub n_layers: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        // Desk-scale width; a full-scale stack would be 3 x 128.
        BaselineConfig {
            seed: 3,
            units: 32,
            n_layers: 3,
        }
    }
}

/// Normalization constants captured at fit time so checkpoints are
/// self-contained.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BaselineNorm {
    pub spec_mean: Vec<f64>,
    pub spec_std: Vec<f64>,
    pub f0_mean: f64,
    pub f0_std: f64,
}

#[derive(Debug, Clone)]
pub struct BaselineUtt {
    pub ctx: Vec<Vec<f64>>,
    /// T x OUT_DIM regression targets.
    pub targets: Vec<Vec<f64>>,
}

pub struct BaselineModel {
    pub cfg: BaselineConfig,
    pub store: ParamStore,
    pub ctx_dim: usize,
    pub norm: BaselineNorm,
    /// Per static dim: residual variance of [static, delta, delta-delta].
    pub residual_var: Vec<[f64; 3]>,
    layers: Vec<BiGru>,
    out: Linear,
}

pub struct BaselineOutput {
    pub f0: F0Contour,
    /// T x 41 denormalized spectral frames.
    pub spec: Vec<Vec<f64>>,
}

/// Linear interpolation of log-F0 through unvoiced gaps, held flat at the
/// edges. An all-unvoiced contour falls back to ln(220).
pub fn interpolate_log_f0(contour: &F0Contour) -> Vec<f64> {
    let t_len = contour.len();
    let voiced_idx: Vec<usize> = (0..t_len).filter(|&t| contour.voiced[t]).collect();
    if voiced_idx.is_empty() {
        return vec![220f64.ln(); t_len];
    }
    let logf0: Vec<f64> = contour
        .f0_hz
        .iter()
        .map(|&f| if f > 0.0 { f.ln() } else { 0.0 })
        .collect();
    let mut out = vec![0.0; t_len];
    let first = voiced_idx[0];
    let last = *voiced_idx.last().unwrap();
    for t in 0..t_len {
        out[t] = if t <= first {
            logf0[first]
        } else if t >= last {
            logf0[last]
        } else if contour.voiced[t] {
            logf0[t]
        } else {
            let prev = *voiced_idx.iter().rev().find(|&&i| i < t).unwrap();
            let next = *voiced_idx.iter().find(|&&i| i > t).unwrap();
            let w = (t - prev) as f64 / (next - prev) as f64;
            logf0[prev] * (1.0 - w) + logf0[next] * w
        };
    }
    out
}

impl BaselineModel {
    pub fn new(cfg: BaselineConfig, ctx_dim: usize) -> Result<Self> {
        if cfg.n_layers == 0 {
            return Err(SvsError::Data("n_layers must be >= 1".into()));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut layers = Vec::with_capacity(cfg.n_layers);
        let mut d_in = ctx_dim;
        for i in 0..cfg.n_layers {
            let l = BiGru::new(&mut store, &format!("bigru{i}"), d_in, cfg.units, &mut rng);
            d_in = l.out_dim();
            layers.push(l);
        }
        let out = Linear::new(&mut store, "out", d_in, OUT_DIM, &mut rng);
        Ok(BaselineModel {
            cfg,
            store,
            ctx_dim,
            norm: BaselineNorm::default(),
            residual_var: Vec::new(),
            layers,
            out,
        })
    }

    /// Capture spectral stats and fit log-F0 stats on training contours.
    pub fn fit_normalization_from<'a>(
        &mut self,
        stats: &FeatureStats,
        train_contours: impl Iterator<Item = &'a F0Contour>,
    ) -> Result<()> {
        self.norm.spec_mean = stats.spec_mean.clone();
        self.norm.spec_std = stats.spec_std.clone();
        let mut vals = Vec::new();
        for c in train_contours {
            vals.extend(interpolate_log_f0(c));
        }
        if vals.is_empty() {
            return Err(SvsError::Data("empty training split".into()));
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        self.norm.f0_mean = mean;
        self.norm.f0_std = var.sqrt().max(1e-6);
        Ok(())
    }

    pub fn fit_normalization(&mut self, corpus: &Corpus) -> Result<()> {
        let contours: Vec<&F0Contour> = corpus
            .split(Split::Train)
            .into_iter()
            .map(|u| &u.ref_f0)
            .collect();
        self.fit_normalization_from(&corpus.stats, contours.into_iter())
    }

    /// Normalized static features: [spec_norm | logf0_norm].
    fn statics(&self, f0: &F0Contour, spec: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let logf0 = interpolate_log_f0(f0);
        spec.iter()
            .zip(&logf0)
            .map(|(spec, &lf)| {
                let mut row: Vec<f64> = spec
                    .iter()
                    .enumerate()
                    .map(|(d, &v)| (v - self.norm.spec_mean[d]) / self.norm.spec_std[d])
                    .collect();
                row.push((lf - self.norm.f0_mean) / self.norm.f0_std);
                row
            })
            .collect()
    }

    pub fn prepare_utt(&self, u: &Utterance) -> BaselineUtt {
        self.prepare_parts(&u.ctx, &u.ref_f0, &u.ref_spec)
    }

    /// Build targets from raw streams (disk records or corpus utterances).
    pub fn prepare_parts(
        &self,
        ctx: &[Vec<f64>],
        f0: &F0Contour,
        spec: &[Vec<f64>],
    ) -> BaselineUtt {
        let statics = self.statics(f0, spec);
        let t_len = statics.len();
        let mut cols_d1 = vec![Vec::new(); STATIC_DIM];
        let mut cols_d2 = vec![Vec::new(); STATIC_DIM];
        for d in 0..STATIC_DIM {
            let col: Vec<f64> = statics.iter().map(|r| r[d]).collect();
            let (d1, d2) = compute_deltas(&col);
            cols_d1[d] = d1;
            cols_d2[d] = d2;
        }
        let targets = (0..t_len)
            .map(|t| {
                let mut row = Vec::with_capacity(OUT_DIM);
                row.extend_from_slice(&statics[t]);
                row.extend((0..STATIC_DIM).map(|d| cols_d1[d][t]));
                row.extend((0..STATIC_DIM).map(|d| cols_d2[d][t]));
                row.push(if f0.voiced[t] { 1.0 } else { 0.0 });
                row
            })
            .collect();
        BaselineUtt {
            ctx: ctx.to_vec(),
            targets,
        }
    }

    pub fn prepare(&self, corpus: &Corpus, split: Split) -> Vec<BaselineUtt> {
        corpus
            .split(split)
            .into_iter()
            .map(|u| self.prepare_utt(u))
            .collect()
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, ctx: &[Vec<f64>]) -> Var {
        let mut h = tape.constant(Tensor::from_rows(ctx));
        for l in &self.layers {
            h = l.forward(tape, bound, h);
        }
        self.out.forward(tape, bound, h)
    }

    pub fn evaluate_loss(&self, utts: &[BaselineUtt]) -> Result<f64> {
        let results = par::map_indexed(utts.len(), |i| -> Result<(f64, usize)> {
            let mut tape = Tape::new();
            let bound = self.store.bind(&mut tape);
            let preds = self.forward(&mut tape, &bound, &utts[i].ctx);
            let target = Tensor::from_rows(&utts[i].targets);
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

    /// Train with MSE; afterwards fits the global residual variances used
    /// by MLPG at generation time.
    pub fn train(
        &mut self,
        train: &[BaselineUtt],
        val: &[BaselineUtt],
        adam: &mut AdamState,
        opts: &TrainOptions,
    ) -> Result<TrainLog> {
        let mut log = TrainLog {
            best_val_loss: f64::INFINITY,
            ..Default::default()
        };
        let mut best: Option<ParamStore> = None;
        let mut order: Vec<usize> = (0..train.len()).collect();
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
                let results = par::map_indexed(batch.len(), |bi| -> Result<_> {
                    let utt = &train[batch[bi]];
                    let mut tape = Tape::new();
                    let bound = self.store.bind(&mut tape);
                    let preds = self.forward(&mut tape, &bound, &utt.ctx);
                    let target = Tensor::from_rows(&utt.targets);
                    let n = target.len();
                    let sse = tape.sse_const(preds, target);
                    let sse_val = tape.value(sse).scalar_value();
                    let grads = tape.backward(sse);
                    Ok((bound.gradients(&tape, &grads), sse_val, n))
                });
                let mut sum_grads: Option<Vec<Tensor>> = None;
                let mut batch_elems = 0usize;
                for r in results {
                    let (g, sse, n) = r?;
                    epoch_sse += sse;
                    batch_elems += n;
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
            }
            let train_loss = epoch_sse / epoch_elems.max(1) as f64;
            if !train_loss.is_finite() {
                return Err(SvsError::Numeric(format!(
                    "baseline training diverged at epoch {epoch}: loss {train_loss}"
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
                best = Some(self.store.clone());
            }
            log.epochs.push(EpochStats {
                epoch,
                train_loss,
                val_loss,
            });
        }
        if let Some(p) = best {
            self.store = p;
        }
        self.fit_residual_variances(train)?;
        Ok(log)
    }

    /// Global per-(dim, stream) variance of target minus prediction.
    pub fn fit_residual_variances(&mut self, utts: &[BaselineUtt]) -> Result<()> {
        let mut sq = vec![[0.0f64; 3]; STATIC_DIM];
        let mut n = 0usize;
        for utt in utts {
            let mut tape = Tape::new();
            let bound = self.store.bind(&mut tape);
            let preds = self.forward(&mut tape, &bound, &utt.ctx);
            let p = tape.value(preds);
            for (t, target) in utt.targets.iter().enumerate() {
                for d in 0..STATIC_DIM {
                    for s in 0..3 {
                        let idx = s * STATIC_DIM + d;
                        let r = target[idx] - p.at(t, idx);
                        sq[d][s] += r * r;
                    }
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(SvsError::Data("no frames to fit residual variances".into()));
        }
        self.residual_var = sq
            .into_iter()
            .map(|row| {
                [
                    (row[0] / n as f64).max(1e-6),
                    (row[1] / n as f64).max(1e-6),
                    (row[2] / n as f64).max(1e-6),
                ]
            })
            .collect();
        Ok(())
    }

    /// Predict, then decode each static dim through MLPG. Predicted V/UV
    /// (threshold 0.5) masks the F0 track.
    pub fn generate(&self, ctx: &[Vec<f64>]) -> Result<BaselineOutput> {
        if self.residual_var.len() != STATIC_DIM {
            return Err(SvsError::Data(
                "residual variances not fitted; train the model first".into(),
            ));
        }
        let t_len = ctx.len();
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let preds = self.forward(&mut tape, &bound, ctx);
        let p = tape.value(preds);
        let mut smoothed = vec![vec![0.0; t_len]; STATIC_DIM];
        for d in 0..STATIC_DIM {
            let means = [
                (0..t_len).map(|t| p.at(t, d)).collect::<Vec<f64>>(),
                (0..t_len).map(|t| p.at(t, STATIC_DIM + d)).collect(),
                (0..t_len).map(|t| p.at(t, 2 * STATIC_DIM + d)).collect(),
            ];
            smoothed[d] = mlpg(&means, &self.residual_var[d])?;
        }
        let voiced: Vec<bool> = (0..t_len).map(|t| p.at(t, OUT_DIM - 1) >= 0.5).collect();
        let f0_hz: Vec<f64> = (0..t_len)
            .map(|t| {
                if voiced[t] {
                    (smoothed[SPEC_DIM][t] * self.norm.f0_std + self.norm.f0_mean).exp()
                } else {
                    0.0
                }
            })
            .collect();
        let spec: Vec<Vec<f64>> = (0..t_len)
            .map(|t| {
                (0..SPEC_DIM)
                    .map(|d| smoothed[d][t] * self.norm.spec_std[d] + self.norm.spec_mean[d])
                    .collect()
            })
            .collect();
        Ok(BaselineOutput {
            f0: F0Contour::new(f0_hz, voiced)?,
            spec,
        })
    }
}

pub const BASELINE_CKPT_KIND: &str = "baseline";

#[derive(Serialize, Deserialize)]
struct BaselineCkptConfig {
    cfg: BaselineConfig,
    ctx_dim: usize,
}

#[derive(Serialize, Deserialize)]
struct BaselineCkptStats {
    norm: BaselineNorm,
    residual_var: Vec<[f64; 3]>,
}

impl BaselineModel {
    pub fn to_checkpoint(
        &self,
        seed: u64,
        optimizer: Option<&AdamState>,
    ) -> Result<crate::checkpoint::Checkpoint> {
        let cfg = BaselineCkptConfig {
            cfg: self.cfg.clone(),
            ctx_dim: self.ctx_dim,
        };
        let config_json =
            serde_json::to_string(&cfg).map_err(|e| SvsError::Data(format!("config json: {e}")))?;
        let stats = BaselineCkptStats {
            norm: self.norm.clone(),
            residual_var: self.residual_var.clone(),
        };
        let stats_json =
            serde_json::to_string(&stats).map_err(|e| SvsError::Data(format!("stats json: {e}")))?;
        let optimizer_json = optimizer
            .map(serde_json::to_string)
            .transpose()
            .map_err(|e| SvsError::Data(format!("optimizer json: {e}")))?;
        Ok(crate::checkpoint::Checkpoint::from_store(
            BASELINE_CKPT_KIND,
            config_json,
            &self.store,
            stats_json,
            optimizer_json,
            seed,
        ))
    }

    pub fn from_checkpoint(
        ck: &crate::checkpoint::Checkpoint,
    ) -> Result<(BaselineModel, Option<AdamState>)> {
        if ck.kind != BASELINE_CKPT_KIND {
            return Err(SvsError::Data(format!(
                "checkpoint kind '{}' is not '{BASELINE_CKPT_KIND}'",
                ck.kind
            )));
        }
        let cfg: BaselineCkptConfig = serde_json::from_str(&ck.config_json)
            .map_err(|e| SvsError::Data(format!("config json: {e}")))?;
        let mut model = BaselineModel::new(cfg.cfg, cfg.ctx_dim)?;
        ck.restore_into(&mut model.store)?;
        let stats: BaselineCkptStats = serde_json::from_str(&ck.stats_json)
            .map_err(|e| SvsError::Data(format!("stats json: {e}")))?;
        model.norm = stats.norm;
        model.residual_var = stats.residual_var;
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
    use crate::corpus::{build_corpus, CorpusConfig};

    fn tiny_corpus() -> Corpus {
        build_corpus(&CorpusConfig {
            n_songs: 4,
            utts_per_song: 2,
            notes_per_utt: 3,
            ..CorpusConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn interpolation_bridges_gaps_in_log_domain() {
        let c = F0Contour::new(
            vec![0.0, 100.0, 0.0, 400.0, 0.0],
            vec![false, true, false, true, false],
        )
        .unwrap();
        let l = interpolate_log_f0(&c);
        // geometric midpoint of 100 and 400 is 200
        assert!((l[2].exp() - 200.0).abs() < 1e-9);
        // edges hold the nearest voiced value
        assert!((l[0].exp() - 100.0).abs() < 1e-9);
        assert!((l[4].exp() - 400.0).abs() < 1e-9);
    }

    #[test]
    fn interpolation_all_unvoiced_fallback() {
        let c = F0Contour::new(vec![0.0; 3], vec![false; 3]).unwrap();
        assert!(interpolate_log_f0(&c).iter().all(|&v| (v - 220f64.ln()).abs() < 1e-12));
    }

    #[test]
    fn target_layout_and_delta_consistency() {
        let corpus = tiny_corpus();
        let mut m = BaselineModel::new(BaselineConfig::default(), corpus.ctx_dim).unwrap();
        m.fit_normalization(&corpus).unwrap();
        let u = &corpus.utterances[0];
        let b = m.prepare_utt(u);
        assert_eq!(b.targets[0].len(), OUT_DIM);
        assert_eq!(b.targets.len(), u.frames());
        // delta streams must equal compute_deltas of the static stream
        let col: Vec<f64> = b.targets.iter().map(|r| r[5]).collect();
        let (d1, d2) = compute_deltas(&col);
        for (t, row) in b.targets.iter().enumerate() {
            assert!((row[STATIC_DIM + 5] - d1[t]).abs() < 1e-12);
            assert!((row[2 * STATIC_DIM + 5] - d2[t]).abs() < 1e-12);
        }
        // vuv dim mirrors the reference flags
        for (t, row) in b.targets.iter().enumerate() {
            assert_eq!(row[OUT_DIM - 1] == 1.0, u.ref_f0.voiced[t]);
        }
    }

    #[test]
    fn train_and_generate_round_trip() {
        let corpus = tiny_corpus();
        let cfg = BaselineConfig {
            units: 8,
            ..BaselineConfig::default()
        };
        let mut m = BaselineModel::new(cfg, corpus.ctx_dim).unwrap();
        m.fit_normalization(&corpus).unwrap();
        let train = m.prepare(&corpus, Split::Train);
        let before = m.evaluate_loss(&train).unwrap();
        let mut adam = AdamState::new(crate::optim::AdamConfig::constant(1e-3), &m.store);
        let opts = TrainOptions {
            epochs: 3,
            batch_size: 4,
            seed: 11,
        };
        let log = m.train(&train, &[], &mut adam, &opts).unwrap();
        assert!(log.epochs.last().unwrap().train_loss < before);
        assert_eq!(m.residual_var.len(), STATIC_DIM);
        assert!(m.residual_var.iter().flatten().all(|&v| v > 0.0));
        let u = &corpus.utterances[0];
        let out = m.generate(&u.ctx).unwrap();
        assert_eq!(out.f0.len(), u.frames());
        assert_eq!(out.spec.len(), u.frames());
        assert!(out.spec.iter().all(|f| f.len() == SPEC_DIM));
    }

    #[test]
    fn checkpoint_round_trip_carries_stats() {
        let corpus = tiny_corpus();
        let cfg = BaselineConfig {
            units: 8,
            ..BaselineConfig::default()
        };
        let mut m = BaselineModel::new(cfg, corpus.ctx_dim).unwrap();
        m.fit_normalization(&corpus).unwrap();
        let train = m.prepare(&corpus, Split::Train);
        m.fit_residual_variances(&train).unwrap();
        let adam = AdamState::new(crate::optim::AdamConfig::constant(1e-3), &m.store);
        let ck = m.to_checkpoint(1, Some(&adam)).unwrap();
        let (m2, adam2) = BaselineModel::from_checkpoint(&ck).unwrap();
        assert!(adam2.is_some());
        assert_eq!(m2.norm.f0_mean, m.norm.f0_mean);
        assert_eq!(m2.residual_var, m.residual_var);
        let u = &corpus.utterances[0];
        let (m1r, _) = BaselineModel::from_checkpoint(&m.to_checkpoint(0, None).unwrap()).unwrap();
        let a = m1r.generate(&u.ctx).unwrap();
        let b = m2.generate(&u.ctx).unwrap();
        assert_eq!(a.f0, b.f0);
        assert_eq!(a.spec, b.spec);
    }

    #[test]
    fn generate_without_training_errors() {
        let corpus = tiny_corpus();
        let mut m = BaselineModel::new(BaselineConfig::default(), corpus.ctx_dim).unwrap();
        m.fit_normalization(&corpus).unwrap();
        assert!(m.generate(&corpus.utterances[0].ctx).is_err());
    }
}

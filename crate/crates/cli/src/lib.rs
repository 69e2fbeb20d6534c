//! Command-line interface: corpus building, training, synthesis,
//! evaluation, hyper-parameter sweeps and contour plots.

pub mod config;
pub mod svg;

use clap::{Parser, Subcommand, ValueEnum};
use config::RunConfig;
use std::path::{Path, PathBuf};
use svs_core::checkpoint::Checkpoint;
use svs_core::codec::{quantize, F0Contour};
use svs_core::corpus::{build_corpus, Split, SPEC_DIM};
use svs_core::dataset::{self, LoadedDataset, UttRecord};
use svs_core::error::{Result, SvsError};
use svs_core::metrics::{self, EvalReport};
use svs_core::models::baseline::{BaselineModel, BASELINE_CKPT_KIND};
use svs_core::models::f0_dar::{F0Model, F0Utt, F0_CKPT_KIND};
use svs_core::models::spectral_dar::{SpecUtt, SpectralModel, SPECTRAL_CKPT_KIND};
use svs_core::models::TrainOptions;
use svs_core::optim::{AdamConfig, AdamState};
use svs_core::postprocess::{self, NoteContour, DEFAULT_WINDOW};

pub const DATA_ROOT_ENV: &str = "SVS_DATA_ROOT";

#[derive(Parser, Debug)]
#[command(name = "svs", version, about = "Singing voice synthesis acoustic models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    DarF0,
    DarSpectral,
    Baseline,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic corpus and write it as a dataset directory.
    BuildCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train one model on a dataset and write a checkpoint.
    Train {
        #[arg(long, value_enum)]
        model: ModelKind,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate predictions for a split and write them as utterance files.
    Synthesize {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// F0 model checkpoint (kind dar-f0).
        #[arg(long)]
        f0: Option<PathBuf>,
        /// Spectral model checkpoint (kind dar-spectral).
        #[arg(long)]
        spectral: Option<PathBuf>,
        /// Baseline checkpoint (kind baseline); predicts F0 and spectra.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Apply moving-average F0 post-processing against the note contour.
        #[arg(long)]
        postprocess: bool,
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        window: usize,
    },
    /// Compare predictions against the reference split.
    Evaluate {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Per-utterance CSV output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train model grids and tabulate validation losses.
    Sweep {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Plot reference, note and predicted F0 for one utterance.
    Plot {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        id: String,
        #[arg(long)]
        out: PathBuf,
        /// Also dump the plotted series as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn data_root(arg: Option<PathBuf>) -> Result<PathBuf> {
    if let Some(p) = arg {
        return Ok(p);
    }
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(v) => Ok(PathBuf::from(v)),
        None => Err(SvsError::Data(format!(
            "no dataset directory: pass --data or set {DATA_ROOT_ENV}"
        ))),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildCorpus { out, config } => cmd_build_corpus(&out, config.as_deref()),
        Command::Train {
            model,
            data,
            out,
            config,
            epochs,
            batch_size,
            seed,
        } => {
            let mut cfg = RunConfig::load(config.as_deref())?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(b) = batch_size {
                cfg.train.batch_size = b;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            cmd_train(model, &data_root(data)?, &out, &cfg)
        }
        Command::Synthesize {
            data,
            out,
            split,
            f0,
            spectral,
            baseline,
            postprocess,
            window,
        } => cmd_synthesize(
            &data_root(data)?,
            &out,
            Split::parse(&split)?,
            f0.as_deref(),
            spectral.as_deref(),
            baseline.as_deref(),
            postprocess,
            window,
        ),
        Command::Evaluate {
            data,
            pred,
            split,
            out,
        } => cmd_evaluate(&data_root(data)?, &pred, Split::parse(&split)?, out.as_deref())
            .map(|_| ()),
        Command::Sweep {
            data,
            out,
            config,
            epochs,
            seed,
        } => {
            let mut cfg = RunConfig::load(config.as_deref())?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            cmd_sweep(&data_root(data)?, &out, &cfg)
        }
        Command::Plot {
            data,
            pred,
            id,
            out,
            csv,
        } => cmd_plot(&data_root(data)?, &pred, &id, &out, csv.as_deref()),
    }
}

fn cmd_build_corpus(out: &Path, config: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let corpus = build_corpus(&cfg.corpus)?;
    dataset::write_dataset(out, &corpus)?;
    println!(
        "wrote {} utterances ({} songs) to {}",
        corpus.utterances.len(),
        cfg.corpus.n_songs,
        out.display()
    );
    Ok(())
}

struct PreparedF0 {
    train: Vec<F0Utt>,
    val: Vec<F0Utt>,
}

fn prepare_f0(ds: &LoadedDataset, model: &F0Model) -> PreparedF0 {
    let prep = |idx: Vec<usize>| -> Vec<F0Utt> {
        idx.into_iter()
            .map(|i| F0Utt {
                ctx: ds.records[i].ctx.clone(),
                classes: quantize(&ds.records[i].f0, &model.quant).classes,
            })
            .collect()
    };
    PreparedF0 {
        train: prep(ds.split_indices(Split::Train)),
        val: prep(ds.split_indices(Split::Val)),
    }
}

fn prepare_spec(ds: &LoadedDataset, split: Split) -> Vec<SpecUtt> {
    ds.split_indices(split)
        .into_iter()
        .map(|i| SpecUtt {
            ctx: ds.records[i].ctx.clone(),
            frames_norm: ds.normalized_spec(&ds.records[i]),
        })
        .collect()
}

fn write_train_log(out: &Path, log: &svs_core::models::TrainLog) -> Result<()> {
    let mut csv = String::from("epoch,train_loss,val_loss\n");
    for e in &log.epochs {
        csv.push_str(&format!("{},{:.9},{:.9}\n", e.epoch, e.train_loss, e.val_loss));
    }
    std::fs::write(out, csv)?;
    Ok(())
}

fn cmd_train(model: ModelKind, data: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    let ds = dataset::read_dataset(data)?;
    let opts = TrainOptions {
        epochs: cfg.train.epochs,
        batch_size: cfg.train.batch_size,
        seed: cfg.train.seed,
    };
    let log_path = out.with_extension("log.csv");
    let log = match model {
        ModelKind::DarF0 => {
            let mut adam_cfg = AdamConfig::new(0.01, 0.9886, 5000);
            if let Some(lr) = cfg.train.base_lr {
                adam_cfg.base_lr = lr;
            }
            let mut m = F0Model::new(cfg.f0.clone(), Default::default(), ds.ctx_dim())?;
            let prepared = prepare_f0(&ds, &m);
            let mut adam = AdamState::new(adam_cfg, &m.store);
            let log = m.train(&prepared.train, &prepared.val, &mut adam, &opts)?;
            m.to_checkpoint(opts.seed, Some(&adam))?.save(out)?;
            log
        }
        ModelKind::DarSpectral => {
            let mut adam_cfg = AdamConfig::new(0.001, 0.9886, 250);
            if let Some(lr) = cfg.train.base_lr {
                adam_cfg.base_lr = lr;
            }
            let mut m = SpectralModel::new(cfg.spectral.clone(), ds.ctx_dim())?;
            let train = prepare_spec(&ds, Split::Train);
            let val = prepare_spec(&ds, Split::Val);
            let mut adam = AdamState::new(adam_cfg, &m.store);
            let log = m.train(&train, &val, &mut adam, &opts)?;
            m.to_checkpoint(opts.seed, Some(&adam))?.save(out)?;
            log
        }
        ModelKind::Baseline => {
            let adam_cfg = AdamConfig::constant(cfg.train.base_lr.unwrap_or(1e-3));
            let mut m = BaselineModel::new(cfg.baseline.clone(), ds.ctx_dim())?;
            let train_idx = ds.split_indices(Split::Train);
            m.fit_normalization_from(
                &ds.stats,
                train_idx.iter().map(|&i| &ds.records[i].f0),
            )?;
            let prep = |idx: &[usize]| -> Vec<_> {
                idx.iter()
                    .map(|&i| {
                        let r = &ds.records[i];
                        m.prepare_parts(&r.ctx, &r.f0, &r.spec)
                    })
                    .collect()
            };
            let train = prep(&train_idx);
            let val = prep(&ds.split_indices(Split::Val));
            let mut adam = AdamState::new(adam_cfg, &m.store);
            let log = m.train(&train, &val, &mut adam, &opts)?;
            m.to_checkpoint(opts.seed, Some(&adam))?.save(out)?;
            log
        }
    };
    write_train_log(&log_path, &log)?;
    for line in log.text_lines() {
        println!("{line}");
    }
    println!("checkpoint: {}", out.display());
    Ok(())
}

fn load_kind(path: &Path, kind: &str) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path)?;
    if ck.kind != kind {
        return Err(SvsError::Data(format!(
            "{}: checkpoint kind '{}' where '{kind}' was expected",
            path.display(),
            ck.kind
        )));
    }
    Ok(ck)
}

#[allow(clippy::too_many_arguments)]
fn cmd_synthesize(
    data: &Path,
    out: &Path,
    split: Split,
    f0_ckpt: Option<&Path>,
    spectral_ckpt: Option<&Path>,
    baseline_ckpt: Option<&Path>,
    do_postprocess: bool,
    window: usize,
) -> Result<()> {
    if baseline_ckpt.is_some() && (f0_ckpt.is_some() || spectral_ckpt.is_some()) {
        return Err(SvsError::Data(
            "--baseline cannot be combined with --f0/--spectral".into(),
        ));
    }
    if baseline_ckpt.is_none() && f0_ckpt.is_none() && spectral_ckpt.is_none() {
        return Err(SvsError::Data(
            "pass --baseline, or --f0 (optionally with --spectral)".into(),
        ));
    }
    let ds = dataset::read_dataset(data)?;
    std::fs::create_dir_all(out)?;
    let f0_model = f0_ckpt
        .map(|p| load_kind(p, F0_CKPT_KIND).and_then(|ck| F0Model::from_checkpoint(&ck)))
        .transpose()?
        .map(|(m, _)| m);
    let spec_model = spectral_ckpt
        .map(|p| {
            load_kind(p, SPECTRAL_CKPT_KIND).and_then(|ck| SpectralModel::from_checkpoint(&ck))
        })
        .transpose()?
        .map(|(m, _)| m);
    let base_model = baseline_ckpt
        .map(|p| {
            load_kind(p, BASELINE_CKPT_KIND).and_then(|ck| BaselineModel::from_checkpoint(&ck))
        })
        .transpose()?
        .map(|(m, _)| m);
    let mut n = 0usize;
    for i in ds.split_indices(split) {
        let rec = &ds.records[i];
        let id = &ds.entries[i].id;
        let (mut f0, spec) = if let Some(bm) = &base_model {
            let o = bm.generate(&rec.ctx)?;
            (o.f0, o.spec)
        } else {
            let f0 = f0_model
                .as_ref()
                .expect("checked above")
                .generate(&rec.ctx)?;
            let spec = match &spec_model {
                Some(sm) => ds.denormalize_spec(&sm.generate(&rec.ctx)?),
                None => vec![vec![0.0; SPEC_DIM]; rec.frames()],
            };
            (f0, spec)
        };
        if do_postprocess {
            let notes = NoteContour {
                f0_hz: rec.note_f0.clone(),
            };
            f0 = postprocess::apply(&f0, &notes, window)?;
        }
        let pred = UttRecord {
            ctx: Vec::new(),
            f0,
            spec,
            note_f0: rec.note_f0.clone(),
        };
        dataset::write_utt(dataset::utt_path(out, id), &pred)?;
        n += 1;
    }
    println!("wrote {n} predictions to {}", out.display());
    Ok(())
}

/// Frame-weighted aggregate plus per-utterance rows.
pub struct Evaluation {
    pub per_utt: Vec<(String, EvalReport)>,
    pub aggregate: EvalReport,
}

fn note_as_contour(note_f0: &[f64]) -> Result<F0Contour> {
    F0Contour::new(note_f0.to_vec(), note_f0.iter().map(|&f| f > 0.0).collect())
}

fn mcc_only(frames: &[Vec<f64>]) -> Vec<Vec<f64>> {
    frames.iter().map(|f| f[..SPEC_DIM - 1].to_vec()).collect()
}

/// RMSE and correlation are undefined on degenerate contours (no jointly
/// voiced frames, constant prediction); report 0 instead so one such
/// utterance does not abort a whole evaluation run. Its weight in the
/// aggregate is the jointly-voiced frame count, so an utterance with no
/// comparable frames contributes nothing.
fn rmse_or_zero(pred: &F0Contour, reference: &F0Contour) -> Result<f64> {
    match metrics::f0_rmse(pred, reference) {
        Err(SvsError::Domain(_)) => Ok(0.0),
        other => other,
    }
}

fn corr_or_zero(pred: &F0Contour, reference: &F0Contour) -> Result<f64> {
    match metrics::corr(pred, reference) {
        Err(SvsError::Domain(_)) => Ok(0.0),
        other => other,
    }
}

pub fn evaluate_pair(pred: &UttRecord, reference: &UttRecord) -> Result<EvalReport> {
    let note = note_as_contour(&reference.note_f0)?;
    let joint = pred
        .f0
        .voiced
        .iter()
        .zip(&reference.f0.voiced)
        .filter(|(a, b)| **a && **b)
        .count();
    Ok(EvalReport {
        f0_rmse_natural: rmse_or_zero(&pred.f0, &reference.f0)?,
        f0_rmse_note: rmse_or_zero(&pred.f0, &note)?,
        corr_natural: corr_or_zero(&pred.f0, &reference.f0)?,
        corr_note: corr_or_zero(&pred.f0, &note)?,
        vuv_error: metrics::vuv_error(&pred.f0, &reference.f0)?,
        mcd: metrics::mcd(&mcc_only(&pred.spec), &mcc_only(&reference.spec))?,
        n_frames_compared: joint,
    })
}

pub fn cmd_evaluate(
    data: &Path,
    pred_dir: &Path,
    split: Split,
    out: Option<&Path>,
) -> Result<Evaluation> {
    let ds = dataset::read_dataset(data)?;
    let mut per_utt = Vec::new();
    for i in ds.split_indices(split) {
        let id = ds.entries[i].id.clone();
        let pred = dataset::read_utt(dataset::utt_path(pred_dir, &id))?;
        let report = evaluate_pair(&pred, &ds.records[i])?;
        per_utt.push((id, report));
    }
    if per_utt.is_empty() {
        return Err(SvsError::Data(format!(
            "no utterances in split '{}'",
            split.as_str()
        )));
    }
    let total_joint: usize = per_utt.iter().map(|(_, r)| r.n_frames_compared).sum();
    let total_frames: usize = ds.split_indices(split).iter().map(|&i| ds.records[i].frames()).sum();
    let wj = |f: fn(&EvalReport) -> f64| -> f64 {
        per_utt
            .iter()
            .map(|(_, r)| f(r) * r.n_frames_compared as f64)
            .sum::<f64>()
            / total_joint as f64
    };
    let aggregate = EvalReport {
        f0_rmse_natural: wj(|r| r.f0_rmse_natural),
        f0_rmse_note: wj(|r| r.f0_rmse_note),
        corr_natural: wj(|r| r.corr_natural),
        corr_note: wj(|r| r.corr_note),
        // V/UV and MCD are over all frames, so weight by utterance length.
        vuv_error: per_utt
            .iter()
            .zip(ds.split_indices(split))
            .map(|((_, r), i)| r.vuv_error * ds.records[i].frames() as f64)
            .sum::<f64>()
            / total_frames as f64,
        mcd: per_utt
            .iter()
            .zip(ds.split_indices(split))
            .map(|((_, r), i)| r.mcd * ds.records[i].frames() as f64)
            .sum::<f64>()
            / total_frames as f64,
        n_frames_compared: total_joint,
    };
    if let Some(p) = out {
        let mut csv = format!("id,{}\n", EvalReport::CSV_HEADER);
        for (id, r) in &per_utt {
            csv.push_str(&format!("{id},{}\n", r.csv_line()));
        }
        csv.push_str(&format!("aggregate,{}\n", aggregate.csv_line()));
        std::fs::write(p, csv)?;
    }
    println!("aggregate over {} utterances:", per_utt.len());
    print!("{}", aggregate.text_block());
    Ok(Evaluation { per_utt, aggregate })
}

/// Frame-weighted F0 metrics of a trained model on one split.
fn f0_split_metrics(m: &F0Model, ds: &LoadedDataset, idx: &[usize]) -> Result<[f64; 4]> {
    let (mut sums, mut joint, mut frames) = ([0.0f64; 4], 0usize, 0usize);
    for &i in idx {
        let rec = &ds.records[i];
        let pred = m.generate(&rec.ctx)?;
        let note = note_as_contour(&rec.note_f0)?;
        let j = pred
            .voiced
            .iter()
            .zip(&rec.f0.voiced)
            .filter(|(a, b)| **a && **b)
            .count();
        sums[0] += rmse_or_zero(&pred, &rec.f0)? * j as f64;
        sums[1] += rmse_or_zero(&pred, &note)? * j as f64;
        sums[2] += corr_or_zero(&pred, &rec.f0)? * j as f64;
        sums[3] += metrics::vuv_error(&pred, &rec.f0)? * rec.frames() as f64;
        joint += j;
        frames += rec.frames();
    }
    Ok([
        sums[0] / joint as f64,
        sums[1] / joint as f64,
        sums[2] / joint as f64,
        sums[3] / frames as f64,
    ])
}

/// Frame-weighted MCD of a trained spectral model on one split.
fn spec_split_mcd(m: &SpectralModel, ds: &LoadedDataset, idx: &[usize]) -> Result<f64> {
    let (mut sum, mut frames) = (0.0f64, 0usize);
    for &i in idx {
        let rec = &ds.records[i];
        let pred = ds.denormalize_spec(&m.generate(&rec.ctx)?);
        sum += metrics::mcd(&mcc_only(&pred), &mcc_only(&rec.spec))? * rec.frames() as f64;
        frames += rec.frames();
    }
    Ok(sum / frames as f64)
}

fn cmd_sweep(data: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    let ds = dataset::read_dataset(data)?;
    std::fs::create_dir_all(out)?;
    let opts = TrainOptions {
        epochs: cfg.train.epochs,
        batch_size: cfg.train.batch_size,
        seed: cfg.train.seed,
    };
    let val_idx = ds.split_indices(Split::Val);

    // F0 model: history length sweep, Table-1 shaped metric columns.
    let ks = [1usize, 2, 3, 4];
    let rows = svs_core::par::map_indexed(ks.len(), |i| -> Result<(usize, [f64; 4])> {
        let mut model_cfg = cfg.f0.clone();
        model_cfg.history_len = ks[i];
        let mut m = F0Model::new(model_cfg, Default::default(), ds.ctx_dim())?;
        let prepared = prepare_f0(&ds, &m);
        let mut adam = AdamState::new(AdamConfig::new(0.01, 0.9886, 5000), &m.store);
        m.train(&prepared.train, &prepared.val, &mut adam, &opts)?;
        Ok((ks[i], f0_split_metrics(&m, &ds, &val_idx)?))
    });
    let mut csv = String::from("history_len,f0_rmse_natural,f0_rmse_note,corr_natural,vuv_error\n");
    let mut best: Option<(usize, f64)> = None;
    for r in rows {
        let (k, m) = r?;
        csv.push_str(&format!("{k},{:.6},{:.6},{:.6},{:.6}\n", m[0], m[1], m[2], m[3]));
        if best.map_or(true, |(_, b)| m[0] < b) {
            best = Some((k, m[0]));
        }
    }
    let f0_table = out.join("f0_history_sweep.csv");
    std::fs::write(&f0_table, &csv)?;
    println!("{}", csv.trim_end());
    let (best_k, best_rmse) = best.expect("non-empty grid");
    println!("optimum f0 cell: K={best_k} (f0_rmse_natural {best_rmse:.4} Hz)");

    // Spectral model: (history, heads, layers) grid, MCD per cell.
    let grid: Vec<(usize, usize, usize)> = [1usize, 2]
        .iter()
        .flat_map(|&k| {
            [1usize, 2]
                .iter()
                .flat_map(move |&h| [1usize, 3].iter().map(move |&n| (k, h, n)))
        })
        .collect();
    let train = prepare_spec(&ds, Split::Train);
    let val = prepare_spec(&ds, Split::Val);
    let rows = svs_core::par::map_indexed(grid.len(), |i| -> Result<(usize, usize, usize, f64)> {
        let (k, h, n) = grid[i];
        let mut model_cfg = cfg.spectral.clone();
        model_cfg.prenet.history_len = k;
        model_cfg.prenet.heads = h;
        model_cfg.prenet.attn_layers = n;
        let mut m = SpectralModel::new(model_cfg, ds.ctx_dim())?;
        let mut adam = AdamState::new(AdamConfig::new(0.001, 0.9886, 250), &m.store);
        m.train(&train, &val, &mut adam, &opts)?;
        Ok((k, h, n, spec_split_mcd(&m, &ds, &val_idx)?))
    });
    let mut csv = String::from("history_len,heads,attn_layers,mcd\n");
    let mut best: Option<((usize, usize, usize), f64)> = None;
    for r in rows {
        let (k, h, n, mcd) = r?;
        csv.push_str(&format!("{k},{h},{n},{mcd:.6}\n"));
        if best.map_or(true, |(_, b)| mcd < b) {
            best = Some(((k, h, n), mcd));
        }
    }
    let spec_table = out.join("spectral_grid_sweep.csv");
    std::fs::write(&spec_table, &csv)?;
    println!("{}", csv.trim_end());
    let ((bk, bh, bn), bm) = best.expect("non-empty grid");
    println!("optimum spectral cell: K={bk} h={bh} N={bn} (mcd {bm:.4} dB)");
    println!("tables: {} {}", f0_table.display(), spec_table.display());
    Ok(())
}

fn cmd_plot(data: &Path, pred_dir: &Path, id: &str, out: &Path, csv: Option<&Path>) -> Result<()> {
    let ds = dataset::read_dataset(data)?;
    let i = ds
        .entries
        .iter()
        .position(|e| e.id == id)
        .ok_or_else(|| SvsError::Data(format!("utterance '{id}' not in manifest")))?;
    let reference = &ds.records[i];
    let pred = dataset::read_utt(dataset::utt_path(pred_dir, id))?;
    if pred.frames() != reference.frames() {
        return Err(SvsError::shape("plot", "prediction length mismatch"));
    }
    // Unvoiced frames become NaN so the polylines break instead of diving to 0.
    let gap = |c: &F0Contour| -> Vec<f64> {
        c.f0_hz
            .iter()
            .zip(&c.voiced)
            .map(|(&f, &v)| if v { f } else { f64::NAN })
            .collect()
    };
    let natural = gap(&reference.f0);
    let note: Vec<f64> = reference
        .note_f0
        .iter()
        .map(|&f| if f > 0.0 { f } else { f64::NAN })
        .collect();
    let predicted = gap(&pred.f0);
    let svg = svg::line_plot(
        &format!("F0 contours: {id}"),
        "frame",
        "F0 (Hz)",
        &[
            svg::Series {
                label: "natural",
                color: "#888888",
                values: &natural,
            },
            svg::Series {
                label: "note",
                color: "#2266cc",
                values: &note,
            },
            svg::Series {
                label: "predicted",
                color: "#cc3322",
                values: &predicted,
            },
        ],
    );
    std::fs::write(out, svg)?;
    if let Some(p) = csv {
        let mut text = String::from("frame,natural_hz,note_hz,predicted_hz\n");
        for t in 0..reference.frames() {
            text.push_str(&format!(
                "{t},{:.4},{:.4},{:.4}\n",
                reference.f0.f0_hz[t], reference.note_f0[t], pred.f0.f0_hz[t]
            ));
        }
        std::fs::write(p, text)?;
    }
    println!("plot: {}", out.display());
    Ok(())
}

//! Central-difference gradient verification for every differentiable
//! primitive and for the full loss of each model. The test suite and the
//! acceptance checks both run this same suite.

use crate::codec::QuantizerConfig;
use crate::models::baseline::{BaselineConfig, BaselineModel};
use crate::models::f0_dar::{F0Model, F0ModelConfig, F0Utt};
use crate::models::spectral_dar::{
    PrenetConfig, PrenetMode, SpecUtt, SpectralModel, SpectralModelConfig,
};
use crate::nn::{BiGru, Conv1d, Direction, Gru, Linear, MultiHeadAttention};
use crate::params::ParamStore;
use crate::tape::{causal_mask, Tape};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
/// Max entries checked per tensor (evenly strided), to keep runtime low.
const MAX_ENTRIES: usize = 12;

/// Compare analytic gradients against central differences of `loss`;
/// returns the worst absolute error seen, or a message naming the first
/// entry that exceeds tolerance.
fn check_store(
    store: &mut ParamStore,
    loss: &mut dyn FnMut(&ParamStore) -> f64,
    analytic: &[Tensor],
    label: &str,
) -> Result<f64, String> {
    assert_eq!(analytic.len(), store.len());
    let mut worst = 0.0f64;
    for i in 0..store.len() {
        let n = store.value(i).len();
        let stride = (n / MAX_ENTRIES).max(1);
        for j in (0..n).step_by(stride) {
            let orig = store.value(i).data()[j];
            store.value_mut(i).data_mut()[j] = orig + H;
            let up = loss(store);
            store.value_mut(i).data_mut()[j] = orig - H;
            let down = loss(store);
            store.value_mut(i).data_mut()[j] = orig;
            let num = (up - down) / (2.0 * H);
            let ana = analytic[i].data()[j];
            let err = (ana - num).abs();
            if err > 1e-6 + TOL * ana.abs().max(num.abs()) {
                return Err(format!(
                    "{label}: param '{}' entry {j}: analytic {ana} vs numeric {num}",
                    store.name(i)
                ));
            }
            worst = worst.max(err / ana.abs().max(num.abs()).max(1.0));
        }
    }
    Ok(worst)
}

/// Add small noise to every parameter (zero-initialized biases and the
/// zero pad frame otherwise park ReLU pre-activations exactly on the kink,
/// where central differences are invalid).
fn jitter(store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..store.len() {
        for v in store.value_mut(i).data_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
    }
}

fn rand_rows(t: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..t)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

pub fn check_linear_tanh() -> Result<f64, String> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let lin = Linear::new(&mut store, "l", 3, 4, &mut rng);
    let x = Tensor::from_rows(&rand_rows(5, 3, 2));
    let run = |store: &ParamStore, tape: &mut Tape| {
        let bound = store.bind(tape);
        let xv = tape.constant(x.clone());
        let y = lin.forward(tape, &bound, xv);
        let y = tape.tanh(y);
        (tape.mean_all(y), bound)
    };
    let mut tape = Tape::new();
    let (l, bound) = run(&store, &mut tape);
    let grads = bound.gradients(&tape, &tape.backward(l));
    check_store(
        &mut store,
        &mut |s| {
            let mut t = Tape::new();
            let (l, _) = run(s, &mut t);
            t.value(l).scalar_value()
        },
        &grads,
        "linear+tanh",
    )
}

pub fn check_gru_both_directions() -> Result<f64, String> {
    let mut worst = 0.0f64;
    for dir in [Direction::Forward, Direction::Backward] {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gru = Gru::new(&mut store, "g", 3, 4, &mut rng);
        let x = Tensor::from_rows(&rand_rows(4, 3, 4));
        let run = |store: &ParamStore, tape: &mut Tape| {
            let bound = store.bind(tape);
            let xv = tape.constant(x.clone());
            let y = gru.forward_seq(tape, &bound, xv, dir);
            (tape.mean_all(y), bound)
        };
        let mut tape = Tape::new();
        let (l, bound) = run(&store, &mut tape);
        let grads = bound.gradients(&tape, &tape.backward(l));
        worst = worst.max(check_store(
            &mut store,
            &mut |s| {
                let mut t = Tape::new();
                let (l, _) = run(s, &mut t);
                t.value(l).scalar_value()
            },
            &grads,
            "gru",
        )?);
    }
    Ok(worst)
}

pub fn check_bigru_stack() -> Result<f64, String> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let bi = BiGru::new(&mut store, "bi", 2, 3, &mut rng);
    let x = Tensor::from_rows(&rand_rows(3, 2, 6));
    let run = |store: &ParamStore, tape: &mut Tape| {
        let bound = store.bind(tape);
        let xv = tape.constant(x.clone());
        let y = bi.forward(tape, &bound, xv);
        (tape.mean_all(y), bound)
    };
    let mut tape = Tape::new();
    let (l, bound) = run(&store, &mut tape);
    let grads = bound.gradients(&tape, &tape.backward(l));
    check_store(
        &mut store,
        &mut |s| {
            let mut t = Tape::new();
            let (l, _) = run(s, &mut t);
            t.value(l).scalar_value()
        },
        &grads,
        "bigru",
    )
}

pub fn check_embedding() -> Result<f64, String> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let table = store.add_xavier("emb", &[5, 3], 5, 3, &mut rng);
    let idx = [1usize, 3, 1, 0, 1];
    let run = |store: &ParamStore, tape: &mut Tape| {
        let bound = store.bind(tape);
        let y = tape.embedding(bound.var(table), &idx);
        let y = tape.tanh(y);
        (tape.mean_all(y), bound)
    };
    let mut tape = Tape::new();
    let (l, bound) = run(&store, &mut tape);
    let grads = bound.gradients(&tape, &tape.backward(l));
    check_store(
        &mut store,
        &mut |s| {
            let mut t = Tape::new();
            let (l, _) = run(s, &mut t);
            t.value(l).scalar_value()
        },
        &grads,
        "embedding",
    )
}

pub fn check_causal_conv1d() -> Result<f64, String> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let conv = Conv1d::new(&mut store, "c", 2, 3, 4, &mut rng);
    let x = Tensor::from_rows(&rand_rows(5, 3, 10));
    let run = |store: &ParamStore, tape: &mut Tape| {
        let bound = store.bind(tape);
        let xv = tape.constant(x.clone());
        let y = conv.forward(tape, &bound, xv);
        let y = tape.tanh(y);
        (tape.mean_all(y), bound)
    };
    let mut tape = Tape::new();
    let (l, bound) = run(&store, &mut tape);
    let grads = bound.gradients(&tape, &tape.backward(l));
    check_store(
        &mut store,
        &mut |s| {
            let mut t = Tape::new();
            let (l, _) = run(s, &mut t);
            t.value(l).scalar_value()
        },
        &grads,
        "conv1d",
    )
}

pub fn check_batch_norm_train() -> Result<f64, String> {
    let mut store = ParamStore::new();
    let gamma = store.add("gamma", Tensor::new(vec![3], vec![1.2, 0.8, 1.0]).unwrap());
    let beta = store.add("beta", Tensor::new(vec![3], vec![0.1, -0.2, 0.0]).unwrap());
    let x = Tensor::from_rows(&rand_rows(4, 3, 12));
    let run = |store: &ParamStore, tape: &mut Tape| {
        let bound = store.bind(tape);
        let xv = tape.constant(x.clone());
        let (y, _, _) = tape
            .batch_norm_train(xv, bound.var(gamma), bound.var(beta), 1e-5)
            .unwrap();
        let y = tape.tanh(y);
        (tape.mean_all(y), bound)
    };
    let mut tape = Tape::new();
    let (l, bound) = run(&store, &mut tape);
    let grads = bound.gradients(&tape, &tape.backward(l));
    check_store(
        &mut store,
        &mut |s| {
            let mut t = Tape::new();
            let (l, _) = run(s, &mut t);
            t.value(l).scalar_value()
        },
        &grads,
        "batch norm",
    )
}

pub fn check_multi_head_attention() -> Result<f64, String> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mha = MultiHeadAttention::new(&mut store, "a", 4, 2, &mut rng);
    let x = Tensor::from_rows(&rand_rows(3, 4, 14));
    let mask = causal_mask(3);
    let run = |store: &ParamStore, tape: &mut Tape| {
        let bound = store.bind(tape);
        let xv = tape.constant(x.clone());
        let y = mha.forward(tape, &bound, xv, &mask);
        (tape.mean_all(y), bound)
    };
    let mut tape = Tape::new();
    let (l, bound) = run(&store, &mut tape);
    let grads = bound.gradients(&tape, &tape.backward(l));
    check_store(
        &mut store,
        &mut |s| {
            let mut t = Tape::new();
            let (l, _) = run(s, &mut t);
            t.value(l).scalar_value()
        },
        &grads,
        "attention",
    )
}

/// Full F0 model loss, which exercises the H-softmax head.
pub fn check_f0_model_loss() -> Result<f64, String> {
    let cfg = F0ModelConfig {
        fc_units: 6,
        bigru_units: 3,
        unigru_units: 3,
        linear_units: 6,
        embed_dim: 2,
        history_len: 2,
        ..F0ModelConfig::default()
    };
    let mut model = F0Model::new(cfg, QuantizerConfig::default(), 4).unwrap();
    jitter(&mut model.store, 100);
    let utt = F0Utt {
        ctx: rand_rows(5, 4, 20),
        classes: vec![0, 12, 13, 200, 0],
    };
    let eval = |m: &F0Model| -> (f64, Vec<Tensor>) {
        let mut tape = Tape::new();
        let bound = m.store.bind(&mut tape);
        let (g, v) = m.forward_teacher_forced(&mut tape, &bound, &utt, None).unwrap();
        let l = m.loss(&mut tape, g, v, &utt.classes);
        let grads = bound.gradients(&tape, &tape.backward(l));
        (tape.value(l).scalar_value(), grads)
    };
    let (_, grads) = eval(&model);
    let mut store = model.store.clone();
    check_store(
        &mut store,
        &mut |s| {
            let mut m2 =
                F0Model::new(model.cfg.clone(), model.quant.clone(), model.ctx_dim).unwrap();
            m2.store = s.clone();
            eval(&m2).0
        },
        &grads,
        "f0 model",
    )
}

/// Full spectral model loss including the prenet in train mode.
pub fn check_spectral_model_loss() -> Result<f64, String> {
    let cfg = SpectralModelConfig {
        fc_units: 6,
        bigru_units: 3,
        unigru_units: 3,
        linear_units: 6,
        prenet: PrenetConfig {
            fc_units: 4,
            fc_dropout: 0.1,
            conv_channels: 4,
            attn_layers: 2,
            heads: 2,
            history_len: 2,
            ..PrenetConfig::default()
        },
        feedback_dropout: 0.5,
        ..SpectralModelConfig::default()
    };
    let mut model = SpectralModel::new(cfg, 4).unwrap();
    jitter(&mut model.store, 101);
    let utt = SpecUtt {
        ctx: rand_rows(4, 4, 30),
        frames_norm: rand_rows(4, 41, 31),
    };
    // Fixed RNG seed makes the dropout masks identical across evaluations,
    // so train-mode gradients (incl. batch-norm batch stats) are exact.
    let eval = |m: &SpectralModel| -> (f64, Vec<Tensor>) {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut bn = Vec::new();
        let mut mode = PrenetMode::Train {
            dropout_rng: &mut rng,
            bn_updates: &mut bn,
        };
        let mut tape = Tape::new();
        let bound = m.store.bind(&mut tape);
        let preds = m
            .forward_teacher_forced(&mut tape, &bound, &utt, &mut mode)
            .unwrap();
        let l = m.loss(&mut tape, preds, &utt);
        let grads = bound.gradients(&tape, &tape.backward(l));
        (tape.value(l).scalar_value(), grads)
    };
    let (_, grads) = eval(&model);
    let mut store = model.store.clone();
    check_store(
        &mut store,
        &mut |s| {
            let mut m2 = SpectralModel::new(model.cfg.clone(), model.ctx_dim).unwrap();
            m2.store = s.clone();
            eval(&m2).0
        },
        &grads,
        "spectral model",
    )
}

pub fn check_baseline_model_loss() -> Result<f64, String> {
    let cfg = BaselineConfig {
        units: 3,
        n_layers: 2,
        ..BaselineConfig::default()
    };
    let mut model = BaselineModel::new(cfg, 4).unwrap();
    jitter(&mut model.store, 102);
    let ctx = rand_rows(4, 4, 40);
    let target = Tensor::from_rows(&rand_rows(4, 127, 41));
    let eval = |m: &BaselineModel| -> (f64, Vec<Tensor>) {
        let mut tape = Tape::new();
        let bound = m.store.bind(&mut tape);
        let preds = m.forward(&mut tape, &bound, &ctx);
        let sse = tape.sse_const(preds, target.clone());
        let l = tape.scale(sse, 1.0 / target.len() as f64);
        let grads = bound.gradients(&tape, &tape.backward(l));
        (tape.value(l).scalar_value(), grads)
    };
    let (_, grads) = eval(&model);
    let mut store = model.store.clone();
    check_store(
        &mut store,
        &mut |s| {
            let mut m2 = BaselineModel::new(model.cfg.clone(), model.ctx_dim).unwrap();
            m2.store = s.clone();
            eval(&m2).0
        },
        &grads,
        "baseline model",
    )
}

/// Every check in order; each entry is (label, result).
pub fn run_suite() -> Vec<(&'static str, Result<f64, String>)> {
    vec![
        ("linear+tanh", check_linear_tanh()),
        ("gru fwd/bwd", check_gru_both_directions()),
        ("bigru stack", check_bigru_stack()),
        ("embedding", check_embedding()),
        ("causal conv1d", check_causal_conv1d()),
        ("batch norm (train)", check_batch_norm_train()),
        ("masked attention", check_multi_head_attention()),
        ("f0 model loss", check_f0_model_loss()),
        ("spectral model loss", check_spectral_model_loss()),
        ("baseline model loss", check_baseline_model_loss()),
    ]
}

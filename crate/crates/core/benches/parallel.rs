//! Compares the rayon-backed `par::map_indexed` against the sequential
//! `par::map_indexed_seq` on the two hot loops that use it: per-utterance
//! forward/backward passes during training, and per-utterance metric
//! evaluation. Run with `cargo bench` (parallel feature on by default) or
//! `cargo bench --no-default-features` to confirm the sequential fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svs_core::codec::QuantizerConfig;
use svs_core::metrics;
use svs_core::models::f0_dar::{F0Model, F0ModelConfig, F0Utt};
use svs_core::par;
use svs_core::tape::Tape;

const CTX_DIM: usize = 6;

fn make_batch(rng: &mut ChaCha8Rng, n_utts: usize, frames: usize) -> Vec<F0Utt> {
    (0..n_utts)
        .map(|_| F0Utt {
            ctx: (0..frames)
                .map(|_| (0..CTX_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect(),
            classes: (0..frames).map(|_| rng.gen_range(0..=255)).collect(),
        })
        .collect()
}

fn bench_batch_gradients(c: &mut Criterion) {
    let cfg = F0ModelConfig {
        fc_units: 32,
        bigru_units: 16,
        unigru_units: 16,
        linear_units: 32,
        embed_dim: 8,
        ..F0ModelConfig::default()
    };
    let model = F0Model::new(cfg, QuantizerConfig::default(), CTX_DIM).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batch = make_batch(&mut rng, 8, 60);

    let run_one = |i: usize| -> f64 {
        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape);
        let (gate, voiced) = model
            .forward_teacher_forced(&mut tape, &bound, &batch[i], None)
            .unwrap();
        let loss = model.loss(&mut tape, gate, voiced, &batch[i].classes);
        let grads = tape.backward(loss);
        // Materialize the parameter gradients (as a training step would) so
        // the backward pass cannot be optimized away.
        let gs = bound.gradients(&tape, &grads);
        tape.value(loss).data()[0] + gs[0].data()[0]
    };

    let mut group = c.benchmark_group("f0_batch_forward_backward");
    group.sample_size(20);
    group.bench_function(BenchmarkId::new("map_indexed", "8x60"), |b| {
        b.iter(|| par::map_indexed(batch.len(), run_one))
    });
    group.bench_function(BenchmarkId::new("map_indexed_seq", "8x60"), |b| {
        b.iter(|| par::map_indexed_seq(batch.len(), run_one))
    });
    group.finish();
}

fn bench_batch_metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mk = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..400)
            .map(|_| (0..41).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    };
    let pairs: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)> =
        (0..32).map(|_| (mk(&mut rng), mk(&mut rng))).collect();

    let run_one = |i: usize| -> f64 { metrics::mcd(&pairs[i].0, &pairs[i].1).unwrap() };

    let mut group = c.benchmark_group("mcd_batch_evaluation");
    group.bench_function(BenchmarkId::new("map_indexed", "32x400"), |b| {
        b.iter(|| par::map_indexed(pairs.len(), run_one))
    });
    group.bench_function(BenchmarkId::new("map_indexed_seq", "32x400"), |b| {
        b.iter(|| par::map_indexed_seq(pairs.len(), run_one))
    });
    group.finish();
}

criterion_group!(benches, bench_batch_gradients, bench_batch_metrics);
criterion_main!(benches);

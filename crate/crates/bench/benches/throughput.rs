//! Throughput benchmarks: simulator event generation, objective
//! forward/backward per sequence length, and one-step evaluation.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use mtpp_core::data::{split, Dataset, Event, Sequence, SplitSpec, Vocab};
use mtpp_core::eval::{evaluate, EvalConfig, PredictRule};
use mtpp_core::hawkes::{simulate, synthetic_2d};
use mtpp_core::model::params::ModelSpecs;
use mtpp_core::model::ParameterStore;
use mtpp_core::rng::substream;
use mtpp_core::train::elbo;

fn unit_gap_dataset(n_seq: usize, len: usize) -> Dataset {
    let mut vocab = Vocab::new();
    vocab.intern("a");
    vocab.intern("b");
    let sequences = (0..n_seq)
        .map(|i| Sequence {
            id: format!("s{i}"),
            events: (0..len)
                .map(|k| Event {
                    mark: ((k + i) % 2) as u32,
                    time: k as f64,
                })
                .collect(),
        })
        .collect();
    Dataset {
        sequences,
        vocab,
        time_scale: 1.0,
    }
}

fn bench_simulate(c: &mut Criterion) {
    let spec = synthetic_2d(4, 155.0);
    c.bench_function("hawkes_simulate_4seq_default_horizon", |b| {
        b.iter(|| simulate(&spec, 42).unwrap())
    });
}

fn bench_objective(c: &mut Criterion) {
    let mut group = c.benchmark_group("objective_forward_backward");
    for len in [32usize, 128, 512] {
        let d = unit_gap_dataset(1, len);
        let store = ParameterStore::init(ModelSpecs::standard(vec!["a".into(), "b".into()]), 7);
        group.bench_function(format!("seq_len_{len}"), |b| {
            b.iter_batched(
                || (store.grad_buffer(), substream(9, &[len as u64])),
                |(mut buf, mut rng)| {
                    elbo(
                        &store,
                        &d.sequences[0].events,
                        5,
                        50,
                        &mut rng,
                        Some(&mut buf),
                    )
                    .unwrap()
                },
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

fn bench_evaluate(c: &mut Criterion) {
    let d = unit_gap_dataset(16, 64);
    let sp = split(&d, SplitSpec::new(0.8).unwrap());
    let store = ParameterStore::init(ModelSpecs::standard(vec!["a".into(), "b".into()]), 7);
    let cfg = EvalConfig {
        seed: 1,
        runs: 1,
        cap: 5,
        rule: PredictRule::Mean,
    };
    c.bench_function("evaluate_16seq_len64", |b| {
        b.iter(|| evaluate(&store, &d, &sp, &cfg).unwrap())
    });
}

criterion_group!(benches, bench_simulate, bench_objective, bench_evaluate);
criterion_main!(benches);

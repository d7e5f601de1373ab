//! Sequential vs data-parallel execution of the batch objective and a full
//! training step. Each case runs inside a one-thread rayon pool and inside
//! the default pool; build with `--no-default-features` to time the plain
//! iterator path instead.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rayon::ThreadPoolBuilder;

use ngram_objectives::data::{gen_copy_task, make_batches};
use ngram_objectives::experiment::bench_sweep;
use ngram_objectives::model::{init_model, train_step, ModelConfig, OptimState};
use ngram_objectives::numeric::seeded_uniform;
use ngram_objectives::objectives::{batch_loss, BatchItem};
use ngram_objectives::{Matrix, ObjectiveSpec, Rng, TokenId};

fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let default = ThreadPoolBuilder::new().build().unwrap();
    let n = default.current_num_threads();
    vec![
        ("sequential".into(), ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        (format!("parallel-{n}"), default),
    ]
}

fn batch_objective(c: &mut Criterion) {
    let mut rng = Rng::new(0);
    let examples: Vec<(Matrix, Vec<TokenId>)> = (0..32)
        .map(|_| {
            let l = seeded_uniform(&mut rng, -3.0, 3.0, 40, 64).unwrap();
            let r = (0..40).map(|_| rng.below(8) as TokenId).collect();
            (l, r)
        })
        .collect();
    let items: Vec<BatchItem> = examples
        .iter()
        .map(|(l, r)| BatchItem {
            logits: l,
            reference: r,
            true_len: r.len(),
        })
        .collect();

    let mut group = c.benchmark_group("batch_loss");
    for (label, spec) in [
        ("CE", ObjectiveSpec::ce_only()),
        ("CE+rewards(2,3,4)", ObjectiveSpec::ce_only().with_rewards([2, 3, 4])),
        ("CE+matches(2,3,4)", ObjectiveSpec::ce_only().with_matches([2, 3, 4])),
    ] {
        for (pool_name, pool) in pools() {
            group.bench_with_input(BenchmarkId::new(label, &pool_name), &spec, |b, spec| {
                pool.install(|| b.iter(|| batch_loss(black_box(&items), spec).unwrap()))
            });
        }
    }
    group.finish();
}

fn training_step(c: &mut Criterion) {
    let corpus = gen_copy_task(50, 30, 64, 0).unwrap();
    let config = ModelConfig::new(50, corpus.max_source_len(), corpus.max_target_len());
    let init = init_model(&config, 0).unwrap();
    let batch = make_batches(&corpus, 16, 0).unwrap().swap_remove(0);

    let mut group = c.benchmark_group("train_step");
    group.sample_size(20);
    for (label, spec) in bench_sweep() {
        for (pool_name, pool) in pools() {
            group.bench_with_input(BenchmarkId::new(&label, &pool_name), &spec, |b, spec| {
                let mut params = init.clone();
                let mut optim = OptimState::new(&params, 0.01);
                pool.install(|| b.iter(|| train_step(&mut params, &mut optim, &batch, spec, 1e-4).unwrap()))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, batch_objective, training_step);
criterion_main!(benches);

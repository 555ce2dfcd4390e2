use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use memiss_core::gibbs::{sweep, ChainState, MhTuning};
use memiss_core::gmrf::{factorize, factorize_with, SparseSpd, Symbolic};
use memiss_core::marginal::log_marginal;
use memiss_core::study::{prepare, StudyModel};
use memiss_core::{simulate_replicate, JointModel, MhSteps, SimConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Banded SPD matrix with half-bandwidth `bw`.
fn banded(n: usize, bw: usize, rng: &mut ChaCha8Rng) -> SparseSpd {
    let mut t = Vec::new();
    for i in 0..n {
        t.push((i, i, 2.0 * bw as f64 + 1.0));
        for j in i + 1..(i + bw + 1).min(n) {
            t.push((i, j, rng.random_range(-1.0..1.0)));
        }
    }
    SparseSpd::from_triplets(n, &t).expect("valid triplets")
}

fn study_model(n: usize) -> JointModel {
    let rep = simulate_replicate(&SimConfig { n, ..SimConfig::default() }, 0);
    let (spec, data) = prepare(StudyModel::Corrected, &rep);
    JointModel::new(&spec, &data).expect("valid model")
}

fn gmrf(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let q = banded(3000, 5, &mut rng);
    let sym = Symbolic::analyze(&q);
    let f = factorize(&q).expect("spd");
    let b: Vec<f64> = (0..q.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    c.bench_function("factorize banded n=3000", |bench| bench.iter(|| factorize_with(&sym, &q).unwrap()));
    c.bench_function("solve banded n=3000", |bench| bench.iter(|| f.solve(&b).unwrap()));
    c.bench_function("selected inverse banded n=3000", |bench| bench.iter(|| f.selected_inverse()));
}

fn engines(c: &mut Criterion) {
    let model = study_model(1000);
    let hyper = model.initial_hyper();
    c.bench_function("log marginal corrected n=1000", |bench| bench.iter(|| log_marginal(&model, &hyper, false).unwrap()));
    c.bench_function("gibbs sweep corrected n=1000", |bench| {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut tuning = MhTuning::new(MhSteps::default());
        bench.iter_batched(
            || ChainState::initial(&model),
            |mut state| sweep(&model, &mut state, &mut tuning, false, &mut rng).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, gmrf, engines);
criterion_main!(benches);

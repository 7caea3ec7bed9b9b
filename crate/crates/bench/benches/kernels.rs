use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sno_core::distributions::{generate_family, sample_lattice_mixture, FamilySplit, SampleBatch};
use sno_core::embeddings::{build_kme_basis, median_bandwidth, RbfKernel};
use sno_core::eval_mmd::mmd_unbiased;
use sno_core::numerics::{rng, Matrix, ParameterStore};
use sno_core::score_operator::{draw_dsm_batch, dsm_objective, Nomad, NomadSpec, ScoreNet, ScoreOperator};
use sno_core::sde::{probability_flow_sample, SdeConfig};

fn lattice(n_fam: usize, n: usize) -> Vec<SampleBatch> {
    generate_family(FamilySplit::Train, n_fam, 0)
        .unwrap()
        .iter()
        .enumerate()
        .map(|(i, s)| sample_lattice_mixture(s, n, i as u64).unwrap())
        .collect()
}

fn gemm(c: &mut Criterion) {
    let mut g = c.benchmark_group("matmul");
    for (m, k, n) in [(128, 128, 128), (2048, 128, 128)] {
        let a = rng::standard_normal_matrix(m, k, &mut rng::stream(1, &[]));
        let b = rng::standard_normal_matrix(k, n, &mut rng::stream(2, &[]));
        g.bench_with_input(BenchmarkId::from_parameter(format!("{m}x{k}x{n}")), &(a, b), |bench, (a, b)| {
            bench.iter(|| a.matmul(black_box(b)).unwrap())
        });
    }
    g.finish();
}

fn dsm_step(c: &mut Criterion) {
    let data = lattice(32, 200);
    let sde = SdeConfig::ve(25.0);
    let op = ScoreOperator::new(Nomad::new(NomadSpec::desk(2, 32)).unwrap(), sde).unwrap();
    let mut store = ParameterStore::new();
    op.net.init(&mut store, &mut rng::stream(3, &[])).unwrap();
    let sets: Vec<&SampleBatch> = data.iter().collect();
    let batch = draw_dsm_batch(&sets, 64, &sde, 4, 0).unwrap();
    let cond = rng::standard_normal_matrix(32, 32, &mut rng::stream(5, &[]));
    c.bench_function("dsm forward+backward 32x64 NOMAD 4x128", |b| {
        b.iter(|| {
            store.zero_grad();
            dsm_objective(&op, &mut store, black_box(&cond), &batch, true).unwrap().loss
        })
    });
}

fn mmd(c: &mut Criterion) {
    let x = rng::standard_normal_matrix(1000, 2, &mut rng::stream(6, &[]));
    let y = rng::standard_normal_matrix(1000, 2, &mut rng::stream(7, &[]));
    let k = RbfKernel::new(median_bandwidth(&[&x, &y]).unwrap()).unwrap();
    c.bench_function("unbiased MMD 1000 vs 1000", |b| b.iter(|| mmd_unbiased(&k, black_box(&x), &y).unwrap().mmd2_unbiased));
}

fn kme(c: &mut Criterion) {
    let refs: Vec<Matrix> = lattice(50, 100).into_iter().map(|b| b.data).collect();
    let h = median_bandwidth(&refs.iter().collect::<Vec<_>>()).unwrap();
    let k = RbfKernel::new(h).unwrap();
    let mut g = c.benchmark_group("kme");
    g.sample_size(10);
    g.bench_function("basis 50 families x 100 points", |b| {
        b.iter(|| build_kme_basis(&k, black_box(&refs), 16).unwrap())
    });
    let basis = build_kme_basis(&k, &refs, 16).unwrap();
    g.bench_function("embed 100 points", |b| b.iter(|| basis.embed(black_box(&refs[0])).unwrap()));
    g.finish();
}

fn sampler(c: &mut Criterion) {
    let sde = SdeConfig::vp(0.1, 20.0);
    let mut g = c.benchmark_group("sampler");
    g.sample_size(10);
    g.bench_function("probability flow, analytic score, 1000 x 2, 200 steps", |b| {
        b.iter(|| {
            let mut score = |x: &Matrix, t: f64| Ok(sde.gaussian_score(0.0, 1.0, x, t));
            probability_flow_sample(&sde, &mut score, 1000, 2, 200, 8).unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, gemm, dsm_step, mmd, kme, sampler);
criterion_main!(benches);

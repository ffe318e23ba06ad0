use contragram::latent::{random_correlation, ClassDistribution};
use contragram::nce::{
    mc_nce_grad, mc_nce_grad_seq, mc_nce_loss, mc_nce_loss_seq, EvalMode, NCEConfig,
};
use contragram::LossSpec;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn bench_mc_loss(crit: &mut Criterion) {
    let mut group = crit.benchmark_group("mc_nce_loss");
    let spec = LossSpec::logistic(1.0).unwrap();
    for &(c, k) in &[(5usize, 4usize), (9, 32)] {
        let rho = ClassDistribution::uniform(c).unwrap();
        let z = random_correlation(c, 7).unwrap();
        let cfg = NCEConfig {
            k,
            mode: EvalMode::MonteCarlo,
            mc_samples: 100_000,
            seed: 11,
        };
        group.bench_with_input(BenchmarkId::new("parallel", format!("C{c}_k{k}")), &cfg, |b, cfg| {
            b.iter(|| mc_nce_loss(&z, &rho, k, &spec, cfg).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("sequential", format!("C{c}_k{k}")), &cfg, |b, cfg| {
            b.iter(|| mc_nce_loss_seq(&z, &rho, k, &spec, cfg).unwrap())
        });
    }
    group.finish();
}

fn bench_mc_grad(crit: &mut Criterion) {
    let mut group = crit.benchmark_group("mc_nce_grad");
    let spec = LossSpec::logistic(1.0).unwrap();
    let c = 7;
    let k = 8;
    let batch = 50_000;
    let rho = ClassDistribution::uniform(c).unwrap();
    let z = random_correlation(c, 7).unwrap();
    group.bench_function("parallel", |b| {
        b.iter(|| mc_nce_grad(&z, &rho, k, &spec, batch, 13).unwrap())
    });
    group.bench_function("sequential", |b| {
        b.iter(|| mc_nce_grad_seq(&z, &rho, k, &spec, batch, 13).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_mc_loss, bench_mc_grad);
criterion_main!(benches);

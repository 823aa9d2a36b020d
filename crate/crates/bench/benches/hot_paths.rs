use abinitio_core::diffcore::{record_and_backward, FinalTransform, Matrix, MlpSpec, Tape};
use abinitio_core::evaluation::ess_single_chain;
use abinitio_core::kernels::{run_chains, MhKernel};
use abinitio_core::objectives::{estimate, Objective};
use abinitio_core::proposals::{DataShift, MultiSchemeNets, Proposal};
use abinitio_core::targets::Target;
use abinitio_core::SeededRng;
use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

fn normal_matrix(rows: usize, cols: usize, rng: &mut SeededRng) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| StandardNormal.sample(&mut *rng)).collect())
}

fn tape(c: &mut Criterion) {
    let mut rng = SeededRng::seed_from_u64(0);
    let w = normal_matrix(64, 64, &mut rng);
    let params: Vec<f64> = (0..64).map(|_| StandardNormal.sample(&mut rng)).collect();
    c.bench_function("tape/matmul_chain_64", |b| {
        b.iter(|| {
            record_and_backward(black_box(&params), |t, p| {
                let h = t.matmul(p, t.constant(w.clone()));
                let h = t.matmul(t.exp(t.mul(h, h)), t.constant(w.clone()));
                Ok(t.sum(t.square(h)))
            })
            .unwrap()
        })
    });

    let spec = MlpSpec::new(2, 16, 2, 2, FinalTransform::Identity).unwrap();
    let params = spec.init(&mut rng, false);
    let x = normal_matrix(800, 2, &mut rng);
    c.bench_function("tape/mlp_16x2_batch800", |b| {
        b.iter(|| {
            let t = Tape::new();
            let out = spec.record(&t, &params, 0, t.constant(x.clone())).unwrap();
            let loss = t.sum(t.square(out));
            t.backward(loss).unwrap()
        })
    });
}

fn objectives(c: &mut Criterion) {
    let mut rng = SeededRng::seed_from_u64(1);
    let target = Target::iso_gaussian(100).unwrap();
    let rwm = Proposal::iso_rwm(100, 0.1).unwrap();
    let starts = normal_matrix(1, 100, &mut rng);
    c.bench_function("objective/ab_initio_rwm_d100_n50", |b| {
        b.iter(|| estimate(&Objective::ab_initio(), &target, &rwm, &starts, 50, &mut rng).unwrap())
    });

    let cross = Target::cross();
    let flow = Proposal::multischeme(2, MultiSchemeNets::cross(8), DataShift::Absolute, &mut rng).unwrap();
    let starts = normal_matrix(8, 2, &mut rng);
    c.bench_function("objective/ab_initio_multischeme_cross_m8_n100", |b| {
        b.iter(|| estimate(&Objective::ab_initio(), &cross, &flow, &starts, 100, &mut rng).unwrap())
    });
}

fn kernels(c: &mut Criterion) {
    let mut rng = SeededRng::seed_from_u64(2);
    let target = Target::iso_gaussian(100).unwrap();
    let proposal = Proposal::iso_mala(100, 0.3).unwrap();
    let kernel = MhKernel::new(&target, &proposal);
    let starts = normal_matrix(1, 100, &mut rng);
    c.bench_function("kernel/mala_d100_1000_steps", |b| {
        b.iter(|| run_chains(&kernel, &starts, 1000, 7, &mut rng).unwrap())
    });
}

fn ess(c: &mut Criterion) {
    let mut rng = SeededRng::seed_from_u64(3);
    c.bench_function("evaluation/ess_ar1_100k", |b| {
        b.iter_batched(
            || {
                let mut x = 0.0;
                (0..100_000)
                    .map(|_| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        x = 0.9 * x + e;
                        x
                    })
                    .collect::<Vec<f64>>()
            },
            |series| ess_single_chain(&series).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

criterion_group!(benches, tape, objectives, kernels, ess);
criterion_main!(benches);

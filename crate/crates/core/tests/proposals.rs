mod common;

use abinitio_core::diffcore::{Matrix, Tape};
use abinitio_core::proposals::{
    read_checkpoint, write_checkpoint, AugmentedProposal, DataShift, MultiSchemeNets, Noise, Proposal, ProposalKind,
};
use abinitio_core::targets::Target;
use abinitio_core::Error;
use common::*;
use proptest::prelude::*;
use rand::Rng;

fn jittered(mut p: Proposal, scale: f64, seed: u64) -> Proposal {
    let mut r = rng(seed);
    p.params.iter_mut().for_each(|v| *v += scale * r.random_range(-1.0..1.0));
    p
}

fn cross_centers() -> Vec<Vec<f64>> {
    vec![vec![4.0, 0.0], vec![-4.0, 0.0], vec![0.0, 4.0], vec![0.0, -4.0]]
}

/// Two-dimensional proposals with generic (non-initial) parameters.
fn two_dim_cases() -> Vec<(&'static str, Target, Proposal)> {
    let mut r = rng(1);
    let cross = Target::cross();
    let g2 = Target::iso_gaussian(2).unwrap();
    vec![
        ("iso_rwm", g2.clone(), Proposal::iso_rwm(2, 0.7).unwrap()),
        ("iso_mala", Target::iso_cauchy(2).unwrap(), Proposal::iso_mala(2, 0.3).unwrap()),
        ("precond_rwm", g2.clone(), jittered(Proposal::precond_rwm(2, 0.5).unwrap(), 0.3, 2)),
        ("precond_mala", g2.clone(), jittered(Proposal::precond_mala(2, 0.5).unwrap(), 0.3, 3)),
        ("position_mixture", cross.clone(), jittered(Proposal::position_mixture(2, 8, 2, &cross_centers(), &mut r).unwrap(), 0.1, 4)),
        (
            "multi_scheme",
            cross.clone(),
            jittered(Proposal::multischeme(2, MultiSchemeNets::cross(3), DataShift::Residual, &mut r).unwrap(), 0.05, 5),
        ),
        (
            "multi_scheme_absolute",
            cross.clone(),
            jittered(Proposal::multischeme(2, MultiSchemeNets::cross(3), DataShift::Absolute, &mut r).unwrap(), 0.05, 6),
        ),
        ("resampling_flow", cross.clone(), jittered(Proposal::resampling_flow(2, 3, 6, 2, &mut r).unwrap(), 0.1, 7)),
        ("exact_resampler", cross, Proposal::exact_resampler(2).unwrap()),
    ]
}

/// log g(point | x) for every row of `points`.
fn log_density_rows(p: &Proposal, t: &Target, x: &[f64], points: &Matrix) -> Vec<f64> {
    let tape = Tape::new();
    let from = tape.constant(Matrix::from_rows(&vec![x.to_vec(); points.rows]));
    let to = tape.constant(points.clone());
    let v = p.record_log_density(&tape, t, from, to).unwrap();
    let out = tape.value(v).data.clone();
    out
}

fn grid(lo: f64, hi: f64, n: usize) -> (Matrix, f64) {
    let xs = linspace(lo, hi, n);
    let rows: Vec<Vec<f64>> = xs.iter().flat_map(|&a| xs.iter().map(move |&b| vec![a, b])).collect();
    (Matrix::from_rows(&rows), xs[1] - xs[0])
}

#[test]
fn rwm_draws_have_the_step_size_as_scale() {
    let t = Target::iso_gaussian(2).unwrap();
    let p = Proposal::iso_rwm(2, 0.5).unwrap();
    let starts = Matrix::from_rows(&vec![vec![1.0, 1.0]; 100_000]);
    let d = p.propose_batch(&t, &starts, &mut rng(2)).unwrap();
    for j in 0..2 {
        let c = column(&d.x_prime, j);
        let sd = variance(&c).sqrt();
        assert!((0.497..=0.503).contains(&sd), "{sd}");
        assert!((mean(&c) - 1.0).abs() < 5.0 * 0.5 / (c.len() as f64).sqrt());
    }
    assert!(p.log_density(&Target::iso_gaussian(1).unwrap(), &[0.0], &[0.0]).is_err());
    let unit = Proposal::iso_rwm(1, 1.0).unwrap();
    assert!((unit.log_density(&Target::iso_gaussian(1).unwrap(), &[0.0], &[0.0]).unwrap() + 0.918_938_5).abs() < 1e-7);
}

#[test]
fn mala_draws_are_centred_on_the_langevin_step() {
    let t = Target::iso_gaussian(1).unwrap();
    let p = Proposal::iso_mala(1, 0.1).unwrap();
    let starts = Matrix::from_rows(&vec![vec![1.0]; 100_000]);
    let c = p.propose_batch(&t, &starts, &mut rng(3)).unwrap().x_prime.data;
    let sd = 0.2f64.sqrt();
    assert!((mean(&c) - 0.9).abs() < 5.0 * sd / (c.len() as f64).sqrt());
    assert!((variance(&c) - 0.2).abs() < 5.0 * 0.2 * (2.0 / c.len() as f64).sqrt());
    assert!(p.uses_gradient() && !Proposal::iso_rwm(1, 0.1).unwrap().uses_gradient());
}

fn multischeme_with(shift: DataShift, log_sigma_d: f64, seed: u64) -> Proposal {
    let mut p = Proposal::multischeme(2, MultiSchemeNets::cross(4), shift, &mut rng(seed)).unwrap();
    let ProposalKind::MultiScheme(spec) = &p.kind else { unreachable!() };
    let lay = spec.layout();
    let bias_end = lay.log_sigma_d + spec.log_sigma_d.n_params();
    // identity flow
    p.params[lay.flow..].iter_mut().for_each(|v| *v = 0.0);
    p.params[bias_end - 2..bias_end].iter_mut().for_each(|v| *v = log_sigma_d);
    p
}

fn assert_same_draws(a: &Proposal, b: &Proposal, t: &Target, seed: u64) {
    let mut r = rng(seed);
    let starts = Matrix::from_rows(&(0..100).map(|_| vec![r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)]).collect::<Vec<_>>());
    let noise = a.sample_noise(t, 100, &mut r).unwrap();
    let draws = |p: &Proposal, noise: &Noise| {
        let tape = Tape::new();
        let b = p.record_batch(&tape, t, &starts, 1, noise).unwrap();
        let out = (tape.value(b.x_prime).data.clone(), tape.value(b.log_fwd).data.clone(), tape.value(b.log_rev).data.clone());
        out
    };
    let (xa, fa, ra) = draws(a, &noise);
    let (xb, fb, rb) = draws(b, &noise);
    for (u, v) in xa.iter().zip(&xb).chain(fa.iter().zip(&fb)).chain(ra.iter().zip(&rb)) {
        assert!((u - v).abs() < 1e-10, "{u} vs {v}");
    }
}

#[test]
fn multischeme_recovers_rwm() {
    let t = Target::cross();
    let tau = 0.6f64;
    let ms = multischeme_with(DataShift::Residual, tau.ln(), 8);
    assert_same_draws(&ms, &Proposal::iso_rwm(2, tau).unwrap(), &t, 9);
}

#[test]
fn multischeme_recovers_mala() {
    let t = Target::cross();
    let tau = 0.4f64;
    let ms = multischeme_with(DataShift::Langevin { tau }, (2.0 * tau).sqrt().ln(), 10);
    assert_same_draws(&ms, &Proposal::iso_mala(2, tau).unwrap(), &t, 11);
}

#[test]
fn multischeme_recovers_iid_resampling_of_a_gaussian() {
    let t = Target::iso_gaussian(2).unwrap();
    let ms = multischeme_with(DataShift::Absolute, 0.0, 12);
    let mut r = rng(13);
    for _ in 0..100 {
        let x = [r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)];
        let d = ms.sample(&t, &x, &mut r).unwrap();
        assert!(d.pathwise);
        assert!((d.log_density - t.log_density(&d.value).unwrap()).abs() < 1e-10);
        assert!((ms.log_density(&t, &d.value, &x).unwrap() - t.log_density(&x).unwrap()).abs() < 1e-10);
    }
}

#[test]
fn densities_integrate_to_one() {
    for (name, t, p) in two_dim_cases() {
        let x = [0.7, -0.4];
        let (pts, h) = grid(-14.0, 14.0, 561);
        let total: f64 = log_density_rows(&p, &t, &x, &pts).iter().map(|v| v.exp()).sum::<f64>() * h * h;
        assert!((total - 1.0).abs() < 2e-3, "{name}: {total}");
    }
}

#[test]
fn sampled_marginals_agree_with_the_density() {
    for (k, (name, t, p)) in two_dim_cases().into_iter().enumerate() {
        let x = [0.7, -0.4];
        let starts = Matrix::from_rows(&vec![x.to_vec(); 100_000]);
        let draws = p.propose_batch(&t, &starts, &mut rng(20 + k as u64)).unwrap().x_prime;
        let first = column(&draws, 0);
        let lo = first.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = first.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let edges = linspace(lo, hi, 31);
        let ys = linspace(-16.0, 16.0, 641);
        let hy = ys[1] - ys[0];
        // marginal density of the first coordinate by integrating out the second
        let marginal = |a: f64| {
            let pts = Matrix::from_rows(&ys.iter().map(|&b| vec![a, b]).collect::<Vec<_>>());
            log_density_rows(&p, &t, &x, &pts).iter().map(|v| v.exp()).sum::<f64>() * hy
        };
        // the marginal is expensive, so use a coarser rule than the shared oracle
        let probs: Vec<f64> = edges.windows(2).map(|w| simpson(&marginal, w[0], w[1], 24)).collect();
        let pv = chi_squared_p_binned(&first, &edges, &probs);
        assert!(pv > 1e-3, "{name}: p = {pv}");
    }
}

#[test]
fn checkpoints_round_trip_for_every_kind() {
    let mut cases = two_dim_cases();
    cases.push(("pushforward", Target::cross(), Proposal::pushforward(Proposal::iso_rwm(2, 0.3).unwrap())));
    for (name, _, p) in cases {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p, 42, 0).unwrap();
        let (back, header) = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, p, "{name}");
        assert_eq!((header.seed, header.n_params, header.dim), (42, p.n_params(), 2));
    }
    let mut bad = Vec::new();
    write_checkpoint(&mut bad, &Proposal::iso_rwm(2, 0.3).unwrap(), 0, 0).unwrap();
    bad[0] = b'X';
    assert!(matches!(read_checkpoint(bad.as_slice()), Err(Error::Io(_))));
}

#[test]
fn pushforward_proposal_is_the_transported_inner_proposal() {
    let mut r = rng(30);
    let a = random_well_conditioned(2, 10.0, &mut r);
    let b = vec![0.5, -1.0];
    let base = Target::iso_gaussian(2).unwrap();
    let t = Target::affine_pushforward(base.clone(), a.clone(), b.clone()).unwrap();
    let inner = Proposal::iso_mala(2, 0.3).unwrap();
    let p = Proposal::pushforward(inner.clone());
    let push = |x: &[f64]| a.matvec(x).iter().zip(&b).map(|(u, c)| u + c).collect::<Vec<f64>>();
    for _ in 0..50 {
        let x = [r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)];
        let y = [r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)];
        let lhs = p.log_density(&t, &push(&x), &push(&y)).unwrap();
        let rhs = inner.log_density(&base, &x, &y).unwrap() - a.determinant().abs().ln();
        assert!((lhs - rhs).abs() < 1e-10);
    }
    assert!(matches!(p.log_density(&base, &[0.0, 0.0], &[1.0, 1.0]), Err(Error::Config(_))));
}

#[test]
fn augmented_proposal_targets_the_joint_gaussian() {
    let aug = AugmentedProposal::new(Proposal::iso_rwm(4, 0.5).unwrap(), 2).unwrap();
    let joint = aug.joint_target(Target::iso_gaussian(2).unwrap()).unwrap();
    let g4 = Target::iso_gaussian(4).unwrap();
    let x = [0.1, 0.2, -0.3, 0.4];
    assert_eq!(joint.log_density(&x).unwrap(), g4.log_density(&x).unwrap());
    assert!(AugmentedProposal::new(Proposal::iso_rwm(4, 0.5).unwrap(), 4).is_err());
    assert!(aug.joint_target(Target::iso_gaussian(3).unwrap()).is_err());
}

#[test]
fn mixture_weights_are_a_softmax() {
    let mut r = rng(31);
    let p = jittered(Proposal::position_mixture(2, 8, 2, &cross_centers(), &mut r).unwrap(), 0.5, 32);
    let ProposalKind::PositionMixture { weights, .. } = &p.kind else { unreachable!() };
    for _ in 0..20 {
        let x = [r.random_range(-5.0..5.0), r.random_range(-5.0..5.0)];
        let w = weights.apply(&p.params, &x).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12 && w.iter().all(|v| *v > 0.0));
    }
}

#[test]
fn configuration_errors() {
    let mut r = rng(33);
    assert!(matches!(Proposal::multischeme(3, MultiSchemeNets::cross(8), DataShift::Residual, &mut r), Err(Error::Config(_))));
    assert!(matches!(Proposal::iso_rwm(0, 1.0), Err(Error::Config(_))));
    let p = Proposal::iso_rwm(2, 1.0).unwrap();
    assert!(matches!(p.sample(&Target::iso_gaussian(3).unwrap(), &[0.0; 3], &mut r), Err(Error::Shape(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn log_densities_are_finite(x in proptest::collection::vec(-50.0f64..50.0, 2), y in proptest::collection::vec(-50.0f64..50.0, 2)) {
        for (name, t, p) in two_dim_cases() {
            let v = p.log_density(&t, &x, &y).unwrap();
            prop_assert!(v.is_finite(), "{} gave {}", name, v);
        }
    }
}

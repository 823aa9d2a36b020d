//! Acceptance suite: one line per criterion, with sub-checks indented below.
//! Set `ACCEPTANCE_ONLY=2,5` to run a subset.

mod common;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use abinitio_core::diffcore::{record_and_backward, Matrix, NiceFlowSpec, Tape};
use abinitio_core::evaluation::*;
use abinitio_core::kernels::{hmc_reference_chain, run_chains, HmcSpec, MhKernel};
use abinitio_core::objectives::{combine, estimate, estimate_with_noise, Gsm, Objective, Scaling};
use abinitio_core::proposals::{DataShift, MultiSchemeNets, Proposal};
use abinitio_core::targets::{LogisticDataset, Target};
use abinitio_core::training::*;
use common::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

struct Check {
    name: String,
    pass: bool,
    detail: String,
}

fn check(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Check {
    Check { name: name.into(), pass, detail: detail.into() }
}

fn draws(t: &Target, m: usize, seed: u64) -> Matrix {
    StartSource::Direct.sample(t, m, &mut rng(seed)).unwrap()
}

fn min_ess(r: &MetricsReport) -> f64 {
    r.ess_first_per_proposal.min.min(r.ess_second_per_proposal.min)
}

/// Acceptance rate and MSJD per replicate for one verification cell: M=1,
/// N=50, 20000 Adam steps, then 25000 single proposals from fresh π draws.
struct Cell {
    acc: Vec<f64>,
    msjd: Vec<f64>,
    elapsed: Duration,
}

fn verification_cell(target: &Target, initial: &Proposal, objective: &Objective, replicates: usize, base_seed: u64) -> Cell {
    let start = Instant::now();
    let (mut acc, mut msjd) = (Vec::new(), Vec::new());
    for r in 0..replicates {
        let seed = replicate_seed(base_seed, r, 0);
        let spec = TrainSpec { learning_rate: default_learning_rate(target), ..TrainSpec::verification(20_000, seed) };
        let out = optimize(&spec, objective, target, initial, &StartSource::Direct, 0).unwrap();
        let mut g = rng(replicate_seed(base_seed, r, 1));
        let starts = StartSource::Direct.sample(target, 25_000, &mut g).unwrap();
        let (a, m) = single_step_metrics(&MhKernel::new(target, &out.proposal), &starts, &mut g).unwrap();
        acc.push(a);
        msjd.push(m);
    }
    Cell { acc, msjd, elapsed: start.elapsed() }
}

fn summary(v: &[f64]) -> (f64, f64, String) {
    let (m, se) = replicate_stats(v).unwrap();
    (m, se, format_mean_se(m, se))
}

fn acceptance_check(name: &str, cell: &Cell, expect: f64, tol: f64) -> Check {
    let (m, _, s) = summary(&cell.acc);
    check(format!("{name} acceptance"), (m - expect).abs() <= tol, format!("{s} vs {expect} ± {tol:.3}"))
}

fn c1() -> Vec<Check> {
    let d = 1000;
    let start = Instant::now();
    let reference = FitReference {
        target: Target::iso_gaussian(d).unwrap(),
        initial_proposal: Proposal::iso_rwm(d, 1.0 / (d as f64).sqrt()).unwrap(),
        target_acceptance: 0.234,
        source: StartSource::Direct,
        aux: 0,
    };
    let mut spec = FitSpec::secant(reference, TrainSpec::verification(20_000, 1), 0.25);
    spec.tolerance_on_alpha = 0.003;
    let out = fit_coefficient(&spec).unwrap();
    let probes: Vec<String> = out.probes.iter().map(|p| format!("{:.4}→{:.4}", p.a, p.alpha)).collect();
    let elapsed = start.elapsed();
    vec![
        check("A ∈ [0.17, 0.19]", (0.17..=0.19).contains(&out.a), format!("A = {:.5}, probes {}", out.a, probes.join(" "))),
        check("runtime ≤ 2 h", elapsed <= Duration::from_secs(7200), format!("{elapsed:.0?}")),
    ]
}

fn c2() -> Vec<Check> {
    let d = 100;
    let tau0 = 1.0 / (d as f64).sqrt();
    let rwm = Proposal::iso_rwm(d, tau0).unwrap();
    let cells = [
        ("RWM/Gaussian", Target::iso_gaussian(d).unwrap(), rwm.clone(), 0.246, 0.002, 1.32),
        ("MALA/Gaussian", Target::iso_gaussian(d).unwrap(), Proposal::iso_mala(d, tau0).unwrap(), 0.546, 0.005, 38.6),
        ("RWM/Uniform", Target::stabilized_uniform(d).unwrap(), rwm.clone(), 0.146, 0.009, 8.2e-3),
        ("RWM/Laplace", Target::iso_laplace(d).unwrap(), rwm.clone(), 0.231, 0.004, 1.47),
        ("RWM/Cauchy", Target::iso_cauchy(d).unwrap(), rwm, 0.237, 0.003, 2.72),
    ];
    let mut out = Vec::new();
    for (k, (name, t, p, acc, se, msjd)) in cells.into_iter().enumerate() {
        let cell = verification_cell(&t, &p, &Objective::ab_initio(), 5, 200 + k as u64);
        let tol = (3.0f64 * se).max(0.015);
        out.push(acceptance_check(name, &cell, acc, tol));
        let (m, _, s) = summary(&cell.msjd);
        out.push(check(format!("{name} MSJD"), ((m - msjd) / msjd).abs() <= 0.05, format!("{s} vs {msjd} ± 5%")));
        out.push(check(format!("{name} time ≤ 15 min"), cell.elapsed <= Duration::from_secs(900), format!("{:.0?}", cell.elapsed)));
    }
    out
}

fn c3() -> Vec<Check> {
    let d = 1000;
    let cell = verification_cell(
        &Target::iso_gaussian(d).unwrap(),
        &Proposal::iso_rwm(d, 1.0 / (d as f64).sqrt()).unwrap(),
        &Objective::ab_initio(),
        5,
        300,
    );
    vec![acceptance_check("RWM/Gaussian d=1000", &cell, 0.233, 0.015)]
}

fn c4() -> Vec<Check> {
    let d = 100;
    let t = Target::iso_gaussian(d).unwrap();
    let p = Proposal::iso_rwm(d, 1.0 / (d as f64).sqrt()).unwrap();
    let gsm = |target_alpha| Objective::Gsm(Gsm { beta: 1.0 / d as f64, rho_beta: 0.02, target_alpha });
    let cases = [
        ("MSJD", Objective::Msjd, 0.237, 0.02),
        ("GSM-30", gsm(0.3), 0.3, 0.02),
        ("GSM-60", gsm(0.6), 0.6, 0.02),
        ("GSM-90", gsm(0.9), 0.9, 0.02),
        ("L2HMC", Objective::L2hmc { sigma_min_sq: 1.0 }, 0.587, 0.03),
    ];
    cases
        .into_iter()
        .enumerate()
        .map(|(k, (name, obj, expect, tol))| acceptance_check(name, &verification_cell(&t, &p, &obj, 5, 400 + k as u64), expect, tol))
        .collect()
}

/// Acceptance, MSJD and min-ESS per proposal averaged over 5 replicate
/// measurements, each 5 chains × 1000 proposals from fresh π draws.
fn cross_metrics(t: &Target, p: &Proposal, seed: u64) -> (f64, f64, f64) {
    let kernel = MhKernel::new(t, p);
    let reports: Vec<MetricsReport> =
        (0..5).map(|r| measure(&kernel, &draws(t, 5, replicate_seed(seed, r, 0)), 1000, replicate_seed(seed, r, 1), r).unwrap()).collect();
    let avg = |f: &dyn Fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / reports.len() as f64;
    (avg(&|r| r.acceptance_rate), avg(&|r| r.msjd), avg(&min_ess))
}

fn train_cross(objective: &Objective, shift: DataShift, seed: u64) -> Proposal {
    let t = Target::cross();
    let p = Proposal::multischeme(2, MultiSchemeNets::cross(8), shift, &mut rng(seed)).unwrap();
    let spec = TrainSpec {
        algorithm: Algorithm::OfflineSampling,
        n_steps: 20_000,
        m_starts: 8,
        n_draws: 100,
        learning_rate: 3e-4,
        seed,
        restart: None,
    };
    optimize(&spec, objective, &t, &p, &StartSource::Direct, 0).unwrap().proposal
}

/// Train up to three seeds, stopping at the first that meets `ok`.
fn best_of_three(
    objective: &Objective,
    shift: DataShift,
    base: u64,
    ok: impl Fn(f64, f64, f64) -> bool,
) -> (bool, Vec<String>) {
    let t = Target::cross();
    let mut tried = Vec::new();
    for k in 0..3 {
        let seed = replicate_seed(base, 0, k);
        let (acc, msjd, ess) = cross_metrics(&t, &train_cross(objective, shift, seed), seed);
        tried.push(format!("seed {seed}: acc {acc:.3} MSJD {msjd:.2} min-ESS {ess:.4}"));
        if ok(acc, msjd, ess) {
            return (true, tried);
        }
    }
    (false, tried)
}

fn c5() -> Vec<Check> {
    let start = Instant::now();
    let t = Target::cross();
    let (_, baseline, _) = cross_metrics(&t, &Proposal::exact_resampler(2).unwrap(), 500);
    let mut out = vec![check("i.i.d. resample MSJD = 34.4 ± 1.0", (baseline - 34.4).abs() <= 1.0, format!("{baseline:.2}"))];
    let (pass, tried) = best_of_three(&Objective::ab_initio(), DataShift::Absolute, 510, |_, msjd, ess| {
        ess >= 0.15 && (15.0..=30.0).contains(&msjd)
    });
    out.push(check("Ab Initio: min-ESS ≥ 0.15 and MSJD ∈ [15, 30]", pass, tried.join("; ")));
    let (pass, tried) =
        best_of_three(&Objective::Msjd, DataShift::Residual, 520, |_, msjd, ess| msjd >= 1.5 * baseline && ess <= 0.01);
    out.push(check(format!("MSJD objective: MSJD ≥ {:.1} and min-ESS ≤ 0.01", 1.5 * baseline), pass, tried.join("; ")));
    let elapsed = start.elapsed();
    out.push(check("total ≤ 3 h", elapsed <= Duration::from_secs(3 * 3600), format!("{elapsed:.0?}")));
    out
}

fn c6() -> Vec<Check> {
    let base = Target::cross();
    let mut r = rng(600);
    let mut p = Proposal::multischeme(2, MultiSchemeNets::cross(3), DataShift::Residual, &mut r).unwrap();
    p.params.iter_mut().for_each(|v| *v += 0.05 * r.random_range(-1.0..1.0));
    let q = Proposal::pushforward(p.clone());
    let (m, n) = (1000, 100);
    let s = draws(&base, m, 601);
    let mut out = Vec::new();
    for k in 0..5 {
        let a = random_well_conditioned(2, 10.0, &mut r);
        let b = vec![r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)];
        let pushed = Target::affine_pushforward(base.clone(), a.clone(), b.clone()).unwrap();
        let ps = Matrix::from_rows(
            &(0..s.rows).map(|i| a.matvec(s.row(i)).iter().zip(&b).map(|(u, c)| u + c).collect()).collect::<Vec<Vec<f64>>>(),
        );
        let noise = p.sample_noise(&base, m * n, &mut r).unwrap();
        let e1 = estimate_with_noise(&Objective::ab_initio(), &base, &p, &s, n, &noise).unwrap();
        let e2 = estimate_with_noise(&Objective::ab_initio(), &pushed, &q, &ps, n, &noise).unwrap();
        let se = (e1.loss_se.powi(2) + e2.loss_se.powi(2)).sqrt();
        let diff = (e1.value - e2.value).abs();
        out.push(check(format!("map {k}"), diff < 3.0 * se, format!("|Δ| = {diff:.2e}, 3 SE = {:.2e}", 3.0 * se)));
    }
    out
}

fn c7() -> Vec<Check> {
    let t = Target::cross();
    let exact = Proposal::exact_resampler(2).unwrap();
    let mut wide = exact.clone();
    wide.params[0] = 1.3f64.ln();
    let s = draws(&t, 1000, 700);
    let alt = |a| Objective::AbInitio { a, scaling: Scaling::LinearD };
    let objectives = vec![
        ("ab initio", Objective::ab_initio()),
        ("ab initio + 1·(−log α)", combine(vec![Objective::ab_initio(), Objective::NegLogAlpha], vec![1.0, 1.0]).unwrap()),
        ("0.5·KL + 2·(−log α)", combine(vec![Objective::KlTerm, Objective::NegLogAlpha], vec![0.5, 2.0]).unwrap()),
        ("0.3·A=0.25324 + 0.7·A=0.2151", combine(vec![alt(0.25324), alt(0.2151)], vec![0.3, 0.7]).unwrap()),
        (
            "2·ab initio + 0.1·(d log d) + 1·KL",
            combine(
                vec![Objective::ab_initio(), Objective::AbInitio { a: 0.18125, scaling: Scaling::DLogD }, Objective::KlTerm],
                vec![2.0, 0.1, 1.0],
            )
            .unwrap(),
        ),
    ];
    objectives
        .into_iter()
        .map(|(name, o)| {
            let a = estimate(&o, &t, &exact, &s, 100, &mut rng(701)).unwrap();
            let b = estimate(&o, &t, &wide, &s, 100, &mut rng(702)).unwrap();
            let gap = b.loss - a.loss;
            let se = (a.loss_se.powi(2) + b.loss_se.powi(2)).sqrt();
            check(name, gap > 3.0 * se, format!("gap {gap:.4}, 3 SE {:.4}", 3.0 * se))
        })
        .collect()
}

fn c8() -> Vec<Check> {
    let mut out = Vec::new();
    let mut r = rng(800);

    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let e = random_expr(&mut r, 4, 4);
        let p: Vec<f64> = (0..4).map(|_| r.random_range(-1.5..1.5)).collect();
        let (_, g) = record_and_backward(&p, |t, pv| Ok(t.sum(record(&e, t, pv)))).unwrap();
        worst = worst.max(max_rel_err(&g, &fd_gradient(|q| eval(&e, q), &p, 1e-5), 1e-3));
    }
    out.push(check("gradients of 20 random composites", worst < 1e-6, format!("max rel err {worst:.2e}")));

    let flow = NiceFlowSpec::new(6, 8, 16, 3).unwrap();
    let params = flow.init(&mut r, false);
    let z = Matrix::new(200, 6, (0..1200).map(|_| 3.0 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r)).collect());
    let tape = Tape::new();
    let (x, _) = flow.forward(&tape, &params, 0, tape.constant(z.clone())).unwrap();
    let back = flow.inverse(&tape, &params, 0, x).unwrap();
    let err = tape.value(back).data.iter().zip(&z.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    out.push(check("NICE round trip", err < 1e-10, format!("max abs err {err:.2e}")));

    let n = 100_000;
    let iid: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
    let ratio = ess_single_chain(&iid).unwrap() / n as f64;
    out.push(check("i.i.d. ESS ∈ [0.9, 1.1]·N", (0.9..=1.1).contains(&ratio), format!("ESS/N = {ratio:.4}")));

    for rho in [0.5f64, 0.9] {
        let mut prev = 0.0;
        let ar: Vec<f64> = (0..n)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut r);
                prev = rho * prev + (1.0 - rho * rho).sqrt() * e;
                prev
            })
            .collect();
        let expect = (1.0 - rho) / (1.0 + rho);
        let ratio = ess_single_chain(&ar).unwrap() / n as f64;
        let rel = (ratio - expect).abs() / expect;
        out.push(check(format!("AR(1) ρ={rho} ESS within 10%"), rel <= 0.1, format!("ESS/N = {ratio:.4} vs {expect:.4}")));
    }

    for d in [1usize, 5, 50] {
        let t = Target::iso_gaussian(d).unwrap();
        let traces = run_chains(&MhKernel::new(&t, &Proposal::exact_resampler(d).unwrap()), &draws(&t, 20_000, 810 + d as u64), 1, 0, &mut r)
            .unwrap();
        let jumps: Vec<f64> = traces.iter().map(|tr| tr.proposed_sq_jumps[0]).collect();
        let (_, msjd) = acceptance_and_msjd(&traces).unwrap();
        let se = sem(&jumps);
        out.push(check(format!("resampler MSJD d={d}"), (msjd - 2.0 * d as f64).abs() < 3.0 * se, format!("{msjd:.3} vs {} ± {:.3}", 2 * d, 3.0 * se)));
    }
    out
}

fn c9() -> Vec<Check> {
    let t = Target::logistic(LogisticDataset::synthetic(200, 9, 5));
    let d = t.dim();
    let h = hmc_reference_chain(&t, &HmcSpec::default(), &vec![0.0; d], 100_000, 2000, 900, &mut rng(900)).unwrap();
    let source = StartSource::Trace(Arc::new(h.trace.states));
    let initial = Proposal::precond_mala(d, 0.01).unwrap();
    let run = |algorithm: Algorithm| -> Vec<f64> {
        (0..2)
            .map(|s| {
                let spec = TrainSpec { algorithm, n_steps: 4000, m_starts: 8, n_draws: 100, learning_rate: 1e-3, seed: 910 + s, restart: None };
                let out = optimize(&spec, &Objective::ab_initio(), &t, &initial, &source, 0).unwrap();
                let starts = source.sample(&t, 5, &mut rng(920 + s)).unwrap();
                min_ess(&measure(&MhKernel::new(&t, &out.proposal), &starts, 5000, 930 + s, 0).unwrap())
            })
            .collect()
    };
    let a1 = run(Algorithm::OfflineSampling);
    let a2 = run(Algorithm::OnlineAdaptation);
    let (m1, m2) = (mean(&a1), mean(&a2));
    let rel = (m2 - m1).abs() / m1;
    vec![check(
        format!("d={d} min-ESS within 25%"),
        rel <= 0.25,
        format!("Algorithm 1 {a1:.4?} (mean {m1:.4}), Algorithm 2 {a2:.4?} (mean {m2:.4}), rel diff {rel:.3}"),
    )]
}

fn c10() -> Vec<Check> {
    let d = 10;
    let t = Target::iso_gaussian(d).unwrap();
    let tau0 = 1.0 / (d as f64).sqrt();
    let tuned = |p: Proposal, seed| optimize(&TrainSpec::verification(20_000, seed), &Objective::ab_initio(), &t, &p, &StartSource::Direct, 0).unwrap().proposal;
    let schemes = [
        ("exact resampler", Proposal::exact_resampler(d).unwrap()),
        ("tuned MALA", tuned(Proposal::iso_mala(d, tau0).unwrap(), 1000)),
        ("tuned RWM", tuned(Proposal::iso_rwm(d, tau0).unwrap(), 1001)),
    ];
    let score_starts = draws(&t, 2000, 1002);
    let chain_starts = draws(&t, 5, 1003);
    let scores: Vec<f64> = schemes.iter().map(|(_, p)| ab_initio_score(&t, p, &score_starts, 20, &mut rng(1004)).unwrap().0).collect();
    let ess: Vec<f64> = schemes.iter().map(|(_, p)| min_ess(&measure(&MhKernel::new(&t, p), &chain_starts, 5000, 1005, 0).unwrap())).collect();
    let names: Vec<&str> = schemes.iter().map(|s| s.0).collect();
    vec![
        check("score: resampler < MALA < RWM", scores[0] < scores[1] && scores[1] < scores[2], format!("{names:?} scores {scores:.3?}")),
        check("min-ESS agrees", ess[0] > ess[1] && ess[1] > ess[2], format!("min-ESS {ess:.3?}")),
    ]
}

fn main() {
    let only: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Vec<Check>); 10] = [
        (1, "coefficient fit on RWM/Gaussian d=1000", c1),
        (2, "verification table at d=100", c2),
        (3, "RWM/Gaussian d=1000 acceptance", c3),
        (4, "baseline objectives on RWM/Gaussian d=100", c4),
        (5, "cross target multi-scheme pathology", c5),
        (6, "representation invariance", c6),
        (7, "properness surrogate", c7),
        (8, "numerical oracles", c8),
        (9, "online adaptation matches offline sampling", c9),
        (10, "scheme comparison ordering on Gaussian d=10", c10),
    ];
    let (mut ran, mut passed) = (0, 0);
    for (n, title, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let checks = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            vec![check("run", false, format!("panicked: {}", msg.unwrap_or_default()))]
        });
        let pass = checks.iter().all(|c| c.pass);
        ran += 1;
        passed += pass as usize;
        println!("C{n} {} {title} [{:.0?}]", if pass { "PASS" } else { "FAIL" }, start.elapsed());
        for c in &checks {
            println!("    {} {}: {}", if c.pass { "ok  " } else { "FAIL" }, c.name, c.detail);
        }
        std::io::stdout().flush().unwrap();
    }
    println!("acceptance: {passed}/{ran} criteria passed");
    if passed < ran {
        std::process::exit(1);
    }
}

//! Acceptance criteria. Each test prints one `criterion N ...: PASS|FAIL` line.

use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use cpflow::cornercheck::{choi_min_eig, hypermax_witness, subordination_check, WeightSource, CP_TOLERANCE};
use cpflow::gauge::{
    action_sweep, associativity_residual, min_r, pair_reachable, random_param, unit_reachable, AllowedSet,
    GaugeClass, GaugeParam, Reachability,
};
use cpflow::halfline::{inner_product, inner_product_from, orthonormalize};
use cpflow::semigroups::{covariance_gram, covariance_residual, evolved_gram, min_eigenvalue, observed_orders};
use cpflow::tensorspace::{delta_pairing, HVector, TailMemo};
use cpflow::weights::{
    delta_free_functional, generalized_boundary_rep, lemma_decay_curve, omega1, xi_from_nu, HFunctional, OmegaSpec,
};
use cpflow::{
    BoundaryOperator, Complex64 as C, Error, ExpKernelVector, FlowState, Functional, GridVector, KBasis, KOperator,
    LambdaSequence, ProductVector, WeightSeriesConfig,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

/// `∏_{i=1}^{8} i²/(1+i²)` in exact rational arithmetic, rounded.
const PRODUCT_8: f64 = 0.305_867_752_890_377_3;
/// `π / sinh(π)`.
const DELTA_LIMIT: f64 = 0.272_029_054_982_133_1;

fn verdict(n: u32, name: &str, pass: bool, detail: String, elapsed: Duration, limit: Duration) {
    let ok = pass && elapsed <= limit;
    println!(
        "criterion {n} {name}: {} ({detail}; {:.2}s of {:.0}s)",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs_f64()
    );
    assert!(pass, "criterion {n} failed: {detail}");
    assert!(elapsed <= limit, "criterion {n} exceeded its runtime budget");
}

fn lin() -> Arc<LambdaSequence> {
    Arc::new(LambdaSequence::linear())
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_kernel(rng: &mut impl Rng) -> ExpKernelVector {
    let terms = (0..rng.gen_range(1..=2))
        .map(|_| {
            (
                C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                C::new(rng.gen_range(0.3..2.3), rng.gen_range(-1.0..1.0)),
            )
        })
        .collect();
    ExpKernelVector::new(terms).unwrap()
}

fn unit_nu(seq: Arc<LambdaSequence>) -> HFunctional {
    let h = ExpKernelVector::exp(C::new(2f64.sqrt(), 0.0), C::new(1.0, 0.0)).unwrap();
    HFunctional::vector_state(&HVector {
        k: ProductVector::reference(seq),
        h,
    })
}

#[test]
fn criterion_1_delta_pairing() {
    let start = Instant::now();
    let f0 = ProductVector::reference(lin());
    let p = delta_pairing(&f0, &f0, 8).unwrap();
    let err = (p.curve[8] - C::new(PRODUCT_8, 0.0)).norm();
    let monotone = p.curve.windows(2).all(|w| w[1].re <= w[0].re && w[1].im == 0.0);
    let limit_err = (p.limit.re - DELTA_LIMIT).abs();
    verdict(
        1,
        "delta pairing",
        err <= 1e-10 && monotone && limit_err <= 1e-10,
        format!("|pairing - oracle| = {err:.1e}, monotone = {monotone}, |limit - pi/sinh pi| = {limit_err:.1e}"),
        start.elapsed(),
        Duration::from_secs(1),
    );
}

#[test]
fn criterion_2_decay() {
    let start = Instant::now();
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    let mut smallest_start = f64::INFINITY;
    for _ in 0..5 {
        let f = ProductVector::new((0..3).map(|_| random_kernel(&mut r)).collect(), lin());
        let rho = delta_free_functional(&f).unwrap();
        let curve = lemma_decay_curve(&rho, 10, 1e-10).unwrap();
        smallest_start = smallest_start.min(curve[0]);
        worst = curve[3..].iter().cloned().fold(worst, f64::max);
    }
    verdict(
        2,
        "decay past the head",
        worst <= 1e-12 && smallest_start > 1e-6,
        format!("max norm for n >= 3 = {worst:.1e}, min initial norm = {smallest_start:.2e}"),
        start.elapsed(),
        Duration::from_secs(1),
    );
}

#[test]
fn criterion_3_weight_normalization() {
    let start = Instant::now();
    let seq = lin();
    let cfg = WeightSeriesConfig::default();
    let basis = Arc::new(KBasis::new(seq.clone(), 4, 3).unwrap());
    let d = basis.dim();
    let nu = unit_nu(seq);
    assert!((nu.total().unwrap().re - 1.0).abs() < 1e-14);
    let xi = xi_from_nu(&nu).unwrap();
    let b = BoundaryOperator::one_minus_lambda();
    let mut memo = TailMemo::new();
    let m1 = OmegaSpec::Minimal.basis_matrix(&basis, &b, &cfg, &mut memo).unwrap();
    let mf = OmegaSpec::Full(xi).basis_matrix(&basis, &b, &cfg, &mut memo).unwrap();
    let delta = basis.matrix_of(&KOperator::delta(), &mut memo).unwrap();
    let mut r = rng(3);
    let (mut e1, mut e): (f64, f64) = (0.0, 0.0);
    for i in 0..100 {
        let a = DMatrix::from_fn(d, d, |_, _| C::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)));
        let mut dm = &a * a.adjoint();
        let tr = dm.trace();
        dm /= tr;
        let total = dm.trace();
        let dv = (&dm * &delta).trace();
        let w1 = (&dm * &m1).trace();
        if i == 0 {
            let rho = Functional::density(basis.clone(), dm.clone()).unwrap();
            assert!((omega1(&rho, &b, &cfg).unwrap().value - w1).norm() < 1e-12);
        }
        e1 = e1.max((w1 - (total - dv)).norm());
        e = e.max(((&dm * &mf).trace() - total).norm());
    }
    verdict(
        3,
        "weight normalization",
        e1 < 1e-8 && e < 1e-8,
        format!("max |w1(I-L) - (rho(I) - rho(D))| = {e1:.1e}, max |w(I-L) - rho(I)| = {e:.1e}"),
        start.elapsed(),
        Duration::from_secs(30),
    );
}

fn bump(n: usize, centre: f64) -> FlowState {
    FlowState::from_fn(8.0, n, |x| {
        DVector::from_fn(2, |i, _| {
            if x < 0.5 {
                return C::new(0.0, 0.0);
            }
            let v = (-2.0 * (x - centre - 0.3 * i as f64).powi(2)).exp();
            C::new(v, 0.2 * v * i as f64)
        })
    })
    .unwrap()
}

#[test]
fn criterion_4_covariance() {
    let start = Instant::now();
    let labels = [C::new(0.0, 0.0), C::new(1.0, 0.0), C::new(0.0, 1.0), C::new(1.0, 1.0)];
    let mut worst_order = f64::INFINITY;
    let mut exact = 0;
    for w in labels {
        for z in labels {
            let res: Vec<f64> = [200, 400, 800]
                .iter()
                .map(|&n| covariance_residual(w, z, 1.0, &bump(n, 2.0), &bump(n, 2.4), 1e-12).unwrap())
                .collect();
            if res.iter().all(|r| *r < 1e-13) {
                exact += 1;
            } else {
                worst_order = observed_orders(&res).into_iter().fold(worst_order, f64::min);
            }
        }
    }
    // c(w, z) = −½|w|² − ½|z|² + w̄z
    let oracle = DMatrix::from_fn(4, 4, |i, j| {
        let (w, z) = (labels[i], labels[j]);
        -0.5 * w.norm_sqr() - 0.5 * z.norm_sqr() + w.conj() * z
    })
    .map(|c| c.exp());
    let gram = covariance_gram(&labels, 1.0);
    let gram_err = (&gram - &oracle).norm();
    let closed_min = min_eigenvalue(&oracle);
    let numeric_min = min_eigenvalue(&evolved_gram(&labels, 1.0, &bump(800, 2.0)).unwrap());
    verdict(
        4,
        "covariance",
        worst_order >= 0.8 && gram_err < 1e-14 && closed_min >= -1e-12 && numeric_min >= -1e-12,
        format!(
            "min order over {} converging pairs = {worst_order:.3} ({exact} pairs exact to 1e-13), gram min eig = {closed_min:.4} (evolved {numeric_min:.4})",
            16 - exact
        ),
        start.elapsed(),
        Duration::from_secs(120),
    );
}

#[test]
fn criterion_5_gauge_algebra() {
    let start = Instant::now();
    let tol = 1e-12;
    let assoc = [GaugeClass::GeneralContractive, GaugeClass::Unitary, GaugeClass::Flow]
        .iter()
        .enumerate()
        .map(|(i, c)| associativity_residual(*c, 1000, &mut rng(50 + i as u64)))
        .fold(0.0, f64::max);
    let rmin = min_r(100_000, &mut rng(55));
    let mut r = rng(56);
    let mut closed = true;
    let mut inverse: f64 = 0.0;
    for _ in 0..200 {
        let g = random_param(GaugeClass::Unitary, &mut r);
        let h = random_param(GaugeClass::Unitary, &mut r);
        closed &= g.compose(&h).validate().is_ok() && g.compose_consistent(&h).validate().is_ok();
        inverse = inverse.max(g.compose(&g.adjoint()).distance(&GaugeParam::identity()));
    }
    let unitary = action_sweep(GaugeClass::Unitary, 200, 4, 57, &mut rng(57), tol).unwrap();
    let flow = action_sweep(GaugeClass::Flow, 200, 4, 58, &mut rng(58), tol).unwrap();
    let general = action_sweep(GaugeClass::GeneralContractive, 200, 4, 59, &mut rng(59), tol).unwrap();
    let oracle = unitary.corrected.rate.max(unitary.corrected.label).max(flow.corrected.rate).max(flow.corrected.label);
    let printed_ok = |s: &cpflow::gauge::ActionSweep| s.printed.rate.max(s.printed.label) <= tol || s.discrepancy.is_some();
    let reports = [&unitary, &flow, &general].iter().filter(|s| s.discrepancy.is_some()).count();
    verdict(
        5,
        "gauge algebra",
        assoc < tol
            && rmin >= -tol
            && closed
            && inverse < tol
            && oracle < tol
            && printed_ok(&unitary)
            && printed_ok(&flow)
            && printed_ok(&general),
        format!(
            "associativity {assoc:.1e}, min r {rmin:.2e}, inverse {inverse:.1e}, action oracle {oracle:.1e}, {reports} discrepancy report(s) for the printed law (unitary {:.2}, general {:.2})",
            unitary.printed.rate, general.printed.rate
        ),
        start.elapsed(),
        Duration::from_secs(30),
    );
}

#[test]
fn criterion_6_transitivity() {
    let start = Instant::now();
    let src = (C::new(0.0, 0.0), C::new(1.0, 0.0));
    let dst = (C::new(0.0, 0.0), C::new(0.0, 1.0));
    let i = C::new(0.0, 1.0);
    let blocked = matches!(
        pair_reachable(src, dst, AllowedSet::Translations).unwrap(),
        Reachability::Unreachable { required_a } if (required_a - i).norm() < 1e-15
    );
    let euclid = matches!(
        pair_reachable(src, dst, AllowedSet::Euclidean).unwrap(),
        Reachability::Reachable { a, b } if (a - i).norm() < 1e-15 && b.norm() < 1e-15
    );
    let mut r = rng(6);
    let singles = (0..100).all(|_| {
        let z0 = C::new(r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0));
        let z1 = C::new(r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0));
        matches!(unit_reachable(z0, z1), Reachability::Reachable { a, b } if a == C::new(1.0, 0.0) && b == z1 - z0)
    });
    verdict(
        6,
        "transitivity",
        blocked && euclid && singles,
        format!("a=1 obstruction {blocked}, |a|=1 witness {euclid}, 100 single-unit witnesses {singles}"),
        start.elapsed(),
        Duration::from_secs(1),
    );
}

#[test]
fn criterion_7_cp_and_subordination() {
    let start = Instant::now();
    let seq = lin();
    let cfg = WeightSeriesConfig::default();
    let basis = KBasis::new(seq.clone(), 4, 2).unwrap();
    let v = orthonormalize(&[
        ExpKernelVector::exp(C::new(1.0, 0.0), C::new(1.0, 0.0)).unwrap(),
        ExpKernelVector::exp(C::new(1.0, 0.0), C::new(2.0, 0.0)).unwrap(),
    ])
    .unwrap();
    let xi = xi_from_nu(&unit_nu(seq)).unwrap();
    let ts = [0.5, 0.25];
    let mut minimal: f64 = f64::INFINITY;
    for t in ts {
        let rep = generalized_boundary_rep(&basis, &OmegaSpec::Minimal, t, &v, &cfg).unwrap();
        minimal = minimal.min(choi_min_eig(&rep.matrix, rep.d_in, rep.d_out, CP_TOLERANCE).unwrap().min_eig);
    }
    let sub = subordination_check(
        &WeightSource::Single(OmegaSpec::Full(xi.clone())),
        &WeightSource::Single(OmegaSpec::Minimal),
        &basis,
        &ts,
        &v,
        &cfg,
        CP_TOLERANCE,
    )
    .unwrap();
    let diff = sub.steps.iter().map(|s| s.difference.min_eig).fold(f64::INFINITY, f64::min);
    let h = hypermax_witness(C::new(-1.0, 0.0), &xi, &basis, &ts, &v, &cfg, CP_TOLERANCE, 1e-6).unwrap();
    let degenerate = matches!(
        hypermax_witness(C::new(1.0, 0.0), &xi, &basis, &ts, &v, &cfg, CP_TOLERANCE, 1e-6),
        Err(Error::Degenerate(_))
    );
    verdict(
        7,
        "CP and subordination",
        minimal >= -1e-8 && diff >= -1e-8 && h.q_positive && h.dominates && h.gap_nonzero && degenerate,
        format!(
            "min Choi eig {minimal:.1e}, difference {diff:.1e}, hypermax (q-positive {}, dominates {}, gap {}), z=1 degenerate {degenerate}",
            h.q_positive, h.dominates, h.gap_nonzero
        ),
        start.elapsed(),
        Duration::from_secs(300),
    );
}

#[test]
fn criterion_8_backend_cross_validation() {
    let start = Instant::now();
    let mut r = rng(8);
    let fns: Vec<_> = (0..50).map(|_| (random_kernel(&mut r), random_kernel(&mut r))).collect();
    let length = 8.0;
    let errs: Vec<f64> = [200, 400, 800]
        .iter()
        .map(|&n| {
            fns.iter()
                .map(|(f, g)| {
                    let exact = inner_product(f, g) - inner_product_from(f, g, length);
                    let num = GridVector::sample(f, length, n)
                        .unwrap()
                        .inner(&GridVector::sample(g, length, n).unwrap())
                        .unwrap();
                    (num - exact).norm() / (f.norm() * g.norm())
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let order = observed_orders(&errs).into_iter().fold(f64::INFINITY, f64::min);
    verdict(
        8,
        "analytic vs grid",
        order >= 0.9,
        format!("errors {:.1e} {:.1e} {:.1e}, min order {order:.2}", errs[0], errs[1], errs[2]),
        start.elapsed(),
        Duration::from_secs(30),
    );
}

fn strip_timing(mut v: Value) -> Value {
    if let Some(m) = v.as_object_mut() {
        m.remove("wall_time_s");
        m.remove("finished_at_unix_s");
    }
    v
}

fn run_all(dir: &Path, config: &Path, commands: &[&str]) {
    for c in commands {
        let out = Command::new(env!("CARGO_BIN_EXE_cpflow"))
            .args([c, &"--config", &config.to_str().unwrap(), &"--out", &dir.to_str().unwrap()])
            .output()
            .unwrap();
        assert!(out.status.code().is_some(), "{c} terminated abnormally");
    }
}

#[test]
fn criterion_9_cli_determinism() {
    let start = Instant::now();
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/small.toml");
    let commands = ["delta", "decay", "covariance", "gauge-check", "transitivity", "corner", "weights-unitality"];
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_all(a.path(), &config, &commands);
    run_all(b.path(), &config, &commands);
    let mut mismatched = Vec::new();
    let mut compared = 0;
    for entry in std::fs::read_dir(a.path()).unwrap() {
        let name = entry.unwrap().file_name();
        let (pa, pb) = (a.path().join(&name), b.path().join(&name));
        let (ta, tb) = (std::fs::read_to_string(&pa).unwrap(), std::fs::read_to_string(&pb).unwrap_or_default());
        let same = if name.to_string_lossy().ends_with(".json") {
            let ja: Value = serde_json::from_str(&ta).unwrap();
            let jb: Value = serde_json::from_str(&tb).unwrap_or(Value::Null);
            strip_timing(ja) == strip_timing(jb)
        } else {
            ta == tb
        };
        compared += 1;
        if !same {
            mismatched.push(name.to_string_lossy().into_owned());
        }
    }
    let reports = commands.iter().filter(|c| a.path().join(format!("{c}.json")).exists()).count();
    verdict(
        9,
        "CLI determinism",
        mismatched.is_empty() && reports == commands.len(),
        format!("{compared} files compared across two runs of {reports} commands, mismatches {mismatched:?}"),
        start.elapsed(),
        Duration::from_secs(600),
    );
}

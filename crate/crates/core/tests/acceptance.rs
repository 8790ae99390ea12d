//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Two criteria are known to fail because the worked example they rely on
//! does not hold as stated (see `KNOWN_FAILURES`). For those the run checks
//! that the failure is exactly the documented one; anything else failing
//! makes the target exit nonzero.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use mrf_core::feedback::{
    build_kl_envelope, check_gac_bound, synthesize, trajectory_cost_invariance, Margins,
    StopRule,
};
use mrf_core::hamiltonian::{hamiltonian, sign_equivalence_check, truncated_hamiltonian};
use mrf_core::polysys::{
    classify_near_affine, diagonal_subsystem, hull_witness, max_scaling_check, maximal_subsystem,
    sign_set, transfer_check, DiagonalSpec, TransferKind, WitnessStrategy,
};
use mrf_core::rescale::{cost_invariance_check, time_maps};
use mrf_core::scenario::Scenario;
use mrf_core::sysmodel::{FnSystem, PolyDynamics, VectorField};
use mrf_core::verifier::{verify_mrf, Verdict};
use mrf_core::{eval_poly, parse_expr, ControlProblem, ControlSet, MultiIndex, StateSpace, Target};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20240611;

/// Criteria expected to fail, with the reason.
const KNOWN_FAILURES: [(&str, &str); 2] = [
    (
        "8b",
        "H for the (1/2,1/2)-diagonal subsystem is finite (= 2|x|^2) wherever x1 <= 0 and x2 <= 0",
    ),
    (
        "9a",
        "the diagonal subsystem (and the full system) is violated in the closed third quadrant",
    ),
];

struct Outcome {
    id: &'static str,
    name: &'static str,
    pass: bool,
    detail: String,
    /// Serialized results, compared across runs for determinism.
    fingerprint: String,
    /// For known failures: whether the failure matches its explanation.
    defect_confirmed: Option<bool>,
}

fn outcome(id: &'static str, name: &'static str, pass: bool, detail: String, fingerprint: String) -> Outcome {
    Outcome {
        id,
        name,
        pass,
        detail,
        fingerprint,
        defect_confirmed: None,
    }
}

fn within(t: Instant, limit: Duration) -> (bool, String) {
    let e = t.elapsed();
    (e < limit, format!("{:.2}s of {}s", e.as_secs_f64(), limit.as_secs()))
}

// 1 ──────────────────────────────────────────────────────────────────────

fn c1() -> Outcome {
    let t = Instant::now();
    let mut ok = true;
    let mut cases = 0usize;
    for d in 2..=8usize {
        for s in [-1i8, 1] {
            let set = sign_set(d, s);
            ok &= set.len() == 1 << (d - 1);
            ok &= set.iter().all(|v| v.iter().map(|&x| x as i64).product::<i64>() == s as i64);
            for k in 1..d {
                for subset in 0u32..1 << d {
                    if subset.count_ones() as usize != k {
                        continue;
                    }
                    let sum: i64 = set
                        .iter()
                        .map(|v| {
                            (0..d)
                                .filter(|i| subset >> i & 1 == 1)
                                .map(|i| v[i] as i64)
                                .product::<i64>()
                        })
                        .sum();
                    ok &= sum == 0;
                    cases += 1;
                }
            }
        }
    }
    let (fast, time) = within(t, Duration::from_secs(5));
    outcome(
        "1",
        "sign-set sums and cardinality",
        ok && fast,
        format!("{cases} (d, k, subset, s) cases, {time}"),
        format!("{ok} {cases}"),
    )
}

// 2 ──────────────────────────────────────────────────────────────────────

fn c2() -> Outcome {
    let s = Scenario::builtin("remark44-system").unwrap();
    let pd = s.poly.unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let c = 2f64.powf(0.2);
    let mut worst = 0f64;
    for _ in 0..100 {
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let a = eval_poly(&pd, &x, &[1.0, 0.0, c]).unwrap();
        let b = eval_poly(&pd, &x, &[0.0, 1.0, c]).unwrap();
        // f_(1,0,5) + f_(0,3,5) = (0, 1, −x1, 0) + (0, 0, 0, 1).
        let want = [0.0, 1.0, -x[0], 1.0];
        for i in 0..4 {
            worst = worst.max((0.5 * a[i] + 0.5 * b[i] - want[i]).abs());
        }
    }
    outcome(
        "2",
        "half/half identity on the 3-control system",
        worst < 1e-12,
        format!("max residual {worst:.3e} over 100 points"),
        format!("{worst:e}"),
    )
}

// 3 ──────────────────────────────────────────────────────────────────────

fn linear_field(rng: &mut ChaCha8Rng, n: usize) -> VectorField {
    let comps = (0..n)
        .map(|_| {
            let mut text = format!("{:.3}", rng.gen_range(-2.0..2.0));
            for j in 0..n {
                text += &format!(" + {:.3}*x{}", rng.gen_range(-2.0..2.0), j + 1);
            }
            parse_expr(&text, n, 0).unwrap()
        })
        .collect();
    VectorField::Exprs(comps)
}

fn random_near_affine(rng: &mut ChaCha8Rng) -> PolyDynamics {
    let n = rng.gen_range(1..=3);
    let m = rng.gen_range(1..=4);
    let k: Vec<u32> = (0..m).map(|_| [1, 3, 5, 7][rng.gen_range(0..4)]).collect();
    let patterns = (1u32 << m) - 1;
    let count = rng.gen_range(1..=patterns.min(4));
    let mut chosen: Vec<u32> = Vec::new();
    while chosen.len() < count as usize {
        let p = rng.gen_range(1..=patterns);
        if !chosen.contains(&p) {
            chosen.push(p);
        }
    }
    let terms = chosen
        .iter()
        .map(|&p| {
            let alpha = (0..m).map(|i| if p >> i & 1 == 1 { k[i] } else { 0 }).collect();
            (MultiIndex::new(alpha), linear_field(rng, n))
        })
        .collect();
    let drift = linear_field(rng, n);
    PolyDynamics::new(n, m, drift, terms).unwrap()
}

fn c3() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 3);
    let mut checks = 0usize;
    let mut worst_res = 0f64;
    let mut worst_weight = 0f64;
    let mut outside = 0usize;
    let mut errors = 0usize;
    for _ in 0..50 {
        let pd = random_near_affine(&mut rng);
        let nas = classify_near_affine(&pd).unwrap();
        let n = pd.state_dim();
        for _ in 0..100 {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            for r in [1.0, 2.0, f64::INFINITY] {
                let rbar = nas.rbar(r);
                let bound = if rbar.is_finite() { rbar } else { 5.0 };
                let w: Vec<f64> = (0..nas.m_terms()).map(|_| rng.gen_range(-bound..=bound)).collect();
                // f0(x) + Σ w_j f_{α_j}(x), straight from the term list.
                let mut want = pd.drift().eval(&x, n).unwrap();
                for (alpha, wj) in nas.active.iter().zip(&w) {
                    let fa = pd.term(alpha).unwrap().eval(&x, n).unwrap();
                    for (a, b) in want.iter_mut().zip(fa) {
                        *a += wj * b;
                    }
                }
                for strategy in [WitnessStrategy::Canonical, WitnessStrategy::Compact] {
                    let wit = match hull_witness(&nas, &pd, &w, r, strategy) {
                        Ok(w) => w,
                        Err(_) => {
                            errors += 1;
                            continue;
                        }
                    };
                    checks += 1;
                    worst_weight = worst_weight.max((wit.total_weight() - 1.0).abs());
                    worst_res = worst_res.max(wit.residual(&pd, &x, &want).unwrap());
                    for (wt, u) in &wit.pairs {
                        if !(*wt >= 0.0) || u.iter().any(|v| !(v.abs() <= r * (1.0 + 1e-12))) {
                            outside += 1;
                        }
                    }
                }
            }
        }
    }
    let (fast, time) = within(t, Duration::from_secs(30));
    let pass = errors == 0 && outside == 0 && worst_res < 1e-10 && worst_weight < 1e-12 && fast;
    outcome(
        "3",
        "hull witness soundness",
        pass,
        format!(
            "{checks} witnesses, residual {worst_res:.2e}, |Σweights−1| {worst_weight:.1e}, \
             {outside} outside U_r, {errors} errors, {time}"
        ),
        format!("{checks} {worst_res:e} {worst_weight:e} {outside} {errors}"),
    )
}

// 4 ──────────────────────────────────────────────────────────────────────

fn c4() -> Outcome {
    let mut detail = Vec::new();
    let mut fp = String::new();
    let mut pass = true;
    for name in ["gyroscope", "diag-example"] {
        let s = Scenario::builtin(name).unwrap();
        let bbox: Vec<(f64, f64)> = s.sampling().unwrap().bbox;
        let rep = sign_equivalence_check(&s.problem, &bbox, 10_000, SEED ^ 4, &s.file.budget);
        pass &= rep.disagreements.is_empty() && rep.evaluated > 9_000;
        detail.push(format!(
            "{name}: {} evaluated, {} in dead band, {} disagreements",
            rep.evaluated,
            rep.dead_band,
            rep.disagreements.len()
        ));
        fp += &serde_json::to_string(&rep).unwrap();
    }
    outcome("4", "sign equivalence of H and rescaled H", pass, detail.join("; "), fp)
}

// 5 ──────────────────────────────────────────────────────────────────────

fn constant_field_case() -> (f64, String) {
    // f ≡ c, l ≡ L: y(s) = z + s c/(1+m), t(s) = s/(1+m), m = |(L, c)|.
    let (l, c) = (1.5, [0.3, -2.0]);
    let problem = ControlProblem::new(
        StateSpace::full(2),
        Target::point(vec![0.0, 0.0]),
        ControlSet::full(1),
        std::sync::Arc::new(FnSystem::new(2, 1, move |_, _, f| {
            f.copy_from_slice(&c);
            Ok(l)
        })),
    )
    .unwrap();
    let m = (l * l + c[0] * c[0] + c[1] * c[1]).sqrt();
    let s: Vec<f64> = (0..=40).map(|i| i as f64 * 0.25).collect();
    let states: Vec<Vec<f64>> = s
        .iter()
        .map(|si| vec![1.0 + si * c[0] / (1.0 + m), 2.0 + si * c[1] / (1.0 + m)])
        .collect();
    let controls = vec![vec![0.0]; s.len() - 1];
    let map = time_maps(&problem, &s, &states, &controls).unwrap();
    let rep = cost_invariance_check(&problem, &states, &controls, &map).unwrap();
    let exact = l * s[s.len() - 1] / (1.0 + m);
    let err = (rep.rescaled_integral - exact)
        .abs()
        .max((rep.original_integral - exact).abs())
        .max((map.t[map.t.len() - 1] - s[s.len() - 1] / (1.0 + m)).abs());
    (err, serde_json::to_string(&rep).unwrap())
}

struct GyroRun {
    report: mrf_core::verifier::VerificationReport,
    synthesis: mrf_core::feedback::Synthesis,
    gac: mrf_core::feedback::GacReport,
    verify_time: Duration,
    synth_time: Duration,
}

fn gyroscope_run() -> GyroRun {
    let s = Scenario::builtin("gyroscope").unwrap();
    let cand = s.candidate.clone().unwrap();
    let sampling = s.sampling().unwrap();
    let t = Instant::now();
    let report = verify_mrf(&s.problem, &cand, &sampling, &s.file.budget).unwrap();
    let verify_time = t.elapsed();
    let t = Instant::now();
    let margins = Margins::from_report(&report, s.file.feedback.margin_safety).unwrap();
    let mut opts = s.file.feedback.options(&s.file.budget);
    opts.stop = StopRule::Fraction(5e-5);
    let mut synthesis = synthesize(&s.problem, &cand, &[0.5, 0.0], &margins, &opts).unwrap();
    let env = build_kl_envelope(&s.problem, &cand, &margins, &sampling, opts.step.eps).unwrap();
    let gac = check_gac_bound(&mut synthesis.trajectory, &env);
    let synth_time = verify_time + t.elapsed();
    GyroRun {
        report,
        synthesis,
        gac,
        verify_time,
        synth_time,
    }
}

fn c5(g: &GyroRun) -> Outcome {
    let (err, fp_const) = constant_field_case();
    let s = Scenario::builtin("gyroscope").unwrap();
    let traj = &g.synthesis.trajectory;
    let inv = trajectory_cost_invariance(&s.problem, traj).unwrap();
    let t_le_s = traj.rows.iter().all(|r| r.t <= r.s);
    let pass = err < 1e-10 && inv.relative_difference < 1e-3 && t_le_s && !traj.is_empty();
    outcome(
        "5",
        "rescaling cost invariance",
        pass,
        format!(
            "constant field error {err:.2e}; gyroscope trace relative error {:.2e} ({} rows); t(s) <= s: {t_le_s}",
            inv.relative_difference,
            traj.rows.len()
        ),
        format!("{fp_const} {}", serde_json::to_string(&inv).unwrap()),
    )
}

// 6 ──────────────────────────────────────────────────────────────────────

fn c6(g: &GyroRun) -> Outcome {
    let rep = &g.report;
    let margins_negative = rep.bands.iter().all(|b| b.worst_value < 0.0);
    let fast = g.verify_time < Duration::from_secs(120);
    outcome(
        "6",
        "gyroscope candidate verified at p0 = 0.9",
        rep.is_verified() && margins_negative && fast && rep.p0 == 0.9,
        format!(
            "{} bands x {} samples, worst band value {:.3e}, {:.2}s",
            rep.bands.len(),
            rep.bands.first().map_or(0, |b| b.samples),
            rep.bands.iter().map(|b| b.worst_value).fold(f64::NEG_INFINITY, f64::max),
            g.verify_time.as_secs_f64()
        ),
        serde_json::to_string(rep).unwrap(),
    )
}

// 7 ──────────────────────────────────────────────────────────────────────

fn c7(g: &GyroRun) -> Outcome {
    let syn = &g.synthesis;
    let traj = &syn.trajectory;
    let d0 = traj.rows[0].d_target;
    let d_end = traj.last().d_target;
    let cert = traj.worst_certificate();
    let bound = syn.w_z / 0.9;
    let cost = traj.total_cost();
    let fast = g.synth_time < Duration::from_secs(120);
    let pass = syn.completed()
        && d_end < 1e-2 * d0
        && cert <= 1e-9
        && cost <= bound
        && g.gac.passed
        && g.gac.samples == traj.rows.len()
        && fast;
    outcome(
        "7",
        "gyroscope synthesis from (0.5, 0)",
        pass,
        format!(
            "d {d0:.3} -> {d_end:.3e} in {} cells; worst certificate slack {cert:.2e}; \
             cost {cost:.4} <= W(z)/0.9 = {bound:.4}; beta slack s {:.3e}, t {:.3e}; {:.2}s",
            traj.cells,
            g.gac.worst_slack_s,
            g.gac.worst_slack_t,
            g.synth_time.as_secs_f64()
        ),
        format!(
            "{} {}",
            serde_json::to_string(syn).unwrap(),
            serde_json::to_string(&g.gac).unwrap()
        ),
    )
}

// 8 ──────────────────────────────────────────────────────────────────────

fn draw_nonzero(rng: &mut ChaCha8Rng, half: f64) -> Vec<f64> {
    loop {
        let x = vec![rng.gen_range(-half..half), rng.gen_range(-half..half)];
        if x[0] != 0.0 || x[1] != 0.0 {
            return x;
        }
    }
}

fn c8a() -> Outcome {
    let s = Scenario::builtin("diag-example").unwrap();
    let pd = s.poly.clone().unwrap();
    let smax = s.with_poly(maximal_subsystem(&pd).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 8);
    let mut worst = f64::INFINITY;
    let mut fp = String::new();
    for _ in 0..1000 {
        let x = draw_nonzero(&mut rng, 2.5);
        let p0 = rng.gen_range(0.0..=1.0);
        let radius = 10f64.powf(rng.gen_range(-1.0..=3.0));
        let p = [2.0 * x[0], 2.0 * x[1]];
        let h = truncated_hamiltonian(&smax.problem, &x, p0, &p, radius, &s.file.budget).unwrap();
        worst = worst.min(h.value);
        fp += &format!("{:e},", h.value);
    }
    outcome(
        "8a",
        "maximal-degree subsystem Hamiltonian is nonnegative",
        worst >= -1e-9,
        format!("min truncated H over 1000 samples {worst:.3e}"),
        fp,
    )
}

fn c8b() -> Outcome {
    let s = Scenario::builtin("diag-example").unwrap();
    let pd = s.poly.clone().unwrap();
    let spec = DiagonalSpec::new(vec![0.5, 0.5]).unwrap();
    let sdiag = s.with_poly(diagonal_subsystem(&pd, &spec).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 0x8b);
    let mut flagged = 0;
    let mut misses = Vec::new();
    let mut fp = String::new();
    for _ in 0..1000 {
        let x = draw_nonzero(&mut rng, 2.5);
        let p = [2.0 * x[0], 2.0 * x[1]];
        let h = hamiltonian(&sdiag.problem, &x, 0.5, &p, &s.file.budget).unwrap();
        let v = if h.diverged { f64::NEG_INFINITY } else { h.value };
        fp += &format!("{v:e},");
        if v < -1e6 {
            flagged += 1;
        } else {
            misses.push((x, v));
        }
    }
    // Direct evaluation with p = 2x: the integrand is
    // 2|x|² + Σ u_i² (p0|x|² - √2 x_i), so on the cube of radius R the
    // minimum is 2|x|² - R² Σ max(0, √2 x_i - p0|x|²). It is finite on
    // {√2 x_i <= p0|x|²} and only crosses -1e6 once Σ c_i⁺ > 1, which the
    // sampled box never reaches (max c_i = 1 at x_i = √2).
    let r2 = 1e6;
    let closed = |x: &[f64]| {
        let n2 = x[0] * x[0] + x[1] * x[1];
        let c: f64 = x.iter().map(|xi| (2f64.sqrt() * xi - 0.5 * n2).max(0.0)).sum();
        (2.0 * n2 - r2 * c, c == 0.0)
    };
    let explained = misses.iter().all(|(x, v)| {
        let (h, _) = closed(x);
        (v - h).abs() <= 1e-6 * h.abs().max(1.0)
    });
    let bounded = misses.iter().filter(|(x, _)| closed(x).1).count();
    let at_minus_one = hamiltonian(&sdiag.problem, &[-1.0, -1.0], 0.5, &[-2.0, -2.0], &s.file.budget)
        .unwrap()
        .value;
    let mut o = outcome(
        "8b",
        "diagonal subsystem Hamiltonian is -inf",
        misses.is_empty(),
        format!(
            "flag raised at {flagged}/1000 samples; {} finite values match the closed form: {explained}; {bounded} of them with H = 2|x|^2 exactly; H(-1,-1) = {at_minus_one}",
            misses.len()
        ),
        fp,
    );
    o.defect_confirmed = Some(!misses.is_empty() && explained && bounded > 0 && (at_minus_one - 4.0).abs() < 1e-9);
    o
}

// 9 ──────────────────────────────────────────────────────────────────────

fn c9a() -> Outcome {
    let s = Scenario::builtin("diag-example").unwrap();
    let pd = s.poly.clone().unwrap();
    let spec = DiagonalSpec::new(vec![0.5, 0.5]).unwrap();
    let sdiag = s.with_poly(diagonal_subsystem(&pd, &spec).unwrap()).unwrap();
    let cand = s.candidate.clone().unwrap();
    let sampling = s.sampling().unwrap();
    let m0 = 2f64.sqrt();
    let tr = transfer_check(
        &s.problem,
        &sdiag.problem,
        &cand,
        0.5,
        TransferKind::Diagonal { m0 },
        &sampling,
        &s.file.budget,
    )
    .unwrap();
    let independent = verify_mrf(&s.problem, &cand.with_p0(0.5 / m0), &sampling, &s.file.budget).unwrap();
    let pass = tr.subsystem.is_verified() && tr.full.is_verified() && independent.is_verified() && tr.implication_holds;
    let quadrant = |v: &Verdict| match v {
        Verdict::Violated { witness } => witness.x[0] <= 0.0 && witness.x[1] <= 0.0,
        _ => false,
    };
    let name = |v: &Verdict| match v {
        Verdict::Verified => "verified".to_string(),
        Verdict::Violated { witness } => format!("violated at {:?}", witness.x),
        Verdict::Inconclusive { reason } => format!("inconclusive ({reason})"),
    };
    let mut o = outcome(
        "9a",
        "diagonal subsystem verification transfers to the full system",
        pass,
        format!(
            "subsystem at p0 = 0.5: {}; full at p0/sqrt2 (same samples): {}; independent full run: {}; {} pointwise violations",
            name(&tr.subsystem.verdict),
            name(&tr.full.verdict),
            name(&independent.verdict),
            tr.pointwise_violations
        ),
        format!(
            "{} {}",
            serde_json::to_string(&tr).unwrap(),
            serde_json::to_string(&independent).unwrap()
        ),
    );
    o.defect_confirmed = Some(
        quadrant(&tr.subsystem.verdict) && tr.implication_holds && independent.is_violated(),
    );
    o
}

const HOMOGENEOUS_TEST_SYSTEM: &str = r#"
name = "homogeneous-test"
n = 2
m = 2
cost = "(x1^2 + x2^2)*(1 + u1^2 + u2^2)"

[target]
point = [0.0, 0.0]

[control_set]
kind = "full"

[dynamics]
drift = ["x1", "x2"]

[[dynamics.terms]]
alpha = [0, 1]
field = ["1", "1"]

[[dynamics.terms]]
alpha = [1, 0]
field = ["x2", "-x1"]

[[dynamics.terms]]
alpha = [2, 0]
field = ["-x1", "-x2"]

[[dynamics.terms]]
alpha = [0, 2]
field = ["-x1", "-x2"]

[[dynamics.terms]]
alpha = [1, 1]
field = ["x1", "0"]

[candidate]
w = "x1^2 + x2^2"
p0 = 0.5

[sampling]
sigma = 2.0
samples = 1000
seed = 9
bbox = [[-2.0, 2.0], [-2.0, 2.0]]
"#;

fn c9b() -> Outcome {
    let s = Scenario::from_toml(HOMOGENEOUS_TEST_SYSTEM).unwrap();
    let pd = s.poly.clone().unwrap();
    let smax = s.with_poly(maximal_subsystem(&pd).unwrap()).unwrap();
    let cand = s.candidate.clone().unwrap();
    let bbox = s.sampling().unwrap().bbox;
    let rep = max_scaling_check(&s.problem, &smax.problem, &cand, &bbox, 1000, SEED ^ 9, 1e-6, &s.file.budget)
        .unwrap();
    outcome(
        "9b",
        "maximal-degree scaling property",
        rep.checked > 0 && rep.failures == 0,
        format!(
            "{} sampled, {} with negative f^max Hamiltonian, {} without a certifying k <= 2^10",
            rep.sampled, rep.checked, rep.failures
        ),
        serde_json::to_string(&rep).unwrap(),
    )
}

// 10 ─────────────────────────────────────────────────────────────────────

fn c10() -> Outcome {
    let s = Scenario::builtin("remark48-counterexample").unwrap();
    let cand = s.candidate.clone().unwrap();
    let sampling = s.sampling().unwrap();
    let full = verify_mrf(&s.problem, &cand, &sampling, &s.file.budget).unwrap();
    // Re-check the witness directly: ⟨p, (u² + u³)x⟩ ≥ 0 on a grid of U.
    let witness_ok = match &full.verdict {
        Verdict::Violated { witness } => {
            let (x, p) = (witness.x[0], witness.p[0]);
            x != 0.0
                && (0..=200).all(|i| {
                    let u = -1.0 + i as f64 / 100.0;
                    p * (u * u + u * u * u) * x >= -1e-12
                })
        }
        _ => false,
    };
    let pd = s.poly.clone().unwrap();
    let smax = s.with_poly(maximal_subsystem(&pd).unwrap()).unwrap();
    let maxrep = verify_mrf(&smax.problem, &cand, &sampling, &s.file.budget).unwrap();
    outcome(
        "10",
        "bounded-control caveat",
        full.is_violated() && witness_ok && maxrep.is_verified(),
        format!(
            "(u^2+u^3)x violated with re-checked witness: {witness_ok}; u^3 x verified: {}",
            maxrep.is_verified()
        ),
        format!(
            "{} {}",
            serde_json::to_string(&full).unwrap(),
            serde_json::to_string(&maxrep).unwrap()
        ),
    )
}

// 11 ─────────────────────────────────────────────────────────────────────

fn criteria_3_to_10() -> Vec<Outcome> {
    let g = gyroscope_run();
    vec![c3(), c4(), c5(&g), c6(&g), c7(&g), c8a(), c8b(), c9a(), c9b(), c10()]
}

fn main() -> ExitCode {
    let mut all = vec![c1(), c2()];
    let first = criteria_3_to_10();
    let second = criteria_3_to_10();
    let mismatched: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(a, b)| a.fingerprint != b.fingerprint)
        .map(|(a, _)| a.id)
        .collect();
    all.extend(first);
    all.push(outcome(
        "11",
        "determinism of criteria 3-10 under a fixed seed",
        mismatched.is_empty(),
        if mismatched.is_empty() {
            "all reports byte-identical across two runs".into()
        } else {
            format!("differing: {mismatched:?}")
        },
        String::new(),
    ));

    let mut unexpected = 0;
    for o in &all {
        let known = KNOWN_FAILURES.iter().find(|(id, _)| *id == o.id);
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("{status} [{}] {}: {}", o.id, o.name, o.detail);
        match (o.pass, known) {
            (true, _) => {}
            (false, Some((_, why))) => {
                let confirmed = o.defect_confirmed == Some(true);
                println!(
                    "     known failure ({why}); documented failure mode confirmed: {confirmed}"
                );
                if !confirmed {
                    unexpected += 1;
                }
            }
            (false, None) => unexpected += 1,
        }
    }
    let passed = all.iter().filter(|o| o.pass).count();
    println!("{passed}/{} criteria passed, {unexpected} unexpected failures", all.len());
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

//! Sampled certification of the p₀-MRF conditions on level bands
//! W⁻¹([r, 2σ]): Hamiltonian margins γ̂(r), truncation radii N̂(r),
//! positive definiteness, properness and the boundary condition.
//!
//! γ̂ is a sampled lower estimate and N̂ a sampled upper-feasible radius.
//! Both certify nothing away from the sampled points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::EvalError;
use crate::hamiltonian::{hamiltonian, HamiltonianValue};
use crate::minimize::MinimizeBudget;
use crate::rescale::{magnitude, rescale};
use crate::sysmodel::{norm, ControlProblem, MrfCandidate, ScalarField, Target, StateSpace};

/// Values in `(-INCONCLUSIVE_BAND, 0)` are too close to zero to call.
pub const INCONCLUSIVE_BAND: f64 = 1e-9;
/// Samples with W this close to zero count as target boundary.
pub const TARGET_W_TOL: f64 = 1e-12;
/// N̂(r) certifies this fraction of γ̂(r).
pub const RADIUS_MARGIN_FRACTION: f64 = 0.5;
/// Decades spanned by radial proposals around the target anchor.
const RADIAL_DECADES: f64 = 6.0;
/// Draws allowed per requested sample before a band is declared empty.
const ATTEMPTS_PER_SAMPLE: usize = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error("no samples landed in W⁻¹([{lower}, {upper}]); check the bounding box")]
    EmptyBand { lower: f64, upper: f64 },
    #[error("invalid sampling: {0}")]
    InvalidSampling(String),
    #[error("invalid candidate: {0}")]
    InvalidCandidate(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSampling {
    pub sigma: f64,
    /// Decreasing levels in ]0, 2σ].
    pub levels: Vec<f64>,
    pub samples_per_band: usize,
    pub seed: u64,
    pub bbox: Vec<(f64, f64)>,
}

impl LevelSampling {
    /// `bands` levels spaced geometrically from 2σ down to `2σ·min_frac`.
    pub fn geometric(
        sigma: f64,
        bands: usize,
        min_frac: f64,
        samples_per_band: usize,
        seed: u64,
        bbox: Vec<(f64, f64)>,
    ) -> Self {
        let levels = (1..=bands)
            .map(|i| 2.0 * sigma * min_frac.powf(i as f64 / bands as f64))
            .collect();
        Self {
            sigma,
            levels,
            samples_per_band,
            seed,
            bbox,
        }
    }

    pub fn validate(&self, n: usize, w0: f64) -> Result<(), VerifyError> {
        let bad = |m: String| Err(VerifyError::InvalidSampling(m));
        if !(self.sigma > 0.0) || !(self.sigma < w0) {
            return bad(format!("need 0 < sigma < W0 (sigma={}, W0={w0})", self.sigma));
        }
        if self.levels.is_empty() {
            return bad("no levels".into());
        }
        if self
            .levels
            .iter()
            .any(|&r| !(r > 0.0) || r > 2.0 * self.sigma)
        {
            return bad("levels must lie in ]0, 2 sigma]".into());
        }
        if self.levels.windows(2).any(|w| w[0] <= w[1]) {
            return bad("levels must be strictly decreasing".into());
        }
        if self.samples_per_band == 0 {
            return bad("samples per band must be positive".into());
        }
        if self.bbox.len() != n {
            return bad(format!("bounding box has {} coordinates, expected {n}", self.bbox.len()));
        }
        if self.bbox.iter().any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return bad("bounding box must be finite with lower < upper".into());
        }
        Ok(())
    }

    /// `[levels[i], upper]` for shell `i`.
    pub fn shell(&self, i: usize) -> (f64, f64) {
        let upper = if i == 0 {
            2.0 * self.sigma
        } else {
            self.levels[i - 1]
        };
        (self.levels[i], upper)
    }
}

/// Mixture of uniform draws in the box and log-radial draws around a point
/// of the target, so that thin bands near C still get samples.
pub(crate) struct Proposal<'a> {
    bbox: &'a [(f64, f64)],
    anchor: Option<Vec<f64>>,
    rho_max: f64,
}

impl<'a> Proposal<'a> {
    pub fn new(bbox: &'a [(f64, f64)], target: &Target) -> Self {
        let anchor = target.anchor().map(|a| a.to_vec());
        let rho_max = anchor.as_ref().map_or(0.0, |a| {
            let far: Vec<f64> = a
                .iter()
                .zip(bbox)
                .map(|(c, (lo, hi))| (c - lo).abs().max((hi - c).abs()))
                .collect();
            norm(&far)
        });
        Self {
            bbox,
            anchor,
            rho_max,
        }
    }

    pub fn draw(&self, rng: &mut ChaCha8Rng, x: &mut [f64]) {
        if let (Some(a), true) = (&self.anchor, rng.gen_bool(0.5)) {
            let rho = self.rho_max * 10f64.powf(-RADIAL_DECADES * rng.gen::<f64>());
            loop {
                for v in x.iter_mut() {
                    *v = rng.gen_range(-1.0..1.0);
                }
                let r = norm(x);
                if r > 1e-3 && r <= 1.0 {
                    for (v, c) in x.iter_mut().zip(a) {
                        *v = c + rho * *v / r;
                    }
                    return;
                }
            }
        }
        for (v, (lo, hi)) in x.iter_mut().zip(self.bbox) {
            *v = rng.gen_range(*lo..*hi);
        }
    }

    pub fn in_box(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.bbox)
            .all(|(v, (lo, hi))| lo <= v && v <= hi)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelSample {
    pub x: Vec<f64>,
    pub w: f64,
}

/// Draws `samples_per_band` points in each shell `[levels[i], levels[i-1])`
/// (the first shell is closed at 2σ). Band `i` is the union of shells 0..=i.
pub fn draw_level_samples(
    problem: &ControlProblem,
    w: &dyn ScalarField,
    sampling: &LevelSampling,
) -> Result<Vec<Vec<LevelSample>>, VerifyError> {
    let n = problem.n();
    sampling.validate(n, f64::INFINITY)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    let proposal = Proposal::new(&sampling.bbox, &problem.target);
    let mut x = vec![0.0; n];
    let mut shells = Vec::with_capacity(sampling.levels.len());
    for i in 0..sampling.levels.len() {
        let (lower, upper) = sampling.shell(i);
        let mut got = Vec::with_capacity(sampling.samples_per_band);
        let mut attempts = 0;
        while got.len() < sampling.samples_per_band
            && attempts < sampling.samples_per_band * ATTEMPTS_PER_SAMPLE
        {
            attempts += 1;
            proposal.draw(&mut rng, &mut x);
            if !proposal.in_box(&x)
                || !problem.state_space.contains(&x)
                || problem.target.contains(&x)
            {
                continue;
            }
            let Ok(wx) = w.value(&x) else { continue };
            if wx <= TARGET_W_TOL {
                continue;
            }
            let inside = if i == 0 {
                lower <= wx && wx <= upper
            } else {
                lower <= wx && wx < upper
            };
            if inside {
                got.push(LevelSample { x: x.clone(), w: wx });
            }
        }
        if got.is_empty() {
            return Err(VerifyError::EmptyBand { lower, upper });
        }
        shells.push(got);
    }
    Ok(shells)
}

/// Rescaled Hamiltonian at one sample, worst over the oracle's covectors.
#[derive(Clone, Debug)]
pub struct SampleEval {
    pub x: Vec<f64>,
    pub w: f64,
    pub worst: f64,
    pub worst_p: Vec<f64>,
    pub worst_u: Vec<f64>,
    /// Per covector: value and ball profile (or minimizer norm).
    per_covector: Vec<(HamiltonianValue, f64)>,
}

impl SampleEval {
    /// Smallest tested radius whose ball contains a control pushing every
    /// covector's integrand below `-margin`; `None` if none does.
    fn radius_for(&self, margin: f64) -> Option<f64> {
        let mut need: f64 = 0.0;
        for (hv, u_norm) in &self.per_covector {
            let from_profile = hv
                .ball_profile
                .iter()
                .find(|(_, best)| *best < -margin)
                .map(|(r, _)| *r);
            let r = match from_profile {
                Some(r) => r,
                None if hv.certified_below < -margin => *u_norm,
                None => return None,
            };
            need = need.max(r);
        }
        Some(need)
    }
}

#[derive(Debug, Default)]
pub struct EvaluatedShells {
    pub shells: Vec<Vec<SampleEval>>,
    pub failures: Vec<(Vec<f64>, String)>,
}

/// Evaluates the rescaled Hamiltonian at every sample and covector.
pub fn evaluate_samples(
    problem: &ControlProblem,
    candidate: &MrfCandidate,
    shells: &[Vec<LevelSample>],
    budget: &MinimizeBudget,
) -> EvaluatedShells {
    let rp = rescale(problem);
    let mut out = EvaluatedShells::default();
    for shell in shells {
        let mut evals = Vec::with_capacity(shell.len());
        for s in shell {
            match evaluate_one(&rp.rescaled, candidate, s, budget) {
                Ok(e) => evals.push(e),
                Err(e) => out.failures.push((s.x.clone(), e.to_string())),
            }
        }
        out.shells.push(evals);
    }
    out
}

fn evaluate_one(
    rescaled: &ControlProblem,
    candidate: &MrfCandidate,
    s: &LevelSample,
    budget: &MinimizeBudget,
) -> Result<SampleEval, EvalError> {
    let ps = candidate.covectors(&s.x)?;
    let mut per_covector = Vec::with_capacity(ps.len());
    let mut worst = f64::NEG_INFINITY;
    let mut worst_i = 0;
    for (i, p) in ps.iter().enumerate() {
        let hv = hamiltonian(rescaled, &s.x, candidate.p0, p, budget)?;
        if hv.value > worst {
            worst = hv.value;
            worst_i = i;
        }
        let u_norm = norm(&hv.minimizer);
        per_covector.push((hv, u_norm));
    }
    Ok(SampleEval {
        x: s.x.clone(),
        w: s.w,
        worst,
        worst_p: ps[worst_i].clone(),
        worst_u: per_covector[worst_i].0.minimizer.clone(),
        per_covector,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness {
    pub x: Vec<f64>,
    pub w: f64,
    pub p: Vec<f64>,
    pub u: Vec<f64>,
    /// Rescaled Hamiltonian value (best integrand found over all tested u).
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BandReport {
    pub lower: f64,
    pub upper: f64,
    pub samples: usize,
    /// Largest rescaled Hamiltonian over the shell's samples.
    pub worst_value: f64,
    pub witness: Witness,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Verified,
    Violated { witness: Witness },
    Inconclusive { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub passed: bool,
    pub samples: usize,
    pub failures: usize,
    /// First failing point, if any.
    pub example: Option<Vec<f64>>,
    pub detail: String,
}

impl CheckResult {
    fn new(detail: impl Into<String>) -> Self {
        Self {
            passed: true,
            samples: 0,
            failures: 0,
            example: None,
            detail: detail.into(),
        }
    }

    fn record(&mut self, ok: bool, x: &[f64]) {
        self.samples += 1;
        if !ok {
            self.passed = false;
            self.failures += 1;
            if self.example.is_none() {
                self.example = Some(x.to_vec());
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StructureReport {
    pub positive_definite: CheckResult,
    pub vanishes_on_target: CheckResult,
    pub properness: CheckResult,
    pub boundary: Option<CheckResult>,
}

impl StructureReport {
    pub fn passed(&self) -> bool {
        self.positive_definite.passed
            && self.vanishes_on_target.passed
            && self.properness.passed
            && self.boundary.as_ref().is_none_or(|b| b.passed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerificationReport {
    pub p0: f64,
    pub sigma: f64,
    pub seed: u64,
    pub bands: Vec<BandReport>,
    /// `(r, γ̂(r))`, r decreasing.
    pub gamma: Vec<(f64, f64)>,
    /// `(r, N̂(r))`; `None` where no tested radius achieves the margin.
    pub radius: Vec<(f64, Option<f64>)>,
    pub verdict: Verdict,
    pub structure: StructureReport,
    pub evaluation_failures: usize,
    pub notes: Vec<String>,
}

impl VerificationReport {
    pub fn is_verified(&self) -> bool {
        matches!(self.verdict, Verdict::Verified)
    }

    pub fn is_violated(&self) -> bool {
        matches!(self.verdict, Verdict::Violated { .. })
    }
}

pub fn verify_mrf(
    problem: &ControlProblem,
    candidate: &MrfCandidate,
    sampling: &LevelSampling,
    budget: &MinimizeBudget,
) -> Result<VerificationReport, VerifyError> {
    check_inputs(problem, candidate, sampling, budget)?;
    let shells = draw_level_samples(problem, candidate.w.as_ref(), sampling)?;
    let evals = evaluate_samples(problem, candidate, &shells, budget);
    let structure = check_positive_definite_proper(problem, candidate, sampling);
    Ok(assemble_report(candidate, sampling, &evals, structure))
}

pub(crate) fn check_inputs(
    problem: &ControlProblem,
    candidate: &MrfCandidate,
    sampling: &LevelSampling,
    budget: &MinimizeBudget,
) -> Result<(), VerifyError> {
    if !(candidate.p0 >= 0.0) || !candidate.p0.is_finite() {
        return Err(VerifyError::InvalidCandidate(format!(
            "p0 must be finite and nonnegative, got {}",
            candidate.p0
        )));
    }
    if !(candidate.w0 > 0.0) {
        return Err(VerifyError::InvalidCandidate(format!(
            "W0 must be positive, got {}",
            candidate.w0
        )));
    }
    budget.validate().map_err(VerifyError::InvalidSampling)?;
    sampling.validate(problem.n(), candidate.w0)
}

pub(crate) fn assemble_report(
    candidate: &MrfCandidate,
    sampling: &LevelSampling,
    evals: &EvaluatedShells,
    structure: StructureReport,
) -> VerificationReport {
    let mut bands = Vec::new();
    let mut gamma = Vec::new();
    let mut notes = Vec::new();
    let mut running_min = f64::INFINITY;
    let mut global_worst: Option<&SampleEval> = None;

    for (i, shell) in evals.shells.iter().enumerate() {
        let (lower, upper) = sampling.shell(i);
        if shell.len() < sampling.samples_per_band {
            notes.push(format!(
                "shell [{lower:e}, {upper:e}] has {} of {} samples",
                shell.len(),
                sampling.samples_per_band
            ));
        }
        let Some(worst) = shell
            .iter()
            .fold(None::<&SampleEval>, |acc, e| match acc {
                Some(a) if a.worst >= e.worst => Some(a),
                _ => Some(e),
            })
        else {
            notes.push(format!("shell [{lower:e}, {upper:e}] has no evaluated samples"));
            gamma.push((lower, running_min));
            continue;
        };
        if global_worst.is_none_or(|g| worst.worst > g.worst) {
            global_worst = Some(worst);
        }
        running_min = running_min.min(-worst.worst);
        gamma.push((lower, running_min));
        bands.push(BandReport {
            lower,
            upper,
            samples: shell.len(),
            worst_value: worst.worst,
            witness: witness(worst),
        });
    }

    // N̂(level i) over the samples of shells 0..=i.
    let mut radius = Vec::with_capacity(gamma.len());
    let mut envelope: Option<f64> = Some(0.0);
    for (i, &(level, g)) in gamma.iter().enumerate() {
        let raw = if g > 0.0 {
            let margin = RADIUS_MARGIN_FRACTION * g;
            evals.shells[..=i]
                .iter()
                .flatten()
                .map(|e| e.radius_for(margin))
                .try_fold(0.0f64, |acc, r| r.map(|r| acc.max(r)))
        } else {
            None
        };
        envelope = match (envelope, raw) {
            (Some(a), Some(b)) => Some(a.max(b)),
            _ => None,
        };
        radius.push((level, envelope));
    }

    let verdict = match global_worst {
        Some(w) if w.worst >= 0.0 => Verdict::Violated {
            witness: witness(w),
        },
        None => Verdict::Inconclusive {
            reason: "no sample could be evaluated".into(),
        },
        Some(_) if !evals.failures.is_empty() => Verdict::Inconclusive {
            reason: format!(
                "{} samples failed to evaluate (first: {})",
                evals.failures.len(),
                evals.failures[0].1
            ),
        },
        Some(w) if w.worst > -INCONCLUSIVE_BAND => Verdict::Inconclusive {
            reason: format!("worst Hamiltonian {:e} is within {INCONCLUSIVE_BAND:e} of zero", w.worst),
        },
        Some(_) if !structure.passed() => Verdict::Inconclusive {
            reason: "Hamiltonian negative at all samples but structural checks failed".into(),
        },
        Some(_) => Verdict::Verified,
    };

    VerificationReport {
        p0: candidate.p0,
        sigma: sampling.sigma,
        seed: sampling.seed,
        bands,
        gamma,
        radius,
        verdict,
        structure,
        evaluation_failures: evals.failures.len(),
        notes,
    }
}

fn witness(e: &SampleEval) -> Witness {
    Witness {
        x: e.x.clone(),
        w: e.w,
        p: e.worst_p.clone(),
        u: e.worst_u.clone(),
        value: e.worst,
    }
}

/// Positive definiteness, vanishing on C, properness proxy and, for bounded
/// Ω, the boundary limit W → W₀.
pub fn check_positive_definite_proper(
    problem: &ControlProblem,
    candidate: &MrfCandidate,
    sampling: &LevelSampling,
) -> StructureReport {
    let n = problem.n();
    let w = candidate.w.as_ref();
    let count = sampling.samples_per_band;
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed ^ 0x9e37_79b9_7f4a_7c15);
    let bbox = &sampling.bbox;
    let ss: &StateSpace = &problem.state_space;
    let mut x = vec![0.0; n];

    let mut pos = CheckResult::new("W > 0 on sampled points of the box inside Ω∖C");
    for _ in 0..count {
        for (v, (lo, hi)) in x.iter_mut().zip(bbox) {
            *v = rng.gen_range(*lo..*hi);
        }
        if !ss.contains(&x) || problem.target.contains(&x) {
            continue;
        }
        let ok = w.value(&x).is_ok_and(|v| v > 0.0);
        pos.record(ok, &x);
    }

    let mut zero = CheckResult::new("|W| <= 1e-6 at the target point");
    if let Some(a) = problem.target.anchor() {
        let ok = w.value(a).is_ok_and(|v| v.abs() <= 1e-6);
        zero.record(ok, a);
    } else {
        zero.detail = "target has no known point; not checked".into();
    }

    let threshold = 2.0 * sampling.sigma;
    let mut proper = CheckResult::new(format!(
        "W > 2 sigma = {threshold} on the faces of the bounding box"
    ));
    let per_face = (count / (2 * n).max(1)).max(1);
    for coord in 0..n {
        for side in [bbox[coord].0, bbox[coord].1] {
            for _ in 0..per_face {
                for (v, (lo, hi)) in x.iter_mut().zip(bbox) {
                    *v = rng.gen_range(*lo..*hi);
                }
                x[coord] = side;
                if !ss.contains(&x) {
                    continue;
                }
                let ok = w.value(&x).is_ok_and(|v| v > threshold);
                proper.record(ok, &x);
            }
        }
    }

    let boundary = ss.is_bounded().then(|| {
        let limit = if candidate.w0.is_finite() {
            0.99 * candidate.w0
        } else {
            1e3
        };
        let mut res = CheckResult::new(format!(
            "W > {limit} within 1e-3 of the boundary of Ω"
        ));
        for coord in 0..n {
            let (lo, hi) = ss.bounds()[coord];
            for side in [lo, hi] {
                if !side.is_finite() {
                    continue;
                }
                let inward = if side == lo { 1.0 } else { -1.0 };
                for _ in 0..per_face {
                    for (v, (blo, bhi)) in x.iter_mut().zip(bbox) {
                        *v = rng.gen_range(*blo..*bhi);
                    }
                    x[coord] = side + inward * 1e-3 * rng.gen_range(1e-3..1.0);
                    if !ss.contains(&x) {
                        continue;
                    }
                    let ok = w.value(&x).is_ok_and(|v| v > limit);
                    res.record(ok, &x);
                }
            }
        }
        res
    });

    StructureReport {
        positive_definite: pos,
        vanishes_on_target: zero,
        properness: proper,
        boundary,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RemarkAPrimeReport {
    pub samples: usize,
    pub skipped: usize,
    pub worst_ratio: f64,
    pub worst_x: Vec<f64>,
    pub worst_u: Vec<f64>,
    pub passed: bool,
}

/// Samples |D_u(l,f)| / (1 + |(l,f)|)² against η(x), with D_u taken by
/// central differences and measured in the Frobenius norm (an upper bound
/// for the operator norm).
pub fn check_remark_a_prime(
    problem: &ControlProblem,
    eta: &dyn Fn(&[f64]) -> f64,
    sampling: &LevelSampling,
) -> RemarkAPrimeReport {
    let n = problem.n();
    let m = problem.m();
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed ^ 0x51ab_a7c3);
    let mut rep = RemarkAPrimeReport {
        samples: 0,
        skipped: 0,
        worst_ratio: 0.0,
        worst_x: vec![0.0; n],
        worst_u: vec![0.0; m],
        passed: true,
    };
    let mut x = vec![0.0; n];
    let mut u = vec![0.0; m];
    let mut f = vec![0.0; n];
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    let cube = problem.control_set.cube_radius();
    for _ in 0..sampling.samples_per_band {
        for (v, (lo, hi)) in x.iter_mut().zip(&sampling.bbox) {
            *v = rng.gen_range(*lo..*hi);
        }
        if cube.is_finite() {
            for v in u.iter_mut() {
                *v = rng.gen_range(-cube..=cube);
            }
        } else {
            let mag = 10f64.powf(rng.gen_range(-3.0..3.0));
            for v in u.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
            let r = norm(&u).max(1e-12);
            for v in u.iter_mut() {
                *v *= mag / r;
            }
        }
        if !problem.state_space.contains(&x) || !problem.control_set.contains(&u) {
            rep.skipped += 1;
            continue;
        }
        let sample = (|| -> Result<f64, EvalError> {
            let sec = problem.system.section(&x)?;
            let l = sec.eval(&u, &mut f)?;
            let scale = (1.0 + magnitude(l, &f)).powi(-2);
            let mut frob = 0.0;
            let mut up = u.clone();
            for j in 0..m {
                let h = 1e-6 * u[j].abs().max(1.0);
                up[j] = u[j] + h;
                let lp = sec.eval(&up, &mut fp)?;
                up[j] = u[j] - h;
                let lm = sec.eval(&up, &mut fm)?;
                up[j] = u[j];
                frob += ((lp - lm) / (2.0 * h) * scale).powi(2);
                for i in 0..n {
                    frob += ((fp[i] - fm[i]) / (2.0 * h) * scale).powi(2);
                }
            }
            Ok(frob.sqrt())
        })();
        let Ok(value) = sample else {
            rep.skipped += 1;
            continue;
        };
        rep.samples += 1;
        let bound = eta(&x);
        let ratio = if bound > 0.0 {
            value / bound
        } else if value == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        if ratio > rep.worst_ratio {
            rep.worst_ratio = ratio;
            rep.worst_x.copy_from_slice(&x);
            rep.worst_u.copy_from_slice(&u);
        }
    }
    rep.passed = rep.worst_ratio <= 1.0 + 1e-6;
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;
    use crate::sysmodel::{ControlSet, FnSystem, GradientOracle};
    use std::sync::Arc;

    fn contraction() -> ControlProblem {
        ControlProblem::new(
            StateSpace::full(2),
            Target::point(vec![0.0, 0.0]),
            ControlSet::full(0),
            Arc::new(FnSystem::new(2, 0, |x, _, f| {
                f[0] = -x[0];
                f[1] = -x[1];
                Ok(0.0)
            })),
        )
        .unwrap()
    }

    fn quadratic_w() -> MrfCandidate {
        MrfCandidate::new(Arc::new(parse_expr("x1^2 + x2^2", 2, 0).unwrap()), 0.5)
    }

    fn sampling(samples: usize) -> LevelSampling {
        LevelSampling::geometric(1.0, 4, 1e-4, samples, 11, vec![(-2.0, 2.0); 2])
    }

    #[test]
    fn contraction_verified_with_linear_margin() {
        let rep = verify_mrf(
            &contraction(),
            &quadratic_w(),
            &sampling(200),
            &MinimizeBudget::default(),
        )
        .unwrap();
        assert!(rep.is_verified(), "{:?}", rep.verdict);
        // H̄ = -2|x|²/(1+|x|); with |x|² = W ≤ 2 the margin is at least W·2/(1+√2).
        for &(r, g) in &rep.gamma {
            assert!(g >= 2.0 * r / (1.0 + 2f64.sqrt()), "r={r} g={g}");
        }
        for w in rep.gamma.windows(2) {
            assert!(w[0].1 >= w[1].1);
        }
        for w in rep.radius.windows(2) {
            assert!(w[0].1.unwrap() <= w[1].1.unwrap());
        }
    }

    #[test]
    fn p0_irrelevant_without_cost() {
        let b = MinimizeBudget::default();
        let a = verify_mrf(&contraction(), &quadratic_w(), &sampling(50), &b).unwrap();
        let c = verify_mrf(&contraction(), &quadratic_w().with_p0(7.0), &sampling(50), &b).unwrap();
        assert_eq!(a.verdict, c.verdict);
        assert_eq!(a.gamma, c.gamma);
    }

    #[test]
    fn empty_band_is_reported() {
        let mut s = sampling(10);
        s.bbox = vec![(5.0, 6.0); 2];
        s.sigma = 1.0;
        let err = verify_mrf(&contraction(), &quadratic_w(), &s, &MinimizeBudget::default());
        assert!(matches!(err, Err(VerifyError::EmptyBand { .. })));
    }

    #[test]
    fn slab_fails_properness() {
        let mut cand = quadratic_w();
        cand.w = Arc::new(parse_expr("x1^2", 2, 0).unwrap());
        let rep = check_positive_definite_proper(&contraction(), &cand, &sampling(200));
        assert!(!rep.properness.passed);
        assert!(!rep.positive_definite.passed || rep.positive_definite.samples > 0);
        let ok = check_positive_definite_proper(&contraction(), &quadratic_w(), &sampling(200));
        assert!(ok.passed());
    }

    #[test]
    fn analytic_oracle_is_used() {
        let mut cand = quadratic_w();
        cand.oracle = GradientOracle::Analytic(Arc::new(|x: &[f64]| Ok(vec![vec![2.0 * x[0], 2.0 * x[1]]])));
        let rep = verify_mrf(&contraction(), &cand, &sampling(50), &MinimizeBudget::default()).unwrap();
        assert!(rep.is_verified());
    }

    #[test]
    fn a_prime_affine_passes() {
        let p = ControlProblem::new(
            StateSpace::full(1),
            Target::point(vec![0.0]),
            ControlSet::cube(1, 1.0).unwrap(),
            Arc::new(FnSystem::new(1, 1, |x, u, f| {
                f[0] = x[0] + 0.5 * u[0];
                Ok(0.0)
            })),
        )
        .unwrap();
        let s = LevelSampling::geometric(1.0, 1, 0.5, 500, 1, vec![(-1.0, 1.0)]);
        let rep = check_remark_a_prime(&p, &|_| 0.5, &s);
        assert!(rep.passed, "{rep:?}");
        assert!(rep.worst_ratio > 0.2);
    }

    #[test]
    fn a_prime_exponential_growth_bounded() {
        let p = ControlProblem::new(
            StateSpace::full(1),
            Target::point(vec![0.0]),
            ControlSet::full(1),
            Arc::new(FnSystem::new(1, 1, |x, u, f| {
                f[0] = (u[0] * u[0]).exp() * x[0];
                if !f[0].is_finite() {
                    return Err(EvalError::NonFinite);
                }
                Ok(0.0)
            })),
        )
        .unwrap();
        let s = LevelSampling::geometric(1.0, 1, 0.5, 2000, 3, vec![(0.5, 2.0)]);
        let rep = check_remark_a_prime(&p, &|_| 1.0, &s);
        assert!(rep.worst_ratio.is_finite() && rep.samples > 0, "{rep:?}");
    }
}

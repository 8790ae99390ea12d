//! Sample-and-hold feedback synthesis on the rescaled problem, with a
//! per-cell decrease certificate, stage concatenation down the level bands
//! μ_k = ν_k W(z), and the KL envelope β built from sampled comparison
//! functions.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::EvalError;
use crate::hamiltonian::minimize_integrand;
use crate::minimize::MinimizeBudget;
use crate::rescale::{cost_invariance_check, rescale, time_maps, CostInvarianceReport, TimeMapError};
use crate::sysmodel::{ControlProblem, MrfCandidate};
use crate::table::MonotoneTable;
use crate::verifier::{LevelSampling, Proposal, VerificationReport, Verdict};

/// Fraction of the sampled margin γ̂ that the feedback law must realize.
pub const DEFAULT_MARGIN_SAFETY: f64 = 0.5;
/// Slack allowed on stored certificates.
pub const CERT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeedbackError {
    #[error("no control in U ∩ B(0, {radius}) achieves integrand < {target:e} at x = {x:?} (best {best:e})")]
    NoControl {
        x: Vec<f64>,
        radius: f64,
        target: f64,
        best: f64,
    },
    #[error("step floor {floor:e} reached with the decrease certificate still failing at x = {x:?}")]
    StepFloor { x: Vec<f64>, floor: f64 },
    #[error("stage [{lower:e}, {upper:e}] exceeded its time cap {cap:e}")]
    StageTimeCap { lower: f64, upper: f64, cap: f64 },
    #[error("margin profile unavailable: {0}")]
    Margins(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    TimeMap(#[from] TimeMapError),
}

impl FeedbackError {
    /// Whether the error exposes an MRF violation rather than a numerical
    /// limitation of the synthesis.
    pub fn is_violation(&self) -> bool {
        matches!(self, FeedbackError::NoControl { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepBudget {
    pub eps: f64,
    /// Initial (and maximal) hold interval in rescaled time.
    pub delta: f64,
    pub floor: f64,
    pub substeps: usize,
    /// Stage cap is `time_cap_factor·(ε+1)·μ̄/γ(μ̂/4)`.
    pub time_cap_factor: f64,
}

impl Default for StepBudget {
    fn default() -> Self {
        Self {
            eps: 1.0,
            delta: 0.5,
            floor: 1e-6,
            substeps: 16,
            time_cap_factor: 1e3,
        }
    }
}

impl StepBudget {
    pub fn validate(&self) -> Result<(), FeedbackError> {
        let ok = self.eps > 0.0
            && self.floor > 0.0
            && self.delta > self.floor
            && self.delta.is_finite()
            && self.substeps > 0
            && self.time_cap_factor > 0.0;
        if ok {
            Ok(())
        } else {
            Err(FeedbackError::Invalid(format!(
                "step budget needs eps > 0, delta > floor > 0, substeps > 0: {self:?}"
            )))
        }
    }
}

/// Margin γ(r) and radius N(r) used by the feedback law, derived from a
/// verification report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Margins {
    pub gamma: MonotoneTable,
    /// `(r, N̂(r))`, r decreasing.
    pub radius: Vec<(f64, Option<f64>)>,
    pub sigma: f64,
}

impl Margins {
    /// Conservative piecewise-linear γ below the sampled γ̂ step function,
    /// scaled by `safety`. With levels a₀ < … < a_{K-1} < a_K = 2σ the
    /// nodes are (a_{j+1}, safety·γ̂(a_j)).
    pub fn from_report(report: &VerificationReport, safety: f64) -> Result<Self, FeedbackError> {
        if let Verdict::Violated { witness } = &report.verdict {
            return Err(FeedbackError::Margins(format!(
                "candidate violated at x = {:?}",
                witness.x
            )));
        }
        if !(safety > 0.0 && safety <= 1.0) {
            return Err(FeedbackError::Margins(format!("safety factor {safety} not in ]0,1]")));
        }
        let mut levels: Vec<(f64, f64)> = report.gamma.iter().rev().copied().collect();
        if levels.is_empty() || levels.iter().any(|(_, g)| !(*g > 0.0) || !g.is_finite()) {
            return Err(FeedbackError::Margins("γ̂ table has nonpositive entries".into()));
        }
        levels.push((2.0 * report.sigma, f64::NAN));
        let nodes: Vec<(f64, f64)> = levels
            .windows(2)
            .map(|w| (w[1].0, safety * w[0].1))
            .collect();
        let (a_k, g_last) = *nodes.last().unwrap();
        let gamma = MonotoneTable::new(&nodes, g_last / a_k).map_err(FeedbackError::Margins)?;
        Ok(Self {
            gamma,
            radius: report.radius.clone(),
            sigma: report.sigma,
        })
    }

    pub fn gamma_at(&self, r: f64) -> f64 {
        self.gamma.eval(r)
    }

    /// N̂ valid on W⁻¹([r, 2σ]), if the report has one.
    pub fn radius_at(&self, r: f64) -> Option<f64> {
        self.radius
            .iter()
            .find(|(level, _)| *level <= r)
            .or(self.radius.last())
            .and_then(|(_, n)| *n)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Selection {
    pub u: Vec<f64>,
    /// max over covectors of the integrand at `u`.
    pub integrand: f64,
    pub radius: f64,
    /// Radii from N upward that failed before `radius` succeeded.
    pub widened_from: Vec<f64>,
}

/// Control in U ∩ B(0, N) with ⟨p, f(x,u)⟩ + p₀ l(x,u) < −γ for every
/// covector p of the candidate at x. `problem` is used as given, normally
/// the rescaled one. Schedule radii below N are tried first, so the
/// smallest certifying ball wins; past N the ball widens through the rest
/// of the schedule and the widening is recorded.
pub fn feedback_select(
    problem: &ControlProblem,
    candidate: &MrfCandidate,
    x: &[f64],
    radius: f64,
    gamma: f64,
    budget: &MinimizeBudget,
) -> Result<Selection, FeedbackError> {
    let ps = candidate.covectors(x)?;
    let mut radii: Vec<f64> = budget.radii.iter().copied().filter(|r| *r < radius).collect();
    radii.push(radius);
    radii.extend(budget.radii.iter().copied().filter(|r| *r > radius));
    let mut tried = Vec::new();
    let mut best = f64::INFINITY;
    for &r in &radii {
        let hv = minimize_integrand(problem, x, candidate.p0, &ps, Some(r), budget)?;
        if hv.value < -gamma {
            return Ok(Selection {
                u: hv.minimizer,
                integrand: hv.value,
                radius: r,
                widened_from: tried,
            });
        }
        best = best.min(hv.value);
        if r >= radius {
            tried.push(r);
        }
    }
    Err(FeedbackError::NoControl {
        x: x.to_vec(),
        radius: *radii.last().unwrap(),
        target: -gamma,
        best,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub s: f64,
    pub t: f64,
    pub x: Vec<f64>,
    /// Control held on [s, s_next].
    pub u: Vec<f64>,
    pub w: f64,
    pub cumulative_cost: f64,
    /// W(y(s)) − W(y(cell start)) + p₀·∫ l̄ over the cell so far.
    pub cert_lhs: f64,
    /// −γ(W(y(cell start)))·(s − cell start)/(ε+1).
    pub cert_rhs: f64,
    pub beta_bound: Option<f64>,
    pub d_target: f64,
    pub stage_boundary: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    pub n: usize,
    pub m: usize,
    pub p0: f64,
    pub rows: Vec<TrajectoryRow>,
    pub cells: usize,
    /// Bands [μ_k, μ_{k−1}] completed.
    pub stages: Vec<(f64, f64)>,
}

impl Trajectory {
    pub fn start(problem: &ControlProblem, p0: f64, x: &[f64], w: f64) -> Self {
        Self {
            n: problem.n(),
            m: problem.m(),
            p0,
            rows: vec![TrajectoryRow {
                s: 0.0,
                t: 0.0,
                x: x.to_vec(),
                u: vec![0.0; problem.m()],
                w,
                cumulative_cost: 0.0,
                cert_lhs: 0.0,
                cert_rhs: 0.0,
                beta_bound: None,
                d_target: problem.target.distance(x),
                stage_boundary: true,
            }],
            cells: 0,
            stages: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.cells == 0
    }

    pub fn last(&self) -> &TrajectoryRow {
        self.rows.last().expect("trajectory always has its initial row")
    }

    pub fn total_cost(&self) -> f64 {
        self.last().cumulative_cost
    }

    pub fn s(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.s).collect()
    }

    pub fn states(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.x.clone()).collect()
    }

    /// One control per segment.
    pub fn controls(&self) -> Vec<Vec<f64>> {
        self.rows[..self.rows.len() - 1]
            .iter()
            .map(|r| r.u.clone())
            .collect()
    }

    /// Largest `cert_lhs − cert_rhs` over all rows (≤ 0 when every
    /// certificate holds exactly).
    pub fn worst_certificate(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.cert_lhs - r.cert_rhs)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(out);
        let mut header = vec!["s".to_string(), "t".to_string()];
        header.extend((1..=self.n).map(|i| format!("x_{i}")));
        header.extend((1..=self.m).map(|i| format!("u_{i}")));
        header.extend(
            [
                "W",
                "cumulative_cost",
                "cert_lhs",
                "cert_rhs",
                "beta_bound",
                "d_target",
                "stage_boundary",
            ]
            .map(String::from),
        );
        wr.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.s.to_string(), r.t.to_string()];
            rec.extend(r.x.iter().map(f64::to_string));
            rec.extend(r.u.iter().map(f64::to_string));
            rec.push(r.w.to_string());
            rec.push(r.cumulative_cost.to_string());
            rec.push(r.cert_lhs.to_string());
            rec.push(r.cert_rhs.to_string());
            rec.push(r.beta_bound.map_or(String::new(), |b| b.to_string()));
            rec.push(r.d_target.to_string());
            rec.push(u8::from(r.stage_boundary).to_string());
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Level bands kept by every integration substep of a stage.
struct Corridor {
    low: f64,
    high: f64,
}

struct CellRun {
    /// (s offset, state, cost increment) at each substep end.
    points: Vec<(f64, Vec<f64>, f64, f64)>,
}

/// RK4 for the augmented state (y, c) with c' = l̄(y, v).
fn integrate_cell(
    problem: &ControlProblem,
    candidate: &MrfCandidate,
    y0: &[f64],
    u: &[f64],
    duration: f64,
    substeps: usize,
    corridor: &Corridor,
) -> Option<CellRun> {
    let n = y0.len();
    let h = duration / substeps as f64;
    let mut y = y0.to_vec();
    let mut c = 0.0;
    let mut points = Vec::with_capacity(substeps);
    let mut f = vec![0.0; n];
    let mut field = |x: &[f64], dx: &mut [f64]| -> Option<f64> {
        if !problem.state_space.contains(x) {
            return None;
        }
        let l = problem.system.section(x).ok()?.eval(u, &mut f).ok()?;
        dx.copy_from_slice(&f);
        Some(l)
    };
    let mut k = vec![vec![0.0; n]; 4];
    let mut kc = [0.0; 4];
    let mut tmp = vec![0.0; n];
    for step in 0..substeps {
        kc[0] = field(&y, &mut k[0])?;
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k[0][i];
        }
        kc[1] = field(&tmp, &mut k[1])?;
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k[1][i];
        }
        kc[2] = field(&tmp, &mut k[2])?;
        for i in 0..n {
            tmp[i] = y[i] + h * k[2][i];
        }
        kc[3] = field(&tmp, &mut k[3])?;
        for i in 0..n {
            y[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
        }
        c += h / 6.0 * (kc[0] + 2.0 * kc[1] + 2.0 * kc[2] + kc[3]);
        if !problem.state_space.contains(&y) || problem.target.contains(&y) {
            return None;
        }
        let w = candidate.value(&y).ok()?;
        if !(w >= corridor.low && w <= corridor.high) {
            return None;
        }
        points.push(((step + 1) as f64 * h, y.clone(), c, w));
    }
    Some(CellRun { points })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageSummary {
    pub upper: f64,
    pub lower: f64,
    pub duration: f64,
    pub cells: usize,
    pub halvings: usize,
}

/// One stage: from W(x0) = μ̄ down to W = μ̂ under
/// a piecewise-constant feedback on the rescaled `problem`. Appends rows
/// to `traj` (whose last row must be at x0).
#[allow(clippy::too_many_arguments)]
pub fn sample_hold_stage(
    problem: &ControlProblem,
    candidate: &MrfCandidate,
    margins: &Margins,
    mu_bar: f64,
    mu_hat: f64,
    step: &StepBudget,
    budget: &MinimizeBudget,
    traj: &mut Trajectory,
) -> Result<StageSummary, FeedbackError> {
    step.validate()?;
    let x0 = traj.last().x.clone();
    let w0 = traj.last().w;
    if (w0 - mu_bar).abs() > 1e-9 * mu_bar.max(1.0) {
        return Err(FeedbackError::Invalid(format!(
            "stage start has W = {w0}, expected {mu_bar}"
        )));
    }
    if !(mu_hat > 0.0 && mu_hat <= mu_bar) {
        return Err(FeedbackError::Invalid(format!(
            "need 0 < mu_hat <= mu_bar (got {mu_hat}, {mu_bar})"
        )));
    }
    let mut summary = StageSummary {
        upper: mu_bar,
        lower: mu_hat,
        duration: 0.0,
        cells: 0,
        halvings: 0,
    };
    if w0 <= mu_hat {
        return Ok(summary);
    }
    let corridor = Corridor {
        low: mu_hat / 4.0,
        high: 2.0 * margins.sigma,
    };
    let gamma_floor = margins.gamma_at(mu_hat / 4.0);
    let cap = step.time_cap_factor * (step.eps + 1.0) * mu_bar / gamma_floor;
    let radius = margins
        .radius_at(mu_hat / 4.0)
        .unwrap_or(budget.radii[0]);
    let p0 = candidate.p0;

    let mut y = x0;
    let mut w = w0;
    let mut delta = step.delta;
    loop {
        let gamma = margins.gamma_at(w);
        let sel = feedback_select(problem, candidate, &y, radius, gamma, budget)?;
        let slope = gamma / (step.eps + 1.0);
        let check = |run: &CellRun| {
            run.points
                .iter()
                .all(|(ds, _, c, wy)| wy - w + p0 * c <= -slope * ds + CERT_TOL)
        };
        let run = loop {
            match integrate_cell(problem, candidate, &y, &sel.u, delta, step.substeps, &corridor) {
                Some(run) if check(&run) => break run,
                _ => {
                    delta *= 0.5;
                    summary.halvings += 1;
                    if delta < step.floor {
                        return Err(FeedbackError::StepFloor {
                            x: y.clone(),
                            floor: step.floor,
                        });
                    }
                }
            }
        };
        let (run, hit) = match run.points.iter().position(|p| p.3 <= mu_hat) {
            None => (run, false),
            Some(_) => {
                // Shorten the cell so it ends on W = μ̂ (from below).
                let (mut lo, mut hi) = (0.0, delta);
                let mut best = run;
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    match integrate_cell(problem, candidate, &y, &sel.u, mid, step.substeps, &corridor) {
                        Some(r) if check(&r) => {
                            if r.points.last().unwrap().3 <= mu_hat {
                                hi = mid;
                                best = r;
                            } else {
                                lo = mid;
                            }
                        }
                        _ => hi = mid,
                    }
                    if hi - lo <= 1e-14 * hi {
                        break;
                    }
                }
                // Keep substeps up to the first crossing.
                let cut = best.points.iter().position(|p| p.3 <= mu_hat).unwrap();
                best.points.truncate(cut + 1);
                (best, true)
            }
        };
        let s0 = traj.last().s;
        let cost0 = traj.last().cumulative_cost;
        traj.rows.last_mut().unwrap().u = sel.u.clone();
        for (ds, x, c, wy) in &run.points {
            traj.rows.push(TrajectoryRow {
                s: s0 + ds,
                t: f64::NAN,
                x: x.clone(),
                u: sel.u.clone(),
                w: *wy,
                cumulative_cost: cost0 + c,
                cert_lhs: wy - w + p0 * c,
                cert_rhs: -slope * ds,
                beta_bound: None,
                d_target: problem.target.distance(x),
                stage_boundary: false,
            });
        }
        let last = run.points.last().unwrap();
        summary.duration += last.0;
        summary.cells += 1;
        traj.cells += 1;
        y = last.1.clone();
        w = last.3;
        if hit {
            traj.rows.last_mut().unwrap().stage_boundary = true;
            traj.stages.push((mu_hat, mu_bar));
            return Ok(summary);
        }
        if summary.duration > cap {
            return Err(FeedbackError::StageTimeCap {
                lower: mu_hat,
                upper: mu_bar,
                cap,
            });
        }
        delta = (2.0 * delta).min(step.delta);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Stop once W ≤ fraction·W(z).
    Fraction(f64),
    Absolute(f64),
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule::Fraction(1e-3)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisOptions {
    /// Ratio of the geometric schedule ν_k = ratio^k.
    pub nu_ratio: f64,
    pub stop: StopRule,
    pub step: StepBudget,
    pub minimize: MinimizeBudget,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            nu_ratio: 0.5,
            stop: StopRule::default(),
            step: StepBudget::default(),
            minimize: MinimizeBudget::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Synthesis {
    pub trajectory: Trajectory,
    pub stages: Vec<StageSummary>,
    pub w_z: f64,
    pub stop_threshold: f64,
    /// Set when a stage failed; the trajectory is the part built so far.
    #[serde(skip)]
    pub error: Option<FeedbackError>,
    pub error_message: Option<String>,
}

impl Synthesis {
    pub fn completed(&self) -> bool {
        self.error.is_none()
    }

    /// W(z)/p₀, the value bound; infinite when p₀ = 0.
    pub fn cost_bound(&self) -> f64 {
        if self.trajectory.p0 > 0.0 {
            self.w_z / self.trajectory.p0
        } else {
            f64::INFINITY
        }
    }
}

/// Concatenates stages for the bands [μ_k, μ_{k−1}], μ_k = ν_k W(z), until
/// W ≤ the stop threshold, then fills the original-time column.
pub fn synthesize(
    problem: &ControlProblem,
    candidate: &MrfCandidate,
    z: &[f64],
    margins: &Margins,
    opts: &SynthesisOptions,
) -> Result<Synthesis, FeedbackError> {
    opts.step.validate()?;
    if !(opts.nu_ratio > 0.0 && opts.nu_ratio < 1.0) {
        return Err(FeedbackError::Invalid(format!(
            "nu ratio must lie in ]0,1[, got {}",
            opts.nu_ratio
        )));
    }
    if z.len() != problem.n() || !problem.state_space.contains(z) {
        return Err(FeedbackError::Invalid(format!("initial state {z:?} not in Ω")));
    }
    let rp = rescale(problem);
    let w_z = candidate.value(z)?;
    if w_z > margins.sigma * (1.0 + 1e-12) {
        return Err(FeedbackError::Invalid(format!(
            "W(z) = {w_z} exceeds sigma = {}",
            margins.sigma
        )));
    }
    let stop = match opts.stop {
        StopRule::Fraction(f) => f * w_z,
        StopRule::Absolute(v) => v,
    };
    let mut traj = Trajectory::start(problem, candidate.p0, z, w_z);
    let mut stages = Vec::new();
    let mut error = None;
    let mut mu_bar = w_z;
    if !problem.target.contains(z) && w_z > stop {
        loop {
            let mu_hat = (mu_bar * opts.nu_ratio).max(stop);
            match sample_hold_stage(
                &rp.rescaled,
                candidate,
                margins,
                traj.last().w,
                mu_hat,
                &opts.step,
                &opts.minimize,
                &mut traj,
            ) {
                Ok(s) => stages.push(s),
                Err(e) => {
                    error = Some(e);
                    break;
                }
            }
            mu_bar = mu_hat;
            if traj.last().w <= stop {
                break;
            }
        }
    }
    fill_original_time(problem, &mut traj)?;
    Ok(Synthesis {
        trajectory: traj,
        stages,
        w_z,
        stop_threshold: stop,
        error_message: error.as_ref().map(|e| e.to_string()),
        error,
    })
}

fn fill_original_time(problem: &ControlProblem, traj: &mut Trajectory) -> Result<(), FeedbackError> {
    let map = time_maps(problem, &traj.s(), &traj.states(), &traj.controls())?;
    for (row, t) in traj.rows.iter_mut().zip(map.t) {
        row.t = t;
    }
    Ok(())
}

/// ∫ l̄ ds against ∫ l dt along a synthesized trajectory.
pub fn trajectory_cost_invariance(
    problem: &ControlProblem,
    traj: &Trajectory,
) -> Result<CostInvarianceReport, FeedbackError> {
    let s = traj.s();
    let states = traj.states();
    let controls = traj.controls();
    let map = time_maps(problem, &s, &states, &controls)?;
    Ok(cost_invariance_check(problem, &states, &controls, &map)?)
}

/// β(r, t) = σ⁺(γ̃⁻¹(σ₋⁻¹(r)·2(ε+1)/(ε+1+t))) with tabulated σ±, γ̃.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KlEnvelope {
    pub sigma_minus: MonotoneTable,
    pub sigma_plus: MonotoneTable,
    pub gamma_tilde: MonotoneTable,
    pub eps: f64,
}

impl KlEnvelope {
    pub fn beta(&self, r: f64, t: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        let level = self.sigma_minus.sup_inverse(r);
        let scaled = level * 2.0 * (self.eps + 1.0) / (self.eps + 1.0 + t.max(0.0));
        self.sigma_plus.eval(self.gamma_tilde.sup_inverse(scaled))
    }
}

/// Nodes per decade for the σ± tables.
const ENVELOPE_NODES_PER_DECADE: f64 = 16.0;

/// Samples W and the target distance over the sampling box (and around the
/// target) to tabulate σ₋(r) = min{r, min d over W ≥ r} and
/// σ⁺(r) = max d over W ≤ r, shifted one node in the conservative direction.
pub fn build_kl_envelope(
    problem: &ControlProblem,
    candidate: &MrfCandidate,
    margins: &Margins,
    sampling: &LevelSampling,
    eps: f64,
) -> Result<KlEnvelope, FeedbackError> {
    if !(eps > 0.0) {
        return Err(FeedbackError::Invalid(format!("eps must be positive, got {eps}")));
    }
    let n = problem.n();
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed ^ 0x6b1_e7e1_0e);
    let proposal = Proposal::new(&sampling.bbox, &problem.target);
    let total = (sampling.samples_per_band * sampling.levels.len()).max(1000);
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(total);
    let mut x = vec![0.0; n];
    for _ in 0..total {
        proposal.draw(&mut rng, &mut x);
        if !proposal.in_box(&x) || !problem.state_space.contains(&x) {
            continue;
        }
        if let Ok(w) = candidate.value(&x) {
            if w > 0.0 && w.is_finite() {
                pts.push((w, problem.target.distance(&x)));
            }
        }
    }
    if pts.len() < 2 {
        return Err(FeedbackError::Invalid("no samples for the KL envelope".into()));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let w_lo = pts[0].0;
    let w_hi = pts[pts.len() - 1].0;
    let decades = (w_hi / w_lo).log10().max(1.0);
    let count = (decades * ENVELOPE_NODES_PER_DECADE).ceil() as usize + 1;
    let nodes: Vec<f64> = (0..count)
        .map(|i| w_lo * (w_hi / w_lo).powf(i as f64 / (count - 1) as f64))
        .collect();

    // prefix max of d and suffix min of d along increasing W.
    let mut prefix = Vec::with_capacity(pts.len());
    let mut acc = 0.0f64;
    for p in &pts {
        acc = acc.max(p.1);
        prefix.push(acc);
    }
    let mut suffix = vec![0.0; pts.len()];
    let mut acc = f64::INFINITY;
    for (i, p) in pts.iter().enumerate().rev() {
        acc = acc.min(p.1);
        suffix[i] = acc;
    }
    let max_d_upto = |r: f64| {
        let k = pts.partition_point(|p| p.0 <= r);
        if k == 0 {
            0.0
        } else {
            prefix[k - 1]
        }
    };
    let min_d_from = |r: f64| {
        let k = pts.partition_point(|p| p.0 < r);
        suffix.get(k).copied().unwrap_or(f64::INFINITY)
    };

    let mut plus = Vec::with_capacity(count);
    let mut minus = Vec::with_capacity(count);
    for (i, &r) in nodes.iter().enumerate() {
        let next = nodes.get(i + 1).copied().unwrap_or(r);
        plus.push((r, max_d_upto(next)));
        let prev = if i == 0 { 0.0 } else { nodes[i - 1] };
        let lo = min_d_from(prev).min(r);
        minus.push((r, lo));
    }
    let plus_tail = plus.last().map_or(0.0, |(r, d)| d / r);
    let sigma_plus = MonotoneTable::new(&plus, plus_tail).map_err(FeedbackError::Invalid)?;
    let sigma_minus = MonotoneTable::new(&minus, 0.0).map_err(FeedbackError::Invalid)?;

    let mut gt_nodes: Vec<f64> = margins.gamma.nodes().map(|(r, _)| r).collect();
    gt_nodes.extend(nodes.iter().copied());
    gt_nodes.sort_by(f64::total_cmp);
    gt_nodes.dedup();
    let gt: Vec<(f64, f64)> = gt_nodes
        .iter()
        .map(|&r| (r, r.min(margins.gamma_at(r))))
        .collect();
    let tail = margins.gamma.eval(1.0 + gt_nodes[gt_nodes.len() - 1])
        - margins.gamma.eval(gt_nodes[gt_nodes.len() - 1]);
    let gamma_tilde = MonotoneTable::new(&gt, tail.clamp(0.0, 1.0)).map_err(FeedbackError::Invalid)?;
    Ok(KlEnvelope {
        sigma_minus,
        sigma_plus,
        gamma_tilde,
        eps,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GacReport {
    pub samples: usize,
    /// min over rows of β(d(z), s) − d(y(s)).
    pub worst_slack_s: f64,
    /// min over rows of β(d(z), t) − d(x(t)).
    pub worst_slack_t: f64,
    pub passed: bool,
}

/// Checks d ≤ β(d(z), ·) in both time parameterizations and stores
/// β(d(z), s) in the trajectory's `beta_bound` column.
pub fn check_gac_bound(traj: &mut Trajectory, env: &KlEnvelope) -> GacReport {
    let d0 = traj.rows[0].d_target;
    let mut rep = GacReport {
        samples: 0,
        worst_slack_s: f64::INFINITY,
        worst_slack_t: f64::INFINITY,
        passed: true,
    };
    if traj.is_empty() {
        return rep;
    }
    for row in &mut traj.rows {
        let bs = env.beta(d0, row.s);
        let bt = env.beta(d0, row.t);
        row.beta_bound = Some(bs);
        rep.samples += 1;
        rep.worst_slack_s = rep.worst_slack_s.min(bs - row.d_target);
        rep.worst_slack_t = rep.worst_slack_t.min(bt - row.d_target);
    }
    rep.passed = rep.worst_slack_s >= 0.0 && rep.worst_slack_t >= 0.0;
    rep
}

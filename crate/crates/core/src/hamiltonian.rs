//! The infimal Hamiltonian H(x, p₀, p) = inf_u ⟨p, f(x,u)⟩ + p₀ l(x,u),
//! its restriction to control balls, and the sign comparison with the
//! rescaled problem.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{check_dim, EvalError};
use crate::minimize::{grid_search, refine, Feasible, MinimizeBudget, Tracker};
use crate::rescale::rescale;
use crate::sysmodel::ControlProblem;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HamiltonianValue {
    /// Best value found; `-inf` when the divergence flag was raised.
    pub value: f64,
    pub diverged: bool,
    pub minimizer: Vec<f64>,
    /// Integrand at `minimizer`.
    pub certified_below: f64,
    /// `(R, best integrand over evaluated u with |u| ≤ R)` for the radius
    /// schedule; empty on bounded searches.
    #[serde(skip)]
    pub ball_profile: Vec<(f64, f64)>,
}

impl HamiltonianValue {
    pub fn is_negative(&self) -> bool {
        self.diverged || self.value < 0.0
    }
}

fn integrand(p: &[f64], p0: f64, l: f64, f: &[f64]) -> f64 {
    p.iter().zip(f).map(|(a, b)| a * b).sum::<f64>() + p0 * l
}

/// min over u of max over `ps` of ⟨p, f(x,u)⟩ + p₀ l(x,u).
///
/// With `ball = None` on an unbounded control set the search runs through
/// the radius schedule and may raise the divergence flag. With a ball, or on
/// a bounded set, the search is a single stage and the value is finite.
pub fn minimize_integrand(
    problem: &ControlProblem,
    x: &[f64],
    p0: f64,
    ps: &[Vec<f64>],
    ball: Option<f64>,
    budget: &MinimizeBudget,
) -> Result<HamiltonianValue, EvalError> {
    let n = problem.n();
    let m = problem.m();
    check_dim(n, x.len())?;
    for p in ps {
        check_dim(n, p.len())?;
    }
    let section = problem.system.section(x)?;
    let mut f = vec![0.0; n];
    let mut obj = |u: &[f64]| -> Result<f64, EvalError> {
        let l = section.eval(u, &mut f)?;
        Ok(ps
            .iter()
            .map(|p| integrand(p, p0, l, &f))
            .fold(f64::NEG_INFINITY, f64::max))
    };
    let set = &problem.control_set;
    let points = budget.grid_points;

    if set.is_bounded() || ball.is_some() {
        let feasible = Feasible::new(set, f64::INFINITY, ball);
        let mut tr = Tracker::new(m, &[]);
        grid_search(&feasible, m, points, &mut obj, &mut tr)?;
        refine(&feasible, m, points, budget.refine_iters, &mut obj, &mut tr)?;
        return Ok(HamiltonianValue {
            value: tr.value,
            diverged: false,
            minimizer: tr.u,
            certified_below: tr.value,
            ball_profile: Vec::new(),
        });
    }

    let mut tr = Tracker::new(m, &budget.radii);
    let flagged = |tr: Tracker| HamiltonianValue {
        value: f64::NEG_INFINITY,
        diverged: true,
        certified_below: tr.value,
        minimizer: tr.u,
        ball_profile: tr.profile,
    };
    // Each radius gets its own grid, a descent from that grid's best node
    // and a descent from the best point of the smaller radii, so a narrow
    // dip is not lost to the coarser lattice of a larger cube.
    for &r in &budget.radii {
        let feasible = Feasible::new(set, r, None);
        let mut carried = Tracker::new(m, &[]);
        if tr.value.is_finite() {
            carried.offer(&tr.u, tr.value);
        }
        let mut local = Tracker::new(m, &[]);
        let mut both = |u: &[f64]| -> Result<f64, EvalError> {
            let v = obj(u)?;
            tr.offer(u, v);
            Ok(v)
        };
        grid_search(&feasible, m, points, &mut both, &mut local)?;
        refine(&feasible, m, points, budget.refine_iters, &mut both, &mut local)?;
        if carried.value.is_finite() {
            refine(&feasible, m, points, budget.refine_iters, &mut both, &mut carried)?;
        }
        if tr.value < budget.divergence {
            return Ok(flagged(tr));
        }
    }
    Ok(HamiltonianValue {
        value: tr.value,
        diverged: false,
        certified_below: tr.value,
        minimizer: tr.u,
        ball_profile: tr.profile,
    })
}

pub fn hamiltonian(
    problem: &ControlProblem,
    x: &[f64],
    p0: f64,
    p: &[f64],
    budget: &MinimizeBudget,
) -> Result<HamiltonianValue, EvalError> {
    minimize_integrand(problem, x, p0, &[p.to_vec()], None, budget)
}

/// Minimum over U ∩ B(0, N); always finite.
pub fn truncated_hamiltonian(
    problem: &ControlProblem,
    x: &[f64],
    p0: f64,
    p: &[f64],
    radius: f64,
    budget: &MinimizeBudget,
) -> Result<HamiltonianValue, EvalError> {
    if !(radius > 0.0) {
        return Err(EvalError::Domain {
            msg: format!("truncation radius must be positive, got {radius}"),
        });
    }
    minimize_integrand(problem, x, p0, &[p.to_vec()], Some(radius), budget)
}

pub const SIGN_DEAD_BAND: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SignDisagreement {
    pub x: Vec<f64>,
    pub p0: f64,
    pub p: Vec<f64>,
    pub original: f64,
    pub rescaled: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SignEquivalenceReport {
    pub samples: usize,
    pub evaluated: usize,
    pub evaluation_failures: usize,
    /// Samples where either value lies inside the dead band.
    pub dead_band: usize,
    pub disagreements: Vec<SignDisagreement>,
}

/// Draws `(x, p₀, p)` with x uniform in `bbox` ∩ Ω∖C, p₀ ∈ [0, 2] and
/// p ∈ [−1, 1]ⁿ, and compares the signs of H and H̄.
pub fn sign_equivalence_check(
    problem: &ControlProblem,
    bbox: &[(f64, f64)],
    samples: usize,
    seed: u64,
    budget: &MinimizeBudget,
) -> SignEquivalenceReport {
    let rp = rescale(problem);
    let n = problem.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = SignEquivalenceReport {
        samples,
        evaluated: 0,
        evaluation_failures: 0,
        dead_band: 0,
        disagreements: Vec::new(),
    };
    let mut x = vec![0.0; n];
    for _ in 0..samples {
        let mut found = false;
        for _ in 0..1000 {
            for (v, (a, b)) in x.iter_mut().zip(bbox) {
                *v = rng.gen_range(*a..*b);
            }
            if problem.state_space.contains(&x) && problem.target.distance(&x) > 0.0 {
                found = true;
                break;
            }
        }
        let p0: f64 = rng.gen_range(0.0..2.0);
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if !found {
            rep.evaluation_failures += 1;
            continue;
        }
        let h = hamiltonian(&rp.base, &x, p0, &p, budget);
        let hb = hamiltonian(&rp.rescaled, &x, p0, &p, budget);
        let (h, hb) = match (h, hb) {
            (Ok(h), Ok(hb)) => (h, hb),
            _ => {
                rep.evaluation_failures += 1;
                continue;
            }
        };
        rep.evaluated += 1;
        let hv = if h.diverged { f64::NEG_INFINITY } else { h.value };
        if hv.abs() <= SIGN_DEAD_BAND || hb.value.abs() <= SIGN_DEAD_BAND {
            rep.dead_band += 1;
            continue;
        }
        if (hv < 0.0) != (hb.value < 0.0) {
            rep.disagreements.push(SignDisagreement {
                x: x.clone(),
                p0,
                p,
                original: hv,
                rescaled: hb.value,
            });
        }
    }
    rep
}

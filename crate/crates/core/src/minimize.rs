//! Derivative-free minimization over control sets: a deterministic lattice
//! followed by coordinate descent with a shrinking step.

use serde::{Deserialize, Serialize};

use crate::error::EvalError;
use crate::sysmodel::{norm, ControlKind, ControlSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MinimizeBudget {
    pub grid_points: usize,
    pub refine_iters: usize,
    /// Cube half-widths searched on unbounded control sets.
    pub radii: Vec<f64>,
    /// A running minimum below this raises the −∞ flag.
    pub divergence: f64,
}

impl Default for MinimizeBudget {
    fn default() -> Self {
        Self {
            grid_points: 33,
            refine_iters: 50,
            radii: vec![1.0, 10.0, 100.0, 1000.0],
            divergence: -1e6,
        }
    }
}

impl MinimizeBudget {
    pub fn validate(&self) -> Result<(), String> {
        if self.grid_points == 0 || self.refine_iters == 0 {
            return Err("grid_points and refine_iters must be positive".into());
        }
        if self.radii.is_empty() || self.radii.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err("radius schedule must be nonempty, positive and finite".into());
        }
        if self.radii.windows(2).any(|w| w[0] >= w[1]) {
            return Err("radius schedule must be strictly increasing".into());
        }
        if !(self.divergence < 0.0) {
            return Err("divergence threshold must be negative".into());
        }
        Ok(())
    }

    pub fn max_radius(&self) -> f64 {
        *self.radii.last().expect("validated budget has radii")
    }
}

/// U ∩ cube(r) ∩ ball(ρ), with `r` finite.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Feasible {
    pub cube: f64,
    pub ball: f64,
}

impl Feasible {
    /// Intersection of `set` with the search cube `r` and optional ball.
    pub fn new(set: &ControlSet, r: f64, ball: Option<f64>) -> Self {
        let (mut cube, mut b) = match set.kind() {
            ControlKind::Box(s) => (s.min(r), f64::INFINITY),
            ControlKind::Ball(s) => (s.min(r), s),
            ControlKind::Full => (r, f64::INFINITY),
        };
        if let Some(n) = ball {
            b = b.min(n);
            cube = cube.min(n);
        }
        Self { cube, ball: b }
    }

    pub fn project(&self, u: &mut [f64]) {
        for v in u.iter_mut() {
            *v = v.clamp(-self.cube, self.cube);
        }
        if self.ball.is_finite() {
            let r = norm(u);
            if r > self.ball {
                let s = self.ball / r;
                for v in u.iter_mut() {
                    *v *= s;
                }
            }
        }
    }
}

/// Best point seen, plus the best over each ball of a radius list.
pub(crate) struct Tracker {
    pub value: f64,
    pub u: Vec<f64>,
    pub profile: Vec<(f64, f64)>,
    pub evals: usize,
}

impl Tracker {
    pub fn new(m: usize, radii: &[f64]) -> Self {
        Self {
            value: f64::INFINITY,
            u: vec![0.0; m],
            profile: radii.iter().map(|&r| (r, f64::INFINITY)).collect(),
            evals: 0,
        }
    }

    pub(crate) fn offer(&mut self, u: &[f64], v: f64) -> bool {
        self.evals += 1;
        if !self.profile.is_empty() {
            let r = norm(u);
            for (radius, best) in self.profile.iter_mut() {
                if r <= *radius && v < *best {
                    *best = v;
                }
            }
        }
        if v < self.value {
            self.value = v;
            self.u.copy_from_slice(u);
            true
        } else {
            false
        }
    }
}

pub(crate) type Objective<'a> = dyn FnMut(&[f64]) -> Result<f64, EvalError> + 'a;

/// Evaluates the objective on the lattice of `points` per dimension over
/// the feasible cube, each node projected into the feasible set.
pub(crate) fn grid_search(
    feasible: &Feasible,
    m: usize,
    points: usize,
    obj: &mut Objective<'_>,
    tr: &mut Tracker,
) -> Result<(), EvalError> {
    let node = |i: usize| -> f64 {
        if points == 1 {
            0.0
        } else {
            // Exact endpoints and exact zero for odd `points`.
            feasible.cube * ((2 * i) as f64 - (points - 1) as f64) / (points - 1) as f64
        }
    };
    let mut idx = vec![0usize; m];
    let mut u = vec![0.0; m];
    loop {
        for (v, &i) in u.iter_mut().zip(&idx) {
            *v = node(i);
        }
        feasible.project(&mut u);
        let v = obj(&u)?;
        tr.offer(&u, v);
        let mut k = 0;
        loop {
            if k == m {
                return Ok(());
            }
            idx[k] += 1;
            if idx[k] < points {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Coordinate descent from the tracker's best point.
pub(crate) fn refine(
    feasible: &Feasible,
    m: usize,
    points: usize,
    iters: usize,
    obj: &mut Objective<'_>,
    tr: &mut Tracker,
) -> Result<(), EvalError> {
    if m == 0 {
        return Ok(());
    }
    let mut step = if points > 1 {
        2.0 * feasible.cube / (points - 1) as f64
    } else {
        feasible.cube
    };
    let mut cand = vec![0.0; m];
    for _ in 0..iters {
        let mut improved = false;
        for i in 0..m {
            for dir in [1.0, -1.0] {
                cand.copy_from_slice(&tr.u);
                cand[i] += dir * step;
                feasible.project(&mut cand);
                if cand == tr.u {
                    continue;
                }
                let v = obj(&cand)?;
                if tr.offer(&cand, v) {
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_hits_vertices_and_zero() {
        let f = Feasible {
            cube: 2.0,
            ball: f64::INFINITY,
        };
        let mut seen = Vec::new();
        let mut tr = Tracker::new(1, &[]);
        grid_search(&f, 1, 5, &mut |u: &[f64]| {
            seen.push(u[0]);
            Ok(0.0)
        }, &mut tr)
        .unwrap();
        assert_eq!(seen, vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn refine_finds_interior_minimum() {
        let f = Feasible {
            cube: 1.0,
            ball: f64::INFINITY,
        };
        let mut obj = |u: &[f64]| Ok((u[0] - 0.3141).powi(2) + (u[1] + 0.2718).powi(2));
        let mut tr = Tracker::new(2, &[]);
        grid_search(&f, 2, 33, &mut obj, &mut tr).unwrap();
        refine(&f, 2, 33, 50, &mut obj, &mut tr).unwrap();
        assert!(tr.value < 1e-12, "{}", tr.value);
    }

    #[test]
    fn projection_stays_feasible() {
        let f = Feasible { cube: 1.0, ball: 0.5 };
        let mut u = vec![3.0, -4.0];
        f.project(&mut u);
        assert!((norm(&u) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn budget_validation() {
        assert!(MinimizeBudget::default().validate().is_ok());
        let b = MinimizeBudget {
            radii: vec![1.0, 1.0],
            ..Default::default()
        };
        assert!(b.validate().is_err());
    }
}

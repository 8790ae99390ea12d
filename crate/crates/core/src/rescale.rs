//! State-based time rescaling `(l̄, f̄) = (l, f) / (1 + |(l, f)|)` and the
//! reparameterizations between rescaled time `s` and original time `t`.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::error::EvalError;
use crate::sysmodel::{ControlProblem, Section, System};

/// Divides `(l, f)` of the wrapped system by `1 + |(l, f)|`.
pub struct RescaledSystem {
    base: Arc<dyn System>,
}

impl RescaledSystem {
    pub fn new(base: Arc<dyn System>) -> Self {
        Self { base }
    }
}

struct RescaledSection<'a> {
    inner: Box<dyn Section + 'a>,
}

impl Section for RescaledSection<'_> {
    fn eval(&self, u: &[f64], f: &mut [f64]) -> Result<f64, EvalError> {
        let l = self.inner.eval(u, f)?;
        let s = 1.0 / (1.0 + magnitude(l, f));
        for v in f.iter_mut() {
            *v *= s;
        }
        Ok(l * s)
    }
}

impl System for RescaledSystem {
    fn state_dim(&self) -> usize {
        self.base.state_dim()
    }

    fn control_dim(&self) -> usize {
        self.base.control_dim()
    }

    fn section<'a>(&'a self, x: &[f64]) -> Result<Box<dyn Section + 'a>, EvalError> {
        Ok(Box::new(RescaledSection {
            inner: self.base.section(x)?,
        }))
    }
}

/// |(l, f)| as a (1+n)-vector.
pub fn magnitude(l: f64, f: &[f64]) -> f64 {
    (l * l + f.iter().map(|v| v * v).sum::<f64>()).sqrt()
}

/// Original problem together with its rescaled counterpart.
#[derive(Clone, Debug)]
pub struct RescaledProblem {
    pub base: ControlProblem,
    pub rescaled: ControlProblem,
}

pub fn rescale(problem: &ControlProblem) -> RescaledProblem {
    let rescaled = ControlProblem {
        system: Arc::new(RescaledSystem::new(problem.system.clone())),
        ..problem.clone()
    };
    RescaledProblem {
        base: problem.clone(),
        rescaled,
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TimeMapError {
    #[error("mesh is not strictly increasing at sample {index}")]
    NonMonotone { index: usize },
    #[error("expected {expected} controls for {samples} samples, got {got}")]
    Shape {
        samples: usize,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Tabulated `t(s)` on the trajectory mesh.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimeMap {
    pub s: Vec<f64>,
    pub t: Vec<f64>,
}

fn interp(xs: &[f64], ys: &[f64], q: f64) -> f64 {
    match xs.len() {
        0 => q,
        1 => ys[0] + (q - xs[0]),
        _ => {
            let i = match xs.partition_point(|&v| v <= q) {
                0 => 1,
                k if k >= xs.len() => xs.len() - 1,
                k => k,
            };
            let (x0, x1, y0, y1) = (xs[i - 1], xs[i], ys[i - 1], ys[i]);
            y0 + (y1 - y0) * (q - x0) / (x1 - x0)
        }
    }
}

impl TimeMap {
    pub fn t_at(&self, s: f64) -> f64 {
        interp(&self.s, &self.t, s)
    }

    pub fn s_at(&self, t: f64) -> f64 {
        interp(&self.t, &self.s, t)
    }
}

/// `t(s) = ∫₀ˢ (1 + |(l, f)(y, v)|)⁻¹ dη` by the trapezoid rule.
///
/// `controls[i]` is held on `[s[i], s[i+1]]` and is used at both ends of
/// that segment. `s` must be strictly increasing.
pub fn time_maps(
    problem: &ControlProblem,
    s: &[f64],
    states: &[Vec<f64>],
    controls: &[Vec<f64>],
) -> Result<TimeMap, TimeMapError> {
    let segments = s.len().saturating_sub(1);
    if states.len() != s.len() || controls.len() < segments {
        return Err(TimeMapError::Shape {
            samples: s.len(),
            expected: segments,
            got: controls.len(),
        });
    }
    let mut t = Vec::with_capacity(s.len());
    if let Some(&s0) = s.first() {
        t.push(s0);
    }
    let mut f = vec![0.0; problem.n()];
    let mut density = |x: &[f64], u: &[f64]| -> Result<f64, EvalError> {
        let l = problem.system.section(x)?.eval(u, &mut f)?;
        Ok(1.0 / (1.0 + magnitude(l, &f)))
    };
    for i in 0..segments {
        let ds = s[i + 1] - s[i];
        if !(ds > 0.0) {
            return Err(TimeMapError::NonMonotone { index: i + 1 });
        }
        let g0 = density(&states[i], &controls[i])?;
        let g1 = density(&states[i + 1], &controls[i])?;
        let next = t[i] + 0.5 * ds * (g0 + g1);
        if !(next > t[i]) {
            return Err(TimeMapError::NonMonotone { index: i + 1 });
        }
        t.push(next);
    }
    Ok(TimeMap { s: s.to_vec(), t })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostInvarianceReport {
    /// ∫ l̄(y, v) ds.
    pub rescaled_integral: f64,
    /// ∫ l(x, u) dt over the reparameterized mesh.
    pub original_integral: f64,
    pub relative_difference: f64,
}

/// Compares both sides of ∫ l̄ ds = ∫ l dt on a shared mesh. The original
/// trajectory visits the same states at times `map.t`.
pub fn cost_invariance_check(
    problem: &ControlProblem,
    states: &[Vec<f64>],
    controls: &[Vec<f64>],
    map: &TimeMap,
) -> Result<CostInvarianceReport, EvalError> {
    let mut f = vec![0.0; problem.n()];
    let mut rescaled = 0.0;
    let mut original = 0.0;
    let segments = map.s.len().saturating_sub(1);
    for i in 0..segments {
        let u = &controls[i];
        let mut ends = [(0.0, 0.0); 2];
        for (k, x) in [&states[i], &states[i + 1]].into_iter().enumerate() {
            let l = problem.system.section(x)?.eval(u, &mut f)?;
            ends[k] = (l, l / (1.0 + magnitude(l, &f)));
        }
        rescaled += 0.5 * (map.s[i + 1] - map.s[i]) * (ends[0].1 + ends[1].1);
        original += 0.5 * (map.t[i + 1] - map.t[i]) * (ends[0].0 + ends[1].0);
    }
    let scale = rescaled.abs().max(original.abs());
    let relative_difference = if scale == 0.0 {
        0.0
    } else {
        (rescaled - original).abs() / scale
    };
    Ok(CostInvarianceReport {
        rescaled_integral: rescaled,
        original_integral: original,
        relative_difference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sysmodel::{ControlSet, FnSystem, StateSpace, Target};

    fn constant_problem(l: f64, f: f64) -> ControlProblem {
        ControlProblem::new(
            StateSpace::full(1),
            Target::point(vec![0.0]),
            ControlSet::full(0),
            Arc::new(FnSystem::new(1, 0, move |_, _, out| {
                out[0] = f;
                Ok(l)
            })),
        )
        .unwrap()
    }

    #[test]
    fn constant_field_values() {
        let rp = rescale(&constant_problem(1.0, 1.0));
        let (l, f) = rp.rescaled.eval(&[0.3], &[]).unwrap();
        let want = 1.0 / (1.0 + 2f64.sqrt());
        assert!((l - want).abs() < 1e-15 && (f[0] - want).abs() < 1e-15);
        assert!((want - 0.41421).abs() < 1e-5);
    }

    #[test]
    fn zero_field_is_fixed() {
        let rp = rescale(&constant_problem(0.0, 0.0));
        assert_eq!(rp.rescaled.eval(&[1.0], &[]).unwrap(), (0.0, vec![0.0]));
    }

    #[test]
    fn constant_time_map_and_cost() {
        let p = constant_problem(1.0, 1.0);
        let s: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let states: Vec<Vec<f64>> = s.iter().map(|v| vec![*v]).collect();
        let controls = vec![vec![]; 10];
        let map = time_maps(&p, &s, &states, &controls).unwrap();
        let k = 1.0 / (1.0 + 2f64.sqrt());
        for (si, ti) in map.s.iter().zip(&map.t) {
            assert!((ti - si * k).abs() < 1e-15);
            assert!(ti <= si);
        }
        let rep = cost_invariance_check(&p, &states, &controls, &map).unwrap();
        assert!((rep.rescaled_integral - k).abs() < 1e-12);
        assert!(rep.relative_difference < 1e-10);
    }

    #[test]
    fn unit_density_is_identity() {
        let p = constant_problem(0.0, 0.0);
        let s = [0.0, 0.5, 2.0];
        let states = vec![vec![0.0]; 3];
        let map = time_maps(&p, &s, &states, &[vec![], vec![]]).unwrap();
        assert_eq!(map.t, s.to_vec());
        assert_eq!(map.s_at(1.25), 1.25);
    }

    #[test]
    fn non_monotone_mesh() {
        let p = constant_problem(1.0, 1.0);
        let states = vec![vec![0.0]; 3];
        assert!(matches!(
            time_maps(&p, &[0.0, 1.0, 1.0], &states, &[vec![], vec![]]),
            Err(TimeMapError::NonMonotone { index: 2 })
        ));
    }

    #[test]
    fn zero_cost_integrals_vanish() {
        let p = constant_problem(0.0, 2.0);
        let s = [0.0, 1.0];
        let states = vec![vec![0.0], vec![1.0]];
        let map = time_maps(&p, &s, &states, &[vec![]]).unwrap();
        let rep = cost_invariance_check(&p, &states, &[vec![]], &map).unwrap();
        assert_eq!((rep.rescaled_integral, rep.original_integral), (0.0, 0.0));
    }
}

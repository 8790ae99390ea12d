//! Piecewise-linear nondecreasing functions on [0, ∞) with a generalized
//! inverse, used for γ, N and the σ± comparison functions.

use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonotoneTable {
    xs: Vec<f64>,
    ys: Vec<f64>,
    tail_slope: f64,
}

impl MonotoneTable {
    /// Interpolates `(0, 0)` followed by `nodes`, which must have strictly
    /// increasing positive abscissae. Ordinates are lifted to their running
    /// maximum so the result is nondecreasing. Beyond the last node the
    /// function continues with slope `tail_slope`.
    pub fn new(nodes: &[(f64, f64)], tail_slope: f64) -> Result<Self, String> {
        let mut xs = vec![0.0];
        let mut ys = vec![0.0];
        for &(x, y) in nodes {
            if !(x > *xs.last().unwrap()) || !x.is_finite() {
                return Err(format!("abscissae must be positive and increasing (got {x})"));
            }
            if !y.is_finite() {
                return Err(format!("ordinate at {x} is not finite"));
            }
            let y = y.max(*ys.last().unwrap());
            xs.push(x);
            ys.push(y);
        }
        if !(tail_slope >= 0.0) {
            return Err(format!("tail slope must be nonnegative (got {tail_slope})"));
        }
        Ok(Self {
            xs,
            ys,
            tail_slope,
        })
    }

    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.xs.iter().copied().zip(self.ys.iter().copied()).skip(1)
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let last = self.xs.len() - 1;
        if x >= self.xs[last] {
            return self.ys[last] + self.tail_slope * (x - self.xs[last]);
        }
        let k = self.xs.partition_point(|&v| v <= x);
        let (x0, x1, y0, y1) = (self.xs[k - 1], self.xs[k], self.ys[k - 1], self.ys[k]);
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    /// sup{x ≥ 0 : eval(x) ≤ y}; `+∞` when the function never exceeds `y`.
    pub fn sup_inverse(&self, y: f64) -> f64 {
        if y < 0.0 {
            return 0.0;
        }
        let last = self.xs.len() - 1;
        if y >= self.ys[last] {
            if self.tail_slope > 0.0 {
                return self.xs[last] + (y - self.ys[last]) / self.tail_slope;
            }
            return f64::INFINITY;
        }
        let k = self.ys.partition_point(|&v| v <= y) - 1;
        let (x0, x1, y0, y1) = (self.xs[k], self.xs[k + 1], self.ys[k], self.ys[k + 1]);
        x0 + (y - y0) / (y1 - y0) * (x1 - x0)
    }
}

//! Control-polynomial dynamics: near-control-affine classification and the
//! affine reparameterization with explicit convex-hull witnesses,
//! maximal-degree and λ-diagonal weak subsystems, hypothesis checks on the
//! running cost, and checks that MRF-ness transfers from a subsystem.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::error::EvalError;
use crate::hamiltonian::minimize_integrand;
use crate::minimize::MinimizeBudget;
use crate::sysmodel::{
    eval_poly, ControlProblem, ControlSet, ModelError, MrfCandidate, MultiIndex, PolyDynamics,
    Section, System, VectorField,
};
use crate::verifier::{
    assemble_report, check_inputs, check_positive_definite_proper, draw_level_samples,
    evaluate_samples, LevelSampling, VerificationReport, VerifyError,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolyError {
    #[error("term {term}: exponent {exponent} of u{coord} is even")]
    EvenExponent {
        term: MultiIndex,
        coord: usize,
        exponent: u32,
    },
    #[error("term {term}: u{coord} has exponent {exponent} but another term uses {other}")]
    MixedExponents {
        term: MultiIndex,
        coord: usize,
        exponent: u32,
        other: u32,
    },
    #[error("affine control w_{term} = {value} exceeds r̄ = {rbar}")]
    OutsideBox {
        term: MultiIndex,
        value: f64,
        rbar: f64,
    },
    #[error("affine control has {got} coordinates, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("λ = {0:?} is not in the simplex")]
    NotInSimplex(Vec<f64>),
    #[error("u{coord} = {value} cannot be realized with λ{coord} = 0 while the top-degree pure term is present")]
    ZeroLambda { coord: usize, value: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Exponent structure of a near-control-affine system.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NearAffineStructure {
    /// K_i; coordinates unused by every term get 1.
    pub k: Vec<u32>,
    /// Largest c(α) over the terms (0 for drift-only dynamics).
    pub d_bar: usize,
    /// Active multi-indices in canonical order.
    pub active: Vec<MultiIndex>,
}

impl NearAffineStructure {
    /// Number of non-drift terms.
    pub fn m_terms(&self) -> usize {
        self.active.len()
    }

    /// r̄ = (1/M)·min{r^{jK_i} : i, j ∈ {1, d̄}}; `+∞` for r = ∞ or M = 0.
    pub fn rbar(&self, r: f64) -> f64 {
        if !r.is_finite() || self.active.is_empty() {
            return f64::INFINITY;
        }
        let js = [1, self.d_bar.max(1)];
        let min = self
            .k
            .iter()
            .flat_map(|&k| js.iter().map(move |&j| r.powi((j as u32 * k) as i32)))
            .fold(f64::INFINITY, f64::min);
        min / self.active.len() as f64
    }
}

pub fn classify_near_affine(pd: &PolyDynamics) -> Result<NearAffineStructure, PolyError> {
    let m = pd.control_dim();
    let mut k: Vec<Option<u32>> = vec![None; m];
    let mut d_bar = 0;
    for (alpha, _) in pd.terms() {
        for (i, &a) in alpha.exponents().iter().enumerate() {
            if a == 0 {
                continue;
            }
            if a % 2 == 0 {
                return Err(PolyError::EvenExponent {
                    term: alpha.clone(),
                    coord: i + 1,
                    exponent: a,
                });
            }
            match k[i] {
                Some(other) if other != a => {
                    return Err(PolyError::MixedExponents {
                        term: alpha.clone(),
                        coord: i + 1,
                        exponent: a,
                        other,
                    })
                }
                _ => k[i] = Some(a),
            }
        }
        d_bar = d_bar.max(alpha.support_count());
    }
    Ok(NearAffineStructure {
        k: k.into_iter().map(|v| v.unwrap_or(1)).collect(),
        d_bar,
        active: pd.terms().iter().map(|(a, _)| a.clone()).collect(),
    })
}

/// f_aff(x, w) = f₀(x) + Σ_α w_α f_α(x), one coordinate of w per active α.
pub fn affine_field(nas: &NearAffineStructure, pd: &PolyDynamics) -> Result<PolyDynamics, PolyError> {
    let mm = nas.m_terms();
    let terms = nas
        .active
        .iter()
        .enumerate()
        .map(|(j, alpha)| {
            let field = pd.term(alpha).expect("active term belongs to pd").clone();
            (MultiIndex::pure(mm, j, 1), field)
        })
        .collect();
    Ok(PolyDynamics::new(
        pd.state_dim(),
        mm,
        pd.drift().clone(),
        terms,
    )?)
}

/// All k-tuples in {−1, 1}^k whose product is `s`, in lexicographic order
/// with −1 before 1.
pub fn sign_set(k: usize, s: i8) -> Vec<Vec<i8>> {
    assert!(k >= 1 && (s == 1 || s == -1), "sign_set needs k >= 1 and s = ±1");
    (0u64..1 << k)
        .map(|bits| {
            (0..k)
                .map(|j| if bits >> (k - 1 - j) & 1 == 0 { -1 } else { 1 })
                .collect::<Vec<i8>>()
        })
        .filter(|t| t.iter().map(|&v| v as i64).product::<i64>() == s as i64)
        .collect()
}

/// Convex combination Σ weight·f(x, control).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HullWitness {
    pub pairs: Vec<(f64, Vec<f64>)>,
}

impl HullWitness {
    pub fn total_weight(&self) -> f64 {
        self.pairs.iter().map(|(w, _)| w).sum()
    }

    pub fn combination(&self, pd: &PolyDynamics, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut acc = vec![0.0; pd.state_dim()];
        for (w, u) in &self.pairs {
            for (a, v) in acc.iter_mut().zip(eval_poly(pd, x, u)?) {
                *a += w * v;
            }
        }
        Ok(acc)
    }

    /// Max-norm distance between the combination and `target`.
    pub fn residual(&self, pd: &PolyDynamics, x: &[f64], target: &[f64]) -> Result<f64, EvalError> {
        Ok(self
            .combination(pd, x)?
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    fn push(&mut self, weight: f64, u: Vec<f64>) {
        match self.pairs.iter_mut().find(|(_, v)| *v == u) {
            Some(p) => p.0 += weight,
            None => self.pairs.push((weight, u)),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WitnessStrategy {
    /// Weight 1/(M·2^{k−1}) per sign pattern, equal magnitudes |M w|^{1/k}
    /// on the k coordinates after the K-th root reduction.
    #[default]
    Canonical,
    /// Only the nonzero coordinates of w, weighted equally; sign patterns
    /// only when a proper sub-monomial of α is present; magnitudes put on
    /// the last coordinate when that stays inside U_r.
    Compact,
}

/// Witness that f_aff(x, w) ∈ co f(x, U_r).
pub fn hull_witness(
    nas: &NearAffineStructure,
    pd: &PolyDynamics,
    w: &[f64],
    r: f64,
    strategy: WitnessStrategy,
) -> Result<HullWitness, PolyError> {
    let mm = nas.m_terms();
    if w.len() != mm {
        return Err(PolyError::Dimension {
            expected: mm,
            got: w.len(),
        });
    }
    let rbar = nas.rbar(r);
    for (alpha, &v) in nas.active.iter().zip(w) {
        if !v.is_finite() || v.abs() > rbar * (1.0 + 1e-12) {
            return Err(PolyError::OutsideBox {
                term: alpha.clone(),
                value: v,
                rbar,
            });
        }
    }
    let m = pd.control_dim();
    let mut wit = HullWitness { pairs: Vec::new() };
    let chosen: Vec<usize> = match strategy {
        WitnessStrategy::Canonical => (0..mm).collect(),
        WitnessStrategy::Compact => (0..mm).filter(|&j| w[j] != 0.0).collect(),
    };
    if chosen.is_empty() {
        wit.push(1.0, vec![0.0; m]);
        return Ok(wit);
    }
    let count = chosen.len() as f64;
    for j in chosen {
        if w[j] == 0.0 {
            wit.push(1.0 / count, vec![0.0; m]);
            continue;
        }
        let alpha = &nas.active[j];
        let support: Vec<usize> = alpha.support().collect();
        let k = support.len();
        // Product of the reduced controls û_i = u_i^{K_i} must equal this.
        let product = count * w[j];
        let sign: i8 = if product < 0.0 { -1 } else { 1 };
        let needs_patterns = match strategy {
            WitnessStrategy::Canonical => true,
            WitnessStrategy::Compact => has_proper_submonomial(nas, alpha),
        };
        let magnitudes: Vec<f64> = match strategy {
            WitnessStrategy::Compact if r >= 1.0 && compact_fits(product, nas.k[support[k - 1]], r) => {
                let mut v = vec![1.0; k];
                v[k - 1] = product.abs();
                v
            }
            _ => vec![product.abs().powf(1.0 / k as f64); k],
        };
        let to_control = |signs: &[i8]| {
            let mut u = vec![0.0; m];
            for (idx, &i) in support.iter().enumerate() {
                let hat = magnitudes[idx];
                u[i] = signs[idx] as f64 * hat.powf(1.0 / nas.k[i] as f64);
            }
            u
        };
        if needs_patterns && k > 1 {
            let patterns = sign_set(k, sign);
            let weight = 1.0 / (count * patterns.len() as f64);
            for s in &patterns {
                wit.push(weight, to_control(s));
            }
        } else {
            let mut signs = vec![1i8; k];
            signs[k - 1] = sign;
            wit.push(1.0 / count, to_control(&signs));
        }
    }
    Ok(wit)
}

fn compact_fits(product: f64, k_last: u32, r: f64) -> bool {
    !r.is_finite() || product.abs() <= r.powi(k_last as i32)
}

fn has_proper_submonomial(nas: &NearAffineStructure, alpha: &MultiIndex) -> bool {
    nas.active.iter().any(|beta| {
        beta != alpha
            && beta
                .exponents()
                .iter()
                .zip(alpha.exponents())
                .all(|(&b, &a)| b == 0 || b == a)
    })
}

/// f^max: drift plus the terms of top degree.
pub fn maximal_subsystem(pd: &PolyDynamics) -> Result<PolyDynamics, PolyError> {
    let d = pd.degree();
    let terms = pd
        .terms()
        .iter()
        .filter(|(a, _)| a.degree() == d)
        .cloned()
        .collect();
    Ok(pd.with_terms(terms)?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagonalSpec {
    pub lambda: Vec<f64>,
}

impl DiagonalSpec {
    pub fn new(lambda: Vec<f64>) -> Result<Self, PolyError> {
        let sum: f64 = lambda.iter().sum();
        if lambda.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) || sum > 1.0 + 1e-12 {
            return Err(PolyError::NotInSimplex(lambda));
        }
        Ok(Self { lambda })
    }

    pub fn lambda0(&self) -> f64 {
        (1.0 - self.lambda.iter().sum::<f64>()).max(0.0)
    }
}

/// f^diag_λ = Σ_{i=0..m} λ_i f(x, λ_i^{−1/d} u_i e_i), expanded as
/// f₀ + Σ_i Σ_j λ_i^{(d−j)/d} u_i^j f_{j e_i}. At λ_i = 0 the coefficient
/// is taken as 0 for j < d and 1 for j = d.
pub fn diagonal_subsystem(pd: &PolyDynamics, spec: &DiagonalSpec) -> Result<PolyDynamics, PolyError> {
    let m = pd.control_dim();
    if spec.lambda.len() != m {
        return Err(PolyError::Dimension {
            expected: m,
            got: spec.lambda.len(),
        });
    }
    let d = pd.degree();
    let mut terms = Vec::new();
    for (alpha, field) in pd.terms() {
        if alpha.support_count() != 1 {
            continue;
        }
        let i = alpha.support().next().unwrap();
        let j = alpha.degree();
        let coeff = if j == d {
            1.0
        } else {
            spec.lambda[i].powf((d - j) as f64 / d as f64)
        };
        if coeff != 0.0 {
            let f = if coeff == 1.0 { field.clone() } else { field.scaled(coeff) };
            terms.push((alpha.clone(), f));
        }
    }
    Ok(pd.with_terms(terms)?)
}

/// The convex combination (λ_i, λ_i^{−1/d} u_i e_i), i = 0..m, realizing
/// f^diag_λ(x, u) inside co f(x, R^m).
pub fn diagonal_witness(pd: &PolyDynamics, spec: &DiagonalSpec, u: &[f64]) -> Result<HullWitness, PolyError> {
    let m = pd.control_dim();
    if u.len() != m || spec.lambda.len() != m {
        return Err(PolyError::Dimension {
            expected: m,
            got: u.len().min(spec.lambda.len()),
        });
    }
    let d = pd.degree();
    let mut wit = HullWitness { pairs: Vec::new() };
    let l0 = spec.lambda0();
    if l0 > 0.0 {
        wit.push(l0, vec![0.0; m]);
    }
    for i in 0..m {
        let li = spec.lambda[i];
        if li > 0.0 {
            let mut v = vec![0.0; m];
            v[i] = u[i] / li.powf(1.0 / d as f64);
            wit.push(li, v);
        } else if u[i] != 0.0 && pd.term(&MultiIndex::pure(m, i, d)).is_some() {
            return Err(PolyError::ZeroLambda {
                coord: i + 1,
                value: u[i],
            });
        }
    }
    Ok(wit)
}

/// Polynomial system with its running cost, for hypothesis checks.
pub type CostFn<'a> = &'a dyn Fn(&[f64], &[f64]) -> f64;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HypSampling {
    pub samples: usize,
    pub seed: u64,
    pub x_box: Vec<(f64, f64)>,
    /// Controls are drawn with |u_i| log-uniform up to this radius.
    pub u_radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub samples: usize,
    pub violations: usize,
    /// A_max: largest relative excess; A_diag: largest ratio lhs/l(x,u).
    pub worst: f64,
    pub worst_x: Vec<f64>,
    pub worst_u: Vec<f64>,
    pub passed: bool,
}

fn draw_x(rng: &mut ChaCha8Rng, b: &[(f64, f64)]) -> Vec<f64> {
    b.iter().map(|(lo, hi)| rng.gen_range(*lo..*hi)).collect()
}

fn draw_u(rng: &mut ChaCha8Rng, m: usize, radius: f64) -> Vec<f64> {
    (0..m)
        .map(|_| {
            let mag = radius * 10f64.powf(-4.0 * rng.gen::<f64>());
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

/// l = M₀(x) + M₁(x,u) with M₁(x,0) = 0, M₀, M₁ ≥ 0 and
/// M₁(x,ku) ≤ k^d M₁(x,u) for k ∈ [1, 10³].
pub fn check_hyp_amax(
    m0: &dyn Fn(&[f64]) -> f64,
    m1: CostFn,
    m: usize,
    d: u32,
    sampling: &HypSampling,
) -> HypothesisReport {
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    let mut rep = HypothesisReport {
        samples: 0,
        violations: 0,
        worst: 0.0,
        worst_x: Vec::new(),
        worst_u: Vec::new(),
        passed: true,
    };
    let zero = vec![0.0; m];
    for _ in 0..sampling.samples {
        let x = draw_x(&mut rng, &sampling.x_box);
        let u = draw_u(&mut rng, m, sampling.u_radius);
        let k = 10f64.powf(3.0 * rng.gen::<f64>());
        let ku: Vec<f64> = u.iter().map(|v| k * v).collect();
        let base = m1(&x, &u);
        let scaled = m1(&x, &ku);
        let bound = k.powi(d as i32) * base;
        let excess = [
            m1(&x, &zero).abs(),
            (-m0(&x)).max(0.0),
            (-base).max(0.0),
            (scaled - bound) / bound.abs().max(1.0),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        rep.samples += 1;
        if excess > 1e-9 {
            rep.violations += 1;
        }
        if excess > rep.worst || rep.worst_x.is_empty() {
            rep.worst = rep.worst.max(excess);
            rep.worst_x = x;
            rep.worst_u = u;
        }
    }
    rep.passed = rep.violations == 0;
    rep
}

/// Uniform λ in the interior of the simplex (a Dirichlet(1,…,1) draw on
/// m+1 parts with λ₀ the last one).
fn draw_lambda(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..=m).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    e[..m].iter().map(|v| v / s).collect()
}

/// l(x,0) + Σ λ_i l(x, u_i λ_i^{−1/d} e_i) ≤ M₀ l(x,u) at sampled interior λ.
pub fn check_hyp_adiag(l: CostFn, m: usize, d: u32, m0: f64, sampling: &HypSampling) -> HypothesisReport {
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    let mut rep = HypothesisReport {
        samples: 0,
        violations: 0,
        worst: 0.0,
        worst_x: Vec::new(),
        worst_u: Vec::new(),
        passed: true,
    };
    let zero = vec![0.0; m];
    for _ in 0..sampling.samples {
        let x = draw_x(&mut rng, &sampling.x_box);
        let u = if rng.gen_bool(0.05) {
            zero.clone()
        } else {
            draw_u(&mut rng, m, sampling.u_radius)
        };
        let lambda = draw_lambda(&mut rng, m);
        let mut lhs = l(&x, &zero);
        for i in 0..m {
            let mut v = zero.clone();
            v[i] = u[i] / lambda[i].powf(1.0 / d as f64);
            lhs += lambda[i] * l(&x, &v);
        }
        let rhs = l(&x, &u);
        let ratio = if lhs <= 0.0 {
            0.0
        } else if rhs > 0.0 {
            lhs / rhs
        } else {
            f64::INFINITY
        };
        rep.samples += 1;
        if lhs > m0 * rhs * (1.0 + 1e-9) + 1e-300 {
            rep.violations += 1;
        }
        if ratio > rep.worst || rep.worst_x.is_empty() {
            rep.worst = rep.worst.max(ratio);
            rep.worst_x = x;
            rep.worst_u = u;
        }
    }
    rep.passed = rep.violations == 0;
    rep
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TransferKind {
    /// Full system checked at the same p₀.
    Maximal,
    /// Full system checked at p₀/M₀ (any positive value, here p₀, if M₀ = 0).
    Diagonal { m0: f64 },
}

impl TransferKind {
    pub fn full_p0(&self, p0_sub: f64) -> f64 {
        match *self {
            TransferKind::Maximal => p0_sub,
            TransferKind::Diagonal { m0 } if m0 > 0.0 => p0_sub / m0,
            TransferKind::Diagonal { .. } => p0_sub,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransferReport {
    pub kind: TransferKind,
    pub p0_sub: f64,
    pub p0_full: f64,
    pub subsystem: VerificationReport,
    pub full: VerificationReport,
    /// Samples where the subsystem Hamiltonian is negative and the
    /// full-system one is not.
    pub pointwise_violations: usize,
    /// The predicted implication "subsystem verified ⇒ full verified".
    pub implication_holds: bool,
}

/// Verifies `candidate` on the subsystem at `p0_sub` and on the full system
/// at the transferred level, on the same sampled points.
pub fn transfer_check(
    full: &ControlProblem,
    sub: &ControlProblem,
    candidate: &MrfCandidate,
    p0_sub: f64,
    kind: TransferKind,
    sampling: &LevelSampling,
    budget: &MinimizeBudget,
) -> Result<TransferReport, VerifyError> {
    let p0_full = kind.full_p0(p0_sub);
    let cand_sub = candidate.with_p0(p0_sub);
    let cand_full = candidate.with_p0(p0_full);
    check_inputs(sub, &cand_sub, sampling, budget)?;
    check_inputs(full, &cand_full, sampling, budget)?;
    let shells = draw_level_samples(sub, candidate.w.as_ref(), sampling)?;
    let ev_sub = evaluate_samples(sub, &cand_sub, &shells, budget);
    let ev_full = evaluate_samples(full, &cand_full, &shells, budget);
    let mut pointwise = 0;
    for (a, b) in ev_sub.shells.iter().zip(&ev_full.shells) {
        for sa in a {
            if sa.worst < 0.0 {
                if let Some(sb) = b.iter().find(|sb| sb.x == sa.x) {
                    if sb.worst >= 0.0 {
                        pointwise += 1;
                    }
                }
            }
        }
    }
    let subsystem = assemble_report(
        &cand_sub,
        sampling,
        &ev_sub,
        check_positive_definite_proper(sub, &cand_sub, sampling),
    );
    let full_rep = assemble_report(
        &cand_full,
        sampling,
        &ev_full,
        check_positive_definite_proper(full, &cand_full, sampling),
    );
    let implication_holds = !subsystem.is_verified() || full_rep.is_verified();
    Ok(TransferReport {
        kind,
        p0_sub,
        p0_full,
        subsystem,
        full: full_rep,
        pointwise_violations: pointwise,
        implication_holds,
    })
}

/// Scales tried in the maximal-degree scaling argument: 1, 2, 4, …, 2¹⁰.
pub const SCALING_SCHEDULE: [f64; 11] = [
    1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0, 512.0, 1024.0,
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingReport {
    pub sampled: usize,
    /// Points where the f^max Hamiltonian was below −margin.
    pub checked: usize,
    /// Of those, points where no k·ũ made the full integrand negative.
    pub failures: usize,
    pub first_failure: Option<Vec<f64>>,
}

/// At sampled x with p = ∇W(x): when the maximal-degree Hamiltonian (same
/// cost, same p₀) is below −`margin` with minimizer ũ, some k·ũ with k in
/// [`SCALING_SCHEDULE`] must make the full integrand negative.
pub fn max_scaling_check(
    full: &ControlProblem,
    sub: &ControlProblem,
    candidate: &MrfCandidate,
    bbox: &[(f64, f64)],
    samples: usize,
    seed: u64,
    margin: f64,
    budget: &MinimizeBudget,
) -> Result<ScalingReport, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = ScalingReport {
        sampled: 0,
        checked: 0,
        failures: 0,
        first_failure: None,
    };
    let mut f = vec![0.0; full.n()];
    for _ in 0..samples {
        let x = draw_x(&mut rng, bbox);
        if !full.state_space.contains(&x) || full.target.contains(&x) {
            continue;
        }
        rep.sampled += 1;
        let ps = candidate.covectors(&x)?;
        let hv = minimize_integrand(sub, &x, candidate.p0, &ps, None, budget)?;
        if !(hv.certified_below < -margin) {
            continue;
        }
        rep.checked += 1;
        let sec = full.system.section(&x)?;
        let mut ok = false;
        for k in SCALING_SCHEDULE {
            let ku: Vec<f64> = hv.minimizer.iter().map(|v| k * v).collect();
            if !full.control_set.contains(&ku) {
                continue;
            }
            let l = sec.eval(&ku, &mut f)?;
            let worst = ps
                .iter()
                .map(|p| p.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>() + candidate.p0 * l)
                .fold(f64::NEG_INFINITY, f64::max);
            if worst < 0.0 {
                ok = true;
                break;
            }
        }
        if !ok {
            rep.failures += 1;
            rep.first_failure.get_or_insert(x);
        }
    }
    Ok(rep)
}

/// The affine problem (ℓ, f_aff) on Ū_r with ℓ(x) = sup_{u ∈ U_r} l(x,u),
/// the sup taken by the budgeted minimizer.
pub struct AffineSystem {
    base: ControlProblem,
    affine: PolyDynamics,
    budget: MinimizeBudget,
}

struct AffineSection<'a> {
    sys: &'a AffineSystem,
    x: Vec<f64>,
    ell: f64,
}

impl Section for AffineSection<'_> {
    fn eval(&self, w: &[f64], f: &mut [f64]) -> Result<f64, EvalError> {
        self.sys.affine.eval_into(&self.x, w, f)?;
        Ok(self.ell)
    }
}

impl System for AffineSystem {
    fn state_dim(&self) -> usize {
        self.affine.state_dim()
    }

    fn control_dim(&self) -> usize {
        self.affine.control_dim()
    }

    fn section<'a>(&'a self, x: &[f64]) -> Result<Box<dyn Section + 'a>, EvalError> {
        let ell = sup_cost(&self.base, x, &self.budget)?;
        Ok(Box::new(AffineSection {
            sys: self,
            x: x.to_vec(),
            ell,
        }))
    }

    fn poly(&self) -> Option<&PolyDynamics> {
        Some(&self.affine)
    }
}

/// sup over U of l(x, ·); needs a bounded control set.
pub fn sup_cost(problem: &ControlProblem, x: &[f64], budget: &MinimizeBudget) -> Result<f64, EvalError> {
    if !problem.control_set.is_bounded() {
        return Err(EvalError::Domain {
            msg: "sup of the cost needs a bounded control set".into(),
        });
    }
    let hv = minimize_integrand(problem, x, -1.0, &[vec![0.0; problem.n()]], None, budget)?;
    Ok(-hv.value)
}

/// Builds the affine problem for a near-control-affine `problem` on U_r
/// (finite r).
pub fn affine_problem(
    problem: &ControlProblem,
    budget: &MinimizeBudget,
) -> Result<(NearAffineStructure, ControlProblem), PolyError> {
    let pd = problem
        .system
        .poly()
        .ok_or_else(|| ModelError::Invalid("system is not control-polynomial".into()))?
        .clone();
    let nas = classify_near_affine(&pd)?;
    let r = problem.control_set.cube_radius();
    let affine = affine_field(&nas, &pd)?;
    let set = ControlSet::cube(nas.m_terms(), nas.rbar(r))?;
    let sys = AffineSystem {
        base: problem.clone(),
        affine,
        budget: budget.clone(),
    };
    let out = ControlProblem::new(
        problem.state_space.clone(),
        problem.target.clone(),
        set,
        Arc::new(sys),
    )?;
    Ok((nas, out))
}

/// Drops every term, keeping the drift; used for drift-only comparisons.
pub fn drift_only(pd: &PolyDynamics) -> Result<PolyDynamics, PolyError> {
    Ok(pd.with_terms(Vec::<(MultiIndex, VectorField)>::new())?)
}

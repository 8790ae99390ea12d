//! State spaces, targets, control sets, dynamics and MRF candidates.
//!
//! Dynamics and cost are evaluated through [`System::section`], which fixes
//! the state once and returns a closure over controls. Minimizers call the
//! section thousands of times per state, so anything that depends on `x`
//! alone is computed up front.

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::error::{check_dim, EvalError};
use crate::expr::ScalarExpr;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("coordinate {coord}: lower bound {lower} is not below upper bound {upper}")]
    EmptyInterval { coord: usize, lower: f64, upper: f64 },
    #[error("{what}: expected dimension {expected}, got {got}")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("control set radius must be positive, got {0}")]
    BadRadius(f64),
    #[error("multi-index {0} has degree 0; the drift is stored separately")]
    ZeroDegreeTerm(MultiIndex),
    #[error("multi-index {0} appears twice")]
    DuplicateTerm(MultiIndex),
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

/// Ω as an open box; infinite bounds give all of Rⁿ.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSpace {
    bounds: Vec<(f64, f64)>,
}

impl StateSpace {
    pub fn full(n: usize) -> Self {
        Self {
            bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); n],
        }
    }

    pub fn open_box(bounds: Vec<(f64, f64)>) -> Result<Self, ModelError> {
        for (coord, &(lower, upper)) in bounds.iter().enumerate() {
            if lower.is_nan() || upper.is_nan() || lower >= upper {
                return Err(ModelError::EmptyInterval {
                    coord,
                    lower,
                    upper,
                });
            }
        }
        Ok(Self { bounds })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.bounds).all(|(v, (a, b))| *a < *v && *v < *b)
    }

    pub fn is_bounded(&self) -> bool {
        self.bounds
            .iter()
            .any(|(a, b)| a.is_finite() || b.is_finite())
    }
}

type DistanceFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Closed target C, known through its distance function.
#[derive(Clone)]
pub struct Target {
    kind: TargetKind,
}

#[derive(Clone)]
enum TargetKind {
    Point(Vec<f64>),
    Custom {
        distance: DistanceFn,
        anchor: Option<Vec<f64>>,
    },
}

impl Target {
    pub fn point(center: Vec<f64>) -> Self {
        Self {
            kind: TargetKind::Point(center),
        }
    }

    /// Target given by a distance function. `anchor`, if any, is a point of C
    /// used to centre level-set sampling.
    pub fn custom(
        distance: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        anchor: Option<Vec<f64>>,
    ) -> Self {
        Self {
            kind: TargetKind::Custom {
                distance: Arc::new(distance),
                anchor,
            },
        }
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        match &self.kind {
            TargetKind::Point(c) => {
                let d: Vec<f64> = x.iter().zip(c).map(|(a, b)| a - b).collect();
                norm(&d)
            }
            TargetKind::Custom { distance, .. } => distance(x),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.distance(x) == 0.0
    }

    pub fn anchor(&self) -> Option<&[f64]> {
        match &self.kind {
            TargetKind::Point(c) => Some(c),
            TargetKind::Custom { anchor, .. } => anchor.as_deref(),
        }
    }

    pub fn as_point(&self) -> Option<&[f64]> {
        match &self.kind {
            TargetKind::Point(c) => Some(c),
            TargetKind::Custom { .. } => None,
        }
    }
}

impl fmt::Debug for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            TargetKind::Point(c) => f.debug_tuple("Target::Point").field(c).finish(),
            TargetKind::Custom { anchor, .. } => f
                .debug_struct("Target::Custom")
                .field("anchor", anchor)
                .finish_non_exhaustive(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ControlKind {
    /// `[-r, r]^m`, `r` may be infinite.
    Box(f64),
    Ball(f64),
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlSet {
    m: usize,
    kind: ControlKind,
}

impl ControlSet {
    pub fn full(m: usize) -> Self {
        Self {
            m,
            kind: ControlKind::Full,
        }
    }

    pub fn cube(m: usize, r: f64) -> Result<Self, ModelError> {
        if r.is_nan() || r <= 0.0 {
            return Err(ModelError::BadRadius(r));
        }
        let kind = if r.is_infinite() {
            ControlKind::Full
        } else {
            ControlKind::Box(r)
        };
        Ok(Self { m, kind })
    }

    pub fn ball(m: usize, radius: f64) -> Result<Self, ModelError> {
        if radius.is_nan() || radius <= 0.0 {
            return Err(ModelError::BadRadius(radius));
        }
        let kind = if radius.is_infinite() {
            ControlKind::Full
        } else {
            ControlKind::Ball(radius)
        };
        Ok(Self { m, kind })
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn kind(&self) -> ControlKind {
        self.kind
    }

    pub fn is_bounded(&self) -> bool {
        !matches!(self.kind, ControlKind::Full)
    }

    /// Half-width of the smallest centred cube containing the set.
    pub fn cube_radius(&self) -> f64 {
        match self.kind {
            ControlKind::Box(r) | ControlKind::Ball(r) => r,
            ControlKind::Full => f64::INFINITY,
        }
    }

    /// Largest Euclidean norm of an element.
    pub fn max_norm(&self) -> f64 {
        match self.kind {
            ControlKind::Box(r) => r * (self.m as f64).sqrt(),
            ControlKind::Ball(r) => r,
            ControlKind::Full => f64::INFINITY,
        }
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        if u.len() != self.m {
            return false;
        }
        match self.kind {
            ControlKind::Box(r) => u.iter().all(|v| v.abs() <= r),
            ControlKind::Ball(r) => norm(u) <= r,
            ControlKind::Full => u.iter().all(|v| v.is_finite()),
        }
    }
}

/// Euclidean norm, rescaled so tiny or huge entries do not under/overflow.
pub(crate) fn norm(v: &[f64]) -> f64 {
    let scale = v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    if (1e-150..1e150).contains(&scale) {
        return v.iter().map(|a| a * a).sum::<f64>().sqrt();
    }
    scale * v.iter().map(|a| (a / scale) * (a / scale)).sum::<f64>().sqrt()
}

/// `(l, f)` at a fixed state, as a function of the control.
pub trait Section {
    /// Writes `f(x, u)` into `f` and returns `l(x, u)`.
    fn eval(&self, u: &[f64], f: &mut [f64]) -> Result<f64, EvalError>;
}

pub trait System: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn section<'a>(&'a self, x: &[f64]) -> Result<Box<dyn Section + 'a>, EvalError>;
    fn poly(&self) -> Option<&PolyDynamics> {
        None
    }
}

/// Dynamics and cost as expression lists.
#[derive(Clone, Debug)]
pub struct ExprSystem {
    n: usize,
    m: usize,
    dynamics: Vec<ScalarExpr>,
    cost: ScalarExpr,
}

impl ExprSystem {
    pub fn new(
        n: usize,
        m: usize,
        dynamics: Vec<ScalarExpr>,
        cost: ScalarExpr,
    ) -> Result<Self, ModelError> {
        if dynamics.len() != n {
            return Err(ModelError::Dimension {
                what: "dynamics".into(),
                expected: n,
                got: dynamics.len(),
            });
        }
        Ok(Self {
            n,
            m,
            dynamics,
            cost,
        })
    }
}

struct ExprSection<'a> {
    sys: &'a ExprSystem,
    x: Vec<f64>,
}

impl Section for ExprSection<'_> {
    fn eval(&self, u: &[f64], f: &mut [f64]) -> Result<f64, EvalError> {
        check_dim(self.sys.m, u.len())?;
        for (out, e) in f.iter_mut().zip(&self.sys.dynamics) {
            *out = e.eval(&self.x, u)?;
        }
        self.sys.cost.eval(&self.x, u)
    }
}

impl System for ExprSystem {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn control_dim(&self) -> usize {
        self.m
    }

    fn section<'a>(&'a self, x: &[f64]) -> Result<Box<dyn Section + 'a>, EvalError> {
        check_dim(self.n, x.len())?;
        Ok(Box::new(ExprSection {
            sys: self,
            x: x.to_vec(),
        }))
    }
}

type NativeSystemFn = dyn Fn(&[f64], &[f64], &mut [f64]) -> Result<f64, EvalError> + Send + Sync;

/// System from a closure `(x, u, f_out) -> l`.
#[derive(Clone)]
pub struct FnSystem {
    n: usize,
    m: usize,
    f: Arc<NativeSystemFn>,
}

impl FnSystem {
    pub fn new(
        n: usize,
        m: usize,
        f: impl Fn(&[f64], &[f64], &mut [f64]) -> Result<f64, EvalError> + Send + Sync + 'static,
    ) -> Self {
        Self {
            n,
            m,
            f: Arc::new(f),
        }
    }
}

struct FnSection<'a> {
    sys: &'a FnSystem,
    x: Vec<f64>,
}

impl Section for FnSection<'_> {
    fn eval(&self, u: &[f64], f: &mut [f64]) -> Result<f64, EvalError> {
        check_dim(self.sys.m, u.len())?;
        (self.sys.f)(&self.x, u, f)
    }
}

impl System for FnSystem {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn control_dim(&self) -> usize {
        self.m
    }

    fn section<'a>(&'a self, x: &[f64]) -> Result<Box<dyn Section + 'a>, EvalError> {
        check_dim(self.n, x.len())?;
        Ok(Box::new(FnSection {
            sys: self,
            x: x.to_vec(),
        }))
    }
}

/// Exponent vector of a control monomial.
#[derive(Clone, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        Self(exponents)
    }

    /// `j` in coordinate `i`, zero elsewhere.
    pub fn pure(m: usize, i: usize, j: u32) -> Self {
        let mut e = vec![0; m];
        e[i] = j;
        Self(e)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    /// c(α): number of nonzero exponents.
    pub fn support_count(&self) -> usize {
        self.0.iter().filter(|&&a| a != 0).count()
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, a)| **a != 0)
            .map(|(i, _)| i)
    }

    /// u^α.
    pub fn monomial(&self, u: &[f64]) -> f64 {
        let mut p = 1.0;
        for (&a, &v) in self.0.iter().zip(u) {
            if a != 0 {
                p *= v.powi(a as i32);
            }
        }
        p
    }
}

/// Graded lexicographic: lower degree first, then larger leading exponents.
impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{a}")?;
        }
        f.write_str(")")
    }
}

type NativeFieldFn = dyn Fn(&[f64], &mut [f64]) -> Result<(), EvalError> + Send + Sync;

/// State-dependent vector field.
#[derive(Clone)]
pub enum VectorField {
    Exprs(Vec<ScalarExpr>),
    Native(Arc<NativeFieldFn>),
    Scaled(f64, Box<VectorField>),
}

impl VectorField {
    pub fn native(
        f: impl Fn(&[f64], &mut [f64]) -> Result<(), EvalError> + Send + Sync + 'static,
    ) -> Self {
        VectorField::Native(Arc::new(f))
    }

    /// Constant field.
    pub fn constant(v: &[f64]) -> Self {
        VectorField::Exprs(v.iter().map(|&c| ScalarExpr::constant(c)).collect())
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        match self {
            VectorField::Exprs(es) => {
                check_dim(es.len(), out.len())?;
                for (o, e) in out.iter_mut().zip(es) {
                    *o = e.eval(x, &[])?;
                }
                Ok(())
            }
            VectorField::Native(f) => f(x, out),
            VectorField::Scaled(c, inner) => {
                inner.eval_into(x, out)?;
                for o in out.iter_mut() {
                    *o *= c;
                }
                Ok(())
            }
        }
    }

    pub fn eval(&self, x: &[f64], n: usize) -> Result<Vec<f64>, EvalError> {
        let mut out = vec![0.0; n];
        self.eval_into(x, &mut out)?;
        Ok(out)
    }

    /// `c · self`, folded into the expressions when possible.
    pub fn scaled(&self, c: f64) -> Self {
        match self {
            VectorField::Exprs(es) => {
                VectorField::Exprs(es.iter().map(|e| e.clone().scaled(c)).collect())
            }
            VectorField::Scaled(c0, inner) => VectorField::Scaled(c0 * c, inner.clone()),
            VectorField::Native(_) => VectorField::Scaled(c, Box::new(self.clone())),
        }
    }

    fn declared_dim(&self) -> Option<usize> {
        match self {
            VectorField::Exprs(es) => Some(es.len()),
            VectorField::Native(_) => None,
            VectorField::Scaled(_, inner) => inner.declared_dim(),
        }
    }
}

impl fmt::Display for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VectorField::Exprs(es) => {
                f.write_str("[")?;
                for (i, e) in es.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{e}")?;
                }
                f.write_str("]")
            }
            VectorField::Native(_) => f.write_str("<native>"),
            VectorField::Scaled(c, inner) => write!(f, "{c} * {inner}"),
        }
    }
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VectorField({self})")
    }
}

/// f(x,u) = f₀(x) + Σ_α u^α f_α(x).
#[derive(Clone, Debug)]
pub struct PolyDynamics {
    n: usize,
    m: usize,
    drift: VectorField,
    terms: Vec<(MultiIndex, VectorField)>,
}

impl PolyDynamics {
    pub fn new(
        n: usize,
        m: usize,
        drift: VectorField,
        mut terms: Vec<(MultiIndex, VectorField)>,
    ) -> Result<Self, ModelError> {
        let check_field = |what: String, v: &VectorField| match v.declared_dim() {
            Some(d) if d != n => Err(ModelError::Dimension {
                what,
                expected: n,
                got: d,
            }),
            _ => Ok(()),
        };
        check_field("drift".into(), &drift)?;
        for (alpha, field) in &terms {
            if alpha.len() != m {
                return Err(ModelError::Dimension {
                    what: format!("multi-index {alpha}"),
                    expected: m,
                    got: alpha.len(),
                });
            }
            if alpha.degree() == 0 {
                return Err(ModelError::ZeroDegreeTerm(alpha.clone()));
            }
            check_field(format!("field of term {alpha}"), field)?;
        }
        terms.sort_by(|a, b| a.0.cmp(&b.0));
        for w in terms.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(ModelError::DuplicateTerm(w[0].0.clone()));
            }
        }
        Ok(Self { n, m, drift, terms })
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn control_dim(&self) -> usize {
        self.m
    }

    pub fn drift(&self) -> &VectorField {
        &self.drift
    }

    /// Terms in graded lexicographic order.
    pub fn terms(&self) -> &[(MultiIndex, VectorField)] {
        &self.terms
    }

    pub fn term(&self, alpha: &MultiIndex) -> Option<&VectorField> {
        self.terms
            .binary_search_by(|(a, _)| a.cmp(alpha))
            .ok()
            .map(|i| &self.terms[i].1)
    }

    /// Largest term degree, 0 for drift-only dynamics.
    pub fn degree(&self) -> u32 {
        self.terms.iter().map(|(a, _)| a.degree()).max().unwrap_or(0)
    }

    /// Field values at `x`: drift first, then one block of `n` per term.
    pub fn fields_at(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        check_dim(self.n, x.len())?;
        let n = self.n;
        let mut out = vec![0.0; n * (1 + self.terms.len())];
        self.drift.eval_into(x, &mut out[..n])?;
        for (k, (_, field)) in self.terms.iter().enumerate() {
            field.eval_into(x, &mut out[n * (k + 1)..n * (k + 2)])?;
        }
        Ok(out)
    }

    pub fn eval_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        check_dim(self.m, u.len())?;
        check_dim(self.n, out.len())?;
        let fields = self.fields_at(x)?;
        self.combine(&fields, u, out);
        Ok(())
    }

    /// Sums precomputed field values against the monomials of `u`.
    fn combine(&self, fields: &[f64], u: &[f64], out: &mut [f64]) {
        let n = self.n;
        out.copy_from_slice(&fields[..n]);
        for (k, (alpha, _)) in self.terms.iter().enumerate() {
            let c = alpha.monomial(u);
            if c != 0.0 {
                for (o, v) in out.iter_mut().zip(&fields[n * (k + 1)..n * (k + 2)]) {
                    *o += c * v;
                }
            }
        }
    }

    pub fn with_terms(&self, terms: Vec<(MultiIndex, VectorField)>) -> Result<Self, ModelError> {
        Self::new(self.n, self.m, self.drift.clone(), terms)
    }
}

impl fmt::Display for PolyDynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.drift)?;
        for (alpha, field) in &self.terms {
            f.write_str(" + ")?;
            let mut first = true;
            for (i, &a) in alpha.exponents().iter().enumerate() {
                if a == 0 {
                    continue;
                }
                if !first {
                    f.write_str("*")?;
                }
                first = false;
                if a == 1 {
                    write!(f, "u{}", i + 1)?;
                } else {
                    write!(f, "u{}^{a}", i + 1)?;
                }
            }
            write!(f, " {field}")?;
        }
        Ok(())
    }
}

/// f₀(x) + Σ_α u^α f_α(x).
pub fn eval_poly(pd: &PolyDynamics, x: &[f64], u: &[f64]) -> Result<Vec<f64>, EvalError> {
    let mut out = vec![0.0; pd.n];
    pd.eval_into(x, u, &mut out)?;
    Ok(out)
}

/// Polynomial dynamics with an expression cost.
#[derive(Clone, Debug)]
pub struct PolySystem {
    pd: PolyDynamics,
    cost: ScalarExpr,
}

impl PolySystem {
    pub fn new(pd: PolyDynamics, cost: ScalarExpr) -> Self {
        Self { pd, cost }
    }

    pub fn cost(&self) -> &ScalarExpr {
        &self.cost
    }
}

struct PolySection<'a> {
    sys: &'a PolySystem,
    x: Vec<f64>,
    fields: Vec<f64>,
    fixed_cost: Option<f64>,
}

impl Section for PolySection<'_> {
    fn eval(&self, u: &[f64], f: &mut [f64]) -> Result<f64, EvalError> {
        check_dim(self.sys.pd.m, u.len())?;
        check_dim(self.sys.pd.n, f.len())?;
        self.sys.pd.combine(&self.fields, u, f);
        match self.fixed_cost {
            Some(l) => Ok(l),
            None => self.sys.cost.eval(&self.x, u),
        }
    }
}

impl System for PolySystem {
    fn state_dim(&self) -> usize {
        self.pd.n
    }

    fn control_dim(&self) -> usize {
        self.pd.m
    }

    fn section<'a>(&'a self, x: &[f64]) -> Result<Box<dyn Section + 'a>, EvalError> {
        let fields = self.pd.fields_at(x)?;
        let fixed_cost = if self.cost.uses_controls() {
            None
        } else {
            Some(self.cost.eval(x, &[])?)
        };
        Ok(Box::new(PolySection {
            sys: self,
            x: x.to_vec(),
            fields,
            fixed_cost,
        }))
    }

    fn poly(&self) -> Option<&PolyDynamics> {
        Some(&self.pd)
    }
}

/// The triple (l, f, C) together with Ω and U.
#[derive(Clone)]
pub struct ControlProblem {
    pub state_space: StateSpace,
    pub target: Target,
    pub control_set: ControlSet,
    pub system: Arc<dyn System>,
}

impl ControlProblem {
    pub fn new(
        state_space: StateSpace,
        target: Target,
        control_set: ControlSet,
        system: Arc<dyn System>,
    ) -> Result<Self, ModelError> {
        let n = state_space.dim();
        if system.state_dim() != n {
            return Err(ModelError::Dimension {
                what: "system state".into(),
                expected: n,
                got: system.state_dim(),
            });
        }
        if system.control_dim() != control_set.dim() {
            return Err(ModelError::Dimension {
                what: "system control".into(),
                expected: control_set.dim(),
                got: system.control_dim(),
            });
        }
        if let Some(c) = target.as_point() {
            if c.len() != n {
                return Err(ModelError::Dimension {
                    what: "target point".into(),
                    expected: n,
                    got: c.len(),
                });
            }
        }
        Ok(Self {
            state_space,
            target,
            control_set,
            system,
        })
    }

    /// Same Ω, C and U with different dynamics and cost.
    pub fn with_system(&self, system: Arc<dyn System>) -> Result<Self, ModelError> {
        Self::new(
            self.state_space.clone(),
            self.target.clone(),
            self.control_set,
            system,
        )
    }

    pub fn with_control_set(&self, control_set: ControlSet) -> Result<Self, ModelError> {
        Self::new(
            self.state_space.clone(),
            self.target.clone(),
            control_set,
            self.system.clone(),
        )
    }

    pub fn n(&self) -> usize {
        self.state_space.dim()
    }

    pub fn m(&self) -> usize {
        self.control_set.dim()
    }

    /// `(l(x,u), f(x,u))`.
    pub fn eval(&self, x: &[f64], u: &[f64]) -> Result<(f64, Vec<f64>), EvalError> {
        let mut f = vec![0.0; self.n()];
        let l = self.system.section(x)?.eval(u, &mut f)?;
        Ok((l, f))
    }

    pub fn dynamics(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, EvalError> {
        Ok(self.eval(x, u)?.1)
    }

    pub fn cost(&self, x: &[f64], u: &[f64]) -> Result<f64, EvalError> {
        Ok(self.eval(x, u)?.0)
    }
}

impl fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlProblem")
            .field("state_space", &self.state_space)
            .field("target", &self.target)
            .field("control_set", &self.control_set)
            .finish_non_exhaustive()
    }
}

/// Scalar function of the state.
pub trait ScalarField: Send + Sync {
    fn value(&self, x: &[f64]) -> Result<f64, EvalError>;
}

impl ScalarField for ScalarExpr {
    fn value(&self, x: &[f64]) -> Result<f64, EvalError> {
        self.eval(x, &[])
    }
}

pub struct FnField<F>(pub F);

impl<F> ScalarField for FnField<F>
where
    F: Fn(&[f64]) -> Result<f64, EvalError> + Send + Sync,
{
    fn value(&self, x: &[f64]) -> Result<f64, EvalError> {
        (self.0)(x)
    }
}

pub const DEFAULT_FD_STEP: f64 = 1e-5;
pub const DEFAULT_FD_PERTURBATIONS: usize = 8;
pub const DEFAULT_MERGE_TOL: f64 = 1e-4;

/// Ratio between the perturbation radius and the stencil step.
const STENCIL_RATIO: f64 = 1e-2;
/// Above this relative jump between the two points on a ray, the ray is
/// taken to straddle a kink and extrapolation is skipped.
const STRADDLE_TOL: f64 = 1e-3;

fn central_gradient(
    w: &dyn ScalarField,
    x: &[f64],
    step: f64,
    scratch: &mut [f64],
    out: &mut [f64],
) -> Result<(), EvalError> {
    scratch.copy_from_slice(x);
    for i in 0..x.len() {
        scratch[i] = x[i] + step;
        let plus = w.value(scratch)?;
        scratch[i] = x[i] - step;
        let minus = w.value(scratch)?;
        scratch[i] = x[i];
        out[i] = (plus - minus) / (2.0 * step);
    }
    Ok(())
}

fn perturbation_directions(n: usize, k: usize) -> Vec<Vec<f64>> {
    match n {
        0 => Vec::new(),
        1 => (0..k)
            .map(|i| vec![if i % 2 == 0 { 1.0 } else { -1.0 }])
            .collect(),
        2 => (0..k)
            .map(|i| {
                let a = std::f64::consts::PI * (2 * i + 1) as f64 / k as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            // Fixed seed: the oracle must be a deterministic function of x.
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_d1a6);
            (0..k)
                .map(|_| loop {
                    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let r = norm(&v);
                    if r > 0.1 && r <= 1.0 {
                        break v.into_iter().map(|a| a / r).collect();
                    }
                })
                .collect()
        }
    }
}

/// Finite-difference surrogate for the limiting gradient D*W(x).
///
/// Along each of `k` directions `d`, the gradient is taken at `x + h d` and
/// `x + h d / 2` and linearly extrapolated to the ray's origin, which gives
/// the one-sided limit of ∇W along `d`. The plain central gradient at `x` is
/// kept when it agrees with one of these limits; on a kink it is an average
/// of limiting gradients and is dropped.
pub fn limiting_gradient_fd(
    w: &dyn ScalarField,
    x: &[f64],
    h: f64,
    k: usize,
) -> Result<Vec<Vec<f64>>, EvalError> {
    limiting_gradient_fd_with(w, x, h, k, DEFAULT_MERGE_TOL)
}

pub fn limiting_gradient_fd_with(
    w: &dyn ScalarField,
    x: &[f64],
    h: f64,
    k: usize,
    merge_tol: f64,
) -> Result<Vec<Vec<f64>>, EvalError> {
    if !(h > 0.0) || k == 0 {
        return Err(EvalError::Domain {
            msg: format!("limiting gradient needs h > 0 and k >= 1 (h={h}, k={k})"),
        });
    }
    let n = x.len();
    let step = h * STENCIL_RATIO;
    let mut scratch = vec![0.0; n];
    let mut center = vec![0.0; n];
    central_gradient(w, x, step, &mut scratch, &mut center)?;

    let mut clusters: Vec<Vec<f64>> = Vec::new();
    let mut point = vec![0.0; n];
    let mut g_far = vec![0.0; n];
    let mut g_near = vec![0.0; n];
    for d in perturbation_directions(n, k) {
        for i in 0..n {
            point[i] = x[i] + h * d[i];
        }
        central_gradient(w, &point, step, &mut scratch, &mut g_far)?;
        for i in 0..n {
            point[i] = x[i] + 0.5 * h * d[i];
        }
        central_gradient(w, &point, step, &mut scratch, &mut g_near)?;
        let jump = dist(&g_far, &g_near);
        let g: Vec<f64> = if jump <= STRADDLE_TOL * (1.0 + norm(&g_near)) {
            g_near
                .iter()
                .zip(&g_far)
                .map(|(a, b)| 2.0 * a - b)
                .collect()
        } else {
            g_near.clone()
        };
        if !clusters.iter().any(|c| dist(c, &g) <= merge_tol) {
            clusters.push(g);
        }
    }
    if let Some(i) = clusters.iter().position(|c| dist(c, &center) <= merge_tol) {
        clusters.remove(i);
        clusters.insert(0, center);
    }
    for c in &clusters {
        if c.iter().any(|v| !v.is_finite()) {
            return Err(EvalError::NonFinite);
        }
    }
    Ok(clusters)
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

type AnalyticGradient = dyn Fn(&[f64]) -> Result<Vec<Vec<f64>>, EvalError> + Send + Sync;

#[derive(Clone)]
pub enum GradientOracle {
    FiniteDifference { h: f64, k: usize, merge_tol: f64 },
    Analytic(Arc<AnalyticGradient>),
}

impl Default for GradientOracle {
    fn default() -> Self {
        GradientOracle::FiniteDifference {
            h: DEFAULT_FD_STEP,
            k: DEFAULT_FD_PERTURBATIONS,
            merge_tol: DEFAULT_MERGE_TOL,
        }
    }
}

impl fmt::Debug for GradientOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GradientOracle::FiniteDifference { h, k, merge_tol } => f
                .debug_struct("FiniteDifference")
                .field("h", h)
                .field("k", k)
                .field("merge_tol", merge_tol)
                .finish(),
            GradientOracle::Analytic(_) => f.write_str("Analytic"),
        }
    }
}

/// W with its limiting-gradient oracle, p₀ and boundary value W₀.
#[derive(Clone)]
pub struct MrfCandidate {
    pub w: Arc<dyn ScalarField>,
    pub oracle: GradientOracle,
    pub p0: f64,
    pub w0: f64,
}

impl MrfCandidate {
    pub fn new(w: Arc<dyn ScalarField>, p0: f64) -> Self {
        Self {
            w,
            oracle: GradientOracle::default(),
            p0,
            w0: f64::INFINITY,
        }
    }

    pub fn with_p0(&self, p0: f64) -> Self {
        Self { p0, ..self.clone() }
    }

    pub fn value(&self, x: &[f64]) -> Result<f64, EvalError> {
        self.w.value(x)
    }

    /// Covectors standing in for D*W(x); the first one is p(x).
    pub fn covectors(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, EvalError> {
        let ps = match &self.oracle {
            GradientOracle::FiniteDifference { h, k, merge_tol } => {
                limiting_gradient_fd_with(self.w.as_ref(), x, *h, *k, *merge_tol)?
            }
            GradientOracle::Analytic(f) => f(x)?,
        };
        if ps.is_empty() || ps.iter().flatten().any(|v| !v.is_finite()) {
            return Err(EvalError::NonFinite);
        }
        Ok(ps)
    }
}

impl fmt::Debug for MrfCandidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MrfCandidate")
            .field("oracle", &self.oracle)
            .field("p0", &self.p0)
            .field("w0", &self.w0)
            .finish_non_exhaustive()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;

    fn field(exprs: &[&str], n: usize) -> VectorField {
        VectorField::Exprs(exprs.iter().map(|s| parse_expr(s, n, 0).unwrap()).collect())
    }

    #[test]
    fn gyroscope_drift_at_rest_control() {
        let pd = PolyDynamics::new(
            2,
            2,
            field(&["x2 / 1", "1 * sin(x1)"], 2),
            vec![(MultiIndex::new(vec![1, 1]), field(&["0", "-1 * sin(x1)"], 2))],
        )
        .unwrap();
        assert_eq!(eval_poly(&pd, &[0.0, 1.0], &[0.0, 0.0]).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn zero_fields_give_zero() {
        let pd = PolyDynamics::new(
            2,
            2,
            VectorField::constant(&[0.0, 0.0]),
            vec![
                (MultiIndex::new(vec![1, 0]), VectorField::constant(&[0.0, 0.0])),
                (MultiIndex::new(vec![2, 3]), VectorField::constant(&[0.0, 0.0])),
            ],
        )
        .unwrap();
        assert_eq!(eval_poly(&pd, &[3.0, -1.0], &[2.0, 5.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let pd = PolyDynamics::new(1, 1, VectorField::constant(&[0.0]), vec![]).unwrap();
        assert!(matches!(
            eval_poly(&pd, &[1.0], &[1.0, 2.0]),
            Err(EvalError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn graded_lex_order() {
        let mut v = vec![
            MultiIndex::new(vec![0, 3, 5]),
            MultiIndex::new(vec![1, 0, 5]),
            MultiIndex::new(vec![1, 3, 0]),
            MultiIndex::new(vec![0, 1, 0]),
            MultiIndex::new(vec![1, 0, 0]),
        ];
        v.sort();
        let got: Vec<String> = v.iter().map(|a| a.to_string()).collect();
        assert_eq!(got, ["(1,0,0)", "(0,1,0)", "(1,3,0)", "(1,0,5)", "(0,3,5)"]);
    }

    #[test]
    fn duplicate_terms_rejected() {
        let t = || (MultiIndex::new(vec![1]), VectorField::constant(&[1.0]));
        assert!(matches!(
            PolyDynamics::new(1, 1, VectorField::constant(&[0.0]), vec![t(), t()]),
            Err(ModelError::DuplicateTerm(_))
        ));
    }

    #[test]
    fn point_target_distance_is_norm() {
        let t = Target::point(vec![0.0, 0.0]);
        assert_eq!(t.distance(&[3.0, 4.0]), 5.0);
        assert!(t.contains(&[0.0, 0.0]));
        assert!(!t.contains(&[1e-300, 0.0]));
    }

    #[test]
    fn state_space_checks() {
        assert!(StateSpace::open_box(vec![(1.0, 1.0)]).is_err());
        let s = StateSpace::open_box(vec![(-1.0, 1.0), (f64::NEG_INFINITY, f64::INFINITY)]).unwrap();
        assert!(s.contains(&[0.5, 1e9]));
        assert!(!s.contains(&[1.0, 0.0]));
    }

    #[test]
    fn control_set_contains_zero() {
        for cs in [
            ControlSet::cube(3, 0.1).unwrap(),
            ControlSet::ball(3, 0.1).unwrap(),
            ControlSet::full(3),
        ] {
            assert!(cs.contains(&[0.0, 0.0, 0.0]));
        }
        assert!(ControlSet::cube(1, 0.0).is_err());
    }

    #[test]
    fn smooth_gradient_singleton() {
        let w = parse_expr("x1^2 + x2^2", 2, 0).unwrap();
        for h in [1e-4, 1e-5, 1e-6] {
            let g = limiting_gradient_fd(&w, &[1.0, 0.0], h, 8).unwrap();
            assert_eq!(g.len(), 1, "h={h}");
            assert!(dist(&g[0], &[2.0, 0.0]) < 1e-6);
        }
    }

    #[test]
    fn ridge_gives_both_sides() {
        let w = parse_expr("abs(x1)", 2, 0).unwrap();
        let g = limiting_gradient_fd(&w, &[0.0, 0.5], 1e-3, 8).unwrap();
        assert!(g.iter().any(|p| dist(p, &[1.0, 0.0]) < 1e-6));
        assert!(g.iter().any(|p| dist(p, &[-1.0, 0.0]) < 1e-6));
        assert_eq!(g.len(), 2);
    }

    #[test]
    fn one_dimensional_kink() {
        let w = parse_expr("abs(x1)", 1, 0).unwrap();
        let g = limiting_gradient_fd(&w, &[0.0], 1e-4, 4).unwrap();
        assert_eq!(g.len(), 2);
    }

    #[test]
    fn higher_dimension_smooth() {
        let w = parse_expr("x1^2 + 2*x2^2 + 3*x3^2", 3, 0).unwrap();
        let g = limiting_gradient_fd(&w, &[1.0, 1.0, 1.0], 1e-5, 8).unwrap();
        assert_eq!(g.len(), 1);
        assert!(dist(&g[0], &[2.0, 4.0, 6.0]) < 1e-6);
    }

    #[test]
    fn stencil_failure_is_reported() {
        let w = parse_expr("log(x1)", 1, 0).unwrap();
        assert!(limiting_gradient_fd(&w, &[0.0], 1e-5, 2).is_err());
    }
}

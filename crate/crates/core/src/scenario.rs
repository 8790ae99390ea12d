//! Scenario files (TOML) and the built-in scenarios.
//!
//! ```toml
//! name = "decay"
//! n = 1
//! m = 1
//! cost = "u1^2"
//!
//! [constants]
//! a = 2.0
//!
//! [state_space]            # optional; all of R^n by default
//! bounds = [[-1.0, 1.0]]
//!
//! [target]
//! point = [0.0]            # or: distance = "abs(x1)", anchor = [0.0]
//!
//! [control_set]
//! kind = "cube"            # full | cube | ball
//! radius = 1.0
//!
//! [dynamics]
//! fields = ["-a*x1 + u1"]  # or: drift = [...] and [[dynamics.terms]]
//!
//! [candidate]
//! w = "x1^2"               # or: builtin = "gyroscope-w"
//! p0 = 0.5
//!
//! [sampling]
//! sigma = 1.0
//! bbox = [[-1.0, 1.0]]
//! ```
//!
//! Polynomial dynamics list their terms as
//! `[[dynamics.terms]] alpha = [1, 1] field = ["0", "-sin(x1)"]`.
//! Unknown keys are rejected.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{EvalError, ParseError};
use crate::expr::{parse_expr_with, Constants, ScalarExpr};
use crate::feedback::{StepBudget, StopRule, SynthesisOptions, DEFAULT_MARGIN_SAFETY};
use crate::minimize::MinimizeBudget;
use crate::sysmodel::{
    ControlProblem, ControlSet, ExprSystem, GradientOracle, ModelError, MrfCandidate, MultiIndex,
    PolyDynamics, PolySystem, ScalarField, StateSpace, Target, VectorField, DEFAULT_FD_PERTURBATIONS,
    DEFAULT_FD_STEP, DEFAULT_MERGE_TOL,
};
use crate::verifier::LevelSampling;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("scenario file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("cannot serialize scenario: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("expression {what} = {text:?}: {source}")]
    Expr {
        what: String,
        text: String,
        source: ParseError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("unknown builtin {0:?} (known: gyroscope, diag-example, remark48-counterexample, remark44-system)")]
    UnknownBuiltin(String),
    #[error("unknown builtin field {0:?} (known: gyroscope-w)")]
    UnknownField(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub n: usize,
    pub m: usize,
    #[serde(default = "zero_cost")]
    pub cost: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub constants: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_space: Option<StateSpaceSpec>,
    pub target: TargetSpec,
    pub control_set: ControlSetSpec,
    pub dynamics: DynamicsSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate: Option<CandidateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingSpec>,
    #[serde(default)]
    pub budget: MinimizeBudget,
    #[serde(default)]
    pub feedback: FeedbackSpec,
}

fn zero_cost() -> String {
    "0".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpaceSpec {
    pub bounds: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlKindSpec {
    Full,
    Cube,
    Ball,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSetSpec {
    pub kind: ControlKindSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub alpha: Vec<u32>,
    pub field: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fields: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub terms: Vec<TermSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradientSpec {
    pub h: f64,
    pub k: usize,
    pub merge_tol: f64,
}

impl Default for GradientSpec {
    fn default() -> Self {
        Self {
            h: DEFAULT_FD_STEP,
            k: DEFAULT_FD_PERTURBATIONS,
            merge_tol: DEFAULT_MERGE_TOL,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    pub p0: f64,
    #[serde(default = "infinite")]
    pub w0: f64,
    #[serde(default)]
    pub gradient: GradientSpec,
}

fn infinite() -> f64 {
    f64::INFINITY
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSpec {
    pub sigma: f64,
    #[serde(default = "default_bands")]
    pub bands: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Lowest level is 2σ·min_frac.
    #[serde(default = "default_min_frac")]
    pub min_frac: f64,
    #[serde(default)]
    pub seed: u64,
    pub bbox: Vec<[f64; 2]>,
}

fn default_bands() -> usize {
    8
}

fn default_samples() -> usize {
    2000
}

fn default_min_frac() -> f64 {
    1e-6
}

impl SamplingSpec {
    pub fn to_sampling(&self) -> LevelSampling {
        LevelSampling::geometric(
            self.sigma,
            self.bands,
            self.min_frac,
            self.samples,
            self.seed,
            self.bbox.iter().map(|b| (b[0], b[1])).collect(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeedbackSpec {
    pub eps: f64,
    pub delta: f64,
    pub floor: f64,
    pub substeps: usize,
    pub time_cap_factor: f64,
    pub stop_frac: f64,
    pub nu_ratio: f64,
    pub margin_safety: f64,
}

impl Default for FeedbackSpec {
    fn default() -> Self {
        let step = StepBudget::default();
        Self {
            eps: step.eps,
            delta: step.delta,
            floor: step.floor,
            substeps: step.substeps,
            time_cap_factor: step.time_cap_factor,
            stop_frac: 1e-3,
            nu_ratio: 0.5,
            margin_safety: DEFAULT_MARGIN_SAFETY,
        }
    }
}

impl FeedbackSpec {
    pub fn step(&self) -> StepBudget {
        StepBudget {
            eps: self.eps,
            delta: self.delta,
            floor: self.floor,
            substeps: self.substeps,
            time_cap_factor: self.time_cap_factor,
        }
    }

    pub fn options(&self, budget: &MinimizeBudget) -> SynthesisOptions {
        SynthesisOptions {
            nu_ratio: self.nu_ratio,
            stop: StopRule::Fraction(self.stop_frac),
            step: self.step(),
            minimize: budget.clone(),
        }
    }
}

/// A loaded scenario.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub problem: ControlProblem,
    pub candidate: Option<MrfCandidate>,
    pub poly: Option<PolyDynamics>,
    pub cost: ScalarExpr,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = toml::from_str(text)?;
        Self::from_file(file)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String, ScenarioError> {
        Ok(toml::to_string(&self.file)?)
    }

    pub fn sampling(&self) -> Result<LevelSampling, ScenarioError> {
        self.file
            .sampling
            .as_ref()
            .map(SamplingSpec::to_sampling)
            .ok_or_else(|| ScenarioError::Invalid("scenario has no [sampling] section".into()))
    }

    pub fn from_file(file: ScenarioFile) -> Result<Self, ScenarioError> {
        let (n, m) = (file.n, file.m);
        let consts: Constants = file.constants.clone();
        let expr = |what: &str, text: &str, m: usize| {
            parse_expr_with(text, n, m, &consts).map_err(|source| ScenarioError::Expr {
                what: what.to_string(),
                text: text.to_string(),
                source,
            })
        };
        let exprs = |what: &str, texts: &[String], m: usize| -> Result<Vec<ScalarExpr>, ScenarioError> {
            if texts.len() != n {
                return Err(ModelError::Dimension {
                    what: what.to_string(),
                    expected: n,
                    got: texts.len(),
                }
                .into());
            }
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| expr(&format!("{what}[{}]", i + 1), t, m))
                .collect()
        };

        let state_space = match &file.state_space {
            None => StateSpace::full(n),
            Some(s) => {
                if s.bounds.len() != n {
                    return Err(ModelError::Dimension {
                        what: "state_space.bounds".into(),
                        expected: n,
                        got: s.bounds.len(),
                    }
                    .into());
                }
                StateSpace::open_box(s.bounds.iter().map(|b| (b[0], b[1])).collect())?
            }
        };

        let target = match (&file.target.point, &file.target.distance) {
            (Some(p), None) => {
                if p.len() != n {
                    return Err(ModelError::Dimension {
                        what: "target.point".into(),
                        expected: n,
                        got: p.len(),
                    }
                    .into());
                }
                Target::point(p.clone())
            }
            (None, Some(d)) => {
                let e = expr("target.distance", d, 0)?;
                Target::custom(
                    move |x| e.eval(x, &[]).map_or(f64::INFINITY, f64::abs),
                    file.target.anchor.clone(),
                )
            }
            _ => {
                return Err(ScenarioError::Invalid(
                    "[target] needs exactly one of `point` or `distance`".into(),
                ))
            }
        };

        let radius = file.control_set.radius;
        let control_set = match (file.control_set.kind, radius) {
            (ControlKindSpec::Full, None) => ControlSet::full(m),
            (ControlKindSpec::Cube, Some(r)) => ControlSet::cube(m, r)?,
            (ControlKindSpec::Ball, Some(r)) => ControlSet::ball(m, r)?,
            (ControlKindSpec::Full, Some(_)) => {
                return Err(ScenarioError::Invalid("control_set kind \"full\" takes no radius".into()))
            }
            _ => return Err(ScenarioError::Invalid("control_set needs a radius".into())),
        };

        let cost = expr("cost", &file.cost, m)?;
        let d = &file.dynamics;
        let (system, poly): (Arc<dyn crate::sysmodel::System>, Option<PolyDynamics>) =
            match (&d.fields, &d.drift) {
                (Some(fields), None) if d.terms.is_empty() => {
                    let dynamics = exprs("dynamics.fields", fields, m)?;
                    (Arc::new(ExprSystem::new(n, m, dynamics, cost.clone())?), None)
                }
                (None, Some(drift)) => {
                    let drift = VectorField::Exprs(exprs("dynamics.drift", drift, 0)?);
                    let mut terms = Vec::with_capacity(d.terms.len());
                    for t in &d.terms {
                        let alpha = MultiIndex::new(t.alpha.clone());
                        let what = format!("dynamics.terms{alpha}");
                        terms.push((alpha, VectorField::Exprs(exprs(&what, &t.field, 0)?)));
                    }
                    let pd = PolyDynamics::new(n, m, drift, terms)?;
                    (Arc::new(PolySystem::new(pd.clone(), cost.clone())), Some(pd))
                }
                _ => {
                    return Err(ScenarioError::Invalid(
                        "[dynamics] needs either `fields` or `drift` (with optional terms)".into(),
                    ))
                }
            };
        let problem = ControlProblem::new(state_space, target, control_set, system)?;

        let candidate = match &file.candidate {
            None => None,
            Some(c) => {
                let w: Arc<dyn ScalarField> = match (&c.w, &c.builtin) {
                    (Some(text), None) => Arc::new(expr("candidate.w", text, 0)?),
                    (None, Some(name)) => builtin_field(name, n)?,
                    _ => {
                        return Err(ScenarioError::Invalid(
                            "[candidate] needs exactly one of `w` or `builtin`".into(),
                        ))
                    }
                };
                if !(c.p0 >= 0.0) {
                    return Err(ScenarioError::Invalid(format!("p0 must be nonnegative, got {}", c.p0)));
                }
                let mut cand = MrfCandidate::new(w, c.p0);
                cand.w0 = c.w0;
                cand.oracle = GradientOracle::FiniteDifference {
                    h: c.gradient.h,
                    k: c.gradient.k,
                    merge_tol: c.gradient.merge_tol,
                };
                Some(cand)
            }
        };

        if let Some(s) = &file.sampling {
            if s.bbox.len() != n {
                return Err(ModelError::Dimension {
                    what: "sampling.bbox".into(),
                    expected: n,
                    got: s.bbox.len(),
                }
                .into());
            }
        }
        file.budget
            .validate()
            .map_err(|e| ScenarioError::Invalid(format!("budget: {e}")))?;
        file.feedback
            .step()
            .validate()
            .map_err(|e| ScenarioError::Invalid(format!("feedback: {e}")))?;

        Ok(Self {
            file,
            problem,
            candidate,
            poly,
            cost,
        })
    }

    pub fn builtin(name: &str) -> Result<Self, ScenarioError> {
        let text = match name {
            "gyroscope" => GYROSCOPE,
            "diag-example" => DIAG_EXAMPLE,
            "remark48-counterexample" => REMARK48,
            "remark44-system" => REMARK44,
            other => return Err(ScenarioError::UnknownBuiltin(other.to_string())),
        };
        Self::from_toml(text)
    }

    /// Same scenario with the polynomial dynamics replaced (cost kept).
    pub fn with_poly(&self, pd: PolyDynamics) -> Result<Self, ScenarioError> {
        let problem = self
            .problem
            .with_system(Arc::new(PolySystem::new(pd.clone(), self.cost.clone())))?;
        Ok(Self {
            problem,
            poly: Some(pd),
            ..self.clone()
        })
    }
}

pub const BUILTINS: [&str; 4] = [
    "gyroscope",
    "diag-example",
    "remark48-counterexample",
    "remark44-system",
];

pub fn builtin_field(name: &str, n: usize) -> Result<Arc<dyn ScalarField>, ScenarioError> {
    match (name, n) {
        ("gyroscope-w", 2) => Ok(Arc::new(GyroscopeW)),
        ("gyroscope-w", _) => Err(ScenarioError::Invalid("gyroscope-w needs n = 2".into())),
        _ => Err(ScenarioError::UnknownField(name.to_string())),
    }
}

/// W(x) = W₁(x)(2 − |W₂(x)|) with W₁ = tan²x₁ + x₂² and
/// W₂ = sin(2 atan((−tan x₁ + √3 x₂)/(√3 tan x₁ + x₂))), W₂ = 0 where the
/// denominator vanishes.
#[derive(Clone, Copy, Debug)]
pub struct GyroscopeW;

impl GyroscopeW {
    pub fn w2(x: &[f64]) -> Result<f64, EvalError> {
        let t = tan_checked(x[0])?;
        let s3 = 3f64.sqrt();
        let den = s3 * t + x[1];
        if den == 0.0 {
            return Ok(0.0);
        }
        Ok((2.0 * ((-t + s3 * x[1]) / den).atan()).sin())
    }
}

fn tan_checked(a: f64) -> Result<f64, EvalError> {
    if a.cos().abs() < 1e-12 {
        return Err(EvalError::TanPole { arg: a });
    }
    Ok(a.tan())
}

impl ScalarField for GyroscopeW {
    fn value(&self, x: &[f64]) -> Result<f64, EvalError> {
        crate::error::check_dim(2, x.len())?;
        let t = tan_checked(x[0])?;
        let w1 = t * t + x[1] * x[1];
        let v = w1 * (2.0 - Self::w2(x)?.abs());
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite)
        }
    }
}

const GYROSCOPE: &str = r#"
name = "gyroscope"
n = 2
m = 2
cost = "x2^2"

[constants]
I = 1.0
Mgz = 1.0

[state_space]
bounds = [[-1.5707963267948966, 1.5707963267948966], [-inf, inf]]

[target]
point = [0.0, 0.0]

[control_set]
kind = "full"

[dynamics]
drift = ["x2/I", "Mgz*sin(x1)"]

[[dynamics.terms]]
alpha = [1, 1]
field = ["0", "-I*sin(x1)"]

[candidate]
builtin = "gyroscope-w"
p0 = 0.9

[sampling]
sigma = 1.0
bands = 8
samples = 2000
min_frac = 1e-6
seed = 1
bbox = [[-1.4, 1.4], [-10.0, 10.0]]

[feedback]
stop_frac = 5e-5
"#;

const DIAG_EXAMPLE: &str = r#"
name = "diag-example"
n = 2
m = 2
cost = "(x1^2 + x2^2)*(u1^2 + u2^2)"

[target]
point = [0.0, 0.0]

[control_set]
kind = "full"

[dynamics]
drift = ["x1", "x2"]

[[dynamics.terms]]
alpha = [1, 1]
field = ["1/sqrt(x1^2 + x2^2)", "1"]

[[dynamics.terms]]
alpha = [2, 0]
field = ["-1", "0"]

[[dynamics.terms]]
alpha = [0, 2]
field = ["0", "-1"]

[[dynamics.terms]]
alpha = [2, 2]
field = ["3*x1", "3*x2"]

[candidate]
w = "x1^2 + x2^2"
p0 = 0.5

[sampling]
sigma = 2.0
bands = 8
samples = 500
min_frac = 1e-6
seed = 1
bbox = [[-2.5, 2.5], [-2.5, 2.5]]
"#;

const REMARK48: &str = r#"
name = "remark48-counterexample"
n = 1
m = 1
cost = "0"

[target]
point = [0.0]

[control_set]
kind = "cube"
radius = 1.0

[dynamics]
drift = ["0"]

[[dynamics.terms]]
alpha = [2]
field = ["x1"]

[[dynamics.terms]]
alpha = [3]
field = ["x1"]

[candidate]
w = "x1^2"
p0 = 0.5

[sampling]
sigma = 1.0
bands = 8
samples = 200
min_frac = 1e-6
seed = 1
bbox = [[-2.0, 2.0]]
"#;

const REMARK44: &str = r#"
name = "remark44-system"
n = 4
m = 3
cost = "0"

[target]
point = [0.0, 0.0, 0.0, 0.0]

[control_set]
kind = "full"

[dynamics]
drift = ["0", "0", "0", "0"]

[[dynamics.terms]]
alpha = [1, 3, 0]
field = ["1", "0", "x2", "0"]

[[dynamics.terms]]
alpha = [1, 0, 5]
field = ["0", "1", "-x1", "0"]

[[dynamics.terms]]
alpha = [0, 3, 5]
field = ["0", "0", "0", "1"]
"#;

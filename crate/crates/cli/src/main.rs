use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mrf_core::feedback::{build_kl_envelope, check_gac_bound, synthesize, Margins};
use mrf_core::polysys::{
    affine_field, check_hyp_adiag, check_hyp_amax, classify_near_affine, diagonal_subsystem,
    hull_witness, maximal_subsystem, DiagonalSpec, HypSampling, WitnessStrategy,
};
use mrf_core::scenario::{Scenario, SamplingSpec};
use mrf_core::verifier::{verify_mrf, Verdict, VerificationReport};
use mrf_core::{eval_poly, PolyDynamics};

const EXIT_OK: u8 = 0;
const EXIT_FAIL: u8 = 1;
const EXIT_INCONCLUSIVE: u8 = 2;
const EXIT_USAGE: u8 = 3;

#[derive(Parser)]
#[command(name = "mrf", version, about = "Minimum restraint function toolkit")]
struct Cli {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    flags: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
#[group(multiple = false)]
struct Source {
    /// Built-in scenario: gyroscope, diag-example, remark48-counterexample, remark44-system.
    #[arg(long, global = true)]
    builtin: Option<String>,
    /// Scenario file (TOML).
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
}

#[derive(Args, Default)]
struct Overrides {
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Samples per band.
    #[arg(long, global = true)]
    samples: Option<usize>,
    #[arg(long, global = true)]
    bands: Option<usize>,
    #[arg(long, global = true)]
    sigma: Option<f64>,
    #[arg(long, global = true)]
    p0: Option<f64>,
    #[arg(long, global = true)]
    eps: Option<f64>,
    /// Initial hold interval (rescaled time).
    #[arg(long, global = true)]
    delta: Option<f64>,
    /// Stop once W drops below this fraction of W(z).
    #[arg(long, global = true)]
    stop_frac: Option<f64>,
    /// Output file (report, CSV or scenario, depending on the command).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the candidate on sampled level bands; exit 0 verified, 1 violated, 2 inconclusive.
    Verify,
    /// Synthesize a sample-and-hold trajectory and write it as CSV.
    Simulate {
        /// Initial state, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        from: Vec<f64>,
        /// Run even when verification is inconclusive.
        #[arg(long)]
        force: bool,
    },
    /// Control-polynomial structure.
    Poly {
        #[command(subcommand)]
        action: PolyAction,
    },
    /// Write the (possibly overridden) scenario as TOML.
    Export,
}

#[derive(Subcommand)]
enum PolyAction {
    /// Exponents K, d̄ and the number of affine controls.
    Classify,
    /// The affine reparameterization.
    Affine,
    /// Convex-combination witness for the affine field at (x, w).
    Witness {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        at: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        w: Vec<f64>,
        /// Control bound r (default: the scenario's cube radius, or unbounded).
        #[arg(long)]
        r: Option<f64>,
        #[arg(long)]
        compact: bool,
    },
    /// A weak subsystem.
    Subsystem {
        #[arg(long, value_enum)]
        kind: SubKind,
        /// Diagonal weights λ (default 1/m each).
        #[arg(long, value_delimiter = ',')]
        lambda: Option<Vec<f64>>,
    },
    /// Sampled checks of the running-cost hypotheses.
    Hypcheck {
        /// Constant for the diagonal hypothesis.
        #[arg(long, default_value_t = 2.0)]
        m0: f64,
        #[arg(long, default_value_t = 2000)]
        hyp_samples: usize,
        /// Controls are drawn up to this magnitude.
        #[arg(long, default_value_t = 10.0)]
        u_radius: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SubKind {
    Max,
    Diag,
}

struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn usage(msg: impl ToString) -> Self {
        Self {
            code: EXIT_USAGE,
            msg: msg.to_string(),
        }
    }

    fn fail(msg: impl ToString) -> Self {
        Self {
            code: EXIT_FAIL,
            msg: msg.to_string(),
        }
    }
}

type Outcome = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let scenario = load(&cli.source, &cli.flags)?;
    let out = cli.flags.out.as_deref();
    match cli.command {
        Command::Verify => cmd_verify(&scenario, out),
        Command::Simulate { from, force } => cmd_simulate(&scenario, &from, force, out),
        Command::Poly { action } => cmd_poly(&scenario, action, out),
        Command::Export => {
            let text = scenario.to_toml().map_err(Failure::usage)?;
            emit(out, &text)?;
            Ok(EXIT_OK)
        }
    }
}

fn load(source: &Source, o: &Overrides) -> Result<Scenario, Failure> {
    let base = match (&source.builtin, &source.scenario) {
        (Some(name), None) => Scenario::builtin(name),
        (None, Some(path)) => Scenario::load(path),
        _ => return Err(Failure::usage("give exactly one of --builtin or --scenario")),
    }
    .map_err(Failure::usage)?;
    let mut file = base.file;
    if o.seed.is_some() || o.samples.is_some() || o.bands.is_some() || o.sigma.is_some() {
        let s = file.sampling.as_mut().ok_or_else(|| {
            Failure::usage("sampling flags need a scenario with a [sampling] section")
        })?;
        apply_sampling(s, o);
    }
    if let Some(p0) = o.p0 {
        file.candidate
            .as_mut()
            .ok_or_else(|| Failure::usage("--p0 needs a scenario with a candidate"))?
            .p0 = p0;
    }
    if let Some(v) = o.eps {
        file.feedback.eps = v;
    }
    if let Some(v) = o.delta {
        file.feedback.delta = v;
    }
    if let Some(v) = o.stop_frac {
        file.feedback.stop_frac = v;
    }
    Scenario::from_file(file).map_err(Failure::usage)
}

fn apply_sampling(s: &mut SamplingSpec, o: &Overrides) {
    if let Some(v) = o.seed {
        s.seed = v;
    }
    if let Some(v) = o.samples {
        s.samples = v;
    }
    if let Some(v) = o.bands {
        s.bands = v;
    }
    if let Some(v) = o.sigma {
        s.sigma = v;
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, text)
            .map_err(|e| Failure::usage(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| Failure::usage(format!("stdout: {e}")))
        }
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

fn run_verify(s: &Scenario) -> Result<VerificationReport, Failure> {
    let cand = s
        .candidate
        .as_ref()
        .ok_or_else(|| Failure::usage("scenario has no [candidate]"))?;
    let sampling = s.sampling().map_err(Failure::usage)?;
    verify_mrf(&s.problem, cand, &sampling, &s.file.budget).map_err(|e| match e {
        mrf_core::verifier::VerifyError::EmptyBand { .. } => Failure {
            code: EXIT_INCONCLUSIVE,
            msg: format!("inconclusive: {e}"),
        },
        other => Failure::usage(other),
    })
}

fn verdict_code(v: &Verdict) -> u8 {
    match v {
        Verdict::Verified => EXIT_OK,
        Verdict::Violated { .. } => EXIT_FAIL,
        Verdict::Inconclusive { .. } => EXIT_INCONCLUSIVE,
    }
}

fn verdict_line(rep: &VerificationReport) -> String {
    match &rep.verdict {
        Verdict::Verified => {
            let g = rep.gamma.last().map_or(f64::NAN, |(_, g)| *g);
            format!("verified (p0 = {}, smallest margin estimate {g:.3e})", rep.p0)
        }
        Verdict::Violated { witness } => format!(
            "violated at x = {:?} (W = {:.6e}, p = {:?}, u = {:?}, value = {:.3e})",
            witness.x, witness.w, witness.p, witness.u, witness.value
        ),
        Verdict::Inconclusive { reason } => format!("inconclusive: {reason}"),
    }
}

fn cmd_verify(s: &Scenario, out: Option<&Path>) -> Outcome {
    let rep = run_verify(s)?;
    let text = to_json(&rep);
    if out.is_some() {
        emit(out, &text)?;
        println!("{}", verdict_line(&rep));
    } else {
        emit(None, &text)?;
        eprintln!("{}", verdict_line(&rep));
    }
    Ok(verdict_code(&rep.verdict))
}

#[derive(serde::Serialize)]
struct SimulationSummary {
    verdict: String,
    from: Vec<f64>,
    w_z: f64,
    d_z: f64,
    cells: usize,
    stages: usize,
    final_x: Vec<f64>,
    final_w: f64,
    final_d: f64,
    final_s: f64,
    final_t: f64,
    total_cost: f64,
    cost_bound: f64,
    worst_certificate: f64,
    beta_worst_slack_s: Option<f64>,
    beta_worst_slack_t: Option<f64>,
    error: Option<String>,
}

fn cmd_simulate(s: &Scenario, z: &[f64], force: bool, out: Option<&Path>) -> Outcome {
    if z.len() != s.problem.n() {
        return Err(Failure::usage(format!(
            "--from has {} coordinates, expected {}",
            z.len(),
            s.problem.n()
        )));
    }
    let cand = s
        .candidate
        .as_ref()
        .ok_or_else(|| Failure::usage("scenario has no [candidate]"))?;
    let rep = run_verify(s)?;
    match &rep.verdict {
        Verdict::Verified => {}
        Verdict::Violated { .. } => return Err(Failure::fail(verdict_line(&rep))),
        Verdict::Inconclusive { .. } if force => {}
        Verdict::Inconclusive { .. } => {
            return Err(Failure {
                code: EXIT_INCONCLUSIVE,
                msg: format!("{} (use --force to simulate anyway)", verdict_line(&rep)),
            })
        }
    }
    let margins = Margins::from_report(&rep, s.file.feedback.margin_safety).map_err(Failure::fail)?;
    let opts = s.file.feedback.options(&s.file.budget);
    let mut syn = synthesize(&s.problem, cand, z, &margins, &opts).map_err(|e| {
        if e.is_violation() {
            Failure::fail(e)
        } else {
            Failure::usage(e)
        }
    })?;
    let sampling = s.sampling().map_err(Failure::usage)?;
    let gac = if syn.trajectory.is_empty() {
        None
    } else {
        let env = build_kl_envelope(&s.problem, cand, &margins, &sampling, opts.step.eps)
            .map_err(Failure::fail)?;
        Some(check_gac_bound(&mut syn.trajectory, &env))
    };
    let traj = &syn.trajectory;
    let mut csv = Vec::new();
    traj.write_csv(&mut csv).map_err(|e| Failure::usage(format!("csv: {e}")))?;
    let csv = String::from_utf8(csv).expect("csv output is utf-8");
    let last = traj.last();
    let summary = SimulationSummary {
        verdict: verdict_line(&rep),
        from: z.to_vec(),
        w_z: syn.w_z,
        d_z: traj.rows[0].d_target,
        cells: traj.cells,
        stages: syn.stages.len(),
        final_x: last.x.clone(),
        final_w: last.w,
        final_d: last.d_target,
        final_s: last.s,
        final_t: last.t,
        total_cost: traj.total_cost(),
        cost_bound: syn.cost_bound(),
        worst_certificate: if traj.is_empty() { 0.0 } else { traj.worst_certificate() },
        beta_worst_slack_s: gac.as_ref().map(|g| g.worst_slack_s),
        beta_worst_slack_t: gac.as_ref().map(|g| g.worst_slack_t),
        error: syn.error_message.clone(),
    };
    match out {
        Some(_) => {
            emit(out, &csv)?;
            print!("{}", to_json(&summary));
        }
        None => {
            emit(None, &csv)?;
            eprint!("{}", to_json(&summary));
        }
    }
    match &syn.error {
        Some(e) => Err(Failure::fail(format!("synthesis stopped at x = {:?}: {e}", last.x))),
        None => Ok(EXIT_OK),
    }
}

fn poly_of(s: &Scenario) -> Result<&PolyDynamics, Failure> {
    s.poly
        .as_ref()
        .ok_or_else(|| Failure::usage("scenario dynamics are not control-polynomial (use drift/terms)"))
}

fn cmd_poly(s: &Scenario, action: PolyAction, out: Option<&Path>) -> Outcome {
    let pd = poly_of(s)?;
    let mut text = String::new();
    let code = match action {
        PolyAction::Classify => {
            let nas = classify_near_affine(pd).map_err(Failure::fail)?;
            text += &format!("K = {:?}\n", nas.k);
            text += &format!("d_bar = {}\n", nas.d_bar);
            text += &format!("M = {}\n", nas.m_terms());
            for (j, a) in nas.active.iter().enumerate() {
                text += &format!("w{} <- u^{a}\n", j + 1);
            }
            EXIT_OK
        }
        PolyAction::Affine => {
            let nas = classify_near_affine(pd).map_err(Failure::fail)?;
            let aff = affine_field(&nas, pd).map_err(Failure::fail)?;
            text += &format!("{aff}\n");
            EXIT_OK
        }
        PolyAction::Witness { at, w, r, compact } => {
            if at.len() != pd.state_dim() {
                return Err(Failure::usage(format!(
                    "--at has {} coordinates, expected {}",
                    at.len(),
                    pd.state_dim()
                )));
            }
            let nas = classify_near_affine(pd).map_err(Failure::fail)?;
            let r = r.unwrap_or_else(|| s.problem.control_set.cube_radius());
            let strategy = if compact {
                WitnessStrategy::Compact
            } else {
                WitnessStrategy::Canonical
            };
            let wit = hull_witness(&nas, pd, &w, r, strategy).map_err(Failure::fail)?;
            let aff = affine_field(&nas, pd).map_err(Failure::fail)?;
            let target = eval_poly(&aff, &at, &w).map_err(Failure::fail)?;
            let residual = wit.residual(pd, &at, &target).map_err(Failure::fail)?;
            for (weight, u) in &wit.pairs {
                let us: Vec<String> = u.iter().map(|v| format!("{v:.17e}")).collect();
                text += &format!("{weight:.17e} {}\n", us.join(","));
            }
            text += &format!("residual {residual:.3e}\n");
            EXIT_OK
        }
        PolyAction::Subsystem { kind, lambda } => {
            let sub = match kind {
                SubKind::Max => maximal_subsystem(pd),
                SubKind::Diag => {
                    let m = pd.control_dim();
                    let lambda = lambda.unwrap_or_else(|| vec![1.0 / m as f64; m]);
                    DiagonalSpec::new(lambda).and_then(|spec| diagonal_subsystem(pd, &spec))
                }
            }
            .map_err(Failure::fail)?;
            text += &format!("{sub}\n");
            EXIT_OK
        }
        PolyAction::Hypcheck {
            m0,
            hyp_samples,
            u_radius,
        } => {
            let n = pd.state_dim();
            let m = pd.control_dim();
            let d = pd.degree();
            let sampling = HypSampling {
                samples: hyp_samples,
                seed: s.file.sampling.as_ref().map_or(0, |x| x.seed),
                x_box: s.file.sampling.as_ref().map_or(vec![(-1.0, 1.0); n], |x| {
                    x.bbox.iter().map(|b| (b[0], b[1])).collect()
                }),
                u_radius,
            };
            let zero = vec![0.0; m];
            let l = |x: &[f64], u: &[f64]| s.cost.eval(x, u).unwrap_or(f64::NAN);
            let l0 = |x: &[f64]| l(x, &zero);
            let l1 = |x: &[f64], u: &[f64]| l(x, u) - l(x, &zero);
            let amax = check_hyp_amax(&l0, &l1, m, d, &sampling);
            let adiag = check_hyp_adiag(&l, m, d, m0, &sampling);
            text += &format!(
                "A_max: {} ({} of {} samples violate, worst {:.3e} at x = {:?}, u = {:?})\n",
                pass(amax.passed),
                amax.violations,
                amax.samples,
                amax.worst,
                amax.worst_x,
                amax.worst_u
            );
            text += &format!(
                "A_diag (M0 = {m0}): {} ({} of {} samples violate, worst ratio {:.3e} at x = {:?}, u = {:?})\n",
                pass(adiag.passed),
                adiag.violations,
                adiag.samples,
                adiag.worst,
                adiag.worst_x,
                adiag.worst_u
            );
            if amax.passed && adiag.passed {
                EXIT_OK
            } else {
                EXIT_FAIL
            }
        }
    };
    emit(out, &text)?;
    Ok(code)
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "fail"
    }
}

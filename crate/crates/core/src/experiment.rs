//! Config-driven runs: load → validate → Jordan–Hölder on the input
//! monodromy → flow → limit monodromy → verdict → artifacts on disk.
//!
//! Exit codes: 0 pipeline completed, 1 verdict differs from `--expect`,
//! 2 invalid config or input, 3 flow failure, 4 output IO failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bundle::{
    flatness_residual, make_constant_connection, monodromies, BaseGrid, ConnectionField, ConnectionJson,
    GaugeField, TOL_FLAT,
};
use crate::error::{Error, Result};
use crate::flow::{
    energy, run_flow_from, sup_bound_constant, FlowConfig, FlowOutcome, FlowState, StepEvent, Termination,
};
use crate::jholder::{graded, jh_filtration, GradedObject, RepFamily, TieBreak, Tolerances};
use crate::matcore::{BackgroundMetric, CMat};
use crate::verify::{iso_check, IsoVerdict, SubbundleTrace, SubbundleTracker, Verdict};

pub const EXIT_OK: i32 = 0;
pub const EXIT_EXPECT: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_FLOW: i32 = 3;
pub const EXIT_IO: i32 = 4;

pub const ENV_OUT: &str = "HFLAB_OUT";
pub const MONITORS_FILE: &str = "monitors.csv";
pub const REPORT_FILE: &str = "report.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CONFIG_FILE: &str = "config.json";
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSpec {
    /// One constant coefficient matrix per base direction.
    Constant(Vec<CMat>),
    /// Serialized connection field, relative to the config file.
    Path(String),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Diagnostics {
    pub track_gauge: bool,
    /// Columns spanning `E₁` at the basepoint; defaults to the first step
    /// of the Jordan–Hölder filtration.
    #[serde(with = "crate::serde_mat::columns", skip_serializing_if = "Option::is_none")]
    pub subbundle_basis: Option<CMat>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub base: BaseGrid,
    pub rank: usize,
    pub input: InputSpec,
    /// Background metric `K`; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<CMat>,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub diagnostics: Diagnostics,
    /// Flatness tolerance for the input; 1e-8 for constant input, 1e-4 for fields.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_flat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

impl ExperimentConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn metric(&self) -> Result<BackgroundMetric> {
        match &self.metric {
            None => Ok(BackgroundMetric::identity(self.rank)),
            Some(k) if k.rows() != self.rank => {
                Err(Error::Config(format!("metric is {}x{}, rank is {}", k.rows(), k.cols(), self.rank)))
            }
            Some(k) => BackgroundMetric::new(k.clone()),
        }
    }

    /// Builds and validates the input connection. Relative paths resolve
    /// against `base_dir`.
    pub fn connection(&self, base_dir: &Path) -> Result<ConnectionField> {
        let a = match &self.input {
            InputSpec::Constant(c) => {
                if c.iter().any(|m| m.rows() != self.rank || m.cols() != self.rank) {
                    return Err(Error::Config(format!("coefficients must be {0}x{0}", self.rank)));
                }
                make_constant_connection(self.base, c)?
            }
            InputSpec::Path(p) => {
                let text = std::fs::read_to_string(base_dir.join(p))
                    .map_err(|e| Error::Config(format!("cannot read connection file {p}: {e}")))?;
                let a = ConnectionField::from_json_str(&text)?;
                if *a.grid() != self.base || a.rank() != self.rank {
                    return Err(Error::Config("connection file disagrees with base or rank".into()));
                }
                a
            }
        };
        let tol = self.tol_flat.unwrap_or(match self.input {
            InputSpec::Constant(_) => TOL_FLAT,
            InputSpec::Path(_) => 1e-4,
        });
        let residual = flatness_residual(&a);
        if residual > tol {
            return Err(Error::NotFlat { residual, tol });
        }
        Ok(a)
    }

    pub fn validate(&self, base_dir: &Path) -> Result<(ConnectionField, BackgroundMetric)> {
        if self.name.is_empty() {
            return Err(Error::Config("name must be non-empty".into()));
        }
        self.flow.validate()?;
        if let Some(b) = &self.diagnostics.subbundle_basis {
            if b.rows() != self.rank || b.cols() == 0 || b.cols() >= self.rank {
                return Err(Error::Config("subbundle_basis needs 1..rank-1 columns of length rank".into()));
            }
        }
        let k = self.metric()?;
        let a = self.connection(base_dir)?;
        Ok((a, k))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupBound {
    /// Heat-kernel constant `C` for this base.
    pub constant: f64,
    /// `C √E(0)`.
    pub bound: f64,
    /// `sup|ψ|` over recorded times `t ≥ 1`; `None` if the run ended earlier.
    pub observed: Option<f64>,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub termination: Termination,
    pub failure: Option<String>,
    pub t_final: f64,
    pub accepted_steps: u64,
    pub rejected_steps: u64,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub final_tension_sup: f64,
    /// `Σ (ln|λ|)²` over the graded characters: the energy of the constant
    /// harmonic representative on the unit circle or torus.
    pub predicted_limit_energy: f64,
    pub graded: GradedObject,
    pub input_monodromy: Vec<CMat>,
    pub limit_monodromy: Vec<CMat>,
    pub verdict: Option<IsoVerdict>,
    pub verdict_error: Option<String>,
    pub sup_bound: SupBound,
    pub max_tension_asymmetry: f64,
    pub max_energy_increase: f64,
    pub gauge_dropped_at: Option<f64>,
    pub subbundle_trace: Option<SubbundleTrace>,
    pub notes: Vec<String>,
    pub monitors_path: String,
    pub checkpoint_path: String,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub initial_energy: f64,
    pub accepted_steps: u64,
    pub rejected_steps: u64,
    pub max_psi_after_t1: Option<f64>,
    pub trace: Option<SubbundleTrace>,
}

/// Final flow state plus what a resumed run needs to continue bit-for-bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub rank: usize,
    pub base: BaseGrid,
    pub coeffs: Vec<Vec<CMat>>,
    pub t: f64,
    pub dt: f64,
    pub step: u64,
    pub sigma: Option<Vec<CMat>>,
    pub config: ExperimentConfig,
    pub initial: ConnectionJson,
    pub history: History,
}

impl Checkpoint {
    pub fn state(&self) -> Result<FlowState> {
        let a = ConnectionField::new(self.base, self.rank, self.coeffs.clone())?;
        let sigma = match &self.sigma {
            Some(s) => Some(GaugeField::new(self.base, self.rank, s.clone())?),
            None => None,
        };
        Ok(FlowState { t: self.t, a, sigma, dt: self.dt, step: self.step })
    }
}

/// Failure classes with their exit codes.
#[derive(Debug)]
pub enum RunError {
    Config(Error),
    Io(Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => EXIT_CONFIG,
            RunError::Io(_) => EXIT_IO,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "invalid input: {e}"),
            RunError::Io(e) => write!(f, "output failure: {e}"),
        }
    }
}

fn cfg_err(e: impl Into<Error>) -> RunError {
    RunError::Config(e.into())
}

fn io_err(e: impl Into<Error>) -> RunError {
    RunError::Io(e.into())
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub expect_isomorphic: bool,
}

/// Output directory: explicit flag, then `HFLAB_OUT`, then `fallback`.
pub fn resolve_out_dir(flag: Option<&Path>, fallback: PathBuf) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os(ENV_OUT) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => fallback,
    }
}

/// Everything derived from the input bundle that the flow does not change.
struct Prepared {
    a0: ConnectionField,
    k: BackgroundMetric,
    input_monodromy: Vec<CMat>,
    graded: GradedObject,
    basis0: CMat,
}

fn prepare(cfg: &ExperimentConfig, a0: ConnectionField, k: BackgroundMetric) -> Result<Prepared> {
    let exact = Tolerances::exact();
    let mono = monodromies(&a0, 0)?.generators;
    let fam = RepFamily::new(mono.clone(), &exact)?;
    let filt = jh_filtration(&fam, &k, &exact, TieBreak::Ascending)?;
    let graded = GradedObject::new(filt.characters.clone())?;
    let basis0 = match &cfg.diagnostics.subbundle_basis {
        Some(b) => b.clone(),
        None => filt.step(1),
    };
    Ok(Prepared { a0, k, input_monodromy: mono, graded, basis0 })
}

fn predicted_energy(g: &GradedObject) -> f64 {
    g.characters.iter().flatten().map(|z| z.norm().ln().powi(2)).sum()
}

struct Segment {
    state: FlowState,
    outcome: FlowOutcome,
    trace: Option<SubbundleTrace>,
    max_psi_after_t1: Option<f64>,
}

fn run_segment(
    p: &Prepared,
    cfg: &ExperimentConfig,
    start: FlowState,
    resumed: Option<&History>,
) -> Result<Segment> {
    let mut tracker = match (&start.sigma, cfg.diagnostics.track_gauge) {
        (Some(_), true) => Some(SubbundleTracker::new(&p.a0, &p.k, &p.basis0)?),
        _ => None,
    };
    if let (Some(tr), Some(sigma)) = (tracker.as_mut(), &start.sigma) {
        match resumed.and_then(|h| h.trace.clone()) {
            Some(prev) => {
                tr.trace = prev;
                tr.prime(sigma)?;
            }
            None => tr.observe(start.t, &start.a, sigma)?,
        }
    }
    let mut tracker_err: Option<Error> = None;
    let mut observer = |ev: &StepEvent| {
        if !ev.recorded {
            return;
        }
        if let (Some(tr), Some(sigma)) = (tracker.as_mut(), &ev.state.sigma) {
            if let Err(e) = tr.observe(ev.state.t, &ev.state.a, sigma) {
                if tracker_err.is_none() {
                    tracker_err = Some(e);
                }
            }
        }
    };
    let (state, outcome) = run_flow_from(start, &p.k, &cfg.flow, resumed.is_none(), &mut observer)?;
    if let Some(e) = tracker_err {
        log::warn!("subbundle diagnostics stopped: {e}");
    }
    let mut max_psi = resumed.and_then(|h| h.max_psi_after_t1);
    for r in outcome.monitors.rows.iter().filter(|r| r.t >= 1.0) {
        max_psi = Some(max_psi.map_or(r.psi_sup, |m: f64| m.max(r.psi_sup)));
    }
    Ok(Segment { state, outcome, trace: tracker.map(|t| t.trace), max_psi_after_t1: max_psi })
}

fn build_report(
    p: &Prepared,
    cfg: &ExperimentConfig,
    seg: &Segment,
    history: &History,
    out_dir: &Path,
    started: Instant,
) -> Result<RunReport> {
    let limit_tol = Tolerances::limit();
    let limit_monodromy = monodromies(&seg.state.a, 0)?.generators;
    let (verdict, verdict_error) = match RepFamily::new(limit_monodromy.clone(), &limit_tol)
        .and_then(|fam| iso_check(&fam, &p.graded, &limit_tol))
    {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let constant = sup_bound_constant(&cfg.base);
    let bound = constant * history.initial_energy.sqrt();
    let observed = seg.max_psi_after_t1;
    let sup_bound =
        SupBound { constant, bound, observed, holds: observed.is_none_or(|o| o <= bound * (1.0 + 1e-12)) };
    let mut notes = vec![format!(
        "stopping thresholds are engineering choices: tol_tension = {:e}, t_max = {:e}",
        cfg.flow.tol_tension, cfg.flow.t_max
    )];
    if seg.outcome.termination == Termination::Oscillating {
        notes.push("raw trajectory did not settle; verdict uses the last iterate".into());
    }
    if let Some(t) = seg.outcome.gauge_dropped_at {
        notes.push(format!("gauge tracking dropped at t = {t:e} for conditioning"));
    }
    if let Some(tr) = &seg.trace {
        let inc = &tr.eta_increment;
        if inc.len() > 2 && inc[inc.len() - 1] > inc[inc.len() - 2] * 1.5 && inc[inc.len() - 1] > 1e-8 {
            notes.push("normalized map increments are not decreasing at the end of the run".into());
        }
    }
    let last = seg.outcome.monitors.last().copied().unwrap_or_default();
    Ok(RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: cfg.clone(),
        termination: seg.outcome.termination,
        failure: seg.outcome.failure.clone(),
        t_final: seg.state.t,
        accepted_steps: history.accepted_steps,
        rejected_steps: history.rejected_steps,
        initial_energy: history.initial_energy,
        final_energy: energy(&seg.state.a, &p.k),
        final_tension_sup: last.tension_sup,
        predicted_limit_energy: predicted_energy(&p.graded),
        graded: p.graded.clone(),
        input_monodromy: p.input_monodromy.clone(),
        limit_monodromy,
        verdict,
        verdict_error,
        sup_bound,
        max_tension_asymmetry: seg.outcome.max_tension_asymmetry,
        max_energy_increase: seg.outcome.max_energy_increase.max(0.0),
        gauge_dropped_at: seg.outcome.gauge_dropped_at,
        subbundle_trace: seg.trace.clone(),
        notes,
        monitors_path: out_dir.join(MONITORS_FILE).display().to_string(),
        checkpoint_path: out_dir.join(CHECKPOINT_FILE).display().to_string(),
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

fn checkpoint_of(p: &Prepared, cfg: &ExperimentConfig, st: &FlowState, history: History) -> Checkpoint {
    Checkpoint {
        rank: st.a.rank(),
        base: *st.a.grid(),
        coeffs: st.a.coeffs().to_vec(),
        t: st.t,
        dt: st.dt,
        step: st.step,
        sigma: st.sigma.as_ref().map(|s| s.values().to_vec()),
        config: cfg.clone(),
        initial: p.a0.to_json(),
        history,
    }
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

/// Outcome of a completed pipeline (the flow may still have failed).
pub struct RunArtifacts {
    pub report: RunReport,
    pub out_dir: PathBuf,
}

impl RunArtifacts {
    pub fn exit_code(&self, expect_isomorphic: bool) -> i32 {
        if self.report.termination == Termination::Failure {
            EXIT_FLOW
        } else if expect_isomorphic
            && self.report.verdict.as_ref().map(|v| v.verdict) != Some(Verdict::Isomorphic)
        {
            EXIT_EXPECT
        } else {
            EXIT_OK
        }
    }
}

/// Runs an experiment from a parsed config. `base_dir` anchors relative
/// input paths.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    base_dir: &Path,
    out_flag: Option<&Path>,
) -> std::result::Result<RunArtifacts, RunError> {
    let started = Instant::now();
    let (a0, k) = cfg.validate(base_dir).map_err(cfg_err)?;
    let p = prepare(cfg, a0, k).map_err(cfg_err)?;
    let fallback =
        cfg.output_dir.as_ref().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
    let out_dir = resolve_out_dir(out_flag, fallback);
    std::fs::create_dir_all(&out_dir).map_err(io_err)?;
    write_json(&out_dir.join(CONFIG_FILE), cfg).map_err(io_err)?;

    let start = FlowState::new(p.a0.clone(), cfg.flow.dt_init, cfg.diagnostics.track_gauge);
    let initial_energy = energy(&p.a0, &p.k);
    let seg = run_segment(&p, cfg, start, None).map_err(cfg_err)?;
    let history = History {
        initial_energy,
        accepted_steps: seg.outcome.accepted_steps,
        rejected_steps: seg.outcome.rejected_steps,
        max_psi_after_t1: seg.max_psi_after_t1,
        trace: seg.trace.clone(),
    };
    let report = build_report(&p, cfg, &seg, &history, &out_dir, started).map_err(cfg_err)?;
    seg.outcome.monitors.write_csv(&out_dir.join(MONITORS_FILE)).map_err(io_err)?;
    write_json(&out_dir.join(CHECKPOINT_FILE), &checkpoint_of(&p, cfg, &seg.state, history))
        .map_err(io_err)?;
    write_json(&out_dir.join(REPORT_FILE), &report).map_err(io_err)?;
    Ok(RunArtifacts { report, out_dir })
}

/// Continues a run from a checkpoint, appending to the monitor series.
pub fn resume_experiment(
    checkpoint_path: &Path,
    t_max: Option<f64>,
    out_flag: Option<&Path>,
) -> std::result::Result<RunArtifacts, RunError> {
    let started = Instant::now();
    let text = std::fs::read_to_string(checkpoint_path)
        .map_err(|e| cfg_err(Error::Config(format!("cannot read checkpoint: {e}"))))?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(cfg_err)?;
    let mut cfg = ck.config.clone();
    if let Some(t) = t_max {
        cfg.flow.t_max = t;
    }
    cfg.flow.validate().map_err(cfg_err)?;
    if ck.base != cfg.base
        || ck.rank != cfg.rank
        || ck.initial.base != cfg.base
        || ck.initial.rank != cfg.rank
    {
        return Err(cfg_err(Error::Config("checkpoint does not match its config".into())));
    }
    if cfg.diagnostics.track_gauge != ck.sigma.is_some() && ck.history.trace.is_some() {
        return Err(cfg_err(Error::Config("checkpoint gauge data does not match diagnostics".into())));
    }
    let a0 = ConnectionField::try_from(ck.initial.clone()).map_err(cfg_err)?;
    let k = cfg.metric().map_err(cfg_err)?;
    let p = prepare(&cfg, a0, k).map_err(cfg_err)?;
    let state = ck.state().map_err(cfg_err)?;
    let resume_t = state.t;

    let fallback = checkpoint_path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let out_dir = resolve_out_dir(out_flag, fallback);
    std::fs::create_dir_all(&out_dir).map_err(io_err)?;

    let seg = run_segment(&p, &cfg, state, Some(&ck.history)).map_err(cfg_err)?;
    let history = History {
        initial_energy: ck.history.initial_energy,
        accepted_steps: ck.history.accepted_steps + seg.outcome.accepted_steps,
        rejected_steps: ck.history.rejected_steps + seg.outcome.rejected_steps,
        max_psi_after_t1: seg.max_psi_after_t1,
        trace: seg.trace.clone(),
    };
    let mut report = build_report(&p, &cfg, &seg, &history, &out_dir, started).map_err(cfg_err)?;
    if report.subbundle_trace.is_none() {
        report.subbundle_trace = ck.history.trace.clone();
    }
    let csv = out_dir.join(MONITORS_FILE);
    if csv.exists() {
        seg.outcome.monitors.append_csv(&csv, resume_t).map_err(io_err)?;
    } else {
        let mut f = std::fs::File::create(&csv).map_err(io_err)?;
        writeln!(f, "{}", crate::flow::CSV_HEADER).map_err(io_err)?;
        drop(f);
        seg.outcome.monitors.append_csv(&csv, resume_t).map_err(io_err)?;
    }
    write_json(&out_dir.join(CHECKPOINT_FILE), &checkpoint_of(&p, &cfg, &seg.state, history))
        .map_err(io_err)?;
    write_json(&out_dir.join(REPORT_FILE), &report).map_err(io_err)?;
    Ok(RunArtifacts { report, out_dir })
}

fn summary(a: &RunArtifacts) -> String {
    let r = &a.report;
    let verdict = r
        .verdict
        .as_ref()
        .map(|v| format!("{:?}", v.verdict).to_lowercase())
        .unwrap_or_else(|| "none".into());
    format!(
        "{}: termination={:?} t={:.6e} energy={:.6e} verdict={} out={}",
        r.config.name,
        r.termination,
        r.t_final,
        r.final_energy,
        verdict,
        a.out_dir.display()
    )
}

/// `run <config.json> [--expect isomorphic] [--out DIR]`.
pub fn cmd_run(config_path: &Path, opts: &RunOptions) -> i32 {
    let cfg = match std::fs::read_to_string(config_path)
        .map_err(Error::from)
        .and_then(|s| ExperimentConfig::from_json_str(&s))
    {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: invalid config {}: {e}", config_path.display());
            return EXIT_CONFIG;
        }
    };
    let base_dir = config_path.parent().unwrap_or(Path::new("."));
    match run_experiment(&cfg, base_dir, opts.out.as_deref()) {
        Ok(a) => {
            println!("{}", summary(&a));
            if let Some(f) = &a.report.failure {
                eprintln!("error: flow failure: {f}");
            }
            a.exit_code(opts.expect_isomorphic)
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// `resume <checkpoint> [--t-max T]`.
pub fn cmd_resume(checkpoint: &Path, t_max: Option<f64>, opts: &RunOptions) -> i32 {
    match resume_experiment(checkpoint, t_max, opts.out.as_deref()) {
        Ok(a) => {
            println!("{}", summary(&a));
            if let Some(f) = &a.report.failure {
                eprintln!("error: flow failure: {f}");
            }
            a.exit_code(opts.expect_isomorphic)
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MatricesInput {
    List(Vec<CMat>),
    Object { matrices: Vec<CMat> },
}

/// Graded object of a commuting family given as JSON (`[M1, M2]` or
/// `{"matrices": [...]}`).
pub fn jh_from_json(text: &str) -> Result<GradedObject> {
    let mats = match serde_json::from_str::<MatricesInput>(text)
        .map_err(|e| Error::Config(format!("expected a list of square matrices: {e}")))?
    {
        MatricesInput::List(m) | MatricesInput::Object { matrices: m } => m,
    };
    let tol = Tolerances::exact();
    let fam = RepFamily::new(mats, &tol)?;
    graded(&fam, &BackgroundMetric::identity(fam.rank()), &tol, TieBreak::Ascending)
}

/// `jh <matrices.json>`: prints the graded object as JSON.
pub fn cmd_jh(path: &Path, out: &mut dyn Write) -> i32 {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            return EXIT_CONFIG;
        }
    };
    match jh_from_json(&text).and_then(|g| g.to_json_string()) {
        Ok(s) => match writeln!(out, "{s}") {
            Ok(()) => EXIT_OK,
            Err(_) => EXIT_IO,
        },
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_rejects_unknown_keys() {
        let good = r#"{"name":"x","base":{"kind":"circle","n":16},"rank":2,
            "input":{"constant":[[[0,1],[0,0]]]}}"#;
        let cfg = ExperimentConfig::from_json_str(good).unwrap();
        assert_eq!(cfg.flow, FlowConfig::default());
        let bad = good.replace("\"rank\":2", "\"rank\":2,\"extra\":1");
        assert!(ExperimentConfig::from_json_str(&bad).is_err());
        let bad = good.replace("\"rank\":2", "\"rank\":2,\"flow\":{\"dt\":1}");
        assert!(ExperimentConfig::from_json_str(&bad).is_err());
    }

    #[test]
    fn jh_json_examples() {
        let g = jh_from_json("[[[1,1],[0,1]]]").unwrap();
        assert_eq!(g.to_json_string().unwrap(), r#"{"characters":[[1.0,0.0],[1.0,0.0]]}"#);
        let g = jh_from_json(r#"{"matrices":[[[2,0],[0,0.5]]]}"#).unwrap();
        assert_eq!(g.to_json_string().unwrap(), r#"{"characters":[[0.5,0.0],[2.0,0.0]]}"#);
        assert!(jh_from_json("[[[1,1],[0,1]],[[1,0],[1,1]]]").is_err());
    }

    #[test]
    fn predicted_energy_matches_closed_form() {
        let g = jh_from_json("[[[2,1],[0,2]]]").unwrap();
        let l2 = 2f64.ln();
        assert!((predicted_energy(&g) - 2.0 * l2 * l2).abs() < 1e-14);
    }
}

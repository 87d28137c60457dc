//! Harmonic heat flow `∂A_i/∂t = −(∂_i τ + [A_i, τ])` with tension
//! `τ = −Σ_i (∂_i ψ_i + [U_i, ψ_i])`, and the companion gauge flow
//! `∂σ/∂t = τ σ`.
//!
//! Central differences on the periodic grid satisfy summation by parts
//! exactly, so the semi-discrete energy identity `dE/dt = −2‖τ‖²` holds
//! exactly and only time stepping introduces defects.

use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::bundle::{
    central_diff, decompose, flatness_residual, gauge_apply, make_constant_connection, BaseGrid,
    ConnectionField, GaugeField,
};
use crate::error::{Error, Result};
use crate::matcore::{adjoint_wrt, inner_k, norm_sq_k, BackgroundMetric, CMat, COND_LIMIT};

/// Frozen column order of the monitor CSV.
pub const CSV_HEADER: &str = "t,energy,tension_l2,tension_sup,psi_sup,flatness,energy_identity_defect";

/// Maximum consecutive step halvings before a step counts as failed.
pub const MAX_HALVINGS: u32 = 40;

/// Steps smaller than this are a flow failure.
pub const DT_MIN: f64 = 1e-12;

/// Relative slack on energy non-increase, covering round-off in `E`.
pub const ENERGY_SLACK: f64 = 16.0 * f64::EPSILON;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Euler,
    Rk4,
}

impl Integrator {
    fn order(self) -> i32 {
        match self {
            Integrator::Euler => 1,
            Integrator::Rk4 => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub dt_init: f64,
    pub t_max: f64,
    /// Stop once `sup|τ|` falls below this.
    pub tol_tension: f64,
    /// At `t_max`, a run whose `sup|τ|` has rebounded from its minimum and
    /// whose energy slope still exceeds this is reported as oscillating.
    pub tol_energy_slope: f64,
    /// Allowed growth of the flatness residual over the run.
    pub drift_budget: f64,
    pub integrator: Integrator,
    /// Record a monitor row every this many accepted steps.
    pub record_every: usize,
    /// Step-doubling error control; otherwise dt only halves on energy increase.
    pub adaptive: bool,
    pub dt_max: Option<f64>,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: u64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            dt_init: 1e-4,
            t_max: 200.0,
            tol_tension: 1e-6,
            tol_energy_slope: 1e-8,
            drift_budget: 1e-6,
            integrator: Integrator::Rk4,
            record_every: 1,
            adaptive: true,
            dt_max: None,
            rtol: 1e-8,
            atol: 1e-12,
            max_steps: 1_000_000,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
            }
        };
        pos("dt_init", self.dt_init)?;
        pos("tol_tension", self.tol_tension)?;
        pos("tol_energy_slope", self.tol_energy_slope)?;
        pos("drift_budget", self.drift_budget)?;
        pos("rtol", self.rtol)?;
        pos("atol", self.atol)?;
        if !(self.t_max >= 0.0 && self.t_max.is_finite()) {
            return Err(Error::Config(format!("t_max must be finite and >= 0, got {}", self.t_max)));
        }
        if let Some(d) = self.dt_max {
            pos("dt_max", d)?;
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    pub t: f64,
    pub a: ConnectionField,
    pub sigma: Option<GaugeField>,
    /// Step size proposed for the next step, before clipping to `t_max`.
    pub dt: f64,
    pub step: u64,
}

impl FlowState {
    pub fn new(a: ConnectionField, dt: f64, track_gauge: bool) -> Self {
        let sigma = track_gauge.then(|| GaugeField::identity(*a.grid(), a.rank()));
        FlowState { t: 0.0, a, sigma, dt, step: 0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MonitorRow {
    pub t: f64,
    pub energy: f64,
    pub tension_l2: f64,
    pub tension_sup: f64,
    pub psi_sup: f64,
    pub flatness: f64,
    pub energy_identity_defect: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MonitorSeries {
    pub rows: Vec<MonitorRow>,
}

impl MonitorSeries {
    pub fn push(&mut self, row: MonitorRow) {
        debug_assert!(self.rows.last().is_none_or(|r| r.t < row.t));
        self.rows.push(row);
    }

    pub fn last(&self) -> Option<&MonitorRow> {
        self.rows.last()
    }

    fn format_row(r: &MonitorRow) -> String {
        format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.t, r.energy, r.tension_l2, r.tension_sup, r.psi_sup, r.flatness, r.energy_identity_defect
        )
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&Self::format_row(r));
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Appends rows after a `# resume t=...` comment line.
    pub fn append_csv(&self, path: &Path, resume_t: f64) -> Result<()> {
        let mut f = std::fs::OpenOptions::new().append(true).open(path)?;
        writeln!(f, "# resume t={resume_t:.16e}")?;
        for r in &self.rows {
            writeln!(f, "{}", Self::format_row(r))?;
        }
        Ok(())
    }

    /// Parses a monitor CSV, skipping comment lines.
    pub fn read_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(Error::Config("monitor CSV header mismatch".into()));
        }
        let mut rows = Vec::new();
        for line in lines.filter(|l| !l.starts_with('#') && !l.is_empty()) {
            let v: Vec<f64> = line
                .split(',')
                .map(|x| x.parse::<f64>().map_err(|e| Error::Config(format!("bad CSV value {x}: {e}"))))
                .collect::<Result<_>>()?;
            if v.len() != 7 {
                return Err(Error::Config("monitor CSV row needs 7 columns".into()));
            }
            rows.push(MonitorRow {
                t: v[0],
                energy: v[1],
                tension_l2: v[2],
                tension_sup: v[3],
                psi_sup: v[4],
                flatness: v[5],
                energy_identity_defect: v[6],
            });
        }
        Ok(MonitorSeries { rows })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxTime,
    MaxSteps,
    /// Stopped at `t_max` with the energy still visibly moving.
    Oscillating,
    Failure,
}

/// Everything `run_flow` produces besides the final state.
#[derive(Clone, Debug)]
pub struct FlowOutcome {
    pub termination: Termination,
    pub failure: Option<String>,
    pub monitors: MonitorSeries,
    pub accepted_steps: u64,
    pub rejected_steps: u64,
    /// Largest `‖τ − τ^{*K}‖ / ‖τ‖` seen at recorded steps.
    pub max_tension_asymmetry: f64,
    /// Flow time at which gauge tracking was dropped for conditioning.
    pub gauge_dropped_at: Option<f64>,
    /// Largest per-step `E_new − E_old` (should be ≤ 0 up to round-off).
    pub max_energy_increase: f64,
}

/// Data handed to an observer after each accepted step.
pub struct StepEvent<'a> {
    pub state: &'a FlowState,
    pub dt: f64,
    pub energy_prev: f64,
    pub energy: f64,
    /// `2‖τ‖²_{L²}` before and after the step.
    pub power_prev: f64,
    pub power: f64,
    pub tension: &'a [CMat],
    pub recorded: bool,
}

/// `τ = −Σ_i (∂_i ψ_i + [U_i, ψ_i])` pointwise.
pub fn tension(a: &ConnectionField, k: &BackgroundMetric) -> Vec<CMat> {
    let grid = *a.grid();
    let d = decompose(a, k);
    let r = a.rank();
    let mut tau = vec![CMat::zeros(r, r); grid.len()];
    for dir in 0..grid.dim() {
        let dpsi = central_diff(&grid, &d.psi[dir], dir);
        for p in 0..grid.len() {
            tau[p] -= &dpsi[p];
            tau[p] -= &d.u[dir][p].commutator(&d.psi[dir][p]);
        }
    }
    tau
}

/// `E = mean_p Σ_i |ψ_i(p)|²_K` (unit volume).
pub fn energy(a: &ConnectionField, k: &BackgroundMetric) -> f64 {
    let n = a.grid().len() as f64;
    let mut e = 0.0;
    for field in a.coeffs() {
        for m in field {
            let (_, psi) = crate::matcore::herm_split(m, k);
            e += norm_sq_k(&psi, k);
        }
    }
    e / n
}

/// `‖φ‖²_{L²} = mean_p |φ(p)|²_K`.
pub fn l2_sq(field: &[CMat], k: &BackgroundMetric) -> f64 {
    field.iter().map(|m| norm_sq_k(m, k)).sum::<f64>() / field.len().max(1) as f64
}

pub fn sup_norm(field: &[CMat], k: &BackgroundMetric) -> f64 {
    field.iter().map(|m| norm_sq_k(m, k).sqrt()).fold(0.0, f64::max)
}

/// `sup_p (Σ_i |ψ_i(p)|²_K)^{1/2}`.
pub fn psi_sup(a: &ConnectionField, k: &BackgroundMetric) -> f64 {
    let d = decompose(a, k);
    (0..a.grid().len())
        .map(|p| d.psi.iter().map(|f| norm_sq_k(&f[p], k)).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// `−(∂_i τ + [A_i, τ])` per direction.
fn connection_rate(a: &ConnectionField, tau: &[CMat]) -> Vec<Vec<CMat>> {
    let grid = *a.grid();
    (0..grid.dim())
        .map(|dir| {
            let dtau = central_diff(&grid, tau, dir);
            (0..grid.len())
                .map(|p| {
                    let mut v = dtau[p].clone();
                    v += &a.coeff(dir)[p].commutator(&tau[p]);
                    -v
                })
                .collect()
        })
        .collect()
}

/// One explicit Euler step of the gauge flow: `σ ← (I + dt τ) σ`.
pub fn gauge_step(sigma: &GaugeField, tau: &[CMat], dt: f64) -> GaugeField {
    let values = sigma
        .values()
        .iter()
        .zip(tau)
        .map(|(s, t)| {
            let mut out = s.clone();
            out.axpy(dt, &(t * s));
            out
        })
        .collect();
    GaugeField::from_values(*sigma.grid(), sigma.rank(), values)
}

#[derive(Clone)]
struct Vars {
    a: Vec<Vec<CMat>>,
    s: Option<Vec<CMat>>,
}

impl Vars {
    fn axpy(&self, h: f64, d: &Vars) -> Vars {
        let a = self
            .a
            .iter()
            .zip(&d.a)
            .map(|(x, y)| {
                x.iter()
                    .zip(y)
                    .map(|(u, v)| {
                        let mut w = u.clone();
                        w.axpy(h, v);
                        w
                    })
                    .collect()
            })
            .collect();
        let s = match (&self.s, &d.s) {
            (Some(x), Some(y)) => Some(
                x.iter()
                    .zip(y)
                    .map(|(u, v)| {
                        let mut w = u.clone();
                        w.axpy(h, v);
                        w
                    })
                    .collect(),
            ),
            _ => None,
        };
        Vars { a, s }
    }
}

struct Stepper<'a> {
    grid: BaseGrid,
    rank: usize,
    k: &'a BackgroundMetric,
}

impl Stepper<'_> {
    fn field(&self, v: &Vars) -> ConnectionField {
        ConnectionField::new(self.grid, self.rank, v.a.clone()).expect("shape preserved by stepping")
    }

    fn rate(&self, v: &Vars) -> Vars {
        let a = self.field(v);
        let tau = tension(&a, self.k);
        let s = v.s.as_ref().map(|s| s.iter().zip(&tau).map(|(sig, t)| t * sig).collect());
        Vars { a: connection_rate(&a, &tau), s }
    }

    fn step(&self, v: &Vars, dt: f64, integrator: Integrator) -> Vars {
        match integrator {
            Integrator::Euler => v.axpy(dt, &self.rate(v)),
            Integrator::Rk4 => {
                let k1 = self.rate(v);
                let k2 = self.rate(&v.axpy(0.5 * dt, &k1));
                let k3 = self.rate(&v.axpy(0.5 * dt, &k2));
                let k4 = self.rate(&v.axpy(dt, &k3));
                v.axpy(dt / 6.0, &k1).axpy(dt / 3.0, &k2).axpy(dt / 3.0, &k3).axpy(dt / 6.0, &k4)
            }
        }
    }
}

fn max_abs_diff(x: &Vars, y: &Vars) -> (f64, f64) {
    let mut diff: f64 = 0.0;
    let mut size: f64 = 0.0;
    for (fx, fy) in x.a.iter().zip(&y.a) {
        for (mx, my) in fx.iter().zip(fy) {
            diff = diff.max((mx - my).max_abs());
            size = size.max(my.max_abs());
        }
    }
    (diff, size)
}

/// Checks once per process that a small Euler step on a non-harmonic
/// input lowers the energy. A failure means the flow direction is wrong.
pub fn sign_self_test() -> bool {
    static OK: OnceLock<bool> = OnceLock::new();
    *OK.get_or_init(|| {
        let grid = BaseGrid::circle(8).expect("valid grid");
        let n = CMat::real(&[&[0.0, 1.0], &[0.0, 0.0]]);
        let a = make_constant_connection(grid, &[n]).expect("valid constant connection");
        let k = BackgroundMetric::identity(2);
        let st = Stepper { grid, rank: 2, k: &k };
        let v = Vars { a: a.coeffs().to_vec(), s: None };
        let e0 = energy(&a, &k);
        let e1 = energy(&st.field(&st.step(&v, 1e-4, Integrator::Euler)), &k);
        let ok = e1 < e0;
        if !ok {
            log::error!("sign self-test failed: E went from {e0} to {e1}");
        }
        ok
    })
}

fn monitor_row(a: &ConnectionField, k: &BackgroundMetric, t: f64, tau: &[CMat], defect: f64) -> MonitorRow {
    MonitorRow {
        t,
        energy: energy(a, k),
        tension_l2: l2_sq(tau, k).sqrt(),
        tension_sup: sup_norm(tau, k),
        psi_sup: psi_sup(a, k),
        flatness: flatness_residual(a),
        energy_identity_defect: defect,
    }
}

fn tension_asymmetry(tau: &[CMat], k: &BackgroundMetric) -> f64 {
    tau.iter()
        .map(|t| {
            let n = t.frob_norm();
            if n == 0.0 {
                0.0
            } else {
                (t - &adjoint_wrt(t, k)).frob_norm() / n
            }
        })
        .fold(0.0, f64::max)
}

/// Takes one accepted step from `state`, halving `dt` on rejection.
/// Returns the new variables, field, energy, the step taken, and the next
/// proposal (unclipped, so resumed runs see the same sequence).
#[allow(clippy::type_complexity)]
fn attempt_step(
    stepper: &Stepper,
    state: &FlowState,
    e: f64,
    cfg: &FlowConfig,
    rejected: &mut u64,
) -> std::result::Result<(Vars, ConnectionField, f64, f64, f64), String> {
    let v = Vars { a: state.a.coeffs().to_vec(), s: state.sigma.as_ref().map(|s| s.values().to_vec()) };
    let order = cfg.integrator.order();
    let mut dt = state.dt;
    let mut halvings = 0u32;
    loop {
        let dt_cap = cfg.dt_max.unwrap_or(f64::INFINITY).min(cfg.t_max - state.t);
        let h = dt.min(dt_cap);
        if h.is_nan() || h < DT_MIN || halvings > MAX_HALVINGS {
            return Err(format!(
                "step rejected {halvings} times at t = {:.6e} (dt fell to {h:.3e})",
                state.t
            ));
        }
        let (next, err) = if cfg.adaptive {
            let full = stepper.step(&v, h, cfg.integrator);
            let half = stepper.step(&v, 0.5 * h, cfg.integrator);
            let two = stepper.step(&half, 0.5 * h, cfg.integrator);
            let (diff, size) = max_abs_diff(&two, &full);
            let err = diff / ((1 << order) - 1) as f64 / (cfg.atol + cfg.rtol * size);
            (two, err)
        } else {
            (stepper.step(&v, h, cfg.integrator), 0.0)
        };
        let a_next = stepper.field(&next);
        let e_next = energy(&a_next, stepper.k);
        let finite = e_next.is_finite() && next.a.iter().flatten().all(|m| m.is_finite());
        if finite && err <= 1.0 && e_next <= e + ENERGY_SLACK * e {
            let grow = if !cfg.adaptive {
                1.0
            } else if err > 0.0 {
                (0.9 * err.powf(-1.0 / (order + 1) as f64)).clamp(0.2, 2.0)
            } else {
                2.0
            };
            let proposal = if h < dt { dt } else { h * grow };
            return Ok((next, a_next, e_next, h, proposal));
        }
        *rejected += 1;
        halvings += 1;
        dt = h * 0.5;
    }
}

/// One accepted step with the configured integrator and step control.
pub fn flow_step(state: &FlowState, k: &BackgroundMetric, cfg: &FlowConfig) -> Result<FlowState> {
    let grid = *state.a.grid();
    let stepper = Stepper { grid, rank: state.a.rank(), k };
    let e = energy(&state.a, k);
    let mut rejected = 0;
    let (next, a, _, h, proposal) = attempt_step(&stepper, state, e, cfg, &mut rejected)
        .map_err(|reason| Error::Flow { t: state.t, reason })?;
    let sigma = match (&state.sigma, next.s) {
        (Some(sg), Some(s)) => Some(GaugeField::from_values(*sg.grid(), sg.rank(), s)),
        _ => None,
    };
    Ok(FlowState { t: state.t + h, a, sigma, dt: proposal, step: state.step + 1 })
}

/// Runs the flow from `A₀` without gauge tracking.
pub fn run_flow(
    a0: &ConnectionField,
    k: &BackgroundMetric,
    cfg: &FlowConfig,
) -> Result<(FlowState, FlowOutcome)> {
    let state = FlowState::new(a0.clone(), cfg.dt_init, false);
    run_flow_from(state, k, cfg, true, &mut |_| {})
}

/// Integrates from `state` until convergence, `t_max`, `max_steps` or failure.
/// `record_initial` controls whether the starting state gets a monitor row
/// (off when continuing a series from a checkpoint).
pub fn run_flow_from(
    mut state: FlowState,
    k: &BackgroundMetric,
    cfg: &FlowConfig,
    record_initial: bool,
    observer: &mut dyn FnMut(&StepEvent),
) -> Result<(FlowState, FlowOutcome)> {
    cfg.validate()?;
    if k.dim() != state.a.rank() {
        return Err(Error::Dimension("metric rank differs from connection rank".into()));
    }
    let grid = *state.a.grid();
    let stepper = Stepper { grid, rank: state.a.rank(), k };
    let mut out = FlowOutcome {
        termination: Termination::MaxTime,
        failure: None,
        monitors: MonitorSeries::default(),
        accepted_steps: 0,
        rejected_steps: 0,
        max_tension_asymmetry: 0.0,
        gauge_dropped_at: None,
        max_energy_increase: f64::NEG_INFINITY,
    };
    if !sign_self_test() {
        out.termination = Termination::Failure;
        out.failure = Some("sign self-test failed: flow increases energy".into());
        return Ok((state, out));
    }

    let flat0 = flatness_residual(&state.a);
    let mut tau = tension(&state.a, k);
    let mut e = energy(&state.a, k);
    let mut power = 2.0 * l2_sq(&tau, k);
    let mut since_record = 0usize;
    let mut last_slope: f64 = 0.0;
    let mut last_defect = 0.0;

    if record_initial {
        out.monitors.push(monitor_row(&state.a, k, state.t, &tau, 0.0));
        out.max_tension_asymmetry = tension_asymmetry(&tau, k);
    }
    let mut recorded_current = record_initial;

    loop {
        if sup_norm(&tau, k) < cfg.tol_tension {
            out.termination = Termination::Converged;
            break;
        }
        if state.t >= cfg.t_max {
            let min_tension = out.monitors.rows.iter().map(|r| r.tension_sup).fold(f64::INFINITY, f64::min);
            let rebounded = sup_norm(&tau, k) > 1.01 * min_tension;
            out.termination = if rebounded && last_slope.abs() > cfg.tol_energy_slope {
                Termination::Oscillating
            } else {
                Termination::MaxTime
            };
            break;
        }
        if out.accepted_steps >= cfg.max_steps {
            out.termination = Termination::MaxSteps;
            break;
        }

        let (next, a_next, e_next, h, proposal) =
            match attempt_step(&stepper, &state, e, cfg, &mut out.rejected_steps) {
                Ok(x) => x,
                Err(reason) => {
                    out.termination = Termination::Failure;
                    out.failure = Some(reason);
                    break;
                }
            };

        state.a = a_next;
        state.t += h;
        state.dt = proposal;
        state.step += 1;
        out.accepted_steps += 1;
        if let (Some(sigma), Some(s)) = (&state.sigma, next.s) {
            state.sigma = Some(GaugeField::from_values(*sigma.grid(), sigma.rank(), s));
        }

        let tau_next = tension(&state.a, k);
        let power_next = 2.0 * l2_sq(&tau_next, k);
        let slope = (e_next - e) / h;
        let mean_power = 0.5 * (power + power_next);
        last_defect = if mean_power > 0.0 { (slope + mean_power).abs() / mean_power } else { slope.abs() };
        out.max_energy_increase = out.max_energy_increase.max(e_next - e);
        last_slope = slope;

        if let Some(sigma) = &state.sigma {
            let cond = sigma.max_cond();
            if cond.is_nan() || cond > COND_LIMIT {
                log::warn!("gauge tracking dropped at t = {:.6e}: condition {cond:.3e}", state.t);
                out.gauge_dropped_at = Some(state.t);
                state.sigma = None;
            }
        }

        since_record += 1;
        let record = since_record >= cfg.record_every;
        if record {
            since_record = 0;
            out.monitors.push(monitor_row(&state.a, k, state.t, &tau_next, last_defect));
            out.max_tension_asymmetry = out.max_tension_asymmetry.max(tension_asymmetry(&tau_next, k));
        }
        recorded_current = record;

        observer(&StepEvent {
            state: &state,
            dt: h,
            energy_prev: e,
            energy: e_next,
            power_prev: power,
            power: power_next,
            tension: &tau_next,
            recorded: record,
        });

        tau = tau_next;
        e = e_next;
        power = power_next;

        let drift = out.monitors.last().map_or(0.0, |r| r.flatness) - flat0;
        if grid.dim() == 2 && drift > cfg.drift_budget {
            out.termination = Termination::Failure;
            out.failure = Some(format!("flatness drift {drift:.3e} exceeds budget {:.3e}", cfg.drift_budget));
            break;
        }
    }

    if !recorded_current && out.accepted_steps > 0 {
        out.monitors.push(monitor_row(&state.a, k, state.t, &tau, last_defect));
    }
    Ok((state, out))
}

/// Discrete-heat-kernel constant `C` with `sup|ψ(1)| ≤ C √E(0)` for the
/// rank-1 flow, which is the heat equation `ψ_t = ∂∂ψ` on the grid.
/// Both the constant and the checkerboard modes are undamped by the
/// central second difference, so `C ≥ √2` per direction.
pub fn sup_bound_constant(grid: &BaseGrid) -> f64 {
    let dir_sum = |n: usize| -> f64 {
        (0..n)
            .map(|m| {
                let s = (2.0 * std::f64::consts::PI * m as f64 / n as f64).sin();
                (-2.0 * s * s * (n * n) as f64).exp()
            })
            .sum()
    };
    let [nx, ny] = grid.shape();
    match grid {
        BaseGrid::Circle { .. } => dir_sum(nx).sqrt(),
        BaseGrid::Torus { .. } => (dir_sum(nx) * dir_sum(ny)).sqrt(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BochnerResidual {
    /// `|mean_p (LHS − RHS)|`; the Laplacian term integrates to zero.
    pub integrated: f64,
    pub pointwise_sup: f64,
}

/// Discrete defect of
/// `Re⟨σ⁻¹ τ(σ(D)) σ − τ(D), s⟩_K = ¼ Δ|s|²_K − ½ Σ_i Re⟨D_i(h) h⁻¹, D_i s⟩_K`
/// with `h = σ^{*K}σ`, `s = log h`, `D_i X = ∂_i X + [A_i, X]`.
pub fn bochner_residual(
    sigma: &GaugeField,
    a: &ConnectionField,
    k: &BackgroundMetric,
) -> Result<BochnerResidual> {
    let grid = *a.grid();
    let gauged = gauge_apply(sigma, a)?;
    let tau0 = tension(a, k);
    let tau1 = tension(&gauged, k);
    let h = sigma.h(k);
    let s = sigma.s(k)?;
    let s_sq: Vec<CMat> = s.iter().map(|x| CMat::diag_real(&[norm_sq_k(x, k)])).collect();

    let n = grid.len();
    let mut rhs = vec![0.0; n];
    for dir in 0..grid.dim() {
        let lap = central_diff(&grid, &central_diff(&grid, &s_sq, dir), dir);
        let dh = central_diff(&grid, &h, dir);
        let ds = central_diff(&grid, &s, dir);
        for p in 0..n {
            let ai = &a.coeff(dir)[p];
            let mut dhp = dh[p].clone();
            dhp += &ai.commutator(&h[p]);
            let mut dsp = ds[p].clone();
            dsp += &ai.commutator(&s[p]);
            let hinv = h[p].inverse_checked(COND_LIMIT)?;
            rhs[p] += 0.25 * lap[p][(0, 0)].re - 0.5 * inner_k(&(&dhp * &hinv), &dsp, k).re;
        }
    }
    let mut total = 0.0;
    let mut sup: f64 = 0.0;
    for p in 0..n {
        let sig = &sigma.values()[p];
        let sinv = sig.inverse_checked(COND_LIMIT)?;
        let pulled = &(&sinv * &tau1[p]) * sig;
        let lhs = inner_k(&(&pulled - &tau0[p]), &s[p], k).re;
        let d = lhs - rhs[p];
        total += d;
        sup = sup.max(d.abs());
    }
    Ok(BochnerResidual { integrated: (total / n as f64).abs(), pointwise_sup: sup })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::expm;

    fn n2() -> CMat {
        CMat::real(&[&[0.0, 1.0], &[0.0, 0.0]])
    }

    fn circle(n: usize, c: CMat) -> ConnectionField {
        make_constant_connection(BaseGrid::circle(n).unwrap(), &[c]).unwrap()
    }

    #[test]
    fn tension_examples() {
        let k = BackgroundMetric::identity(2);
        let l2 = 2f64.ln();
        let tau = tension(&circle(16, CMat::diag_real(&[l2, -l2])), &k);
        assert!(tau.iter().all(|t| t.max_abs() == 0.0));

        // Normal, non-Hermitian: rotation generator plus a real diagonal.
        let c = CMat::real(&[&[1.0, 2.0], &[-2.0, 1.0]]);
        let tau = tension(&circle(16, c), &k);
        assert!(tau.iter().all(|t| t.max_abs() < 1e-15));

        let tau = tension(&circle(16, n2()), &k);
        let want = CMat::diag_real(&[-0.5, 0.5]);
        for t in &tau {
            assert!((t - &want).max_abs() < 1e-15);
            assert!((t.frob_norm() - 0.5f64.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn energy_examples() {
        let k = BackgroundMetric::identity(2);
        assert_eq!(energy(&ConnectionField::zero(BaseGrid::circle(8).unwrap(), 2), &k), 0.0);
        let l2 = 2f64.ln();
        let e = energy(&circle(32, CMat::diag_real(&[l2, -l2])), &k);
        assert!((e - 2.0 * l2 * l2).abs() < 1e-15);
        assert!((e - 0.96091).abs() < 1e-5);
        assert!((energy(&circle(32, n2()), &k) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn self_test_passes() {
        assert!(sign_self_test());
    }

    #[test]
    fn stationary_input_is_fixed() {
        let k = BackgroundMetric::identity(2);
        let l2 = 2f64.ln();
        let a = circle(16, CMat::diag_real(&[l2, -l2]));
        let (st, out) = run_flow(&a, &k, &FlowConfig::default()).unwrap();
        assert_eq!(out.termination, Termination::Converged);
        assert_eq!(st.t, 0.0);
        assert_eq!(st.a, a);
        assert_eq!(out.monitors.rows.len(), 1);
    }

    #[test]
    fn zero_connection_is_fixed_point() {
        let k = BackgroundMetric::identity(3);
        let a = ConnectionField::zero(BaseGrid::torus(8, 8).unwrap(), 3);
        let (_, out) = run_flow(&a, &k, &FlowConfig::default()).unwrap();
        assert_eq!(out.termination, Termination::Converged);
        let r = out.monitors.rows[0];
        assert_eq!(r.energy + r.tension_l2 + r.tension_sup + r.psi_sup + r.flatness, 0.0);
    }

    #[test]
    fn nilpotent_energy_decreases_and_matches_ode() {
        // Constant data stays constant: a' = −a³ with a(0) = 1.
        let k = BackgroundMetric::identity(2);
        let cfg = FlowConfig { t_max: 2.0, rtol: 1e-10, ..FlowConfig::default() };
        let (st, out) = run_flow(&circle(16, n2()), &k, &cfg).unwrap();
        assert_eq!(out.termination, Termination::MaxTime);
        let want = 1.0 / (1.0 + 2.0 * st.t).sqrt();
        assert!((st.a.coeff(0)[0][(0, 1)].re - want).abs() < 1e-8);
        for w in out.monitors.rows.windows(2) {
            assert!(w[1].energy <= w[0].energy);
        }
    }

    #[test]
    fn gauge_step_examples() {
        let g = BaseGrid::circle(8).unwrap();
        let sig = GaugeField::identity(g, 2);
        let zero = vec![CMat::zeros(2, 2); 8];
        assert_eq!(gauge_step(&sig, &zero, 0.1), sig);
        let tau = vec![CMat::diag_real(&[1.0, -1.0]); 8];
        let s0 = GaugeField::constant(g, &CMat::real(&[&[1.0, 2.0], &[0.0, 1.0]])).unwrap();
        let out = gauge_step(&s0, &tau, 0.1);
        let want = &CMat::diag_real(&[1.1, 0.9]) * &s0.values()[0];
        assert!((&out.values()[3] - &want).max_abs() < 1e-15);
    }

    #[test]
    fn stationary_gauge_stays_identity() {
        let k = BackgroundMetric::identity(2);
        let c = CMat::real(&[&[0.5, 1.0], &[-1.0, 0.5]]);
        let mut st = FlowState::new(circle(16, c), 1e-3, true);
        for _ in 0..5 {
            st = flow_step(&st, &k, &FlowConfig::default()).unwrap();
        }
        assert!(st.t > 4e-3);
        for s in st.sigma.unwrap().values() {
            assert!((s - &CMat::identity(2)).max_abs() < 1e-14);
        }
    }

    #[test]
    fn csv_round_trip() {
        let mut m = MonitorSeries::default();
        m.push(MonitorRow { t: 0.0, energy: 0.1 + 0.2, ..Default::default() });
        m.push(MonitorRow {
            t: 1.0 / 3.0,
            energy: 1e-300,
            energy_identity_defect: 0.25,
            ..Default::default()
        });
        let csv = m.to_csv();
        assert!(csv.starts_with(CSV_HEADER));
        assert_eq!(MonitorSeries::read_csv(&csv).unwrap(), m);
    }

    #[test]
    fn sup_bound_constant_is_at_least_sqrt2() {
        let c = sup_bound_constant(&BaseGrid::circle(128).unwrap());
        assert!(c >= 2f64.sqrt() && c < 2.0);
        let c = sup_bound_constant(&BaseGrid::torus(32, 32).unwrap());
        assert!(c >= 2.0);
    }

    #[test]
    fn bochner_trivial_cases() {
        let g = BaseGrid::circle(32).unwrap();
        let k = BackgroundMetric::identity(2);
        let a = make_constant_connection(g, &[CMat::real(&[&[0.2, 1.0], &[0.0, -0.3]])]).unwrap();
        let r = bochner_residual(&GaugeField::identity(g, 2), &a, &k).unwrap();
        assert_eq!(r.integrated, 0.0);
        assert_eq!(r.pointwise_sup, 0.0);
        let th = 0.7f64;
        let rot = CMat::real(&[&[th.cos(), -th.sin()], &[th.sin(), th.cos()]]);
        let r = bochner_residual(&GaugeField::constant(g, &rot).unwrap(), &a, &k).unwrap();
        assert!(r.pointwise_sup < 1e-13);
    }

    #[test]
    fn bochner_second_order() {
        let k = BackgroundMetric::identity(2);
        let res = |n: usize| {
            let g = BaseGrid::circle(n).unwrap();
            let a = make_constant_connection(g, &[CMat::diag_real(&[0.3, -0.2])]).unwrap();
            let sig = GaugeField::from_fn(g, 2, |x| {
                let f = (2.0 * std::f64::consts::PI * x[0]).sin();
                expm(&CMat::diag_real(&[0.1 * f, -0.1 * f]))
            })
            .unwrap();
            bochner_residual(&sig, &a, &k).unwrap().integrated
        };
        let ratio = res(64) / res(128);
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }
}

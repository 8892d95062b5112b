//! Experiment drivers: single runs, gamma sweeps, epsilon studies and the
//! Barenblatt benchmark.

use std::path::Path;
use std::time::Instant;

use crate::config::{Format, Lift, Profile, RunConfig, Sigma};
use crate::diagnostics::{self, CheckConfig, EnergyLedger, Violation};
use crate::error::{Error, Result};
use crate::grid::{self, Field, Grid};
use crate::model::{check_h7, check_rate_hypotheses, default_sigma, derive_constants, DerivedConstants, H7Verdict};
use crate::output::{self, Table, Value};
use crate::stepper::{pos_pow, Scheme, Solver, State, StepReport};

/// Number of common sample times used for space-time distances.
pub const DISTANCE_SAMPLES: usize = 64;

/// Barenblatt solution of `dt n = gamma/(gamma+1) Lap n^(gamma+1)` in
/// `dim` dimensions with constant `c`, centered at `center`.
pub fn barenblatt(x: [f64; 2], center: [f64; 2], dim: usize, gamma: f64, c: f64, t: f64) -> f64 {
    let m = gamma + 1.0;
    let nd = dim as f64;
    let s = gamma / (gamma + 1.0) * t;
    let alpha = nd / (nd * (m - 1.0) + 2.0);
    let beta = alpha / nd;
    let k = alpha * (m - 1.0) / (2.0 * m * nd);
    let mut r2 = (x[0] - center[0]).powi(2);
    if dim == 2 {
        r2 += (x[1] - center[1]).powi(2);
    }
    let base = c - k * r2 * s.powf(-2.0 * beta);
    if base <= 0.0 {
        0.0
    } else {
        s.powf(-alpha) * base.powf(1.0 / (m - 1.0))
    }
}

/// Unlifted initial density.
pub fn initial_density(cfg: &RunConfig) -> Field {
    let i = &cfg.initial;
    let g = cfg.grid;
    let dim = g.dim();
    Field::from_fn(g, |x| match i.profile {
        Profile::Uniform => i.amplitude,
        Profile::Step => {
            let inside = (x[0] - i.center[0]).abs() <= 0.5 * i.width
                && (dim == 1 || (x[1] - i.center[1]).abs() <= 0.5 * i.width);
            if inside {
                i.amplitude
            } else {
                i.background
            }
        }
        Profile::Bump => {
            let mut r2 = (x[0] - i.center[0]).powi(2);
            if dim == 2 {
                r2 += (x[1] - i.center[1]).powi(2);
            }
            i.background + i.amplitude * (1.0 - r2 / (i.width * i.width)).max(0.0)
        }
        Profile::Barenblatt => barenblatt(x, i.center, dim, cfg.model.gamma, i.amplitude, cfg.time.t_start),
    })
}

/// The lift actually applied to the initial density.
pub fn lift_value(cfg: &RunConfig) -> f64 {
    match cfg.initial.lift {
        Lift::Auto if cfg.model.is_regularized() => cfg.model.eps_reg,
        Lift::Auto => 1.0 / cfg.model.gamma,
        Lift::None => 0.0,
        Lift::Value(v) => v,
    }
}

/// Initial state: the lift is added to the density and to its normal part,
/// so the autophagic part keeps its unlifted value.
pub fn initial_state(cfg: &RunConfig) -> State {
    let raw = initial_density(cfg);
    let lift = lift_value(cfg);
    let f = cfg.initial.fraction;
    let n = raw.map(|v| v + lift);
    let c = raw.zip_map(&n, |r, n| if n > 0.0 { f * r / n } else { f });
    State {
        t: cfg.time.t_start,
        n,
        c,
        d: Field::constant(cfg.grid, cfg.initial.d0),
    }
}

pub fn derived_constants(cfg: &RunConfig) -> Result<DerivedConstants> {
    let consts = derive_constants(&cfg.model, &Field::constant(cfg.grid, cfg.initial.d0))?;
    let problems = check_rate_hypotheses(&cfg.model, &consts);
    if problems.is_empty() {
        Ok(consts)
    } else {
        Err(Error::Config(
            problems
                .into_iter()
                .map(|m| crate::error::ConfigIssue { line: None, message: m })
                .collect(),
        ))
    }
}

pub fn h7_verdict(cfg: &RunConfig, consts: &DerivedConstants) -> Result<H7Verdict> {
    let t = cfg.model.t_final;
    let sigma = match cfg.initial.sigma {
        Sigma::Auto => default_sigma(consts.g0_inflated(), t),
        Sigma::Value(s) => s,
    };
    check_h7(&initial_density(cfg), sigma, consts.g0, t)
}

/// `max(L, e^(2 M0 T) max n0)`, the smallest cutoff level that keeps the
/// regularized coefficients unclipped.
pub fn cutoff_requirement(cfg: &RunConfig, consts: &DerivedConstants, n0: &Field) -> f64 {
    let t = cfg.model.t_final - cfg.time.t_start;
    consts
        .nutrient_ceiling
        .max((2.0 * consts.m0 * t).exp() * n0.max())
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    /// Stopped at an invariant violation.
    Violated,
    /// The solver gave up after its retries.
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub history: Vec<State>,
    pub reports: Vec<StepReport>,
    pub ledger: EnergyLedger,
    pub consts: DerivedConstants,
    pub h7: H7Verdict,
    pub warnings: Vec<String>,
    /// First violation of each invariant.
    pub violations: Vec<Violation>,
    pub lift: f64,
    pub cutoff_activations: usize,
    pub config_hash: String,
    pub wall_clock: f64,
}

impl RunOutcome {
    pub fn final_state(&self) -> &State {
        self.history.last().expect("a run records its initial state")
    }

    pub fn max_dt(&self) -> f64 {
        self.reports.iter().map(|r| r.dt_used).fold(0.0, f64::max)
    }

    pub fn steps(&self) -> usize {
        self.reports.len()
    }

    /// Maps the outcome to the error the command line reports, if any.
    pub fn error(&self, permissive: bool) -> Option<Error> {
        match &self.status {
            RunStatus::Failed(m) => Some(Error::Solver(m.clone())),
            RunStatus::Violated => Some(Error::Invariant(self.violations.clone())),
            RunStatus::Completed if !permissive && !self.violations.is_empty() => {
                Some(Error::Invariant(self.violations.clone()))
            }
            RunStatus::Completed => None,
        }
    }
}

/// Advances the configured problem to `T_final`.
///
/// Every state is checked; unless `permissive`, the first violation stops the
/// run. Solver failures stop the run with the history recorded so far.
pub fn run(cfg: &RunConfig, permissive: bool) -> Result<RunOutcome> {
    let started = Instant::now();
    let consts = derived_constants(cfg)?;
    let h7 = h7_verdict(cfg, &consts)?;
    let mut warnings = Vec::new();
    if !h7.pass {
        warnings.push(format!(
            "initial data violate the small-superlevel-set hypothesis: |{{n0 >= {:.6}}}| = {:.6} exceeds {:.6}",
            h7.sigma, h7.measure, h7.threshold
        ));
    }
    let scheme = if cfg.model.is_regularized() {
        Scheme::Regularized
    } else {
        Scheme::Plain
    };
    let s0 = initial_state(cfg);
    if scheme == Scheme::Regularized {
        let need = cutoff_requirement(cfg, &consts, &s0.n);
        if cfg.model.ell_cut < need {
            warnings.push(format!(
                "cutoff level ell = {} is below max(L, e^(2 M0 T) max n0) = {}; cutoffs may activate",
                cfg.model.ell_cut, need
            ));
        }
    }
    for w in &warnings {
        log::warn!("{}", w);
    }

    let solver = Solver::new(cfg.model.clone(), consts, cfg.time.solver_options());
    let t_final = cfg.model.t_final;
    let initial_max = s0.n.max();
    let floor = match scheme {
        Scheme::Regularized if lift_value(cfg) >= cfg.model.eps_reg => {
            Some(diagnostics::lower_barrier(cfg.model.eps_reg, &consts, t_final - cfg.time.t_start) - cfg.time.newton_tol)
        }
        _ => None,
    };
    let mut check = CheckConfig {
        density_floor: floor,
        ..CheckConfig::default()
    };
    let g0 = consts.g0_inflated();
    let mut ceiling = initial_max;
    check.density_ceiling = Some(ceiling * (1.0 + 1e-9) + cfg.time.newton_tol);

    let mut violations: Vec<Violation> = Vec::new();
    let note = |found: Vec<Violation>, violations: &mut Vec<Violation>| -> bool {
        let any = !found.is_empty();
        for v in found {
            if !violations.iter().any(|w| w.invariant == v.invariant) {
                log::warn!("{}", v);
                violations.push(v);
            }
        }
        any
    };

    let mut status = RunStatus::Completed;
    let mut history = vec![s0.clone()];
    let mut reports = Vec::new();
    let mut cutoffs = 0;
    if note(diagnostics::check_all(&s0, &consts, &check), &mut violations) && !permissive {
        status = RunStatus::Violated;
    }
    let stride = cfg.time.snapshot_stride.max(1);
    let mut s = s0;
    while status == RunStatus::Completed && s.t < t_final {
        let (next, rep) = match solver.step_with(&s, f64::INFINITY, scheme) {
            Ok(x) => x,
            Err(Error::Solver(m)) => {
                log::error!("run stopped at t = {}: {}", s.t, m);
                status = RunStatus::Failed(m);
                break;
            }
            Err(e) => return Err(e),
        };
        ceiling /= (1.0 - g0.max(0.0) * rep.dt_used).max(f64::MIN_POSITIVE);
        check.density_ceiling = Some(ceiling * (1.0 + 1e-9) + cfg.time.newton_tol);
        cutoffs += rep.cutoff_activations;
        reports.push(rep);
        let bad = note(diagnostics::check_all(&next, &consts, &check), &mut violations);
        s = next;
        if bad && !permissive {
            status = RunStatus::Violated;
        }
        if reports.len() % stride == 0 || s.t >= t_final || status != RunStatus::Completed {
            history.push(s.clone());
        }
    }
    if history.last().map(|h| h.t) != Some(s.t) {
        history.push(s);
    }
    let ledger = EnergyLedger::from_history(&history, &cfg.model, cfg.sweep.delta)?;
    Ok(RunOutcome {
        status,
        history,
        reports,
        ledger,
        consts,
        h7,
        warnings,
        violations,
        lift: lift_value(cfg),
        cutoff_activations: cutoffs,
        config_hash: cfg.hash(),
        wall_clock: started.elapsed().as_secs_f64(),
    })
}

/// Writes the configured output files of a run into `dir`.
pub fn write_run_outputs(cfg: &RunConfig, out: &RunOutcome, dir: &Path) -> Result<()> {
    let gamma = cfg.model.gamma;
    if cfg.output.wants(Format::Snapshot) {
        for (k, s) in out.history.iter().enumerate() {
            output::write_snapshot(&dir.join(format!("snapshot_{:05}.csv", k)), s, gamma, &out.config_hash)?;
        }
    }
    if cfg.output.wants(Format::Timeseries) {
        output::write_timeseries(&dir.join("timeseries.csv"), &out.history, &out.ledger)?;
    }
    if cfg.output.wants(Format::Report) {
        output::write_report(&dir.join("report.csv"), &run_table(cfg, out))?;
    }
    Ok(())
}

fn status_text(status: &RunStatus) -> String {
    match status {
        RunStatus::Completed => "completed".into(),
        RunStatus::Violated => "violated".into(),
        RunStatus::Failed(_) => "failed".into(),
    }
}

pub fn run_table(cfg: &RunConfig, out: &RunOutcome) -> Table {
    let mut t = Table::new(&[
        "config_hash",
        "status",
        "gamma",
        "t_final",
        "steps",
        "retries",
        "clamped_cells",
        "cutoff_activations",
        "violations",
        "mass_initial",
        "mass_final",
        "n_max",
        "L",
        "G0",
        "M0",
        "h7_pass",
        "h7_ratio",
    ]);
    let first = &out.ledger.records[0];
    let last = out.ledger.records.last().unwrap();
    let n_max = out.history.iter().map(|s| s.n.max()).fold(f64::NEG_INFINITY, f64::max);
    t.push(vec![
        out.config_hash.clone().into(),
        status_text(&out.status).into(),
        cfg.model.gamma.into(),
        out.final_state().t.into(),
        out.steps().into(),
        out.reports.iter().map(|r| r.retries).sum::<usize>().into(),
        out.reports.iter().map(|r| r.clamped_cells).sum::<usize>().into(),
        out.cutoff_activations.into(),
        out.violations.len().into(),
        first.mass.into(),
        last.mass.into(),
        n_max.into(),
        out.consts.nutrient_ceiling.into(),
        out.consts.g0.into(),
        out.consts.m0.into(),
        out.h7.pass.into(),
        out.h7.ratio.into(),
    ]);
    t
}

/// Values of `f` at time `t`, linearly interpolated between snapshots.
pub fn sample_history(history: &[State], t: f64, f: &dyn Fn(&State) -> Field) -> Result<Vec<f64>> {
    let first = history.first().ok_or_else(|| Error::Argument("empty history".into()))?;
    let last = history.last().unwrap();
    let tol = 1e-12 * last.t.abs().max(1.0);
    if t < first.t - tol || t > last.t + tol {
        return Err(Error::Argument(format!(
            "time {} outside the recorded range [{}, {}]",
            t, first.t, last.t
        )));
    }
    let j = history.partition_point(|s| s.t < t);
    if j == 0 {
        return Ok(f(first).into_values());
    }
    if j == history.len() {
        return Ok(f(last).into_values());
    }
    let (a, b) = (&history[j - 1], &history[j]);
    let fb = f(b);
    if b.t == t || b.t <= a.t {
        return Ok(fb.into_values());
    }
    let w = (t - a.t) / (b.t - a.t);
    let fa = f(a);
    Ok(fa.values().iter().zip(fb.values()).map(|(x, y)| x + w * (y - x)).collect())
}

/// `( int_t0^t1 int (f_a - f_b)^2 )^(1/2)` with both histories interpolated
/// to `samples` uniform times and the trapezoidal rule in time.
pub fn spacetime_distance(
    a: &[State],
    b: &[State],
    f: &dyn Fn(&State) -> Field,
    t0: f64,
    t1: f64,
    samples: usize,
) -> Result<f64> {
    let grid: Grid = *a.first().ok_or_else(|| Error::Argument("empty history".into()))?.grid();
    if b.first().map(|s| *s.grid()) != Some(grid) {
        return Err(Error::Argument("histories live on different grids".into()));
    }
    if !(t1 > t0) || samples < 2 {
        return Ok(0.0);
    }
    let vol = grid.cell_volume();
    let dt = (t1 - t0) / (samples - 1) as f64;
    let mut total = 0.0;
    for k in 0..samples {
        let t = if k + 1 == samples { t1 } else { t0 + k as f64 * dt };
        let fa = sample_history(a, t, f)?;
        let fb = sample_history(b, t, f)?;
        let sq: f64 = fa.iter().zip(&fb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() * vol;
        let w = if k == 0 || k + 1 == samples { 0.5 } else { 1.0 };
        total += w * dt * sq;
    }
    Ok(total.sqrt())
}

/// Trapezoidal time integral of ledger values over `[tau, t_last]`.
fn window_integral(points: &[(f64, f64)], tau: f64) -> f64 {
    let mut total = 0.0;
    for w in points.windows(2) {
        let ((t0, e0), (t1, e1)) = (w[0], w[1]);
        if t1 <= tau || t1 <= t0 {
            continue;
        }
        let (s0, f0) = if t0 < tau {
            (tau, e0 + (tau - t0) / (t1 - t0) * (e1 - e0))
        } else {
            (t0, e0)
        };
        total += (t1 - s0) * 0.5 * (f0 + e1);
    }
    total
}

#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub gamma: f64,
    pub status: RunStatus,
    pub config_hash: String,
    pub steps: usize,
    pub weighted_energy: f64,
    pub entropy: f64,
    /// Time integral of the excess measure over `[tau, T]`.
    pub excess: f64,
    /// Time integral of the segregation product over `[tau, T]`.
    pub segregation: f64,
    /// Time integral of `t^2 int |v (Lap v + R)|` over `[tau, T]`.
    pub complementarity: f64,
    pub n_max: f64,
    pub mass_final: f64,
    pub wall_clock: f64,
    pub history: Vec<State>,
}

impl SweepEntry {
    pub fn ok(&self) -> bool {
        self.status == RunStatus::Completed
    }
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
    /// `||v_i - v_{i+1}||` over `[tau, T]` for consecutive entries.
    pub v_distances: Vec<Option<f64>>,
    /// Same for the autophagic fraction.
    pub c_distances: Vec<Option<f64>>,
    pub tau: f64,
    pub h7: H7Verdict,
}

fn sweep_entry(cfg: &RunConfig, gamma: f64, tau: f64, permissive: bool) -> Result<SweepEntry> {
    let mut c = cfg.clone();
    c.model.gamma = gamma;
    let out = run(&c, permissive)?;
    let failed = out.error(permissive).is_some();
    let recs = &out.ledger.records;
    let pts = |f: &dyn Fn(&diagnostics::LedgerRecord) -> f64| -> Vec<(f64, f64)> {
        recs.iter().map(|r| (r.t, f(r))).collect()
    };
    let weighted = if failed {
        f64::NAN
    } else {
        diagnostics::weighted_energy(&out.history, gamma, tau)?
    };
    Ok(SweepEntry {
        gamma,
        status: if failed && out.status == RunStatus::Completed {
            RunStatus::Violated
        } else {
            out.status.clone()
        },
        config_hash: out.config_hash.clone(),
        steps: out.steps(),
        weighted_energy: weighted,
        entropy: diagnostics::entropy_dissipation(&out.history, gamma),
        excess: window_integral(&pts(&|r| r.excess), tau),
        segregation: window_integral(&pts(&|r| r.segregation), tau),
        complementarity: window_integral(&pts(&|r| r.complementarity), tau),
        n_max: out.history.iter().map(|s| s.n.max()).fold(f64::NEG_INFINITY, f64::max),
        mass_final: recs.last().map(|r| r.mass).unwrap_or(f64::NAN),
        wall_clock: out.wall_clock,
        history: out.history,
    })
}

/// Runs every gamma of `cfg.sweep` on the same data and compares
/// consecutive runs over `[tau, T]`.
pub fn gamma_sweep(cfg: &RunConfig, gammas: &[f64], permissive: bool) -> Result<SweepReport> {
    if gammas.len() < 2 {
        return Err(Error::Argument("a sweep needs at least 2 gammas".into()));
    }
    if let Some(g) = gammas.iter().find(|&&g| !(g >= 1.0)) {
        return Err(Error::Argument(format!("every gamma must satisfy gamma >= 1, got {}", g)));
    }
    let tau = cfg.tau();
    let t_final = cfg.model.t_final;
    if !(tau > cfg.time.t_start && tau < t_final) {
        return Err(Error::Argument(format!(
            "tau = {} must lie strictly between t_start = {} and T_final = {}",
            tau, cfg.time.t_start, t_final
        )));
    }
    let consts = derived_constants(cfg)?;
    let h7 = h7_verdict(cfg, &consts)?;
    if !h7.pass {
        log::warn!("sweep data violate the small-superlevel-set hypothesis (ratio {:.4})", h7.ratio);
    }
    let mut entries = Vec::with_capacity(gammas.len());
    for &g in gammas {
        let e = match sweep_entry(cfg, g, tau, permissive) {
            Ok(e) => e,
            Err(Error::Solver(m)) => failed_entry(cfg, g, m),
            Err(e) => return Err(e),
        };
        log::info!("gamma = {}: {} steps in {:.2} s", g, e.steps, e.wall_clock);
        entries.push(e);
    }
    let mut v_distances = Vec::new();
    let mut c_distances = Vec::new();
    for w in entries.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if !(a.ok() && b.ok()) {
            v_distances.push(None);
            c_distances.push(None);
            continue;
        }
        let (ga, gb) = (a.gamma, b.gamma);
        // Each history is mapped to its own v, then the two are compared.
        let va: Vec<State> = a.history.iter().map(|s| with_density(s, s.potential(ga))).collect();
        let vb: Vec<State> = b.history.iter().map(|s| with_density(s, s.potential(gb))).collect();
        v_distances.push(Some(spacetime_distance(&va, &vb, &|s| s.n.clone(), tau, t_final, DISTANCE_SAMPLES)?));
        c_distances.push(Some(spacetime_distance(
            &a.history,
            &b.history,
            &|s| s.c.clone(),
            tau,
            t_final,
            DISTANCE_SAMPLES,
        )?));
    }
    Ok(SweepReport {
        entries,
        v_distances,
        c_distances,
        tau,
        h7,
    })
}

fn with_density(s: &State, n: Field) -> State {
    State { t: s.t, n, c: s.c.clone(), d: s.d.clone() }
}

fn failed_entry(cfg: &RunConfig, gamma: f64, message: String) -> SweepEntry {
    let mut c = cfg.clone();
    c.model.gamma = gamma;
    SweepEntry {
        gamma,
        status: RunStatus::Failed(message),
        config_hash: c.hash(),
        steps: 0,
        weighted_energy: f64::NAN,
        entropy: f64::NAN,
        excess: f64::NAN,
        segregation: f64::NAN,
        complementarity: f64::NAN,
        n_max: f64::NAN,
        mass_final: f64::NAN,
        wall_clock: 0.0,
        history: Vec::new(),
    }
}

pub fn sweep_table(report: &SweepReport) -> Table {
    let mut t = Table::new(&[
        "config_hash",
        "gamma",
        "status",
        "steps",
        "weighted_energy",
        "entropy",
        "excess",
        "segregation",
        "complementarity",
        "n_max",
        "mass_final",
        "v_distance_next",
        "c_distance_next",
        "h7_pass",
    ]);
    for (i, e) in report.entries.iter().enumerate() {
        let dist = |d: &Vec<Option<f64>>| -> Value {
            match d.get(i) {
                Some(Some(x)) => (*x).into(),
                Some(None) => "failed".into(),
                None => "".into(),
            }
        };
        t.push(vec![
            e.config_hash.clone().into(),
            e.gamma.into(),
            status_text(&e.status).into(),
            e.steps.into(),
            e.weighted_energy.into(),
            e.entropy.into(),
            e.excess.into(),
            e.segregation.into(),
            e.complementarity.into(),
            e.n_max.into(),
            e.mass_final.into(),
            dist(&report.v_distances),
            dist(&report.c_distances),
            report.h7.pass.into(),
        ]);
    }
    t
}

#[derive(Debug, Clone)]
pub struct EpsRow {
    pub eps: f64,
    pub status: RunStatus,
    pub config_hash: String,
    /// `|| (n_eps)^(gamma+1) - (n_0)^(gamma+1) ||` over space-time.
    pub distance: f64,
    pub cutoff_activations: usize,
    pub cutoff_requirement: f64,
    pub entropy: f64,
    pub min_density: f64,
    pub lower_barrier: f64,
}

#[derive(Debug, Clone)]
pub struct EpsStudy {
    pub rows: Vec<EpsRow>,
    pub reference_hash: String,
    pub reference_entropy: f64,
}

/// Regularized runs for each `eps` against an unregularized, unlifted
/// reference on the same data.
pub fn eps_study(cfg: &RunConfig, eps_list: &[f64], permissive: bool) -> Result<EpsStudy> {
    if eps_list.is_empty() {
        return Err(Error::Argument("the epsilon list is empty".into()));
    }
    if let Some(e) = eps_list.iter().find(|&&e| !(e > 0.0 && e.is_finite())) {
        return Err(Error::Argument(format!("every eps must be positive, got {}", e)));
    }
    if eps_list.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::Argument("eps values must be listed in decreasing order".into()));
    }
    let gamma = cfg.model.gamma;
    let mut base = cfg.clone();
    base.model.eps_reg = 0.0;
    base.initial.lift = Lift::None;
    let reference = run(&base, permissive)?;
    if let Some(e) = reference.error(permissive) {
        return Err(e);
    }
    let v = |s: &State| s.n.map(|n| pos_pow(n, gamma + 1.0));
    let (t0, t1) = (cfg.time.t_start, cfg.model.t_final);
    let mut rows = Vec::new();
    for &eps in eps_list {
        let mut c = cfg.clone();
        c.model.eps_reg = eps;
        c.initial.lift = Lift::Value(eps);
        let out = run(&c, permissive)?;
        let status = match out.error(permissive) {
            Some(Error::Solver(m)) => RunStatus::Failed(m),
            Some(_) => RunStatus::Violated,
            None => RunStatus::Completed,
        };
        let distance = if status == RunStatus::Completed {
            spacetime_distance(&out.history, &reference.history, &v, t0, t1, DISTANCE_SAMPLES)?
        } else {
            f64::NAN
        };
        rows.push(EpsRow {
            eps,
            status,
            config_hash: out.config_hash.clone(),
            distance,
            cutoff_activations: out.cutoff_activations,
            cutoff_requirement: cutoff_requirement(&c, &out.consts, &out.history[0].n),
            entropy: diagnostics::entropy_dissipation(&out.history, gamma),
            min_density: out.history.iter().map(|s| s.n.min()).fold(f64::INFINITY, f64::min),
            lower_barrier: diagnostics::lower_barrier(eps, &out.consts, t1 - t0),
        });
    }
    Ok(EpsStudy {
        rows,
        reference_hash: reference.config_hash,
        reference_entropy: diagnostics::entropy_dissipation(&reference.history, gamma),
    })
}

pub fn eps_table(study: &EpsStudy) -> Table {
    let mut t = Table::new(&[
        "config_hash",
        "reference_hash",
        "eps",
        "status",
        "distance",
        "cutoff_activations",
        "cutoff_requirement",
        "entropy",
        "reference_entropy",
        "min_density",
        "lower_barrier",
    ]);
    for r in &study.rows {
        t.push(vec![
            r.config_hash.clone().into(),
            study.reference_hash.clone().into(),
            r.eps.into(),
            status_text(&r.status).into(),
            r.distance.into(),
            r.cutoff_activations.into(),
            r.cutoff_requirement.into(),
            r.entropy.into(),
            study.reference_entropy.into(),
            r.min_density.into(),
            r.lower_barrier.into(),
        ]);
    }
    t
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub cells: usize,
    pub h: f64,
    pub config_hash: String,
    pub steps: usize,
    pub max_dt: f64,
    /// `int |n - U(T)|` divided by the initial mass.
    pub l1_error: f64,
    /// Observed order against the previous grid.
    pub order: Option<f64>,
    /// Largest relative mass change over the run.
    pub mass_drift: f64,
    pub ab_gap: f64,
    /// `-10 (h^2 + dt)`: the admissible lower bound on `ab_gap`.
    pub ab_floor: f64,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub gamma: f64,
    pub rows: Vec<BenchRow>,
}

/// Runs from the Barenblatt profile at `t_start` on each grid size and
/// compares with the exact solution at `T_final`.
pub fn barenblatt_benchmark(cfg: &RunConfig, grid_sizes: &[usize]) -> Result<BenchReport> {
    if grid_sizes.is_empty() || grid_sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Argument(format!(
            "grid sizes must be strictly increasing, got {:?}",
            grid_sizes
        )));
    }
    let m = &cfg.model;
    let i = &cfg.initial;
    if !m.rates.growth.is_zero() || !m.rates.k1.is_zero() || i.fraction != 0.0 {
        return Err(Error::Argument(
            "the benchmark needs a reaction-free setup: G = 0, K1 = 0 and initial.fraction = 0".into(),
        ));
    }
    if i.profile != Profile::Barenblatt || lift_value(cfg) != 0.0 || m.is_regularized() {
        return Err(Error::Argument(
            "the benchmark needs initial.profile = barenblatt, initial.lift = none and eps_reg = 0".into(),
        ));
    }
    let gamma = m.gamma;
    let mut rows: Vec<BenchRow> = Vec::new();
    for &n in grid_sizes {
        let mut c = cfg.clone();
        let g = cfg.grid;
        c.grid = Grid::new(g.dim(), g.origin(), g.extents(), [n, n])?;
        let out = run(&c, false)?;
        if let Some(e) = out.error(false) {
            return Err(e);
        }
        let exact = Field::from_fn(c.grid, |x| barenblatt(x, i.center, g.dim(), gamma, i.amplitude, m.t_final));
        let last = out.final_state();
        let m0 = grid::integrate(&out.history[0].n);
        let diff = last.n.zip_map(&exact, |a, b| (a - b).abs());
        let l1_error = grid::integrate(&diff) / m0;
        let mass_drift = out
            .ledger
            .records
            .iter()
            .map(|r| ((r.mass - m0) / m0).abs())
            .fold(0.0, f64::max);
        let max_dt = out.max_dt();
        let h = c.grid.h()[0];
        let ab_gap = diagnostics::aronson_benilan_gap(&out.history, &c.model, max_dt)?;
        let order = rows.last().map(|p| (p.l1_error / l1_error).ln() / (n as f64 / p.cells as f64).ln());
        rows.push(BenchRow {
            cells: n,
            h,
            config_hash: out.config_hash.clone(),
            steps: out.steps(),
            max_dt,
            l1_error,
            order,
            mass_drift,
            ab_gap,
            ab_floor: -10.0 * (h * h + max_dt),
        });
    }
    Ok(BenchReport { gamma, rows })
}

pub fn bench_table(report: &BenchReport) -> Table {
    let mut t = Table::new(&[
        "config_hash",
        "gamma",
        "cells",
        "h",
        "steps",
        "max_dt",
        "l1_error",
        "order",
        "mass_drift",
        "ab_gap",
        "ab_floor",
    ]);
    for r in &report.rows {
        t.push(vec![
            r.config_hash.clone().into(),
            report.gamma.into(),
            r.cells.into(),
            r.h.into(),
            r.steps.into(),
            r.max_dt.into(),
            r.l1_error.into(),
            r.order.map(Value::from).unwrap_or_else(|| "".into()),
            r.mass_drift.into(),
            r.ab_gap.into(),
            r.ab_floor.into(),
        ]);
    }
    t
}

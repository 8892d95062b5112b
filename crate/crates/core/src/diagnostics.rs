//! Post-processing of recorded states: energies, limit measures and
//! invariant checks. Nothing here mutates its input.

use std::fmt;

use crate::error::{Error, Result};
use crate::grid::{self, Axis, Field, Grid};
use crate::model::{eval_rates, DerivedConstants, ModelParams};
use crate::stepper::{pos_pow, State};

/// Default threshold for [`excess_measure`].
pub const DEFAULT_DELTA: f64 = 0.05;

/// A failed invariant at the worst offending cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub invariant: String,
    pub cell: usize,
    /// How far the value lies outside the admissible range.
    pub magnitude: f64,
    pub t: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} violated at cell {} (t = {}) by {:.6e}",
            self.invariant, self.cell, self.t, self.magnitude
        )
    }
}

pub const FRACTION_BOUNDS: &str = "fraction bounds";
pub const NUTRIENT_FLOOR: &str = "nutrient floor";
pub const NUTRIENT_CEILING: &str = "nutrient ceiling";
pub const DENSITY_FLOOR: &str = "density nonnegativity";
pub const WEAK_MAXIMUM: &str = "weak maximum principle";
pub const LOWER_BARRIER: &str = "lower barrier";
pub const FINITE_VALUES: &str = "finite values";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckConfig {
    pub fraction_tol: f64,
    pub nutrient_tol: f64,
    pub density_tol: f64,
    /// Upper bound on `n` at the state's time, if one applies.
    pub density_ceiling: Option<f64>,
    /// Lower bound on `n`, if one applies.
    pub density_floor: Option<f64>,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            fraction_tol: 1e-12,
            nutrient_tol: 1e-10,
            density_tol: 0.0,
            density_ceiling: None,
            density_floor: None,
        }
    }
}

/// Tracks the worst excursion of one invariant.
struct Worst {
    name: &'static str,
    cell: usize,
    magnitude: f64,
}

impl Worst {
    fn new(name: &'static str) -> Self {
        Worst { name, cell: 0, magnitude: 0.0 }
    }

    fn offer(&mut self, cell: usize, excess: f64) {
        if excess > self.magnitude {
            self.magnitude = excess;
            self.cell = cell;
        }
    }
}

/// Checks every state invariant and reports at most one violation per
/// invariant, located at the worst cell.
pub fn check_all(s: &State, consts: &DerivedConstants, cfg: &CheckConfig) -> Vec<Violation> {
    let l = consts.nutrient_ceiling;
    let mut finite = Worst::new(FINITE_VALUES);
    let mut frac = Worst::new(FRACTION_BOUNDS);
    let mut floor = Worst::new(NUTRIENT_FLOOR);
    let mut ceil = Worst::new(NUTRIENT_CEILING);
    let mut dens = Worst::new(DENSITY_FLOOR);
    let mut wmax = Worst::new(WEAK_MAXIMUM);
    let mut lower = Worst::new(LOWER_BARRIER);
    for k in 0..s.n.values().len() {
        let (n, c, d) = (s.n[k], s.c[k], s.d[k]);
        if !(n.is_finite() && c.is_finite() && d.is_finite()) {
            finite.offer(k, f64::INFINITY);
            continue;
        }
        frac.offer(k, (-cfg.fraction_tol - c).max(c - 1.0 - cfg.fraction_tol));
        floor.offer(k, -cfg.nutrient_tol - d);
        ceil.offer(k, d - l - cfg.nutrient_tol);
        dens.offer(k, -cfg.density_tol - n);
        if let Some(b) = cfg.density_ceiling {
            wmax.offer(k, n - b);
        }
        if let Some(b) = cfg.density_floor {
            lower.offer(k, b - n);
        }
    }
    [finite, frac, floor, ceil, dens, wmax, lower]
        .into_iter()
        .filter(|w| w.magnitude > 0.0)
        .map(|w| Violation {
            invariant: w.name.to_string(),
            cell: w.cell,
            magnitude: w.magnitude,
            t: s.t,
        })
        .collect()
}

fn potential(s: &State, gamma: f64) -> Field {
    s.potential(gamma)
}

/// `int |grad f|^2` with one-sided face differences.
fn gradient_energy(f: &Field) -> f64 {
    let g = grid::face_gradient(f);
    grid::integrate_faces(f.grid(), &g.map(|x| x * x))
}

/// `int v^2` and `int |grad v|^2`.
pub fn energy_integrands(s: &State, gamma: f64) -> (f64, f64) {
    let v = potential(s, gamma);
    let sq = grid::integrate(&v.map(|x| x * x));
    (sq, gradient_energy(&v))
}

/// `int_tau^T t (int v^2 + int |grad v|^2) dt`, trapezoidal in time with
/// midpoint weights; the integrand is interpolated linearly at `tau`.
pub fn weighted_energy(history: &[State], gamma: f64, tau: f64) -> Result<f64> {
    let points: Vec<(f64, f64)> = history
        .iter()
        .map(|s| {
            let (a, b) = energy_integrands(s, gamma);
            (s.t, a + b)
        })
        .collect();
    weighted_quadrature(&points, tau)
}

/// `sum dt * t_mid * (E_k + E_{k+1}) / 2` over `[tau, t_last]`.
pub fn weighted_quadrature(points: &[(f64, f64)], tau: f64) -> Result<f64> {
    let window = clip_window(points, tau);
    if window.len() < 2 {
        return Err(Error::Argument(format!(
            "fewer than 2 snapshots in the window starting at tau = {}",
            tau
        )));
    }
    Ok(window
        .windows(2)
        .map(|w| {
            let ((t0, e0), (t1, e1)) = (w[0], w[1]);
            (t1 - t0) * 0.5 * (t0 + t1) * 0.5 * (e0 + e1)
        })
        .sum())
}

/// Points with `t >= tau`, preceded by the linear interpolant at `tau` when
/// `tau` falls strictly inside the recorded range.
fn clip_window(points: &[(f64, f64)], tau: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for (i, &(t, e)) in points.iter().enumerate() {
        if t < tau {
            continue;
        }
        if out.is_empty() && t > tau && i > 0 {
            let (tp, ep) = points[i - 1];
            let w = (tau - tp) / (t - tp);
            out.push((tau, ep + w * (e - ep)));
        }
        out.push((t, e));
    }
    out
}

fn reaction_field(s: &State, params: &ModelParams) -> Result<Field> {
    let mut r = Vec::with_capacity(s.n.values().len());
    for k in 0..s.n.values().len() {
        let g = eval_rates(&params.rates, s.d[k])?.growth;
        r.push(g * s.n[k] - params.death * s.c[k] * s.n[k]);
    }
    Field::new(*s.grid(), r)
}

/// Cellwise `v Lap v + v R` written in product form,
/// `div(avg(v) grad v) - |grad v|^2 + v R`, where `|grad v|^2` in a cell is
/// the mean over its two faces along each axis (missing boundary faces count
/// as zero flux). Discretely the product form equals `v Lap_N v`.
pub fn complementarity_density(s: &State, params: &ModelParams) -> Result<Field> {
    let v = potential(s, params.gamma);
    let grid = *s.grid();
    let avg = grid::face_average(&v);
    let grad = grid::face_gradient(&v);
    let mut flux = grad.clone();
    for (x, a) in flux.x.iter_mut().zip(&avg.x) {
        *x *= a;
    }
    for (y, a) in flux.y.iter_mut().zip(&avg.y) {
        *y *= a;
    }
    let div = grid::divergence(&grid, &flux);
    let mut sq = vec![0.0; grid.len()];
    for (face, g) in grad.iter() {
        let (l, r) = grid.face_cells(face);
        sq[l] += 0.5 * g * g;
        sq[r] += 0.5 * g * g;
    }
    let r = reaction_field(s, params)?;
    Field::new(grid, (0..grid.len()).map(|k| div[k] - sq[k] + v[k] * r[k]).collect())
}

/// `int |v (Lap v + R)|` in the product form of [`complementarity_density`].
pub fn complementarity_residual(s: &State, params: &ModelParams) -> Result<f64> {
    let f = complementarity_density(s, params)?;
    Ok(grid::integrate(&f.map(f64::abs)))
}

/// Volume of `{n >= 1 + delta}`.
pub fn excess_measure(s: &State, delta: f64) -> f64 {
    let vol = s.grid().cell_volume();
    s.n.values().iter().filter(|&&n| n >= 1.0 + delta).count() as f64 * vol
}

/// `int |1 - n| v`.
pub fn segregation_product(s: &State, gamma: f64) -> f64 {
    let w = s.n.map(|n| (1.0 - n).abs() * pos_pow(n, gamma + 1.0));
    grid::integrate(&w)
}

/// `int |grad n^((gamma+1)/2)|^2` at one time.
pub fn entropy_integrand(s: &State, gamma: f64) -> f64 {
    gradient_energy(&s.n.map(|n| pos_pow(n, 0.5 * (gamma + 1.0))))
}

/// Trapezoidal time integral of [`entropy_integrand`]; 0 for fewer than two
/// snapshots.
pub fn entropy_dissipation(history: &[State], gamma: f64) -> f64 {
    let e: Vec<f64> = history.iter().map(|s| entropy_integrand(s, gamma)).collect();
    history
        .windows(2)
        .zip(e.windows(2))
        .map(|(s, e)| (s[1].t - s[0].t) * 0.5 * (e[0] + e[1]))
        .sum()
}

/// Minimum over cells and consecutive snapshot pairs of
/// `(n2 - n1) / dt + n_mid / (gamma t_mid)`. Pairs earlier than `10 dt` are
/// skipped. Only meaningful without reactions, so growth and the
/// autophagic fraction must vanish.
pub fn aronson_benilan_gap(history: &[State], params: &ModelParams, dt: f64) -> Result<f64> {
    let no_reaction = params.rates.growth.is_zero()
        && history.iter().all(|s| s.c.values().iter().all(|&c| c == 0.0));
    if !no_reaction {
        return Err(Error::Argument(
            "the Aronson-Benilan check needs a reaction-free run (G = 0 and c = 0)".into(),
        ));
    }
    let gamma = params.gamma;
    let cutoff = 10.0 * dt;
    let mut gap = f64::INFINITY;
    for w in history.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let span = b.t - a.t;
        if a.t < cutoff || span <= 0.0 {
            continue;
        }
        let tm = 0.5 * (a.t + b.t);
        for k in 0..a.n.values().len() {
            let g = (b.n[k] - a.n[k]) / span + 0.5 * (a.n[k] + b.n[k]) / (gamma * tm);
            gap = gap.min(g);
        }
    }
    if gap.is_infinite() {
        return Err(Error::Argument(format!(
            "no snapshot pairs after t = {} to evaluate the Aronson-Benilan gap",
            cutoff
        )));
    }
    Ok(gap)
}

/// Crossings of `f = threshold` along every grid line, by linear
/// interpolation between neighboring cell centers.
pub fn level_crossings(f: &Field, threshold: f64) -> Vec<[f64; 2]> {
    let grid: &Grid = f.grid();
    let mut out = Vec::new();
    let axes: &[Axis] = if grid.dim() == 1 { &[Axis::X] } else { &[Axis::X, Axis::Y] };
    for &axis in axes {
        for index in 0..grid.n_faces(axis) {
            let face = grid::Face { axis, index };
            let (l, r) = grid.face_cells(face);
            let (a, b) = (f[l], f[r]);
            if (a < threshold) == (b < threshold) {
                continue;
            }
            let w = (threshold - a) / (b - a);
            let (pl, pr) = (grid.center(l), grid.center(r));
            out.push([pl[0] + w * (pr[0] - pl[0]), pl[1] + w * (pr[1] - pl[1])]);
        }
    }
    out
}

/// Interface points of `{v > threshold}` with `v = n^(gamma+1)`.
pub fn free_boundary(s: &State, gamma: f64, threshold: f64) -> Vec<[f64; 2]> {
    level_crossings(&potential(s, gamma), threshold)
}

/// One ledger row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerRecord {
    pub t: f64,
    pub mass: f64,
    /// `t int v^2`.
    pub energy_v2: f64,
    /// `t int |grad v|^2`.
    pub energy_grad: f64,
    /// `int |grad n^((gamma+1)/2)|^2`.
    pub entropy: f64,
    pub excess: f64,
    pub segregation: f64,
    /// `t^2 int |v (Lap v + R)|`.
    pub complementarity: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnergyLedger {
    pub records: Vec<LedgerRecord>,
}

impl EnergyLedger {
    pub fn from_history(history: &[State], params: &ModelParams, delta: f64) -> Result<Self> {
        let records = history
            .iter()
            .map(|s| ledger_record(s, params, delta))
            .collect::<Result<_>>()?;
        Ok(EnergyLedger { records })
    }

    pub fn is_finite(&self) -> bool {
        self.records.iter().all(|r| {
            [
                r.t,
                r.mass,
                r.energy_v2,
                r.energy_grad,
                r.entropy,
                r.excess,
                r.segregation,
                r.complementarity,
            ]
            .iter()
            .all(|x| x.is_finite())
        })
    }
}

pub fn ledger_record(s: &State, params: &ModelParams, delta: f64) -> Result<LedgerRecord> {
    let gamma = params.gamma;
    let (v2, gv2) = energy_integrands(s, gamma);
    Ok(LedgerRecord {
        t: s.t,
        mass: grid::integrate(&s.n),
        energy_v2: s.t * v2,
        energy_grad: s.t * gv2,
        entropy: entropy_integrand(s, gamma),
        excess: excess_measure(s, delta),
        segregation: segregation_product(s, gamma),
        complementarity: s.t * s.t * complementarity_residual(s, params)?,
    })
}

/// Discrete weak-maximum bound: the backward-Euler growth factor
/// `1 / (1 - G0 dt)` per step, applied to the initial maximum.
pub fn discrete_density_ceiling(initial_max: f64, g0: f64, dts: &[f64]) -> f64 {
    let g = g0.max(0.0);
    dts.iter().fold(initial_max, |b, &dt| b / (1.0 - g * dt).max(f64::MIN_POSITIVE))
}

/// Continuous weak-maximum bound `e^(G0 t) max n0 (1 + 1e-6)`.
pub fn continuous_density_ceiling(initial_max: f64, g0: f64, t: f64) -> f64 {
    (g0 * t).exp() * initial_max * (1.0 + 1e-6)
}

/// Lower barrier `eps e^(-M0 T)` for regularized runs started from a lifted state.
pub fn lower_barrier(eps: f64, consts: &DerivedConstants, t_final: f64) -> f64 {
    eps * (-consts.m0 * t_final).exp()
}

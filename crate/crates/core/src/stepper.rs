//! One time step of the coupled system.
//!
//! The unknowns are the total density `n`, the autophagic fraction
//! `c = n2 / n` and the nutrient `d`. Summing the two species equations gives
//!
//! ```text
//! dt n = gamma/(gamma+1) Lap n^(gamma+1) + G(d) n - D c n
//! ```
//!
//! and dividing the autophagic equation by `n` gives a transport equation
//! for the fraction,
//!
//! ```text
//! dt c - grad p . grad c = K1(d)(1 - c) - K2(d) c - D c (1 - c),   p = n^gamma,
//! ```
//!
//! whose right side points into `[0, 1]` at both ends. A step solves the
//! density implicitly (Newton), transports the fraction explicitly with the
//! new pressure (upwind), and then solves the nutrient equation with the
//! consumption term lagged.
//!
//! The regularized scheme adds `eps Lap` to both species equations and passes
//! the nonlinear coefficients through the cutoff `theta_ell`. In terms of the
//! fraction the extra viscosity reads `eps (Lap(c n) - c Lap n) / n`.

use crate::error::{Error, Result};
use crate::grid::{self, Axis, Field, Grid};
use crate::linalg::{self, LinOp, TriDiag};
use crate::model::{cutoff, eval_rates, DerivedConstants, ModelParams, RateValues};

/// Floor for the density inside the Newton Jacobian, `max(n, floor)^gamma`.
pub const DEGENERACY_FLOOR: f64 = 1e-14;

/// Excursions of the nutrient outside `[0, L]` up to this multiple of
/// `max(L, 1)` are snapped back to the bounds; larger ones are left in place
/// for the invariant checks to report.
pub const NUTRIENT_CLAMP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    /// Total density.
    pub n: Field,
    /// Autophagic fraction `n2 / n`.
    pub c: Field,
    /// Nutrient concentration.
    pub d: Field,
}

impl State {
    pub fn grid(&self) -> &Grid {
        self.n.grid()
    }

    /// Normal cells, `(1 - c) n`.
    pub fn n1(&self) -> Field {
        self.n.zip_map(&self.c, |n, c| (1.0 - c) * n)
    }

    /// Autophagic cells, `c n`.
    pub fn n2(&self) -> Field {
        self.n.zip_map(&self.c, |n, c| c * n)
    }

    pub fn pressure(&self, gamma: f64) -> Field {
        self.n.map(|n| pos_pow(n, gamma))
    }

    /// `v = n^(gamma+1)`.
    pub fn potential(&self, gamma: f64) -> Field {
        self.n.map(|n| pos_pow(n, gamma + 1.0))
    }
}

pub(crate) fn pos_pow(x: f64, e: f64) -> f64 {
    if x > 0.0 {
        x.powf(e)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub safety: f64,
    pub newton_tol: f64,
    pub linear_tol: f64,
    pub max_iters: usize,
    pub linear_max_iters: usize,
    pub retry_max: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            safety: 0.5,
            newton_tol: 1e-10,
            linear_tol: 1e-10,
            max_iters: 50,
            linear_max_iters: 10_000,
            retry_max: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepReport {
    pub dt_used: f64,
    pub newton_iters: usize,
    pub newton_residual: f64,
    pub linear_iters: usize,
    /// Time step allowed by the CFL and reaction restrictions at the start of the step.
    pub cfl_limit: f64,
    /// Density cells floored at 0 plus nutrient cells snapped to `[0, L]`.
    pub clamped_cells: usize,
    /// Number of dt-halvings needed before the step succeeded.
    pub retries: usize,
    /// Cells where a cutoff changed its argument (regularized scheme only).
    pub cutoff_activations: usize,
    /// Largest nutrient excursion outside `[0, L]` left unclamped.
    pub nutrient_excursion: f64,
}

/// Which discrete system a step solves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    Plain,
    Regularized,
}

#[derive(Debug, Clone, Copy)]
enum Mode {
    Plain,
    Regularized { eps: f64, ell: f64 },
}

impl Mode {
    fn eps(self) -> f64 {
        match self {
            Mode::Plain => 0.0,
            Mode::Regularized { eps, .. } => eps,
        }
    }

    fn theta(self, s: f64) -> f64 {
        match self {
            Mode::Plain => s,
            Mode::Regularized { ell, .. } => cutoff(s, ell),
        }
    }

    /// `Phi(n)` with `Lap Phi(n)` the degenerate diffusion term.
    fn potential(self, n: f64, gamma: f64) -> f64 {
        let k = gamma / (gamma + 1.0);
        match self {
            Mode::Regularized { ell, .. } if n > ell => {
                k * ell.powf(gamma + 1.0) + gamma * ell.powf(gamma) * (n - ell)
            }
            _ => k * pos_pow(n, gamma + 1.0),
        }
    }

    /// `Phi'(n)` evaluated with the degeneracy floor.
    fn potential_slope(self, n: f64, gamma: f64) -> f64 {
        let m = match self {
            Mode::Regularized { ell, .. } => n.min(ell),
            Mode::Plain => n,
        };
        gamma * m.max(DEGENERACY_FLOOR).powf(gamma)
    }

    fn pressure(self, n: f64, gamma: f64) -> f64 {
        pos_pow(self.theta(n), gamma)
    }
}

/// Per-cell reaction `R(n)` for the density with frozen `c`, `d`, and its
/// derivative in `n`.
fn reaction(mode: Mode, rates: &RateValues, death: f64, c: f64, n: f64) -> (f64, f64) {
    let g = rates.growth;
    match mode {
        Mode::Plain => {
            let k = g - death * c;
            (k * n, k)
        }
        Mode::Regularized { ell, .. } => {
            let n1 = (1.0 - c) * n;
            let n2 = c * n;
            let d1 = if n1 > 0.0 && n1 < ell { 1.0 - c } else { 0.0 };
            let d2 = if n2 > 0.0 && n2 < ell { c } else { 0.0 };
            (
                g * cutoff(n1, ell) + (g - death) * cutoff(n2, ell),
                g * d1 + (g - death) * d2,
            )
        }
    }
}

/// `shift * x - scale * Lap_N x` on a grid, applied matrix-free.
struct ShiftedLaplacian<'a> {
    grid: &'a Grid,
    shift: Vec<f64>,
    scale: f64,
}

impl ShiftedLaplacian<'_> {
    fn axis_weight(&self, axis: Axis) -> f64 {
        let h = self.grid.spacing(axis);
        self.scale / (h * h)
    }

    fn tridiag(&self) -> TriDiag {
        let n = self.grid.len();
        let w = self.axis_weight(Axis::X);
        let lower = (0..n).map(|i| if i > 0 { -w } else { 0.0 }).collect();
        let upper = (0..n).map(|i| if i + 1 < n { -w } else { 0.0 }).collect();
        TriDiag::new(lower, self.diagonal(), upper)
    }

    fn solve(&self, rhs: &[f64], tol: f64, max_iters: usize) -> Result<(Vec<f64>, usize)> {
        if self.grid.dim() == 1 {
            Ok((linalg::thomas_solve(&self.tridiag(), rhs)?, 1))
        } else {
            let out = linalg::pcg_solve(self, rhs, tol, max_iters)?;
            Ok((out.solution, out.iterations))
        }
    }
}

impl LinOp for ShiftedLaplacian<'_> {
    fn dim(&self) -> usize {
        self.grid.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let wx = self.axis_weight(Axis::X);
        let wy = self.axis_weight(Axis::Y);
        for k in 0..self.grid.len() {
            let mut acc = self.shift[k] * x[k];
            self.grid.for_each_neighbor(k, |nb, axis| {
                let w = if axis == Axis::X { wx } else { wy };
                acc += w * (x[k] - x[nb]);
            });
            y[k] = acc;
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        let wx = self.axis_weight(Axis::X);
        let wy = self.axis_weight(Axis::Y);
        (0..self.grid.len())
            .map(|k| {
                let mut d = self.shift[k];
                self.grid.for_each_neighbor(k, |_, axis| {
                    d += if axis == Axis::X { wx } else { wy };
                });
                d
            })
            .collect()
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Result of the implicit density solve.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOutcome {
    pub n: Field,
    pub newton_iters: usize,
    pub newton_residual: f64,
    pub linear_iters: usize,
    pub clamped_cells: usize,
    pub cutoff_activations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NutrientOutcome {
    pub d: Field,
    pub linear_iters: usize,
    pub clamped_cells: usize,
    pub excursion: f64,
}

/// Advances states for one parameter set.
#[derive(Debug, Clone)]
pub struct Solver {
    params: ModelParams,
    consts: DerivedConstants,
    opts: SolverOptions,
}

impl Solver {
    pub fn new(params: ModelParams, consts: DerivedConstants, opts: SolverOptions) -> Self {
        Solver { params, consts, opts }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn consts(&self) -> &DerivedConstants {
        &self.consts
    }

    pub fn options(&self) -> &SolverOptions {
        &self.opts
    }

    fn mode(&self, scheme: Scheme) -> Result<Mode> {
        match scheme {
            Scheme::Plain => Ok(Mode::Plain),
            Scheme::Regularized if self.params.eps_reg > 0.0 => Ok(Mode::Regularized {
                eps: self.params.eps_reg,
                ell: self.params.ell_cut,
            }),
            Scheme::Regularized => Err(Error::Argument(
                "the regularized scheme needs eps_reg > 0; use the plain step for eps = 0".into(),
            )),
        }
    }

    fn rates_at(&self, mode: Mode, d: f64) -> Result<RateValues> {
        eval_rates(&self.params.rates, mode.theta(d))
    }

    pub fn suggest_dt(&self, s: &State) -> Result<f64> {
        self.suggest_dt_with(s, Scheme::Plain)
    }

    /// `safety * min(h / max|u|, 1 / (K1max + K2max + D))`, with
    /// `u = -grad n^gamma`, clipped to the remaining horizon. The regularized
    /// scheme also respects the explicit viscosity bound of the fraction update.
    pub fn suggest_dt_with(&self, s: &State, scheme: Scheme) -> Result<f64> {
        let mode = self.mode(scheme)?;
        let gamma = self.params.gamma;
        let grid = s.grid();
        let p = s.n.map(|n| mode.pressure(n, gamma));
        let umax = grid::face_gradient(&p).max_abs();
        if !umax.is_finite() {
            return Err(Error::Solver(format!("pressure gradient is not finite at t = {}", s.t)));
        }
        let mut dt = 1.0 / self.consts.reaction_rate_bound(self.params.death);
        if umax > 0.0 {
            dt = dt.min(grid.min_spacing() / umax);
        }
        if let Mode::Regularized { eps, .. } = mode {
            let rate = viscous_rates(grid, &s.n, eps).into_iter().fold(0.0, f64::max);
            if rate > 0.0 {
                dt = dt.min(1.0 / rate);
            }
        }
        dt *= self.opts.safety;
        Ok(dt.min(self.params.t_final - s.t))
    }

    /// Backward-Euler Newton solve for the new total density with `c` and
    /// `d` frozen at their values in `s`.
    pub fn density_solve(&self, s: &State, dt: f64, scheme: Scheme) -> Result<DensityOutcome> {
        let mode = self.mode(scheme)?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Argument(format!("time step must be positive, got {}", dt)));
        }
        let gamma = self.params.gamma;
        let death = self.params.death;
        let eps = mode.eps();
        let grid = *s.grid();
        let len = grid.len();
        let rates: Vec<RateValues> = s
            .d
            .values()
            .iter()
            .map(|&d| self.rates_at(mode, d))
            .collect::<Result<_>>()?;
        let n_old = s.n.values();
        let c = s.c.values();

        let residual = |n: &Field| -> Vec<f64> {
            let phi = n.map(|v| mode.potential(v, gamma));
            let diff = grid::laplacian_neumann(&phi);
            let visc = if eps > 0.0 { Some(grid::laplacian_neumann(n)) } else { None };
            (0..len)
                .map(|k| {
                    let (r, _) = reaction(mode, &rates[k], death, c[k], n[k]);
                    let mut rhs = diff[k] + r;
                    if let Some(v) = &visc {
                        rhs += eps * v[k];
                    }
                    n[k] - n_old[k] - dt * rhs
                })
                .collect()
        };

        let mut n = s.n.clone();
        let mut f = residual(&n);
        let mut fnorm = max_abs(&f);
        let mut linear_iters = 0;
        let mut iters = 0;
        loop {
            if iters >= self.opts.max_iters {
                return Err(Error::Solver(format!(
                    "Newton did not converge in {} iterations (residual {:.3e}, dt {:.3e})",
                    self.opts.max_iters, fnorm, dt
                )));
            }
            iters += 1;
            let slopes: Vec<f64> = n.values().iter().map(|&v| mode.potential_slope(v, gamma) + eps).collect();
            let dr: Vec<f64> = (0..len).map(|k| reaction(mode, &rates[k], death, c[k], n[k]).1).collect();
            let neg_f: Vec<f64> = f.iter().map(|v| -v).collect();
            let (delta, lin) = self.newton_direction(&grid, &slopes, &dr, dt, &neg_f)?;
            linear_iters += lin;

            let mut lambda = 1.0;
            let accepted = loop {
                let trial = Field::new(grid, (0..len).map(|k| n[k] + lambda * delta[k]).collect())?;
                let ft = residual(&trial);
                let tn = max_abs(&ft);
                if tn.is_finite() && (tn <= self.opts.newton_tol || tn <= (1.0 - 1e-4 * lambda) * fnorm) {
                    break Some((trial, ft, tn));
                }
                lambda *= 0.5;
                if lambda < 1.0 / 1024.0 {
                    break None;
                }
            };
            match accepted {
                Some((trial, ft, tn)) => {
                    n = trial;
                    f = ft;
                    fnorm = tn;
                }
                None => {
                    return Err(Error::Solver(format!(
                        "Newton line search failed (residual {:.3e}, dt {:.3e})",
                        fnorm, dt
                    )))
                }
            }
            if fnorm <= self.opts.newton_tol {
                break;
            }
        }

        let mut clamped = 0;
        for v in n.values_mut() {
            if *v < 0.0 {
                *v = 0.0;
                clamped += 1;
            }
        }
        let cutoff_activations = match mode {
            Mode::Regularized { ell, .. } => {
                n.values().iter().filter(|&&v| v > ell).count()
                    + s.d.values().iter().filter(|&&v| v > ell).count()
            }
            Mode::Plain => 0,
        };
        Ok(DensityOutcome {
            n,
            newton_iters: iters,
            newton_residual: fnorm,
            linear_iters,
            clamped_cells: clamped,
            cutoff_activations,
        })
    }

    /// Solves `J delta = rhs` with `J = I - dt (Lap_N diag(slopes) + diag(dr))`.
    fn newton_direction(
        &self,
        grid: &Grid,
        slopes: &[f64],
        dr: &[f64],
        dt: f64,
        rhs: &[f64],
    ) -> Result<(Vec<f64>, usize)> {
        let len = grid.len();
        if grid.dim() == 1 {
            let w = dt / (grid.h()[0] * grid.h()[0]);
            let mut lower = vec![0.0; len];
            let mut upper = vec![0.0; len];
            let mut diag = vec![0.0; len];
            for i in 0..len {
                let nb = usize::from(i > 0) + usize::from(i + 1 < len);
                diag[i] = 1.0 - dt * dr[i] + w * nb as f64 * slopes[i];
                if i > 0 {
                    lower[i] = -w * slopes[i - 1];
                }
                if i + 1 < len {
                    upper[i] = -w * slopes[i + 1];
                }
            }
            let delta = linalg::thomas_solve(&TriDiag::new(lower, diag, upper), rhs)?;
            Ok((delta, 1))
        } else {
            // Symmetrize with y = slopes * delta:
            // (diag((1 - dt dr) / slopes) - dt Lap_N) y = rhs.
            let mut shift = Vec::with_capacity(len);
            for k in 0..len {
                let a = 1.0 - dt * dr[k];
                if a <= 0.0 {
                    return Err(Error::Solver(format!(
                        "reaction term makes the Newton system indefinite (1 - dt R' = {:.3e})",
                        a
                    )));
                }
                shift.push(a / slopes[k].max(1e-300));
            }
            let op = ShiftedLaplacian { grid, shift, scale: dt };
            // Residual reduction relative to the Newton tolerance, so the
            // linear error never dominates the nonlinear one.
            let tol = (self.opts.linear_tol).min(1e-3);
            let (y, iters) = op.solve(rhs, tol, self.opts.linear_max_iters)?;
            let delta = y.iter().zip(slopes).map(|(y, s)| y / s.max(1e-300)).collect();
            Ok((delta, iters))
        }
    }

    /// Explicit upwind transport of the fraction by `u = -grad p(n_new)`
    /// followed by an explicit Euler step of its reaction.
    pub fn fraction_update(&self, s: &State, n_new: &Field, dt: f64, scheme: Scheme) -> Result<Field> {
        let mode = self.mode(scheme)?;
        let gamma = self.params.gamma;
        let death = self.params.death;
        let grid = *s.grid();
        let len = grid.len();
        let c = &s.c;
        let p = n_new.map(|n| mode.pressure(n, gamma));
        let grad_p = grid::face_gradient(&p);

        let mut adv = vec![0.0; len];
        let mut rate = vec![0.0; len];
        for (face, g) in grad_p.iter() {
            let u = -g;
            let h = grid.spacing(face.axis);
            let (l, r) = grid.face_cells(face);
            let cf = grid::upwind_face_value(c, u, face);
            adv[l] += u * (cf - c[l]) / h;
            adv[r] += u * (c[r] - cf) / h;
            rate[l] += (-u).max(0.0) / h;
            rate[r] += u.max(0.0) / h;
        }
        let mut visc = vec![0.0; len];
        if let Mode::Regularized { eps, .. } = mode {
            let vr = viscous_rates(&grid, n_new, eps);
            for k in 0..len {
                rate[k] += vr[k];
                if n_new[k] > 0.0 {
                    let mut acc = 0.0;
                    grid.for_each_neighbor(k, |nb, axis| {
                        let h = grid.spacing(axis);
                        acc += n_new[nb] * (c[nb] - c[k]) / (h * h);
                    });
                    visc[k] = eps * acc / n_new[k];
                }
            }
        }

        let mut out = Vec::with_capacity(len);
        for k in 0..len {
            let r = self.rates_at(mode, s.d[k])?;
            let transit = r.k1 + r.k2 + death;
            if dt * rate[k] > 1.0 + 1e-12 || dt * transit >= 1.0 {
                return Err(Error::Solver(format!(
                    "CFL restriction violated in cell {} (dt {:.3e}, transport rate {:.3e}, reaction rate {:.3e})",
                    k, dt, rate[k], transit
                )));
            }
            let cs = c[k] - dt * adv[k] + dt * visc[k];
            let react = r.k1 * (1.0 - cs) - r.k2 * cs - death * cs * (1.0 - cs);
            out.push(cs + dt * react);
        }
        Field::new(grid, out)
    }

    /// Linear Helmholtz solve for the nutrient with the consumption lagged.
    pub fn nutrient_solve(
        &self,
        s: &State,
        n_new: &Field,
        c_new: &Field,
        dt: f64,
        scheme: Scheme,
    ) -> Result<NutrientOutcome> {
        let mode = self.mode(scheme)?;
        let grid = *s.grid();
        let len = grid.len();
        let b = self.params.relax;
        let a = self.params.supply;
        let db = self.params.d_b;
        let [hx, hy] = grid.h();
        let mut shift = Vec::with_capacity(len);
        let mut rhs = Vec::with_capacity(len);
        for k in 0..len {
            let [bx, by] = grid.boundary_faces_per_axis(k);
            let boundary = 2.0 * (bx as f64 / (hx * hx) + by as f64 / (hy * hy));
            let d_old = s.d[k];
            let n = n_new[k];
            let c = c_new[k];
            let source = match mode {
                Mode::Plain => -self.params.rates.psi.eval(d_old) * n + a * c * n,
                Mode::Regularized { .. } => {
                    let psi = self.params.rates.psi.eval(mode.theta(d_old));
                    -(psi - a) * mode.theta(n) - a * mode.theta((1.0 - c) * n)
                }
            };
            if !source.is_finite() {
                return Err(Error::Solver(format!("nutrient source not finite in cell {}", k)));
            }
            shift.push(b / dt + boundary);
            rhs.push(b / dt * d_old + boundary * db + source);
        }
        let op = ShiftedLaplacian { grid: &grid, shift, scale: 1.0 };
        let (mut d, iters) = op.solve(&rhs, self.opts.linear_tol, self.opts.linear_max_iters)?;

        let ceiling = self.consts.nutrient_ceiling;
        let tol = NUTRIENT_CLAMP_TOL * ceiling.max(1.0);
        let mut clamped = 0;
        let mut excursion = 0.0_f64;
        for v in d.iter_mut() {
            if *v < 0.0 {
                if -*v <= tol {
                    *v = 0.0;
                    clamped += 1;
                } else {
                    excursion = excursion.max(-*v);
                }
            } else if *v > ceiling {
                if *v - ceiling <= tol {
                    *v = ceiling;
                    clamped += 1;
                } else {
                    excursion = excursion.max(*v - ceiling);
                }
            }
        }
        Ok(NutrientOutcome {
            d: Field::new(grid, d)?,
            linear_iters: iters,
            clamped_cells: clamped,
            excursion,
        })
    }

    /// Advances one step with `dt = min(dt_hint, suggest_dt)`, halving on
    /// solver failure up to `retry_max` times.
    pub fn step(&self, s: &State, dt_hint: f64) -> Result<(State, StepReport)> {
        self.step_with(s, dt_hint, Scheme::Plain)
    }

    /// Like [`Solver::step`] for the regularized system; requires `eps_reg > 0`.
    pub fn regularized_step(&self, s: &State, dt: f64) -> Result<(State, StepReport)> {
        self.step_with(s, dt, Scheme::Regularized)
    }

    pub fn step_with(&self, s: &State, dt_hint: f64, scheme: Scheme) -> Result<(State, StepReport)> {
        self.mode(scheme)?;
        let limit = self.suggest_dt_with(s, scheme)?;
        let mut dt = dt_hint.min(limit);
        if !(dt > 0.0) {
            return Err(Error::Argument(format!(
                "no time left to step: t = {}, T_final = {}",
                s.t, self.params.t_final
            )));
        }
        let mut last = String::new();
        for attempt in 0..=self.opts.retry_max {
            match self.try_step(s, dt, scheme) {
                Ok((state, mut report)) => {
                    report.retries = attempt;
                    report.cfl_limit = limit;
                    return Ok((state, report));
                }
                Err(Error::Solver(msg)) => {
                    log::debug!("step at t = {} failed with dt = {}: {}", s.t, dt, msg);
                    last = msg;
                    dt *= 0.5;
                }
                Err(e) => return Err(e),
            }
        }
        Err(Error::Solver(format!(
            "step at t = {} failed after {} dt-halvings: {}",
            s.t, self.opts.retry_max, last
        )))
    }

    fn try_step(&self, s: &State, dt: f64, scheme: Scheme) -> Result<(State, StepReport)> {
        let dens = self.density_solve(s, dt, scheme)?;
        let c_new = self.fraction_update(s, &dens.n, dt, scheme)?;
        let nut = self.nutrient_solve(s, &dens.n, &c_new, dt, scheme)?;
        let t = if dt >= self.params.t_final - s.t {
            self.params.t_final
        } else {
            s.t + dt
        };
        let state = State {
            t,
            n: dens.n,
            c: c_new,
            d: nut.d,
        };
        let finite = [&state.n, &state.c, &state.d]
            .iter()
            .all(|f| f.values().iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::Solver(format!("non-finite values after step to t = {}", t)));
        }
        let report = StepReport {
            dt_used: dt,
            newton_iters: dens.newton_iters,
            newton_residual: dens.newton_residual,
            linear_iters: dens.linear_iters + nut.linear_iters,
            cfl_limit: 0.0,
            clamped_cells: dens.clamped_cells + nut.clamped_cells,
            retries: 0,
            cutoff_activations: dens.cutoff_activations,
            nutrient_excursion: nut.excursion,
        };
        Ok((state, report))
    }
}

/// Per-cell rate `eps * sum_j n_j / (h^2 n_k)` of the explicit fraction
/// viscosity; zero in empty cells.
fn viscous_rates(grid: &Grid, n: &Field, eps: f64) -> Vec<f64> {
    (0..grid.len())
        .map(|k| {
            if n[k] <= 0.0 {
                return 0.0;
            }
            let mut acc = 0.0;
            grid.for_each_neighbor(k, |nb, axis| {
                let h = grid.spacing(axis);
                acc += n[nb] / (h * h);
            });
            eps * acc / n[k]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{derive_constants, Preset, RateFunctions};
    use approx::assert_abs_diff_eq;

    fn zero_rates() -> RateFunctions {
        RateFunctions {
            growth: Preset::Constant { value: 0.0 },
            k1: Preset::Constant { value: 0.0 },
            k2: Preset::Constant { value: 0.0 },
            psi: Preset::Linear { alpha: 1.0 },
        }
    }

    fn params(rates: RateFunctions) -> ModelParams {
        ModelParams {
            rates,
            death: 1.0,
            supply: 1.0,
            relax: 1.0,
            gamma: 3.0,
            eps_reg: 0.0,
            ell_cut: 10.0,
            d_b: 1.0,
            t_final: 1.0,
        }
    }

    fn solver(p: ModelParams, d0: &Field) -> Solver {
        let consts = derive_constants(&p, d0).unwrap();
        Solver::new(p, consts, SolverOptions::default())
    }

    fn state(grid: Grid, n: Vec<f64>, c: f64, d: f64) -> State {
        State {
            t: 0.0,
            n: Field::new(grid, n).unwrap(),
            c: Field::constant(grid, c),
            d: Field::constant(grid, d),
        }
    }

    #[test]
    fn reaction_only_time_step() {
        // K1 + K2 + D = 4 with no transport.
        let g = Grid::interval(0.0, 1.0, 5).unwrap();
        let mut rates = zero_rates();
        rates.k1 = Preset::Constant { value: 1.5 };
        rates.k2 = Preset::Constant { value: 0.5 };
        let mut p = params(rates);
        p.death = 2.0;
        let s = state(g, vec![0.7; 5], 0.2, 1.0);
        let solver = solver(p, &s.d);
        assert_abs_diff_eq!(solver.suggest_dt(&s).unwrap(), 0.125, epsilon = 1e-15);
    }

    #[test]
    fn time_step_is_clipped_to_horizon() {
        let g = Grid::interval(0.0, 1.0, 5).unwrap();
        let mut s = state(g, vec![0.7; 5], 0.2, 1.0);
        s.t = 1.0 - 1e-9;
        let solver = solver(params(zero_rates()), &s.d);
        assert_abs_diff_eq!(solver.suggest_dt(&s).unwrap(), 1e-9, epsilon = 1e-15);
    }

    #[test]
    fn transport_limited_time_step() {
        // p = n^gamma jumps by 0.2 across one face of width 0.1: |u| = 2.
        let g = Grid::interval(0.0, 0.3, 3).unwrap();
        let mut p = params(zero_rates());
        p.gamma = 1.0;
        p.death = 1e-6;
        let s = state(g, vec![0.5, 0.5, 0.7], 0.0, 1.0);
        let mut solver = solver(p, &s.d);
        solver.opts.safety = 0.9;
        assert_abs_diff_eq!(solver.suggest_dt(&s).unwrap(), 0.045, epsilon = 1e-12);
    }

    #[test]
    fn uniform_density_is_a_fixed_point() {
        let g = Grid::interval(0.0, 1.0, 8).unwrap();
        let s = state(g, vec![0.6; 8], 0.0, 1.0);
        let solver = solver(params(zero_rates()), &s.d);
        let out = solver.density_solve(&s, 0.05, Scheme::Plain).unwrap();
        assert_eq!(out.n, s.n);
        assert_eq!(out.newton_iters, 1);
    }

    #[test]
    fn scalar_growth_matches_backward_euler() {
        // One cell: no diffusion, n' = g n.
        let g = Grid::interval(0.0, 1.0, 1).unwrap();
        let mut rates = zero_rates();
        rates.growth = Preset::Constant { value: 0.8 };
        let s = state(g, vec![0.3], 0.0, 1.0);
        let solver = solver(params(rates), &s.d);
        let dt = 0.1;
        let out = solver.density_solve(&s, dt, Scheme::Plain).unwrap();
        assert_abs_diff_eq!(out.n[0], 0.3 / (1.0 - 0.8 * dt), epsilon = 1e-12);
    }

    #[test]
    fn implicit_diffusion_conserves_mass() {
        let g = Grid::interval(0.0, 2.0, 40).unwrap();
        let n: Vec<f64> = (0..40).map(|k| if k < 12 { 1.2 } else { 0.05 }).collect();
        let s = state(g, n, 0.0, 1.0);
        let solver = solver(params(zero_rates()), &s.d);
        let out = solver.density_solve(&s, 0.01, Scheme::Plain).unwrap();
        let m0 = grid::integrate(&s.n);
        let m1 = grid::integrate(&out.n);
        assert!(((m1 - m0) / m0).abs() <= 1e-12, "{} vs {}", m0, m1);
        assert!(out.newton_residual <= 1e-10);
    }

    #[test]
    fn two_dimensional_density_solve_conserves_mass() {
        let g = Grid::rectangle([0.0, 0.0], [1.0, 1.0], [12, 10]).unwrap();
        let n = Field::from_fn(g, |[x, y]| if (x - 0.5).powi(2) + (y - 0.5).powi(2) < 0.06 { 1.1 } else { 0.02 });
        let s = State {
            t: 0.0,
            n,
            c: Field::constant(g, 0.0),
            d: Field::constant(g, 1.0),
        };
        let solver = solver(params(zero_rates()), &s.d);
        let out = solver.density_solve(&s, 0.005, Scheme::Plain).unwrap();
        let m0 = grid::integrate(&s.n);
        assert!(((grid::integrate(&out.n) - m0) / m0).abs() < 1e-10);
    }

    #[test]
    fn fraction_endpoints_are_invariant() {
        let g = Grid::interval(0.0, 1.0, 10).unwrap();
        let n_new = Field::from_fn(g, |[x, _]| 0.2 + x);
        let mut rates = zero_rates();
        rates.k2 = Preset::Constant { value: 0.7 };
        let s = state(g, vec![0.5; 10], 0.0, 1.0);
        let solver_a = solver(params(rates), &s.d);
        let c = solver_a.fraction_update(&s, &n_new, 0.01, Scheme::Plain).unwrap();
        assert!(c.values().iter().all(|&v| v == 0.0));

        let mut rates = zero_rates();
        rates.k1 = Preset::Constant { value: 0.7 };
        let mut p = params(rates);
        p.death = 1e-9;
        let s = state(g, vec![0.5; 10], 1.0, 1.0);
        let solver_b = solver(p.clone(), &s.d);
        let c = solver_b.fraction_update(&s, &n_new, 0.01, Scheme::Plain).unwrap();
        // K2 = 0 and D c (1 - c) = 0 at c = 1.
        assert!(c.values().iter().all(|&v| (v - 1.0).abs() <= 1e-15));
    }

    #[test]
    fn fraction_reaction_matches_scalar_ode() {
        // c' = 1 - 2c with c(0) = 0.
        let g = Grid::interval(0.0, 1.0, 1).unwrap();
        let mut rates = zero_rates();
        rates.k1 = Preset::Constant { value: 1.0 };
        rates.k2 = Preset::Constant { value: 1.0 };
        let mut p = params(rates);
        p.death = 1e-300;
        let mut s = state(g, vec![0.5], 0.0, 1.0);
        let solver = solver(p, &s.d);
        let dt = 0.1;
        s.c = solver.fraction_update(&s, &s.n, dt, Scheme::Plain).unwrap();
        assert_abs_diff_eq!(s.c[0], 0.1, epsilon = 1e-12);

        let dt = 1e-3;
        let mut c = Field::constant(g, 0.0);
        for _ in 0..1000 {
            let st = State { c: c.clone(), ..s.clone() };
            c = solver.fraction_update(&st, &st.n, dt, Scheme::Plain).unwrap();
        }
        let exact = (1.0 - (-2.0f64).exp()) / 2.0;
        assert!((c[0] - exact).abs() < 1e-3, "{} vs {}", c[0], exact);
    }

    #[test]
    fn cfl_violation_is_a_solver_failure() {
        let g = Grid::interval(0.0, 0.3, 3).unwrap();
        let s = state(g, vec![0.1, 0.1, 2.0], 0.5, 1.0);
        let solver = solver(params(zero_rates()), &s.d);
        let err = solver.fraction_update(&s, &s.n, 10.0, Scheme::Plain).unwrap_err();
        assert!(matches!(err, Error::Solver(_)));
    }

    #[test]
    fn nutrient_steady_state_and_relaxation() {
        let g = Grid::interval(0.0, 1.0, 20).unwrap();
        let s = state(g, vec![0.0; 20], 0.0, 1.0);
        let solver = solver(params(zero_rates()), &s.d);
        let out = solver.nutrient_solve(&s, &s.n, &s.c, 0.1, Scheme::Plain).unwrap();
        for v in out.d.values() {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-12);
        }

        let s = state(g, vec![0.0; 20], 0.0, 0.2);
        let out = solver.nutrient_solve(&s, &s.n, &s.c, 0.1, Scheme::Plain).unwrap();
        assert!(out.d.values().iter().all(|&v| v > 0.2 && v < 1.0));
    }

    #[test]
    fn nutrient_scalar_backward_euler() {
        // A single cell whose boundary faces are so far away that diffusion
        // does not contribute: d_new = d_old - dt * psi(d_old) n / b.
        let g = Grid::interval(0.0, 1e8, 1).unwrap();
        let s = state(g, vec![1.0], 0.0, 1.0);
        let solver = solver(params(zero_rates()), &s.d);
        let out = solver.nutrient_solve(&s, &s.n, &s.c, 0.1, Scheme::Plain).unwrap();
        assert_abs_diff_eq!(out.d[0], 0.9, epsilon = 1e-12);
    }

    #[test]
    fn zero_physics_step_only_advances_time() {
        // No growth, death or transitions; consumption psi(d) n balances the
        // supply a c n at c = d = d_b = 0.4.
        let g = Grid::interval(0.0, 1.0, 10).unwrap();
        let mut p = params(zero_rates());
        p.death = 0.0;
        p.d_b = 0.4;
        let s = state(g, vec![0.8; 10], 0.4, 0.4);
        let solver = solver(p, &s.d);
        let (next, report) = solver.step(&s, f64::INFINITY).unwrap();
        assert!(next.t > 0.0);
        assert_eq!(next.n, s.n);
        for k in 0..10 {
            assert_abs_diff_eq!(next.c[k], 0.4, epsilon = 1e-14);
            assert_abs_diff_eq!(next.d[k], 0.4, epsilon = 1e-12);
        }
        assert_eq!(report.retries, 0);
    }

    #[test]
    fn regularized_requires_positive_eps() {
        let g = Grid::interval(0.0, 1.0, 4).unwrap();
        let s = state(g, vec![0.5; 4], 0.0, 1.0);
        let solver = solver(params(zero_rates()), &s.d);
        assert!(matches!(solver.regularized_step(&s, 0.1), Err(Error::Argument(_))));
    }

    #[test]
    fn regularized_step_conserves_mass_without_reactions() {
        let g = Grid::interval(0.0, 1.0, 30).unwrap();
        let n: Vec<f64> = (0..30).map(|k| if k < 10 { 1.0 } else { 0.01 }).collect();
        let mut p = params(zero_rates());
        p.eps_reg = 0.01;
        p.death = 0.0;
        let s = state(g, n, 0.3, 1.0);
        let solver = solver(p, &s.d);
        let (next, report) = solver.regularized_step(&s, f64::INFINITY).unwrap();
        let m0 = grid::integrate(&s.n);
        assert!(((grid::integrate(&next.n) - m0) / m0).abs() < 1e-12);
        assert_eq!(report.cutoff_activations, 0);
        assert!(next.c.values().iter().all(|&c| (0.0..=1.0).contains(&c)));
    }

    #[test]
    fn cutoff_activations_are_counted() {
        let g = Grid::interval(0.0, 1.0, 10).unwrap();
        let mut p = params(zero_rates());
        p.eps_reg = 0.01;
        p.ell_cut = 0.5;
        let s = state(g, vec![0.9; 10], 0.0, 0.3);
        let solver = solver(p, &s.d);
        let (_, report) = solver.regularized_step(&s, f64::INFINITY).unwrap();
        assert!(report.cutoff_activations > 0);
    }
}

//! Deterministic linear solvers for the implicit sub-steps.

use crate::error::{Error, Result};

/// Tridiagonal matrix stored by diagonals. `lower[i]` multiplies `x[i - 1]`
/// in row `i` (so `lower[0]` is unused) and `upper[i]` multiplies `x[i + 1]`
/// (so `upper[n - 1]` is unused).
#[derive(Debug, Clone, PartialEq)]
pub struct TriDiag {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl TriDiag {
    pub fn new(lower: Vec<f64>, diag: Vec<f64>, upper: Vec<f64>) -> Self {
        assert!(lower.len() == diag.len() && upper.len() == diag.len());
        TriDiag { lower, diag, upper }
    }

    pub fn identity(n: usize) -> Self {
        TriDiag::new(vec![0.0; n], vec![1.0; n], vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Weak row diagonal dominance.
    pub fn is_diagonally_dominant(&self) -> bool {
        let n = self.len();
        (0..n).all(|i| {
            let off = if i > 0 { self.lower[i].abs() } else { 0.0 }
                + if i + 1 < n { self.upper[i].abs() } else { 0.0 };
            self.diag[i].abs() >= off
        })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut v = self.diag[i] * x[i];
                if i > 0 {
                    v += self.lower[i] * x[i - 1];
                }
                if i + 1 < n {
                    v += self.upper[i] * x[i + 1];
                }
                v
            })
            .collect()
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Thomas algorithm. Fails on a zero (or non-finite) pivot.
pub fn thomas_solve(m: &TriDiag, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = m.len();
    if rhs.len() != n {
        return Err(Error::Argument(format!(
            "rhs has length {} but matrix has {} rows",
            rhs.len(),
            n
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut pivot = m.diag[0];
    if pivot == 0.0 || !pivot.is_finite() {
        return Err(Error::Solver("zero pivot in tridiagonal solve at row 0".into()));
    }
    c[0] = if n > 1 { m.upper[0] / pivot } else { 0.0 };
    d[0] = rhs[0] / pivot;
    for i in 1..n {
        pivot = m.diag[i] - m.lower[i] * c[i - 1];
        if pivot == 0.0 || !pivot.is_finite() {
            return Err(Error::Solver(format!("zero pivot in tridiagonal solve at row {}", i)));
        }
        c[i] = if i + 1 < n { m.upper[i] / pivot } else { 0.0 };
        d[i] = (rhs[i] - m.lower[i] * d[i - 1]) / pivot;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Ok(x)
}

/// Max-norm residual of `m x = rhs` relative to `max|rhs| + max|x|`.
pub fn thomas_residual(m: &TriDiag, x: &[f64], rhs: &[f64]) -> f64 {
    let ax = m.apply(x);
    let r = ax.iter().zip(rhs).fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()));
    let scale = max_abs(rhs) + max_abs(x);
    if scale == 0.0 {
        r
    } else {
        r / scale
    }
}

/// A deterministic matrix-free linear operator.
pub trait LinOp {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn diagonal(&self) -> Vec<f64>;
}

/// Relative defect `|<Ax, y> - <x, Ay>| / (|<Ax, y>| + |<x, Ay>|)` for one
/// probe pair. Symmetric operators give values near rounding level.
pub fn symmetry_defect(op: &dyn LinOp, x: &[f64], y: &[f64]) -> f64 {
    let n = op.dim();
    let mut ax = vec![0.0; n];
    let mut ay = vec![0.0; n];
    op.apply(x, &mut ax);
    op.apply(y, &mut ay);
    let a = dot(&ax, y);
    let b = dot(x, &ay);
    let scale = a.abs() + b.abs();
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Pairwise (tree) summation of `x[i] * y[i]` with a fixed split order.
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    const LEAF: usize = 32;
    debug_assert_eq!(x.len(), y.len());
    if x.len() <= LEAF {
        return x.iter().zip(y).fold(0.0, |acc, (a, b)| acc + a * b);
    }
    let mid = x.len() / 2;
    dot(&x[..mid], &y[..mid]) + dot(&x[mid..], &y[mid..])
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcgOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// Final `||r|| / ||b||` in the Euclidean norm.
    pub relative_residual: f64,
    /// `sqrt(r . M^{-1} r)` after each iteration, starting with the initial residual.
    pub preconditioned_residuals: Vec<f64>,
}

/// Conjugate gradients with Jacobi preconditioning from a zero initial guess.
pub fn pcg_solve(op: &dyn LinOp, rhs: &[f64], tol: f64, max_iters: usize) -> Result<PcgOutcome> {
    let n = op.dim();
    if rhs.len() != n {
        return Err(Error::Argument(format!(
            "rhs has length {} but operator has dimension {}",
            rhs.len(),
            n
        )));
    }
    let diag = op.diagonal();
    if let Some(k) = diag.iter().position(|d| !(*d > 0.0 && d.is_finite())) {
        return Err(Error::Solver(format!(
            "Jacobi preconditioner needs a positive diagonal (entry {} is {})",
            k, diag[k]
        )));
    }
    let b_norm = dot(rhs, rhs).sqrt();
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(PcgOutcome {
            solution: x,
            iterations: 0,
            relative_residual: 0.0,
            preconditioned_residuals: vec![0.0],
        });
    }
    let mut r = rhs.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut history = vec![rz.max(0.0).sqrt()];
    let mut rel = 1.0;
    for it in 1..=max_iters {
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0 && pap.is_finite()) {
            return Err(Error::Solver(format!(
                "conjugate gradient breakdown (p.Ap = {}) at iteration {}",
                pap, it
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rel = dot(&r, &r).sqrt() / b_norm;
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        history.push(rz_new.max(0.0).sqrt());
        if rel <= tol {
            return Ok(PcgOutcome {
                solution: x,
                iterations: it,
                relative_residual: rel,
                preconditioned_residuals: history,
            });
        }
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Solver(format!(
        "conjugate gradient stagnated after {} iterations (relative residual {:.3e})",
        max_iters, rel
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Dense {
        n: usize,
        a: Vec<f64>,
    }

    impl LinOp for Dense {
        fn dim(&self) -> usize {
            self.n
        }
        fn apply(&self, x: &[f64], y: &mut [f64]) {
            for i in 0..self.n {
                y[i] = (0..self.n).map(|j| self.a[i * self.n + j] * x[j]).sum();
            }
        }
        fn diagonal(&self) -> Vec<f64> {
            (0..self.n).map(|i| self.a[i * self.n + i]).collect()
        }
    }

    /// `(I - dt Lap)` on an `nx x ny` grid with Neumann ends, spacing `h`.
    struct Helmholtz2d {
        nx: usize,
        ny: usize,
        h: f64,
        dt: f64,
    }

    impl LinOp for Helmholtz2d {
        fn dim(&self) -> usize {
            self.nx * self.ny
        }
        fn apply(&self, x: &[f64], y: &mut [f64]) {
            let c = self.dt / (self.h * self.h);
            for j in 0..self.ny {
                for i in 0..self.nx {
                    let k = i + self.nx * j;
                    let mut acc = x[k];
                    for (ok, nb) in [
                        (i > 0, k.wrapping_sub(1)),
                        (i + 1 < self.nx, k + 1),
                        (j > 0, k.wrapping_sub(self.nx)),
                        (j + 1 < self.ny, k + self.nx),
                    ] {
                        if ok {
                            acc += c * (x[k] - x[nb]);
                        }
                    }
                    y[k] = acc;
                }
            }
        }
        fn diagonal(&self) -> Vec<f64> {
            let c = self.dt / (self.h * self.h);
            (0..self.dim())
                .map(|k| {
                    let (i, j) = (k % self.nx, k / self.nx);
                    let nb = usize::from(i > 0)
                        + usize::from(i + 1 < self.nx)
                        + usize::from(j > 0)
                        + usize::from(j + 1 < self.ny);
                    1.0 + c * nb as f64
                })
                .collect()
        }
    }

    #[test]
    fn thomas_identity_returns_rhs() {
        let rhs = vec![1.0, -2.0, 3.5];
        assert_eq!(thomas_solve(&TriDiag::identity(3), &rhs).unwrap(), rhs);
    }

    #[test]
    fn thomas_two_by_two() {
        let m = TriDiag::new(vec![0.0, 1.0], vec![2.0, 2.0], vec![1.0, 0.0]);
        let x = thomas_solve(&m, &[3.0, 3.0]).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(x[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn thomas_random_dominant_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100;
        let lower: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let upper: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let diag: Vec<f64> = (0..n)
            .map(|i| lower[i].abs() + upper[i].abs() + rng.gen_range(0.1..2.0))
            .collect();
        let m = TriDiag::new(lower, diag, upper);
        assert!(m.is_diagonally_dominant());
        let rhs: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let x = thomas_solve(&m, &rhs).unwrap();
        assert!(thomas_residual(&m, &x, &rhs) <= 1e-12);
    }

    #[test]
    fn thomas_zero_pivot_fails() {
        let m = TriDiag::new(vec![0.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]);
        assert!(matches!(thomas_solve(&m, &[1.0, 1.0]), Err(Error::Solver(_))));
    }

    #[test]
    fn pcg_zero_rhs_and_identity() {
        let id = Dense { n: 4, a: vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0] };
        let out = pcg_solve(&id, &[0.0; 4], 1e-12, 10).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.solution, vec![0.0; 4]);
        let rhs = [1.0, 2.0, -3.0, 0.5];
        let out = pcg_solve(&id, &rhs, 1e-12, 10).unwrap();
        assert!(out.iterations <= 1);
        assert_eq!(out.solution, rhs.to_vec());
    }

    #[test]
    fn pcg_stagnation_is_reported() {
        let op = Helmholtz2d { nx: 32, ny: 32, h: 1.0 / 32.0, dt: 1.0 };
        let rhs: Vec<f64> = (0..op.dim()).map(|k| ((k * 37) % 11) as f64 - 5.0).collect();
        assert!(matches!(pcg_solve(&op, &rhs, 1e-14, 3), Err(Error::Solver(_))));
    }

    #[test]
    fn pcg_matches_thomas_on_separable_problem() {
        let n = 64;
        let h = 1.0 / n as f64;
        let dt = 0.01;
        let op = Helmholtz2d { nx: n, ny: n, h, dt };
        // rhs depends on x only, so every row of the 2D solution solves the
        // same 1D Neumann problem.
        let f = |i: usize| (std::f64::consts::PI * (i as f64 + 0.5) * h).cos() + 2.0;
        let rhs: Vec<f64> = (0..n * n).map(|k| f(k % n)).collect();
        let out = pcg_solve(&op, &rhs, 1e-12, 2000).unwrap();

        let c = dt / (h * h);
        let lower: Vec<f64> = (0..n).map(|i| if i > 0 { -c } else { 0.0 }).collect();
        let upper: Vec<f64> = (0..n).map(|i| if i + 1 < n { -c } else { 0.0 }).collect();
        let diag: Vec<f64> = (0..n)
            .map(|i| 1.0 + c * (usize::from(i > 0) + usize::from(i + 1 < n)) as f64)
            .collect();
        let line = thomas_solve(&TriDiag::new(lower, diag, upper), &(0..n).map(f).collect::<Vec<_>>()).unwrap();
        for j in 0..n {
            for i in 0..n {
                assert_abs_diff_eq!(out.solution[i + n * j], line[i], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn pcg_is_deterministic_and_decreases_energy_error() {
        let op = Helmholtz2d { nx: 20, ny: 20, h: 0.05, dt: 0.02 };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let exact: Vec<f64> = (0..op.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut rhs = vec![0.0; op.dim()];
        op.apply(&exact, &mut rhs);
        let a = pcg_solve(&op, &rhs, 1e-12, 1000).unwrap();
        let b = pcg_solve(&op, &rhs, 1e-12, 1000).unwrap();
        assert_eq!(a, b);

        // CG minimizes the A-norm of the error over growing Krylov spaces,
        // so the energy error is nonincreasing in the iteration count.
        let mut last = f64::INFINITY;
        for iters in 1..a.iterations {
            let x = truncated(&op, &rhs, iters);
            let e: Vec<f64> = x.iter().zip(&exact).map(|(x, e)| x - e).collect();
            let mut ae = vec![0.0; op.dim()];
            op.apply(&e, &mut ae);
            let energy = dot(&e, &ae).sqrt();
            assert!(energy <= last * (1.0 + 1e-12), "iteration {}: {} > {}", iters, energy, last);
            last = energy;
        }
    }

    fn truncated(op: &dyn LinOp, rhs: &[f64], iters: usize) -> Vec<f64> {
        // Same recurrence as pcg_solve, stopped after `iters` updates.
        let n = op.dim();
        let diag = op.diagonal();
        let mut x = vec![0.0; n];
        let mut r = rhs.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut ap = vec![0.0; n];
        for _ in 0..iters {
            op.apply(&p, &mut ap);
            let alpha = rz / dot(&p, &ap);
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
                z[i] = r[i] / diag[i];
            }
            let rz_new = dot(&r, &z);
            for i in 0..n {
                p[i] = z[i] + rz_new / rz * p[i];
            }
            rz = rz_new;
        }
        x
    }

    #[test]
    fn symmetry_probe() {
        let op = Helmholtz2d { nx: 9, ny: 7, h: 0.1, dt: 0.3 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..op.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..op.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        assert!(symmetry_defect(&op, &x, &y) < 1e-10);
        let skew = Dense { n: 2, a: vec![1.0, 2.0, 0.0, 1.0] };
        assert!(symmetry_defect(&skew, &[1.0, 0.0], &[0.0, 1.0]) > 0.1);
    }
}

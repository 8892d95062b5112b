//! Independent dense re-implementation of one plain step in 1D, used as an
//! oracle for the production solver.

#![allow(dead_code)]

use hele_shaw::model::ModelParams;

pub struct Plain1d {
    pub n: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
}

/// Dense Gaussian elimination with partial pivoting.
pub fn gauss(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let m = b.len();
    for col in 0..m {
        let piv = (col..m)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..m {
            let f = a[row][col] / a[col][col];
            for k in col..m {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; m];
    for row in (0..m).rev() {
        let s: f64 = (row + 1..m).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

fn pos_pow(x: f64, e: f64) -> f64 {
    if x > 0.0 {
        x.powf(e)
    } else {
        0.0
    }
}

/// Neumann second difference written out cell by cell.
fn lap_n(f: &[f64], h: f64) -> Vec<f64> {
    let m = f.len();
    (0..m)
        .map(|i| {
            let mut s = 0.0;
            if i > 0 {
                s += f[i - 1] - f[i];
            }
            if i + 1 < m {
                s += f[i + 1] - f[i];
            }
            s / (h * h)
        })
        .collect()
}

/// One backward-Euler density / upwind fraction / implicit nutrient step.
/// The density equation is solved by Newton iteration on a finite-difference
/// Jacobian until the update stalls.
pub fn step(p: &ModelParams, s: &Plain1d, h: f64, dt: f64) -> Plain1d {
    let m = s.n.len();
    let g = p.gamma;
    let growth: Vec<f64> = s.d.iter().map(|&d| p.rates.growth.eval(d)).collect();
    let resid = |n: &[f64]| -> Vec<f64> {
        let phi: Vec<f64> = n.iter().map(|&v| g / (g + 1.0) * pos_pow(v, g + 1.0)).collect();
        let l = lap_n(&phi, h);
        (0..m)
            .map(|i| n[i] - s.n[i] - dt * (l[i] + (growth[i] - p.death * s.c[i]) * n[i]))
            .collect()
    };
    let mut n = s.n.clone();
    for _ in 0..200 {
        let f = resid(&n);
        if f.iter().all(|v| v.abs() < 1e-14) {
            break;
        }
        let mut jac = vec![vec![0.0; m]; m];
        for j in 0..m {
            let e = 1e-7 * n[j].abs().max(1e-3);
            let mut np = n.clone();
            np[j] += e;
            let mut nm = n.clone();
            nm[j] -= e;
            let (fp, fm) = (resid(&np), resid(&nm));
            for i in 0..m {
                jac[i][j] = (fp[i] - fm[i]) / (2.0 * e);
            }
        }
        let delta = gauss(jac, f.iter().map(|v| -v).collect());
        for i in 0..m {
            n[i] += delta[i];
        }
    }
    for v in n.iter_mut() {
        *v = v.max(0.0);
    }

    let pr: Vec<f64> = n.iter().map(|&v| pos_pow(v, g)).collect();
    let mut c = Vec::with_capacity(m);
    for i in 0..m {
        // c_t + u c_x = 0 with u = -p_x on each face, upwinded.
        let mut transport = 0.0;
        if i > 0 {
            let u = -(pr[i] - pr[i - 1]) / h;
            if u > 0.0 {
                transport += u * (s.c[i] - s.c[i - 1]) / h;
            }
        }
        if i + 1 < m {
            let u = -(pr[i + 1] - pr[i]) / h;
            if u < 0.0 {
                transport += u * (s.c[i + 1] - s.c[i]) / h;
            }
        }
        let cs = s.c[i] - dt * transport;
        let k1 = p.rates.k1.eval(s.d[i]);
        let k2 = p.rates.k2.eval(s.d[i]);
        c.push(cs + dt * (k1 * (1.0 - cs) - k2 * cs - p.death * cs * (1.0 - cs)));
    }

    let mut a = vec![vec![0.0; m]; m];
    let mut rhs = vec![0.0; m];
    let w = 1.0 / (h * h);
    for i in 0..m {
        a[i][i] = p.relax / dt;
        rhs[i] = p.relax / dt * s.d[i] - p.rates.psi.eval(s.d[i]) * n[i] + p.supply * c[i] * n[i];
        for j in [i.wrapping_sub(1), i + 1] {
            if j < m {
                a[i][i] += w;
                a[i][j] -= w;
            } else {
                // Ghost cell mirrored about the boundary value.
                a[i][i] += 2.0 * w;
                rhs[i] += 2.0 * w * p.d_b;
            }
        }
    }
    let d = gauss(a, rhs);
    Plain1d { n, c, d }
}

pub const ORACLE_CONFIG: &str = "\
grid.cells = 4
model.gamma = 5
initial.profile = step
initial.amplitude = 1.2
initial.center = 0.25
initial.width = 0.5
initial.fraction = 0.3
initial.d0 = 0.8
time.T_final = 1
";

/// Max-norm gap between three production steps and three oracle steps on a
/// 4-cell full-physics problem.
pub fn oracle_gap() -> f64 {
    use hele_shaw::config::parse_config;
    use hele_shaw::{harness, Solver};

    let cfg = parse_config(ORACLE_CONFIG).unwrap();
    let consts = harness::derived_constants(&cfg).unwrap();
    let solver = Solver::new(cfg.model.clone(), consts, cfg.time.solver_options());
    let h = cfg.grid.h()[0];
    let mut s = harness::initial_state(&cfg);
    let mut o = Plain1d {
        n: s.n.values().to_vec(),
        c: s.c.values().to_vec(),
        d: s.d.values().to_vec(),
    };
    let mut gap = 0.0_f64;
    for _ in 0..3 {
        let (next, rep) = solver.step(&s, f64::INFINITY).unwrap();
        assert_eq!(rep.retries, 0);
        o = step(&cfg.model, &o, h, rep.dt_used);
        for (a, b) in [(&next.n, &o.n), (&next.c, &o.c), (&next.d, &o.d)] {
            for (x, y) in a.values().iter().zip(b.iter()) {
                gap = gap.max((x - y).abs());
            }
        }
        s = next;
    }
    gap
}

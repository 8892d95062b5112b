mod common;

use hele_shaw::config::parse_config;
use hele_shaw::harness;

#[test]
fn three_steps_match_dense_oracle() {
    let gap = common::oracle_gap();
    assert!(gap <= 1e-8, "max-norm gap {:e}", gap);
}

#[test]
fn dense_gauss_solves_small_system() {
    let a = vec![vec![2.0, 1.0, 0.0], vec![1.0, 3.0, 1.0], vec![0.0, 1.0, 4.0]];
    let x = common::gauss(a, vec![3.0, 5.0, 5.0]);
    for v in x {
        assert!((v - 1.0).abs() < 1e-14);
    }
}

#[test]
fn oracle_state_moves() {
    // Guards against a trivially passing comparison: the data must evolve.
    let cfg = parse_config(common::ORACLE_CONFIG).unwrap();
    let out = harness::run(&{
        let mut c = cfg.clone();
        c.model.t_final = 0.01;
        c
    }, false)
    .unwrap();
    let first = &out.history[0];
    let last = out.final_state();
    let moved = first.n.values().iter().zip(last.n.values()).any(|(a, b)| (a - b).abs() > 1e-4);
    assert!(moved);
}

#[test]
fn barenblatt_profile_against_closed_form() {
    // U(x, t) = t^-a (C - k x^2 t^-2b)_+^(1/(m-1)) with m = gamma + 1 after
    // the time rescaling s = gamma t / (gamma + 1).
    let gamma: f64 = 2.0;
    let (c, t): (f64, f64) = (1.0, 2.0);
    let m = gamma + 1.0;
    let s = gamma * t / (gamma + 1.0);
    let alpha = 1.0 / (m - 1.0 + 2.0);
    let beta = alpha;
    let k = alpha * (m - 1.0) / (2.0 * m);
    for &x in &[0.0, 0.5, 1.0, 2.0, 3.0, 10.0] {
        let inner: f64 = c - k * x * x * s.powf(-2.0 * beta);
        let expect = s.powf(-alpha) * inner.max(0.0).powf(1.0 / (m - 1.0));
        let got = harness::barenblatt([x, 0.0], [0.0, 0.0], 1, gamma, c, t);
        assert!((got - expect).abs() < 1e-14, "x = {}: {} vs {}", x, got, expect);
    }
}

//! Constitutive functions, physical constants and the structural hypotheses
//! on them, expressed as checkable predicates.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::Field;

/// Number of uniform samples used when maximizing rates over `[0, L]`.
pub const RATE_SAMPLES: usize = 10_000;

/// Relative inflation applied to `G0` wherever it enters a bound check.
pub const G0_INFLATION: f64 = 1e-6;

/// A rate as a function of the nutrient concentration `d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Preset {
    /// `alpha * d`
    Linear { alpha: f64 },
    /// `alpha * d / (beta + d)`
    Saturating { alpha: f64, beta: f64 },
    /// `value`
    Constant { value: f64 },
}

impl Preset {
    pub fn eval(&self, d: f64) -> f64 {
        match *self {
            Preset::Linear { alpha } => alpha * d,
            Preset::Saturating { alpha, beta } => alpha * d / (beta + d),
            Preset::Constant { value } => value,
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            Preset::Linear { alpha } => alpha == 0.0,
            Preset::Saturating { alpha, .. } => alpha == 0.0,
            Preset::Constant { value } => value == 0.0,
        }
    }

    /// Upper bound on the Lipschitz constant over `d >= 0`.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            Preset::Linear { alpha } => alpha.abs(),
            Preset::Saturating { alpha, beta } => alpha.abs() / beta,
            Preset::Constant { .. } => 0.0,
        }
    }

    /// Smallest `d >= 0` with `f(d) = target`, for the nondecreasing presets.
    pub fn solve_level(&self, target: f64) -> Option<f64> {
        match *self {
            Preset::Linear { alpha } if alpha > 0.0 && target >= 0.0 => Some(target / alpha),
            Preset::Saturating { alpha, beta } if alpha > target && target >= 0.0 => {
                Some(target * beta / (alpha - target))
            }
            Preset::Constant { value } if value == target => Some(0.0),
            _ => None,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Preset::Linear { alpha } => write!(f, "linear({})", alpha),
            Preset::Saturating { alpha, beta } => write!(f, "saturating({}, {})", alpha, beta),
            Preset::Constant { value } => write!(f, "constant({})", value),
        }
    }
}

impl FromStr for Preset {
    type Err = String;

    /// Parses `linear(a)`, `saturating(a, b)` or `constant(v)`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        let open = s
            .find('(')
            .ok_or_else(|| format!("expected preset like linear(1.0), got '{}'", s))?;
        if !s.ends_with(')') {
            return Err(format!("missing closing parenthesis in '{}'", s));
        }
        let name = s[..open].trim();
        let args: Vec<f64> = s[open + 1..s.len() - 1]
            .split(',')
            .map(|a| a.trim())
            .filter(|a| !a.is_empty())
            .map(|a| a.parse::<f64>().map_err(|_| format!("bad preset parameter '{}'", a)))
            .collect::<std::result::Result<_, _>>()?;
        if let Some(bad) = args.iter().find(|a| !a.is_finite()) {
            return Err(format!("preset parameter must be finite, got {}", bad));
        }
        match (name, args.as_slice()) {
            ("linear", [alpha]) => Ok(Preset::Linear { alpha: *alpha }),
            ("saturating", [alpha, beta]) => {
                if *beta <= 0.0 {
                    return Err("saturating preset needs beta > 0".into());
                }
                Ok(Preset::Saturating { alpha: *alpha, beta: *beta })
            }
            ("constant", [value]) => Ok(Preset::Constant { value: *value }),
            ("linear" | "constant", _) => Err(format!("{} takes exactly one parameter", name)),
            ("saturating", _) => Err("saturating takes two parameters (alpha, beta)".into()),
            _ => Err(format!(
                "unknown preset '{}' (expected linear, saturating or constant)",
                name
            )),
        }
    }
}

/// Growth, transition and consumption rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFunctions {
    /// Net growth rate of normal cells, `G(d)`.
    pub growth: Preset,
    /// Normal to autophagic transition rate, `K1(d)`.
    pub k1: Preset,
    /// Autophagic to normal transition rate, `K2(d)`.
    pub k2: Preset,
    /// Nutrient consumption rate, `psi(d)`.
    pub psi: Preset,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateValues {
    pub growth: f64,
    pub k1: f64,
    pub k2: f64,
    pub psi: f64,
}

pub fn eval_rates(rates: &RateFunctions, d: f64) -> Result<RateValues> {
    let v = RateValues {
        growth: rates.growth.eval(d),
        k1: rates.k1.eval(d),
        k2: rates.k2.eval(d),
        psi: rates.psi.eval(d),
    };
    if [v.growth, v.k1, v.k2, v.psi].iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::config(format!("rate functions are not finite at d = {}", d)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub rates: RateFunctions,
    /// Extra death rate of autophagic cells, `D > 0`.
    pub death: f64,
    /// Nutrient supply rate of autophagic cells, `a > 0`.
    pub supply: f64,
    /// Nutrient time constant, `b > 0`.
    pub relax: f64,
    /// Pressure exponent, `gamma >= 1`.
    pub gamma: f64,
    /// Viscosity of the regularized scheme; 0 means unregularized.
    pub eps_reg: f64,
    /// Cutoff level used by the regularized scheme.
    pub ell_cut: f64,
    /// Constant Dirichlet value of the nutrient.
    pub d_b: f64,
    pub t_final: f64,
}

impl ModelParams {
    /// Checks every structural hypothesis that does not depend on data.
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if !(self.death > 0.0 && self.death.is_finite()) {
            errs.push(format!("D must be positive and finite, got {}", self.death));
        }
        if !(self.supply > 0.0 && self.supply.is_finite()) {
            errs.push(format!("a must be positive and finite, got {}", self.supply));
        }
        if !(self.relax > 0.0 && self.relax.is_finite()) {
            errs.push(format!("b must be positive and finite, got {}", self.relax));
        }
        if !(self.gamma >= 1.0 && self.gamma.is_finite()) {
            errs.push(format!(
                "gamma must satisfy gamma >= 1 for the pressure law p = n^gamma, got {}",
                self.gamma
            ));
        }
        if !(self.eps_reg >= 0.0 && self.eps_reg.is_finite()) {
            errs.push(format!("eps_reg must be >= 0, got {}", self.eps_reg));
        }
        if self.eps_reg > 0.0 && !(self.ell_cut > 0.0 && self.ell_cut.is_finite()) {
            errs.push(format!("ell_cut must be positive, got {}", self.ell_cut));
        }
        if !(self.d_b >= 0.0 && self.d_b.is_finite()) {
            errs.push(format!("d_b must be nonnegative, got {}", self.d_b));
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            errs.push(format!("T_final must be nonnegative, got {}", self.t_final));
        }
        match self.rates.psi {
            Preset::Constant { .. } => errs.push(
                "psi must vanish at d = 0 and reach the supply rate a; use linear or saturating".into(),
            ),
            Preset::Linear { alpha } | Preset::Saturating { alpha, .. } if alpha < 0.0 => {
                errs.push("psi must be nondecreasing (alpha >= 0)".into())
            }
            _ => {}
        }
        if self.d_crit().is_none() && !matches!(self.rates.psi, Preset::Constant { .. }) {
            errs.push(format!(
                "psi never reaches the supply rate a = {}: no critical concentration exists",
                self.supply
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    /// Critical nutrient concentration, where consumption equals supply.
    pub fn d_crit(&self) -> Option<f64> {
        self.rates.psi.solve_level(self.supply).filter(|d| *d > 0.0)
    }

    pub fn is_regularized(&self) -> bool {
        self.eps_reg > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedConstants {
    /// Nutrient ceiling `L`.
    pub nutrient_ceiling: f64,
    /// `max G` over `[0, L]`.
    pub g0: f64,
    /// `max(|G|, |G - D|)` over `[0, L]`.
    pub m0: f64,
    pub d_crit: f64,
    pub k1_max: f64,
    pub k2_max: f64,
    pub k1_min: f64,
    pub k2_min: f64,
}

impl DerivedConstants {
    /// `G0` with the safety inflation used in bound checks.
    pub fn g0_inflated(&self) -> f64 {
        self.g0 + G0_INFLATION * self.g0.abs()
    }

    /// Rate bound entering the reaction time-step restriction.
    pub fn reaction_rate_bound(&self, death: f64) -> f64 {
        self.k1_max + self.k2_max + death
    }
}

/// Sample points on `[0, l]`: a uniform grid plus refined points near both ends.
fn sample_points(l: f64) -> impl Iterator<Item = f64> {
    let n = RATE_SAMPLES;
    let h = l / (n - 1) as f64;
    let uniform = (0..n).map(move |k| if k + 1 == n { l } else { k as f64 * h });
    let refine = (1..100).flat_map(move |k| {
        let s = k as f64 * h / 100.0;
        [s, l - s]
    });
    uniform.chain(refine)
}

pub fn derive_constants(params: &ModelParams, d0_field: &Field) -> Result<DerivedConstants> {
    let d_crit = params.d_crit().ok_or_else(|| {
        Error::config("psi never reaches the supply rate a: no critical concentration")
    })?;
    let ceiling = params.d_b.max(d0_field.max()).max(d_crit);
    let mut c = DerivedConstants {
        nutrient_ceiling: ceiling,
        g0: f64::NEG_INFINITY,
        m0: 0.0,
        d_crit,
        k1_max: f64::NEG_INFINITY,
        k2_max: f64::NEG_INFINITY,
        k1_min: f64::INFINITY,
        k2_min: f64::INFINITY,
    };
    for d in sample_points(ceiling) {
        let r = eval_rates(&params.rates, d)?;
        c.g0 = c.g0.max(r.growth);
        c.m0 = c.m0.max(r.growth.abs()).max((r.growth - params.death).abs());
        c.k1_max = c.k1_max.max(r.k1);
        c.k2_max = c.k2_max.max(r.k2);
        c.k1_min = c.k1_min.min(r.k1);
        c.k2_min = c.k2_min.min(r.k2);
    }
    Ok(c)
}

/// Checks the hypotheses that involve `[0, L]`: nonnegative transition rates
/// and a nondecreasing consumption rate with `psi(0) = 0`.
pub fn check_rate_hypotheses(params: &ModelParams, consts: &DerivedConstants) -> Vec<String> {
    let mut out = Vec::new();
    if consts.k1_min < 0.0 {
        out.push(format!("K1 takes the negative value {} on [0, L]", consts.k1_min));
    }
    if consts.k2_min < 0.0 {
        out.push(format!("K2 takes the negative value {} on [0, L]", consts.k2_min));
    }
    if params.rates.psi.eval(0.0) != 0.0 {
        out.push("psi(0) must be 0".into());
    }
    let mut prev = f64::NEG_INFINITY;
    let l = consts.nutrient_ceiling;
    for k in 0..=1000 {
        let v = params.rates.psi.eval(l * k as f64 / 1000.0);
        if v < prev {
            out.push("psi must be nondecreasing on [0, L]".into());
            break;
        }
        prev = v;
    }
    out
}

/// The cutoff `theta_ell`: clamps `s` to `[0, ell]`.
pub fn cutoff(s: f64, ell: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s < ell {
        s
    } else {
        ell
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct H7Verdict {
    pub pass: bool,
    pub sigma: f64,
    /// `|{n0 >= sigma}|`.
    pub measure: f64,
    /// `|Omega| / (e^{G0 T} * max n0)`; infinite when `n0` vanishes.
    pub threshold: f64,
    /// `measure / threshold`; the hypothesis holds when this is at most 1.
    pub ratio: f64,
}

/// Largest admissible `sigma` candidate, just below `e^{-G0 T}`.
pub fn default_sigma(g0: f64, t_final: f64) -> f64 {
    (-(g0 * t_final)).exp() * (1.0 - 1e-6)
}

/// Evaluates the small-superlevel-set hypothesis on the initial density.
pub fn check_h7(n0: &Field, sigma: f64, g0: f64, t_final: f64) -> Result<H7Verdict> {
    let g0 = g0 + G0_INFLATION * g0.abs();
    let upper = (-(g0 * t_final)).exp();
    if !(sigma > 0.0 && sigma < upper) {
        return Err(Error::Argument(format!(
            "sigma must lie in (0, e^(-G0 T)) = (0, {}), got {}",
            upper, sigma
        )));
    }
    let grid = n0.grid();
    let vol = grid.cell_volume();
    let measure = n0.values().iter().filter(|&&v| v >= sigma).count() as f64 * vol;
    let n_max = n0.max().max(0.0);
    let threshold = if n_max > 0.0 {
        grid.volume() / ((g0 * t_final).exp() * n_max)
    } else {
        f64::INFINITY
    };
    let ratio = if threshold.is_infinite() { 0.0 } else { measure / threshold };
    Ok(H7Verdict {
        pass: measure <= threshold,
        sigma,
        measure,
        threshold,
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn params() -> ModelParams {
        ModelParams {
            rates: RateFunctions {
                growth: Preset::Linear { alpha: 2.0 },
                k1: Preset::Constant { value: 0.5 },
                k2: Preset::Saturating { alpha: 1.0, beta: 0.5 },
                psi: Preset::Linear { alpha: 1.0 },
            },
            death: 1.0,
            supply: 1.0,
            relax: 1.0,
            gamma: 5.0,
            eps_reg: 0.0,
            ell_cut: 10.0,
            d_b: 0.5,
            t_final: 1.0,
        }
    }

    #[test]
    fn psi_reaches_supply_at_critical_concentration() {
        let d_crit = 0.8;
        let a = 1.3;
        let psi = Preset::Linear { alpha: a / d_crit };
        assert_abs_diff_eq!(psi.eval(d_crit), a, epsilon = 1e-15);
        assert_abs_diff_eq!(psi.solve_level(a).unwrap(), d_crit, epsilon = 1e-15);
        let sat = Preset::Saturating { alpha: 3.0, beta: 0.5 };
        assert_abs_diff_eq!(sat.eval(sat.solve_level(a).unwrap()), a, epsilon = 1e-14);
    }

    #[test]
    fn presets_vanish_at_zero() {
        for p in [
            Preset::Linear { alpha: 3.0 },
            Preset::Saturating { alpha: 2.0, beta: 0.1 },
        ] {
            assert_eq!(p.eval(0.0), 0.0);
        }
        let c = Preset::Constant { value: 0.7 };
        assert_eq!(c.eval(0.0), 0.7);
        assert_eq!(c.eval(12.0), 0.7);
    }

    #[test]
    fn preset_parsing() {
        assert_eq!("linear(2)".parse::<Preset>().unwrap(), Preset::Linear { alpha: 2.0 });
        assert_eq!(
            " saturating( 1.5 , 0.25 ) ".parse::<Preset>().unwrap(),
            Preset::Saturating { alpha: 1.5, beta: 0.25 }
        );
        assert!("cubic(1)".parse::<Preset>().is_err());
        assert!("linear(1, 2)".parse::<Preset>().is_err());
        assert!("saturating(1, 0)".parse::<Preset>().is_err());
        let p = Preset::Saturating { alpha: 0.1, beta: 3.0e-7 };
        assert_eq!(p.to_string().parse::<Preset>().unwrap(), p);
    }

    #[test]
    fn derived_constants_examples() {
        let g = Grid::interval(0.0, 1.0, 10).unwrap();
        let mut p = params();
        let d0 = Field::constant(g, 0.3);
        let c = derive_constants(&p, &d0).unwrap();
        // d_b = 0.5, max d0 = 0.3, d_crit = 1.0
        assert_eq!(c.nutrient_ceiling, 1.0);
        assert_abs_diff_eq!(c.g0, 2.0, epsilon = 1e-12);

        p.rates.growth = Preset::Constant { value: 1.0 };
        p.death = 3.0;
        let c = derive_constants(&p, &d0).unwrap();
        assert_abs_diff_eq!(c.m0, 2.0, epsilon = 1e-12);
        assert!(c.nutrient_ceiling >= c.d_crit);
    }

    #[test]
    fn cutoff_examples() {
        assert_eq!(cutoff(3.0, 2.0), 2.0);
        assert_eq!(cutoff(-1.0, 2.0), 0.0);
        assert_eq!(cutoff(1.5, 2.0), 1.5);
    }

    #[test]
    fn h7_examples() {
        let g = Grid::interval(0.0, 1.0, 100).unwrap();
        let v = check_h7(&Field::constant(g, 2.0), 0.3, 1.0, 1.0).unwrap();
        assert!(!v.pass);
        assert_abs_diff_eq!(v.measure, 1.0, epsilon = 1e-12);

        let v = check_h7(&Field::constant(g, 0.0), 0.3, 1.0, 1.0).unwrap();
        assert!(v.pass);
        assert_eq!(v.measure, 0.0);

        // 0.9 on the left tenth, G0 T = 0.5, sigma = 0.5:
        // 0.1 <= 1 / (e^0.5 * 0.9) = 0.6739...
        let n0 = Field::from_fn(g, |[x, _]| if x < 0.1 { 0.9 } else { 0.0 });
        let v = check_h7(&n0, 0.5, 0.5, 1.0).unwrap();
        let expected = 1.0 / (0.5f64.exp() * 0.9);
        assert!(v.pass);
        assert_abs_diff_eq!(v.measure, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(v.threshold, expected, epsilon = 1e-6);
    }

    #[test]
    fn h7_rejects_inadmissible_sigma() {
        let g = Grid::interval(0.0, 1.0, 10).unwrap();
        let n0 = Field::constant(g, 0.1);
        assert!(matches!(check_h7(&n0, 0.0, 1.0, 1.0), Err(Error::Argument(_))));
        assert!(matches!(check_h7(&n0, 0.5, 1.0, 1.0), Err(Error::Argument(_))));
    }

    #[test]
    fn validation_flags_bad_constants() {
        let mut p = params();
        p.gamma = 0.5;
        p.death = 0.0;
        let errs = p.validate().unwrap_err();
        assert_eq!(errs.len(), 2);
        assert!(errs.iter().any(|e| e.contains("gamma >= 1")));

        let mut p = params();
        p.rates.psi = Preset::Saturating { alpha: 0.5, beta: 1.0 };
        assert!(p.validate().is_err());
    }

    #[test]
    fn negative_transition_rate_is_reported() {
        let g = Grid::interval(0.0, 1.0, 10).unwrap();
        let mut p = params();
        p.rates.k1 = Preset::Linear { alpha: -1.0 };
        let c = derive_constants(&p, &Field::constant(g, 0.0)).unwrap();
        let issues = check_rate_hypotheses(&p, &c);
        assert_eq!(issues.len(), 1);
        assert!(issues[0].contains("K1"));
    }

    proptest! {
        #[test]
        fn cutoff_is_monotone_and_idempotent(a in -10.0f64..10.0, b in -10.0f64..10.0, ell in 0.01f64..5.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(cutoff(lo, ell) <= cutoff(hi, ell));
            prop_assert_eq!(cutoff(cutoff(a, ell), ell), cutoff(a, ell));
            prop_assert!((cutoff(a, ell) - cutoff(b, ell)).abs() <= (a - b).abs());
        }

        #[test]
        fn ceiling_is_monotone_in_boundary_value(db in 0.0f64..3.0, extra in 0.0f64..3.0) {
            let g = Grid::interval(0.0, 1.0, 5).unwrap();
            let d0 = Field::constant(g, 0.4);
            let mut p = params();
            p.d_b = db;
            let low = derive_constants(&p, &d0).unwrap().nutrient_ceiling;
            p.d_b = db + extra;
            let high = derive_constants(&p, &d0).unwrap().nutrient_ceiling;
            prop_assert!(high >= low);
        }

        #[test]
        fn psi_zero_at_origin(alpha in 0.0f64..10.0, beta in 0.01f64..10.0) {
            let rates = RateFunctions {
                growth: Preset::Constant { value: 1.0 },
                k1: Preset::Constant { value: 1.0 },
                k2: Preset::Constant { value: 1.0 },
                psi: Preset::Saturating { alpha, beta },
            };
            prop_assert_eq!(eval_rates(&rates, 0.0).unwrap().psi, 0.0);
            let rates = RateFunctions { psi: Preset::Linear { alpha }, ..rates };
            prop_assert_eq!(eval_rates(&rates, 0.0).unwrap().psi, 0.0);
        }
    }
}

//! Run configuration in a line-based `section.key = value` format.
//!
//! Blank lines and text after `#` are ignored. Every key has a default, so an
//! empty file is a valid configuration. All problems are collected and
//! reported together, each with its line number.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{ConfigIssue, Error, Result};
use crate::grid::Grid;
use crate::model::{ModelParams, Preset, RateFunctions};
use crate::stepper::SolverOptions;

/// Every accepted key with its default value.
pub const KEYS: &[(&str, &str)] = &[
    ("grid.dim", "1"),
    ("grid.origin", "0"),
    ("grid.extents", "1"),
    ("grid.cells", "100"),
    ("model.G", "linear(1)"),
    ("model.K1", "constant(0.5)"),
    ("model.K2", "linear(0.5)"),
    ("model.psi", "linear(1)"),
    ("model.D", "1"),
    ("model.a", "1"),
    ("model.b", "1"),
    ("model.gamma", "5"),
    ("model.eps_reg", "0"),
    ("model.ell_cut", "100"),
    ("model.d_b", "1"),
    ("initial.profile", "step"),
    ("initial.amplitude", "1.2"),
    ("initial.background", "0"),
    ("initial.center", "0.5"),
    ("initial.width", "1"),
    ("initial.fraction", "0.1"),
    ("initial.d0", "1"),
    ("initial.lift", "auto"),
    ("initial.sigma", "auto"),
    ("time.t_start", "0"),
    ("time.T_final", "1"),
    ("time.safety", "0.5"),
    ("time.newton_tol", "1e-10"),
    ("time.linear_tol", "1e-10"),
    ("time.max_iters", "50"),
    ("time.linear_max_iters", "10000"),
    ("time.retry_max", "10"),
    ("time.snapshot_stride", "10"),
    ("output.directory", "out"),
    ("output.formats", "snapshot, timeseries, report"),
    ("sweep.gammas", "5, 10, 20, 40, 80"),
    ("sweep.tau", "auto"),
    ("sweep.delta", "0.05"),
    ("study.eps", "0.1, 0.01, 0.001"),
    ("bench.grid_sizes", "100, 200, 400"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// `amplitude` everywhere.
    Uniform,
    /// `amplitude` on the box of side `width` around `center`, `background` elsewhere.
    Step,
    /// `background + amplitude (1 - r^2 / width^2)_+`.
    Bump,
    /// Porous-medium source solution at `t_start` with constant `amplitude`.
    Barenblatt,
}

impl Profile {
    fn name(self) -> &'static str {
        match self {
            Profile::Uniform => "uniform",
            Profile::Step => "step",
            Profile::Bump => "bump",
            Profile::Barenblatt => "barenblatt",
        }
    }

    fn parse(s: &str) -> std::result::Result<Self, String> {
        match s {
            "uniform" => Ok(Profile::Uniform),
            "step" => Ok(Profile::Step),
            "bump" => Ok(Profile::Bump),
            "barenblatt" => Ok(Profile::Barenblatt),
            _ => Err(format!(
                "unknown profile '{}' (expected uniform, step, bump or barenblatt)",
                s
            )),
        }
    }
}

/// Lift added to the initial density and to its normal part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lift {
    /// `1/gamma` for plain runs, `eps_reg` for regularized runs.
    Auto,
    None,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sigma {
    /// Just below `e^{-G0 T}`.
    Auto,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialConfig {
    pub profile: Profile,
    pub amplitude: f64,
    pub background: f64,
    pub center: [f64; 2],
    pub width: f64,
    /// Initial autophagic fraction of the unlifted density.
    pub fraction: f64,
    /// Initial nutrient, constant in space.
    pub d0: f64,
    pub lift: Lift,
    pub sigma: Sigma,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeConfig {
    pub t_start: f64,
    pub safety: f64,
    pub newton_tol: f64,
    pub linear_tol: f64,
    pub max_iters: usize,
    pub linear_max_iters: usize,
    pub retry_max: usize,
    pub snapshot_stride: usize,
}

impl TimeConfig {
    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            safety: self.safety,
            newton_tol: self.newton_tol,
            linear_tol: self.linear_tol,
            max_iters: self.max_iters,
            linear_max_iters: self.linear_max_iters,
            retry_max: self.retry_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Snapshot,
    Timeseries,
    Report,
}

impl Format {
    fn name(self) -> &'static str {
        match self {
            Format::Snapshot => "snapshot",
            Format::Timeseries => "timeseries",
            Format::Report => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub directory: String,
    pub formats: Vec<Format>,
}

impl OutputConfig {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSection {
    pub gammas: Vec<f64>,
    /// `None` means a tenth of `T_final`.
    pub tau: Option<f64>,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: Grid,
    pub model: ModelParams,
    pub initial: InitialConfig,
    pub time: TimeConfig,
    pub output: OutputConfig,
    pub sweep: SweepSection,
    /// Viscosities of the epsilon study, nonincreasing.
    pub study_eps: Vec<f64>,
    pub bench_grid_sizes: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        parse_config("").expect("defaults are valid")
    }
}

impl RunConfig {
    pub fn tau(&self) -> f64 {
        self.sweep.tau.unwrap_or(0.1 * self.model.t_final)
    }

    /// SHA-256 of the canonical serialization, as hex.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serialize_config(self).as_bytes()))
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        std::io::Error::new(e.kind(), format!("cannot read config file {}: {}", path.display(), e))
    })?;
    parse_config(&text)
}

struct Reader {
    values: BTreeMap<&'static str, (Option<usize>, String)>,
    issues: Vec<ConfigIssue>,
}

impl Reader {
    fn line(&self, key: &str) -> Option<usize> {
        self.values.get(key).and_then(|v| v.0)
    }

    fn issue(&mut self, key: &str, message: String) {
        let line = self.line(key);
        self.issues.push(ConfigIssue { line, message });
    }

    fn check(&mut self, key: &str, ok: bool, message: impl FnOnce() -> String) {
        if !ok {
            let m = format!("{}: {}", key, message());
            self.issue(key, m);
        }
    }

    /// Parses `key`, falling back to the default after recording an issue.
    fn get<T>(&mut self, key: &'static str, parse: impl Fn(&str) -> std::result::Result<T, String>) -> T {
        let raw = self.values[key].1.clone();
        match parse(&raw) {
            Ok(v) => v,
            Err(msg) => {
                self.issue(key, format!("{}: {}", key, msg));
                let default = KEYS.iter().find(|(k, _)| *k == key).map(|(_, d)| *d).unwrap();
                parse(default).unwrap_or_else(|_| panic!("default of {} must parse", key))
            }
        }
    }
}

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("expected a number, got '{}'", s))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("expected a finite number, got '{}'", s))
    }
}

fn parse_usize(s: &str) -> std::result::Result<usize, String> {
    s.parse().map_err(|_| format!("expected a nonnegative integer, got '{}'", s))
}

fn parse_list<T>(
    s: &str,
    item: impl Fn(&str) -> std::result::Result<T, String>,
) -> std::result::Result<Vec<T>, String> {
    if s.trim().is_empty() {
        return Err("expected a comma-separated list".into());
    }
    s.split(',').map(|x| item(x.trim())).collect()
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    s.parse()
}

fn parse_pair<T: Copy>(
    s: &str,
    dim: usize,
    item: impl Fn(&str) -> std::result::Result<T, String>,
) -> std::result::Result<[T; 2], String> {
    let v = parse_list(s, item)?;
    match (dim, v.as_slice()) {
        (_, [a]) => Ok([*a, *a]),
        (2, [a, b]) => Ok([*a, *b]),
        _ => Err(format!("expected {} value(s), got {}", dim, v.len())),
    }
}

fn suggest(key: &str) -> Option<&'static str> {
    let (section, name) = key.split_once('.').unwrap_or(("", key));
    KEYS.iter()
        .map(|(k, _)| *k)
        .filter(|k| k.starts_with(section) && k.as_bytes().get(section.len()) == Some(&b'.'))
        .map(|k| (strsim::levenshtein(&k[section.len() + 1..], name), k))
        .chain(KEYS.iter().map(|(k, _)| (strsim::levenshtein(k, key), *k)))
        .filter(|(d, _)| *d <= 3)
        .min_by_key(|(d, _)| *d)
        .map(|(_, k)| k)
}

/// Parses and validates a configuration, reporting every problem found.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut values: BTreeMap<&'static str, (Option<usize>, String)> =
        KEYS.iter().map(|(k, d)| (*k, (None, d.to_string()))).collect();
    let mut issues = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            issues.push(ConfigIssue {
                line: Some(line),
                message: format!("expected 'section.key = value', got '{}'", content),
            });
            continue;
        };
        let key = key.trim();
        let value = value.trim();
        match KEYS.iter().find(|(k, _)| *k == key) {
            Some((k, _)) => {
                let slot = values.get_mut(k).unwrap();
                if let Some(first) = slot.0 {
                    issues.push(ConfigIssue {
                        line: Some(line),
                        message: format!("duplicate key '{}' (first set on line {})", key, first),
                    });
                } else {
                    *slot = (Some(line), value.to_string());
                }
            }
            None => {
                let hint = match suggest(key) {
                    Some(s) => {
                        let short = s.split_once('.').map(|x| x.1).unwrap_or(s);
                        format!(" (did you mean '{}'? full key '{}')", short, s)
                    }
                    None => String::new(),
                };
                issues.push(ConfigIssue {
                    line: Some(line),
                    message: format!("unknown key '{}'{}", key, hint),
                });
            }
        }
    }
    let mut r = Reader { values, issues };
    let cfg = build(&mut r);
    if r.issues.is_empty() {
        Ok(cfg)
    } else {
        let mut issues = r.issues;
        issues.sort_by_key(|i| i.line.unwrap_or(usize::MAX));
        Err(Error::Config(issues))
    }
}

fn build(r: &mut Reader) -> RunConfig {
    let dim = r.get("grid.dim", parse_usize);
    r.check("grid.dim", dim == 1 || dim == 2, || format!("must be 1 or 2, got {}", dim));
    let d = if dim == 2 { 2 } else { 1 };
    let origin = r.get("grid.origin", |s| parse_pair(s, d, parse_f64));
    let extents = r.get("grid.extents", |s| parse_pair(s, d, parse_f64));
    let cells = r.get("grid.cells", |s| parse_pair(s, d, parse_usize));
    r.check("grid.extents", extents[..d].iter().all(|&e| e > 0.0), || "must be positive".into());
    r.check("grid.cells", cells[..d].iter().all(|&c| c >= 3), || "need at least 3 cells per axis".into());
    let grid = Grid::new(d, origin, extents, [cells[0].max(1), cells[1].max(1)])
        .or_else(|_| Grid::new(d, [0.0; 2], [1.0; 2], [100, 100]))
        .expect("fallback grid is valid");

    let rates = RateFunctions {
        growth: r.get("model.G", parse_preset),
        k1: r.get("model.K1", parse_preset),
        k2: r.get("model.K2", parse_preset),
        psi: r.get("model.psi", parse_preset),
    };
    let mut model = ModelParams {
        rates,
        death: r.get("model.D", parse_f64),
        supply: r.get("model.a", parse_f64),
        relax: r.get("model.b", parse_f64),
        gamma: r.get("model.gamma", parse_f64),
        eps_reg: r.get("model.eps_reg", parse_f64),
        ell_cut: r.get("model.ell_cut", parse_f64),
        d_b: r.get("model.d_b", parse_f64),
        t_final: r.get("time.T_final", parse_f64),
    };

    let profile = r.get("initial.profile", Profile::parse);
    let initial = InitialConfig {
        profile,
        amplitude: r.get("initial.amplitude", parse_f64),
        background: r.get("initial.background", parse_f64),
        center: r.get("initial.center", |s| parse_pair(s, d, parse_f64)),
        width: r.get("initial.width", parse_f64),
        fraction: r.get("initial.fraction", parse_f64),
        d0: r.get("initial.d0", parse_f64),
        lift: r.get("initial.lift", |s| match s {
            "auto" => Ok(Lift::Auto),
            "none" => Ok(Lift::None),
            _ => parse_f64(s)
                .map(Lift::Value)
                .map_err(|_| format!("expected auto, none or a number, got '{}'", s)),
        }),
        sigma: r.get("initial.sigma", |s| match s {
            "auto" => Ok(Sigma::Auto),
            _ => parse_f64(s)
                .map(Sigma::Value)
                .map_err(|_| format!("expected auto or a number, got '{}'", s)),
        }),
    };
    r.check("initial.amplitude", initial.amplitude >= 0.0, || "must be nonnegative".into());
    r.check("initial.background", initial.background >= 0.0, || "must be nonnegative".into());
    r.check("initial.width", initial.width > 0.0, || "must be positive".into());
    r.check("initial.fraction", (0.0..=1.0).contains(&initial.fraction), || {
        "must lie in [0, 1]".into()
    });
    r.check("initial.d0", initial.d0 >= 0.0, || "must be nonnegative".into());
    if let Lift::Value(v) = initial.lift {
        r.check("initial.lift", v >= 0.0, || "must be nonnegative".into());
    }
    if let Sigma::Value(v) = initial.sigma {
        r.check("initial.sigma", v > 0.0, || "must be positive".into());
    }

    let time = TimeConfig {
        t_start: r.get("time.t_start", parse_f64),
        safety: r.get("time.safety", parse_f64),
        newton_tol: r.get("time.newton_tol", parse_f64),
        linear_tol: r.get("time.linear_tol", parse_f64),
        max_iters: r.get("time.max_iters", parse_usize),
        linear_max_iters: r.get("time.linear_max_iters", parse_usize),
        retry_max: r.get("time.retry_max", parse_usize),
        snapshot_stride: r.get("time.snapshot_stride", parse_usize),
    };
    r.check("time.t_start", time.t_start >= 0.0, || "must be nonnegative".into());
    r.check("time.T_final", model.t_final >= time.t_start, || {
        format!("must not precede t_start = {}", time.t_start)
    });
    r.check("time.safety", time.safety > 0.0 && time.safety <= 1.0, || "must lie in (0, 1]".into());
    r.check("time.newton_tol", time.newton_tol > 0.0, || "must be positive".into());
    r.check("time.linear_tol", time.linear_tol > 0.0, || "must be positive".into());
    r.check("time.max_iters", time.max_iters >= 1, || "must be at least 1".into());
    r.check("time.linear_max_iters", time.linear_max_iters >= 1, || "must be at least 1".into());
    r.check("time.snapshot_stride", time.snapshot_stride >= 1, || "must be at least 1".into());
    if profile == Profile::Barenblatt {
        r.check("time.t_start", time.t_start > 0.0, || {
            "the barenblatt profile needs t_start > 0".into()
        });
    }

    if let Err(msgs) = model.validate() {
        for m in msgs {
            let key = match m.split_whitespace().next().unwrap_or("") {
                "D" => "model.D",
                "a" => "model.a",
                "b" => "model.b",
                "gamma" => "model.gamma",
                "eps_reg" => "model.eps_reg",
                "ell_cut" => "model.ell_cut",
                "d_b" => "model.d_b",
                "T_final" => "time.T_final",
                _ => "model.psi",
            };
            r.issue(key, m);
        }
    }
    // Keep a usable model for the remaining checks.
    model.gamma = model.gamma.max(1.0);

    let directory = r.values["output.directory"].1.clone();
    r.check("output.directory", !directory.is_empty(), || "must not be empty".into());
    let formats = r.get("output.formats", |s| {
        parse_list(s, |x| match x {
            "snapshot" => Ok(Format::Snapshot),
            "timeseries" => Ok(Format::Timeseries),
            "report" => Ok(Format::Report),
            _ => Err(format!("unknown format '{}' (expected snapshot, timeseries or report)", x)),
        })
    });

    let gammas = r.get("sweep.gammas", |s| parse_list(s, parse_f64));
    r.check("sweep.gammas", gammas.iter().all(|&g| g >= 1.0), || {
        "every gamma must satisfy gamma >= 1".into()
    });
    r.check("sweep.gammas", gammas.windows(2).all(|w| w[0] <= w[1]), || {
        "must be listed in increasing order".into()
    });
    let tau = r.get("sweep.tau", |s| match s {
        "auto" => Ok(None),
        _ => parse_f64(s).map(Some),
    });
    if let Some(t) = tau {
        r.check("sweep.tau", t > 0.0 && (t < model.t_final || model.t_final == 0.0), || {
            format!("must lie in (0, T_final) = (0, {})", model.t_final)
        });
    }
    let delta = r.get("sweep.delta", parse_f64);
    r.check("sweep.delta", delta > 0.0, || "must be positive".into());

    let study_eps = r.get("study.eps", |s| parse_list(s, parse_f64));
    r.check("study.eps", study_eps.iter().all(|&e| e > 0.0), || "every eps must be positive".into());
    r.check("study.eps", study_eps.windows(2).all(|w| w[0] >= w[1]), || {
        "must be listed in decreasing order".into()
    });
    let bench_grid_sizes = r.get("bench.grid_sizes", |s| parse_list(s, parse_usize));
    r.check("bench.grid_sizes", bench_grid_sizes.iter().all(|&n| n >= 3), || {
        "need at least 3 cells".into()
    });

    RunConfig {
        grid,
        model,
        initial,
        time,
        output: OutputConfig { directory, formats },
        sweep: SweepSection { gammas, tau, delta },
        study_eps,
        bench_grid_sizes,
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

/// Canonical text form: every key, in schema order. Parsing the result gives
/// back an equal configuration.
pub fn serialize_config(cfg: &RunConfig) -> String {
    let g = &cfg.grid;
    let d = g.dim();
    let m = &cfg.model;
    let i = &cfg.initial;
    let t = &cfg.time;
    let mut out = String::new();
    let mut put = |k: &str, v: String| {
        let _ = writeln!(out, "{} = {}", k, v);
    };
    put("grid.dim", d.to_string());
    put("grid.origin", join(&g.origin()[..d]));
    put("grid.extents", join(&g.extents()[..d]));
    put("grid.cells", join(&g.cells()[..d]));
    put("model.G", m.rates.growth.to_string());
    put("model.K1", m.rates.k1.to_string());
    put("model.K2", m.rates.k2.to_string());
    put("model.psi", m.rates.psi.to_string());
    put("model.D", m.death.to_string());
    put("model.a", m.supply.to_string());
    put("model.b", m.relax.to_string());
    put("model.gamma", m.gamma.to_string());
    put("model.eps_reg", m.eps_reg.to_string());
    put("model.ell_cut", m.ell_cut.to_string());
    put("model.d_b", m.d_b.to_string());
    put("initial.profile", i.profile.name().to_string());
    put("initial.amplitude", i.amplitude.to_string());
    put("initial.background", i.background.to_string());
    put("initial.center", join(&i.center[..d]));
    put("initial.width", i.width.to_string());
    put("initial.fraction", i.fraction.to_string());
    put("initial.d0", i.d0.to_string());
    put(
        "initial.lift",
        match i.lift {
            Lift::Auto => "auto".into(),
            Lift::None => "none".into(),
            Lift::Value(v) => v.to_string(),
        },
    );
    put(
        "initial.sigma",
        match i.sigma {
            Sigma::Auto => "auto".into(),
            Sigma::Value(v) => v.to_string(),
        },
    );
    put("time.t_start", t.t_start.to_string());
    put("time.T_final", m.t_final.to_string());
    put("time.safety", t.safety.to_string());
    put("time.newton_tol", t.newton_tol.to_string());
    put("time.linear_tol", t.linear_tol.to_string());
    put("time.max_iters", t.max_iters.to_string());
    put("time.linear_max_iters", t.linear_max_iters.to_string());
    put("time.retry_max", t.retry_max.to_string());
    put("time.snapshot_stride", t.snapshot_stride.to_string());
    put("output.directory", cfg.output.directory.clone());
    put(
        "output.formats",
        cfg.output.formats.iter().map(|f| f.name()).collect::<Vec<_>>().join(", "),
    );
    put("sweep.gammas", join(&cfg.sweep.gammas));
    put(
        "sweep.tau",
        cfg.sweep.tau.map_or_else(|| "auto".to_string(), |t| t.to_string()),
    );
    put("sweep.delta", cfg.sweep.delta.to_string());
    put("study.eps", join(&cfg.study_eps));
    put("bench.grid_sizes", join(&cfg.bench_grid_sizes));
    out
}

//! Sectioned `key = value` run configuration. Keys are documented in
//! `docs/config.md`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use crate::electrostatics::FieldSpec;
use crate::grid::{GridSpec, DEFAULT_MAX_CELLS};
use crate::physics::{Interaction, MobilitySpec, ModelParams, Permittivity, Vec3};
use crate::stepper::{StationaryConfig, StepConfig};

const SECTIONS: [&str; 6] = ["grid", "model", "step", "initial", "field", "output"];

const KEYS: &[(&str, &[&str])] = &[
    ("grid", &["nx", "ny", "lx", "ly"]),
    (
        "model",
        &[
            "gamma",
            "theta",
            "alpha_aa",
            "alpha_ab",
            "alpha_bb",
            "delta",
            "eps",
            "cutoff_radius",
            "mobility",
            "mobility_matrix",
            "mobility_kappa",
            "interaction",
        ],
    ),
    (
        "step",
        &[
            "tau",
            "t_end",
            "grad_tol",
            "max_inner",
            "armijo_c",
            "backtrack",
            "tau_min",
            "tau_max",
            "tau_growth",
            "precond_tol",
            "solve_tol",
            "stat_tol",
            "max_steps",
        ],
    ),
    ("initial", &["kind", "mean", "amplitude", "seed", "margin", "path"]),
    ("field", &["kind", "ex", "ey", "terms"]),
    ("output", &["dir", "series_every", "snapshot_every"]),
];

/// One problem found in a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub line: Option<usize>,
    pub section: String,
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: ")?,
            None => {}
        }
        if self.key.is_empty() {
            write!(f, "[{}] {}", self.section, self.message)
        } else {
            write!(f, "[{}] {}: {}", self.section, self.key, self.message)
        }
    }
}

/// All problems of a rejected config.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub issues: Vec<ConfigIssue>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} configuration error(s):", self.issues.len())?;
        for i in &self.issues {
            writeln!(f, "  {i}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    UniformPlusNoise { mean: Vec3, amplitude: f64, seed: u64, margin: f64 },
    FromFile { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub series_every: usize,
    /// 0 writes only the first and last snapshot
    pub snapshot_every: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub params: ModelParams,
    pub step: StepConfig,
    pub stationary: StationaryConfig,
    pub solve_tol: f64,
    pub t_end: f64,
    pub initial: InitialSpec,
    pub field: FieldSpec,
    pub output: OutputSpec,
}

struct Entry {
    value: String,
    line: usize,
    used: bool,
}

struct Parser {
    entries: BTreeMap<(String, String), Entry>,
    issues: Vec<ConfigIssue>,
}

impl Parser {
    fn issue(&mut self, line: Option<usize>, section: &str, key: &str, message: impl Into<String>) {
        self.issues.push(ConfigIssue { line, section: section.into(), key: key.into(), message: message.into() });
    }

    fn raw(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        let e = self.entries.get_mut(&(section.to_string(), key.to_string()))?;
        e.used = true;
        Some((e.value.clone(), e.line))
    }

    fn has(&self, section: &str, key: &str) -> bool {
        self.entries.contains_key(&(section.to_string(), key.to_string()))
    }

    fn parse<T: std::str::FromStr>(&mut self, section: &str, key: &str, what: &str) -> Option<T> {
        let (v, line) = self.raw(section, key)?;
        match v.parse::<T>() {
            Ok(x) => Some(x),
            Err(_) => {
                self.issue(Some(line), section, key, format!("expected {what}, got '{v}'"));
                None
            }
        }
    }

    fn real(&mut self, section: &str, key: &str, default: f64) -> f64 {
        match self.parse::<f64>(section, key, "a number") {
            Some(x) if x.is_finite() => x,
            Some(x) => {
                let line = self.line(section, key);
                self.issue(line, section, key, format!("must be finite, got {x}"));
                default
            }
            None => default,
        }
    }

    fn positive(&mut self, section: &str, key: &str, default: f64) -> f64 {
        let x = self.real(section, key, default);
        if x <= 0.0 {
            let line = self.line(section, key);
            self.issue(line, section, key, format!("must be positive, got {x}"));
            return default;
        }
        x
    }

    fn count(&mut self, section: &str, key: &str, default: usize) -> usize {
        self.parse::<usize>(section, key, "a non-negative integer").unwrap_or(default)
    }

    fn reals(&mut self, section: &str, key: &str, n: usize) -> Option<Vec<f64>> {
        let (v, line) = self.raw(section, key)?;
        let parts: Result<Vec<f64>, _> = v.split(',').map(|s| s.trim().parse::<f64>()).collect();
        match parts {
            Ok(p) if p.len() == n && p.iter().all(|x| x.is_finite()) => Some(p),
            Ok(p) if p.len() != n => {
                self.issue(Some(line), section, key, format!("expected {n} comma-separated numbers, got {}", p.len()));
                None
            }
            _ => {
                self.issue(Some(line), section, key, format!("expected {n} finite numbers, got '{v}'"));
                None
            }
        }
    }

    fn triple(&mut self, section: &str, key: &str, default: Vec3) -> Vec3 {
        self.reals(section, key, 3).map(|v| [v[0], v[1], v[2]]).unwrap_or(default)
    }

    fn line(&self, section: &str, key: &str) -> Option<usize> {
        self.entries.get(&(section.to_string(), key.to_string())).map(|e| e.line)
    }

    fn require(&mut self, section: &str, key: &str) {
        if !self.has(section, key) {
            self.issue(None, section, key, "missing mandatory key");
        }
    }
}

fn lex(text: &str, p: &mut Parser) {
    let mut section: Option<String> = None;
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = raw.split(['#', ';']).next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if let Some(name) = body.strip_prefix('[') {
            let Some(name) = name.strip_suffix(']') else {
                p.issue(Some(line), "", "", format!("malformed section header '{body}'"));
                section = None;
                continue;
            };
            let name = name.trim().to_string();
            if !SECTIONS.contains(&name.as_str()) {
                p.issue(Some(line), &name, "", "unknown section");
                section = None;
            } else {
                section = Some(name);
            }
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            p.issue(Some(line), section.as_deref().unwrap_or(""), "", format!("expected 'key = value', got '{body}'"));
            continue;
        };
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        let Some(sec) = section.clone() else {
            p.issue(Some(line), "", &key, "key outside of a known section");
            continue;
        };
        let known = KEYS.iter().any(|(s, ks)| *s == sec && ks.contains(&key.as_str()));
        if !known {
            p.issue(Some(line), &sec, &key, "unknown key");
            continue;
        }
        if let Some(prev) = p.entries.get(&(sec.clone(), key.clone())) {
            let first = prev.line;
            p.issue(Some(line), &sec, &key, format!("duplicate key (first set on line {first})"));
            continue;
        }
        p.entries.insert((sec, key), Entry { value, line, used: false });
    }
}

/// Parses and validates a config with the default grid-size cap.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    parse_config_with(text, DEFAULT_MAX_CELLS)
}

/// Parses and validates a config, reporting every violation found.
pub fn parse_config_with(text: &str, max_cells: usize) -> Result<RunConfig, ConfigError> {
    let mut p = Parser { entries: BTreeMap::new(), issues: vec![] };
    lex(text, &mut p);

    // grid
    p.require("grid", "nx");
    p.require("grid", "ny");
    let nx = p.count("grid", "nx", 16);
    let ny = p.count("grid", "ny", 16);
    let lx = p.positive("grid", "lx", 1.0);
    let ly = p.positive("grid", "ly", 1.0);
    let grid = match GridSpec::with_max_cells(nx, ny, lx, ly, max_cells) {
        Ok(g) => Some(g),
        Err(e) => {
            let line = p.line("grid", "nx");
            p.issue(line, "grid", "nx", e.to_string());
            None
        }
    };

    // model
    let d = ModelParams::default();
    let gamma = p.triple("model", "gamma", d.gamma);
    let theta = p.triple("model", "theta", d.theta);
    let aa = p.real("model", "alpha_aa", d.alpha[0][0]);
    let ab = p.real("model", "alpha_ab", d.alpha[0][1]);
    let bb = p.real("model", "alpha_bb", d.alpha[1][1]);
    let delta = p.positive("model", "delta", d.delta);
    let (ea, eb, es) = d.permittivity.values();
    let eps = p.triple("model", "eps", [ea, eb, es]);
    let radius = p.positive("model", "cutoff_radius", d.permittivity.cutoff_radius());
    let permittivity = match Permittivity::new(eps[0], eps[1], eps[2], radius) {
        Ok(x) => x,
        Err(e) => {
            let line = p.line("model", "eps");
            p.issue(line, "model", "eps", e.to_string());
            d.permittivity.clone()
        }
    };
    let kind = p.raw("model", "mobility").unwrap_or(("projector".into(), 0));
    let mobility = match kind.0.as_str() {
        "projector" => MobilitySpec::ConstantProjector,
        "matrix" => match p.reals("model", "mobility_matrix", 9) {
            Some(v) => MobilitySpec::ConstantMatrix([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]]),
            None => {
                if !p.has("model", "mobility_matrix") {
                    p.issue(Some(kind.1), "model", "mobility_matrix", "required when mobility = matrix");
                }
                MobilitySpec::ConstantProjector
            }
        },
        "state" => {
            let kappa = p.real("model", "mobility_kappa", 0.5);
            MobilitySpec::StateDependent { kappa }
        }
        other => {
            p.issue(Some(kind.1), "model", "mobility", format!("expected projector, matrix or state, got '{other}'"));
            MobilitySpec::ConstantProjector
        }
    };
    for key in ["mobility_matrix", "mobility_kappa"] {
        let wanted = matches!((key, kind.0.as_str()), ("mobility_matrix", "matrix") | ("mobility_kappa", "state"));
        if p.has("model", key) && !wanted {
            let line = p.line("model", key);
            p.issue(line, "model", key, format!("not used with mobility = {}", kind.0));
        }
    }
    let interaction = match p.reals("model", "interaction", 9) {
        Some(v) => match Interaction::new([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]]) {
            Ok(i) => i,
            Err(e) => {
                let line = p.line("model", "interaction");
                p.issue(line, "model", "interaction", e.to_string());
                d.interaction.clone()
            }
        },
        None => d.interaction.clone(),
    };
    let params = ModelParams { gamma, theta, alpha: [[aa, ab], [ab, bb]], delta, mobility, permittivity, interaction };
    if let Err(e) = params.validate() {
        p.issue(None, "model", "", e.to_string());
    }

    // step
    let sd = StepConfig::default();
    let tau = p.positive("step", "tau", sd.tau);
    let step = StepConfig {
        tau,
        grad_tol: p.positive("step", "grad_tol", sd.grad_tol),
        max_inner: p.count("step", "max_inner", sd.max_inner),
        armijo_c: p.positive("step", "armijo_c", sd.armijo_c),
        backtrack: p.positive("step", "backtrack", sd.backtrack),
        tau_min: p.positive("step", "tau_min", sd.tau_min.min(tau)),
        precond_tol: p.positive("step", "precond_tol", sd.precond_tol),
        tau_growth: p.positive("step", "tau_growth", sd.tau_growth),
        tau_max: p.positive("step", "tau_max", tau),
    };
    if let Err(e) = step.validate() {
        p.issue(None, "step", "", e);
    }
    let t_end = p.real("step", "t_end", 0.2);
    if t_end < 0.0 {
        let line = p.line("step", "t_end");
        p.issue(line, "step", "t_end", format!("must be non-negative, got {t_end}"));
    }
    let solve_tol = p.positive("step", "solve_tol", crate::energy::SOLVE_TOL);
    let sdef = StationaryConfig::default();
    let stationary = StationaryConfig {
        stat_tol: p.positive("step", "stat_tol", sdef.stat_tol),
        max_steps: p.count("step", "max_steps", sdef.max_steps),
    };

    // initial
    let ikind = p.raw("initial", "kind").unwrap_or(("noise".into(), 0));
    let initial = match ikind.0.as_str() {
        "noise" => {
            p.require("initial", "seed");
            let mean = p.triple("initial", "mean", [0.3, 0.3, 0.4]);
            let amplitude = p.real("initial", "amplitude", 0.05);
            let seed = p.parse::<u64>("initial", "seed", "an unsigned 64-bit integer").unwrap_or(0);
            let margin = p.real("initial", "margin", 1e-3);
            let mline = p.line("initial", "mean");
            if (mean.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                p.issue(
                    mline,
                    "initial",
                    "mean",
                    format!("components must sum to 1, got {}", mean.iter().sum::<f64>()),
                );
            }
            if amplitude < 0.0 {
                let line = p.line("initial", "amplitude");
                p.issue(line, "initial", "amplitude", "must be non-negative");
            }
            if !(0.0..0.5).contains(&margin) {
                let line = p.line("initial", "margin");
                p.issue(line, "initial", "margin", "must lie in [0, 0.5)");
            }
            // c_S carries the noise of both other components
            let spread = [amplitude, amplitude, 2.0 * amplitude];
            for i in 0..3 {
                if mean[i] - spread[i] < margin || mean[i] + spread[i] > 1.0 - margin {
                    p.issue(
                        mline,
                        "initial",
                        "mean",
                        format!(
                            "component {i} = {} with noise {} leaves [{margin}, {}]",
                            mean[i],
                            spread[i],
                            1.0 - margin
                        ),
                    );
                }
            }
            InitialSpec::UniformPlusNoise { mean, amplitude, seed, margin }
        }
        "file" => match p.raw("initial", "path") {
            Some((path, _)) => InitialSpec::FromFile { path: path.into() },
            None => {
                p.issue(Some(ikind.1), "initial", "path", "required when kind = file");
                InitialSpec::FromFile { path: PathBuf::new() }
            }
        },
        other => {
            p.issue(Some(ikind.1), "initial", "kind", format!("expected noise or file, got '{other}'"));
            InitialSpec::FromFile { path: PathBuf::new() }
        }
    };
    for key in ["mean", "amplitude", "seed", "margin"] {
        if ikind.0 == "file" && p.has("initial", key) {
            let line = p.line("initial", key);
            p.issue(line, "initial", key, "not used with kind = file");
        }
    }

    // field
    let fkind = p.raw("field", "kind").unwrap_or(("constant".into(), 0));
    let field = match fkind.0.as_str() {
        "constant" => FieldSpec::Constant { ex: p.real("field", "ex", 1.0), ey: p.real("field", "ey", 0.0) },
        "polynomial" => match p.raw("field", "terms") {
            Some((v, line)) => match parse_terms(&v) {
                Ok(terms) => FieldSpec::PolynomialGradient { terms },
                Err(m) => {
                    p.issue(Some(line), "field", "terms", m);
                    FieldSpec::default()
                }
            },
            None => {
                p.issue(Some(fkind.1), "field", "terms", "required when kind = polynomial");
                FieldSpec::default()
            }
        },
        other => {
            p.issue(Some(fkind.1), "field", "kind", format!("expected constant or polynomial, got '{other}'"));
            FieldSpec::default()
        }
    };

    // output
    let dir = p.raw("output", "dir").map(|v| v.0).unwrap_or_else(|| "out".into());
    let series_every = p.count("output", "series_every", 1);
    if series_every == 0 {
        let line = p.line("output", "series_every");
        p.issue(line, "output", "series_every", "must be at least 1");
    }
    let output = OutputSpec { dir: dir.into(), series_every, snapshot_every: p.count("output", "snapshot_every", 0) };

    let unused: Vec<(String, String, usize)> =
        p.entries.iter().filter(|(_, e)| !e.used).map(|((s, k), e)| (s.clone(), k.clone(), e.line)).collect();
    for (s, k, line) in unused {
        // known key that the chosen variant ignores
        if !p.issues.iter().any(|i| i.section == s && i.key == k) {
            p.issue(Some(line), &s, &k, "not used by this configuration");
        }
    }

    if !p.issues.is_empty() {
        p.issues.sort_by_key(|i| i.line.unwrap_or(usize::MAX));
        return Err(ConfigError { issues: p.issues });
    }
    Ok(RunConfig {
        grid: grid.expect("grid errors are reported above"),
        params,
        step,
        stationary,
        solve_tol,
        t_end,
        initial,
        field,
        output,
    })
}

/// `a:p:q` triples separated by commas, for `a x^p y^q`.
fn parse_terms(v: &str) -> Result<Vec<(f64, u32, u32)>, String> {
    v.split(',')
        .map(|t| {
            let parts: Vec<&str> = t.trim().split(':').collect();
            let bad = || format!("expected coefficient:px:py, got '{}'", t.trim());
            if parts.len() != 3 {
                return Err(bad());
            }
            let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
            let px: u32 = parts[1].trim().parse().map_err(|_| bad())?;
            let py: u32 = parts[2].trim().parse().map_err(|_| bad())?;
            if !a.is_finite() {
                return Err(bad());
            }
            Ok((a, px, py))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[grid]\nnx = 16\nny = 8\n[initial]\nseed = 7\n";

    #[test]
    fn minimal_config_takes_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!((c.grid.nx, c.grid.ny, c.grid.lx), (16, 8, 1.0));
        assert_eq!(c.params, ModelParams::default());
        assert_eq!(c.step, StepConfig::default());
        assert_eq!(c.t_end, 0.2);
        assert_eq!(c.field, FieldSpec::default());
        assert_eq!(
            c.initial,
            InitialSpec::UniformPlusNoise { mean: [0.3, 0.3, 0.4], amplitude: 0.05, seed: 7, margin: 1e-3 }
        );
        assert_eq!(c.output.dir, PathBuf::from("out"));
    }

    #[test]
    fn rejects_simplex_violation() {
        let e = parse_config(&format!("{MINIMAL}mean = 0.5, 0.5, 0.5\n")).unwrap_err();
        assert!(e.issues.iter().any(|i| i.key == "mean" && i.message.contains("sum to 1") && i.line == Some(6)), "{e}");
    }

    #[test]
    fn rejects_negative_tau() {
        let e = parse_config(&format!("{MINIMAL}[step]\ntau = -1e-3\n")).unwrap_err();
        assert!(e.issues.iter().any(|i| i.section == "step" && i.key == "tau"), "{e}");
    }

    #[test]
    fn collects_every_violation() {
        let text = "[grid]\nnx = 4x\n[model]\ndelta = 0.9\nfoo = 1\n[step]\ntau = 0\n[bogus]\n";
        let e = parse_config(text).unwrap_err();
        let keys: Vec<_> = e.issues.iter().map(|i| (i.section.as_str(), i.key.as_str())).collect();
        for want in
            [("grid", "nx"), ("grid", "ny"), ("model", "foo"), ("step", "tau"), ("bogus", ""), ("initial", "seed")]
        {
            assert!(keys.contains(&want), "missing {want:?} in {e}");
        }
        assert!(e.issues.iter().any(|i| i.section == "model" && i.message.contains("delta")), "{e}");
    }

    #[test]
    fn comments_and_duplicates() {
        let text = "# run\n[grid] ; header\nnx = 8 # cells\nny = 8\nnx = 9\n[initial]\nseed=1\n";
        let e = parse_config(text).unwrap_err();
        assert_eq!(e.issues.len(), 1);
        assert!(e.issues[0].message.contains("duplicate") && e.issues[0].line == Some(5));
    }

    #[test]
    fn variants() {
        let text = "[grid]\nnx=8\nny=8\n[model]\nmobility = state\nmobility_kappa = 0.3\n\
                    [initial]\nkind = file\npath = init.pfch\n[field]\nkind = polynomial\nterms = 1:1:0, -0.5:2:1\n";
        let c = parse_config(text).unwrap();
        assert_eq!(c.params.mobility, MobilitySpec::StateDependent { kappa: 0.3 });
        assert_eq!(c.initial, InitialSpec::FromFile { path: "init.pfch".into() });
        assert_eq!(c.field, FieldSpec::PolynomialGradient { terms: vec![(1.0, 1, 0), (-0.5, 2, 1)] });
        let bad = "[grid]\nnx=8\nny=8\n[initial]\nseed=1\n[model]\nmobility_kappa = 0.3\n";
        assert!(parse_config(bad).is_err());
    }

    #[test]
    fn grid_cap_is_enforced() {
        let e = parse_config_with(MINIMAL, 100).unwrap_err();
        assert!(e.issues[0].message.contains("cap"), "{e}");
    }

    #[test]
    fn noise_must_fit_inside_the_simplex() {
        let e = parse_config(&format!("{MINIMAL}mean = 0.02, 0.3, 0.68\n")).unwrap_err();
        assert!(e.issues.iter().any(|i| i.key == "mean" && i.message.contains("component 0")), "{e}");
    }
}

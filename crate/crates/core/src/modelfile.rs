//! Plain-text model files.
//!
//! A file is a sequence of `[section]` headers with `key = value` lines;
//! `#` starts a comment, blank lines separate nothing, and both LF and CRLF
//! endings are accepted. `[meta]` and `[lagrangian]` are required, every
//! other section is optional. Expressions are parsed against the coordinate
//! count from `[meta]` and the names from `[params]`, so the file is read
//! in two passes.
//!
//! [`emit`] writes the canonical form: fixed section and key order, one
//! space around `=`, shortest round-tripping float digits. The printer
//! uses minimal parentheses, so a re-parsed expression may associate
//! differently from the tree it was printed from while still naming the
//! same function; compilation canonicalizes every ingredient, so an
//! exported scenario re-runs with identical output.

use crate::eom::JetState;
use crate::expr::{is_reserved_name, parse, ParseContext, ParseError};
use crate::integrate::{IntegratorConfig, Method};
use crate::model::ModelSpec;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

/// Parsed file: the model itself, optionally an initial state and
/// integrator settings for runs that should not depend on flags.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub spec: ModelSpec,
    pub initial: Option<JetState>,
    pub overrides: RunOverrides,
}

/// Integrator settings a file may pin; unset keys fall back to the
/// caller's configuration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunOverrides {
    pub method: Option<Method>,
    pub t0: Option<f64>,
    pub t1: Option<f64>,
    pub dt: Option<f64>,
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
    pub max_steps: Option<usize>,
    pub beta: Option<f64>,
    pub accel_ceiling: Option<f64>,
}

impl RunOverrides {
    /// Full snapshot of a configuration, for emitting self-contained files.
    pub fn pin(cfg: &IntegratorConfig) -> Self {
        RunOverrides {
            method: Some(cfg.method),
            t0: Some(cfg.t0),
            t1: Some(cfg.t1),
            dt: Some(cfg.dt),
            rel_tol: Some(cfg.rel_tol),
            abs_tol: Some(cfg.abs_tol),
            max_steps: Some(cfg.max_steps),
            beta: Some(cfg.beta),
            accel_ceiling: Some(cfg.accel_ceiling),
        }
    }

    pub fn apply(&self, cfg: &mut IntegratorConfig) {
        if let Some(v) = self.method {
            cfg.method = v;
        }
        if let Some(v) = self.t0 {
            cfg.t0 = v;
        }
        if let Some(v) = self.t1 {
            cfg.t1 = v;
        }
        if let Some(v) = self.dt {
            cfg.dt = v;
        }
        if let Some(v) = self.rel_tol {
            cfg.rel_tol = v;
        }
        if let Some(v) = self.abs_tol {
            cfg.abs_tol = v;
        }
        if let Some(v) = self.max_steps {
            cfg.max_steps = v;
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(v) = self.accel_ceiling {
            cfg.accel_ceiling = v;
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("line {line}: {detail}")]
    Malformed { line: usize, detail: String },
    #[error("line {line}: `{key}`: {source}")]
    Expr {
        line: usize,
        key: String,
        source: ParseError,
    },
    #[error("missing {what}")]
    Missing { what: &'static str },
}

fn malformed(line: usize, detail: impl Into<String>) -> ModelFileError {
    ModelFileError::Malformed {
        line,
        detail: detail.into(),
    }
}

/// (section, key, value, line number) tuples in file order.
type RawEntries = Vec<(String, String, String, usize)>;

const SECTIONS: [&str; 10] = [
    "meta",
    "params",
    "lagrangian",
    "rayleigh",
    "constraints",
    "radiative",
    "residual",
    "gauge",
    "options",
    "initial",
];

fn scan(src: &str) -> Result<RawEntries, ModelFileError> {
    let mut entries = RawEntries::new();
    let mut section: Option<String> = None;
    for (idx, raw) in src.lines().enumerate() {
        let line = idx + 1;
        let text = raw.trim_end_matches('\r').trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        if let Some(name) = text.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| malformed(line, "unterminated section header"))?
                .trim();
            if !SECTIONS.contains(&name) {
                return Err(malformed(line, format!("unknown section [{name}]")));
            }
            section = Some(name.to_string());
            continue;
        }
        let Some((key, value)) = text.split_once('=') else {
            return Err(malformed(line, "expected `key = value`"));
        };
        let Some(section) = &section else {
            return Err(malformed(line, "entry before any section header"));
        };
        entries.push((
            section.clone(),
            key.trim().to_string(),
            value.trim().to_string(),
            line,
        ));
    }
    Ok(entries)
}

fn parse_real(value: &str, line: usize, key: &str) -> Result<f64, ModelFileError> {
    let v: f64 = value
        .parse()
        .map_err(|_| malformed(line, format!("`{key}`: not a number: {value}")))?;
    if !v.is_finite() {
        return Err(malformed(line, format!("`{key}`: not finite: {value}")));
    }
    Ok(v)
}

fn parse_bool(value: &str, line: usize, key: &str) -> Result<bool, ModelFileError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(malformed(
            line,
            format!("`{key}`: expected true or false, got {value}"),
        )),
    }
}

fn parse_reals(value: &str, line: usize, key: &str) -> Result<Vec<f64>, ModelFileError> {
    value
        .split(',')
        .map(|part| parse_real(part.trim(), line, key))
        .collect()
}

/// Keys like `f3` or `Q1`: a fixed prefix and a decimal index.
fn indexed_key(key: &str, prefix: char) -> Option<usize> {
    let rest = key.strip_prefix(prefix)?;
    if rest.is_empty() || rest.len() > 1 && rest.starts_with('0') {
        return None;
    }
    rest.parse().ok()
}

pub fn parse_str(src: &str) -> Result<ModelFile, ModelFileError> {
    let entries = scan(src)?;

    // First pass: the parse context needs n, the labels, and the parameter
    // names before any expression can be read.
    let mut n: Option<usize> = None;
    let mut coords: Option<Vec<String>> = None;
    let mut params: BTreeMap<String, f64> = BTreeMap::new();
    for (section, key, value, line) in &entries {
        match (section.as_str(), key.as_str()) {
            ("meta", "n") => {
                let v: usize = value
                    .parse()
                    .map_err(|_| malformed(*line, format!("`n`: not an integer: {value}")))?;
                if n.replace(v).is_some() {
                    return Err(malformed(*line, "duplicate `n`"));
                }
            }
            ("meta", "coords") => {
                let v: Vec<String> = value.split(',').map(|c| c.trim().to_string()).collect();
                if v.iter().any(String::is_empty) {
                    return Err(malformed(*line, "empty coordinate label"));
                }
                if coords.replace(v).is_some() {
                    return Err(malformed(*line, "duplicate `coords`"));
                }
            }
            ("meta", other) => {
                return Err(malformed(*line, format!("unknown [meta] key `{other}`")))
            }
            ("params", name) => {
                if is_reserved_name(name) {
                    return Err(malformed(
                        *line,
                        format!("parameter `{name}` shadows a reserved name"),
                    ));
                }
                let v = parse_real(value, *line, name)?;
                if params.insert(name.to_string(), v).is_some() {
                    return Err(malformed(*line, format!("duplicate parameter `{name}`")));
                }
            }
            _ => {}
        }
    }
    let n = n.ok_or(ModelFileError::Missing { what: "[meta] n" })?;
    let ctx = ParseContext::unconstrained(n).with_params(params.keys().map(String::as_str));
    let expr = |value: &str, key: &str, line: usize| {
        parse(value, &ctx).map_err(|source| ModelFileError::Expr {
            line,
            key: key.to_string(),
            source,
        })
    };

    let mut spec = ModelSpec::new(n);
    spec.params = params;
    if let Some(coords) = coords {
        spec.coords = coords;
    }
    let mut saw_lagrangian = false;
    let mut constraints: BTreeMap<usize, _> = BTreeMap::new();
    let mut residuals: BTreeMap<usize, _> = BTreeMap::new();
    let mut initial_t: Option<f64> = None;
    let mut initial_q: Option<Vec<f64>> = None;
    let mut initial_qd: Option<Vec<f64>> = None;
    let mut initial_qdd: Option<Vec<f64>> = None;
    let mut overrides = RunOverrides::default();

    for (section, key, value, line) in &entries {
        let line = *line;
        match (section.as_str(), key.as_str()) {
            ("meta", _) | ("params", _) => {}
            ("lagrangian", "L") => {
                if saw_lagrangian {
                    return Err(malformed(line, "duplicate `L`"));
                }
                spec.lagrangian = expr(value, key, line)?;
                saw_lagrangian = true;
            }
            ("rayleigh", "R") => {
                spec.rayleigh = expr(value, key, line)?;
            }
            ("constraints", k) => {
                let Some(index) = indexed_key(k, 'f') else {
                    return Err(malformed(line, format!("expected `f<index>`, got `{k}`")));
                };
                if constraints.insert(index, expr(value, key, line)?).is_some() {
                    return Err(malformed(line, format!("duplicate `{k}`")));
                }
            }
            ("radiative", "PE") => {
                spec.radiative = expr(value, key, line)?;
            }
            ("radiative", "homogeneous") => {
                spec.homogeneous = parse_bool(value, line, key)?;
            }
            ("residual", k) => {
                let Some(index) = indexed_key(k, 'Q') else {
                    return Err(malformed(line, format!("expected `Q<index>`, got `{k}`")));
                };
                if residuals.insert(index, expr(value, key, line)?).is_some() {
                    return Err(malformed(line, format!("duplicate `{k}`")));
                }
            }
            ("gauge", "g") => {
                spec.gauge = Some(expr(value, key, line)?);
            }
            ("options", "regularize_sgn") => {
                // Only an explicit epsilon makes smoothing effective; the
                // flag alone selects the default width.
                if parse_bool(value, line, key)? && spec.regularize_sgn.is_none() {
                    spec.regularize_sgn = Some(DEFAULT_SGN_EPSILON);
                }
            }
            ("options", "epsilon") => {
                spec.regularize_sgn = Some(parse_real(value, line, key)?);
            }
            ("options", "method") => {
                overrides.method = Some(match value.as_str() {
                    "rk4" => Method::Rk4,
                    "rk45" => Method::Rk45,
                    other => {
                        return Err(malformed(
                            line,
                            format!("`method`: expected rk4 or rk45, got {other}"),
                        ))
                    }
                });
            }
            ("options", "t0") => overrides.t0 = Some(parse_real(value, line, key)?),
            ("options", "t1") => overrides.t1 = Some(parse_real(value, line, key)?),
            ("options", "dt") => overrides.dt = Some(parse_real(value, line, key)?),
            ("options", "rel_tol") => overrides.rel_tol = Some(parse_real(value, line, key)?),
            ("options", "abs_tol") => overrides.abs_tol = Some(parse_real(value, line, key)?),
            ("options", "beta") => overrides.beta = Some(parse_real(value, line, key)?),
            ("options", "accel_ceiling") => {
                overrides.accel_ceiling = Some(parse_real(value, line, key)?)
            }
            ("options", "max_steps") => {
                overrides.max_steps = Some(value.parse().map_err(|_| {
                    malformed(line, format!("`max_steps`: not an integer: {value}"))
                })?);
            }
            ("initial", "t") => initial_t = Some(parse_real(value, line, key)?),
            ("initial", "q") => initial_q = Some(parse_reals(value, line, key)?),
            ("initial", "qd") => initial_qd = Some(parse_reals(value, line, key)?),
            ("initial", "qdd") => initial_qdd = Some(parse_reals(value, line, key)?),
            (section, other) => {
                return Err(malformed(
                    line,
                    format!("unknown [{section}] key `{other}`"),
                ));
            }
        }
    }
    if !saw_lagrangian {
        return Err(ModelFileError::Missing {
            what: "[lagrangian] L",
        });
    }
    for (expected, (index, _)) in constraints.iter().enumerate() {
        if *index != expected {
            return Err(ModelFileError::Missing {
                what: "contiguous constraint indices f0, f1, ...",
            });
        }
    }
    spec.constraints = constraints.into_values().collect();
    if !residuals.is_empty() {
        if residuals.len() != n || residuals.keys().copied().ne(0..n) {
            return Err(ModelFileError::Missing {
                what: "residual components Q0 .. Q{n-1}, one per coordinate",
            });
        }
        spec.residual_forces = residuals.into_values().collect();
    }

    let initial = match (initial_q, initial_qd) {
        (Some(q), Some(qd)) => Some(JetState {
            t: initial_t.unwrap_or(0.0),
            q,
            qd,
            qdd: initial_qdd.unwrap_or_default(),
            qddd: Vec::new(),
            qdddd: Vec::new(),
            mu: Vec::new(),
        }),
        (None, None) => None,
        _ => {
            return Err(ModelFileError::Missing {
                what: "both initial_q and initial_qd when either is given",
            })
        }
    };

    Ok(ModelFile {
        spec,
        initial,
        overrides,
    })
}

/// Default `sgn` smoothing width when a file turns smoothing on without
/// choosing one.
pub const DEFAULT_SGN_EPSILON: f64 = 1e-3;

fn push_reals(out: &mut String, key: &str, values: &[f64]) {
    let parts: Vec<String> = values.iter().map(|v| format!("{v}")).collect();
    let _ = writeln!(out, "{key} = {}", parts.join(","));
}

/// Canonical text form: fixed section order, one key per line, omitted
/// sections for absent ingredients. `parse_str(&emit(f)) == f` up to the
/// expression trees re-reading to the same normal form.
pub fn emit(file: &ModelFile) -> String {
    let spec = &file.spec;
    let mut out = String::new();
    let _ = writeln!(out, "[meta]");
    let _ = writeln!(out, "n = {}", spec.n);
    let default_coords: Vec<String> = (0..spec.n).map(|i| format!("q{i}")).collect();
    if spec.coords != default_coords {
        let _ = writeln!(out, "coords = {}", spec.coords.join(","));
    }
    if !spec.params.is_empty() {
        let _ = writeln!(out, "\n[params]");
        for (name, value) in &spec.params {
            let _ = writeln!(out, "{name} = {value}");
        }
    }
    let _ = writeln!(out, "\n[lagrangian]");
    let _ = writeln!(out, "L = {}", spec.lagrangian);
    if !spec.rayleigh.is_zero() {
        let _ = writeln!(out, "\n[rayleigh]");
        let _ = writeln!(out, "R = {}", spec.rayleigh);
    }
    if !spec.constraints.is_empty() {
        let _ = writeln!(out, "\n[constraints]");
        for (a, f) in spec.constraints.iter().enumerate() {
            let _ = writeln!(out, "f{a} = {f}");
        }
    }
    if !spec.radiative.is_zero() || spec.homogeneous {
        let _ = writeln!(out, "\n[radiative]");
        if !spec.radiative.is_zero() {
            let _ = writeln!(out, "PE = {}", spec.radiative);
        }
        if spec.homogeneous {
            let _ = writeln!(out, "homogeneous = true");
        }
    }
    if !spec.residual_forces.is_empty() {
        let _ = writeln!(out, "\n[residual]");
        for (k, q) in spec.residual_forces.iter().enumerate() {
            let _ = writeln!(out, "Q{k} = {q}");
        }
    }
    if let Some(g) = &spec.gauge {
        let _ = writeln!(out, "\n[gauge]");
        let _ = writeln!(out, "g = {g}");
    }

    let ov = &file.overrides;
    let has_options = spec.regularize_sgn.is_some() || *ov != RunOverrides::default();
    if has_options {
        let _ = writeln!(out, "\n[options]");
        if let Some(eps) = spec.regularize_sgn {
            let _ = writeln!(out, "regularize_sgn = true");
            let _ = writeln!(out, "epsilon = {eps}");
        }
        if let Some(m) = ov.method {
            let name = match m {
                Method::Rk4 => "rk4",
                Method::Rk45 => "rk45",
            };
            let _ = writeln!(out, "method = {name}");
        }
        for (key, value) in [
            ("t0", ov.t0),
            ("t1", ov.t1),
            ("dt", ov.dt),
            ("rel_tol", ov.rel_tol),
            ("abs_tol", ov.abs_tol),
            ("beta", ov.beta),
            ("accel_ceiling", ov.accel_ceiling),
        ] {
            if let Some(v) = value {
                let _ = writeln!(out, "{key} = {v}");
            }
        }
        if let Some(v) = ov.max_steps {
            let _ = writeln!(out, "max_steps = {v}");
        }
    }
    if let Some(initial) = &file.initial {
        let _ = writeln!(out, "\n[initial]");
        let _ = writeln!(out, "t = {}", initial.t);
        push_reals(&mut out, "q", &initial.q);
        push_reals(&mut out, "qd", &initial.qd);
        if !initial.qdd.is_empty() {
            push_reals(&mut out, "qdd", &initial.qdd);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::compile;
    use crate::scenarios;

    #[test]
    fn minimal_file_parses() {
        let file = parse_str(
            "# free particle\n[meta]\nn = 1\n\n[lagrangian]\nL = 0.5*qd0^2\n",
        )
        .unwrap();
        assert_eq!(file.spec.n, 1);
        assert!(file.initial.is_none());
        assert!(compile(&file.spec).is_ok());
    }

    #[test]
    fn crlf_and_comments_are_accepted() {
        let src = "[meta]\r\nn = 1\r\n# comment\r\n[lagrangian]\r\nL = 0.5*qd0^2\r\n";
        assert!(parse_str(src).is_ok());
    }

    #[test]
    fn full_file_round_trips_through_emit() {
        let src = "\
[meta]
n = 2
coords = x,y

[params]
k = 0.25
m = 1.5

[lagrangian]
L = 0.5*m*(qd0^2 + qd1^2) - 0.5*k*q0^2

[rayleigh]
R = 0.5*qd0^2

[residual]
Q0 = sin(t)
Q1 = 0

[options]
method = rk4
t1 = 2.5
dt = 0.001

[initial]
t = 0
q = 0,1
qd = 1,0
";
        let file = parse_str(src).unwrap();
        assert_eq!(file.spec.params["m"], 1.5);
        assert_eq!(file.overrides.method, Some(Method::Rk4));
        assert_eq!(file.overrides.t1, Some(2.5));
        let again = parse_str(&emit(&file)).unwrap();
        assert_eq!(file, again);
        // Emission is a fixed point: canonical text re-emits byte-for-byte.
        assert_eq!(emit(&file), emit(&again));
    }

    /// Expressions compare through the canonicalizer the compiler applies,
    /// since the printer's minimal parentheses allow the re-parsed tree to
    /// associate differently while naming the same function.
    fn canonical(spec: &ModelSpec) -> ModelSpec {
        let fix = crate::expr::normalize_poly;
        let mut s = spec.clone();
        s.lagrangian = fix(&s.lagrangian);
        s.rayleigh = fix(&s.rayleigh);
        s.constraints = s.constraints.iter().map(fix).collect();
        s.radiative = fix(&s.radiative);
        s.residual_forces = s.residual_forces.iter().map(fix).collect();
        s.gauge = s.gauge.as_ref().map(fix);
        s
    }

    #[test]
    fn every_builtin_scenario_round_trips() {
        for sc in scenarios::all() {
            let file = ModelFile {
                spec: sc.spec.clone(),
                initial: Some(sc.initial.clone()),
                overrides: RunOverrides::pin(&sc.config),
            };
            let text = emit(&file);
            let back = parse_str(&text).unwrap_or_else(|e| {
                panic!("{} failed to re-parse: {e}\n{text}", sc.name)
            });
            assert_eq!(
                canonical(&back.spec),
                canonical(&file.spec),
                "{} spec drifted through emit/parse",
                sc.name
            );
            assert_eq!(back.initial, file.initial, "{} initial drifted", sc.name);
            assert_eq!(back.overrides, file.overrides, "{} overrides drifted", sc.name);
            let mut cfg = IntegratorConfig::default();
            back.overrides.apply(&mut cfg);
            assert_eq!(cfg, sc.config, "{} config drifted", sc.name);
            assert!(compile(&back.spec).is_ok(), "{} no longer compiles", sc.name);
        }
    }

    #[test]
    fn unknown_sections_and_keys_are_rejected() {
        assert!(matches!(
            parse_str("[metadata]\nn = 1\n"),
            Err(ModelFileError::Malformed { line: 1, .. })
        ));
        assert!(matches!(
            parse_str("[meta]\nn = 1\nbogus = 2\n[lagrangian]\nL = q0\n"),
            Err(ModelFileError::Malformed { line: 3, .. })
        ));
        assert!(matches!(
            parse_str("[meta]\nn = 1\n[options]\nwarp = 9\n[lagrangian]\nL = q0\n"),
            Err(ModelFileError::Malformed { line: 4, .. })
        ));
    }

    #[test]
    fn reserved_parameter_names_are_rejected() {
        let src = "[meta]\nn = 1\n[params]\nqd0 = 2\n[lagrangian]\nL = qd0\n";
        let err = parse_str(src).unwrap_err();
        assert!(err.to_string().contains("reserved"), "{err}");
    }

    #[test]
    fn missing_required_sections_are_reported() {
        assert!(matches!(
            parse_str("[lagrangian]\nL = qd0\n"),
            Err(ModelFileError::Missing { what }) if what.contains("[meta]")
        ));
        assert!(matches!(
            parse_str("[meta]\nn = 1\n"),
            Err(ModelFileError::Missing { what }) if what.contains("[lagrangian]")
        ));
    }

    #[test]
    fn constraint_indices_must_be_contiguous() {
        let src = "[meta]\nn = 2\n[lagrangian]\nL = 0.5*(qd0^2+qd1^2)\n\
                   [constraints]\nf1 = qd0\n";
        assert!(parse_str(src).is_err());
    }

    #[test]
    fn residuals_must_cover_every_coordinate() {
        let src = "[meta]\nn = 2\n[lagrangian]\nL = 0.5*(qd0^2+qd1^2)\n\
                   [residual]\nQ0 = 1\n";
        assert!(parse_str(src).is_err());
    }

    #[test]
    fn bad_expression_reports_line_and_key() {
        let src = "[meta]\nn = 1\n[lagrangian]\nL = 0.5*qd9^2\n";
        match parse_str(src) {
            Err(ModelFileError::Expr { line: 4, key, .. }) => assert_eq!(key, "L"),
            other => panic!("expected expression error, got {other:?}"),
        }
    }

    #[test]
    fn partial_initial_state_is_rejected() {
        let src = "[meta]\nn = 1\n[lagrangian]\nL = 0.5*qd0^2\n\
                   [initial]\nq = 1\n";
        assert!(parse_str(src).is_err());
    }

    #[test]
    fn gauge_section_parses_into_the_spec() {
        let src = "[meta]\nn = 1\n[lagrangian]\nL = 0.5*qd0^2\n\
                   [radiative]\nPE = -(1/6)*qdd0^2\n[gauge]\ng = qd0*qdd0\n";
        let file = parse_str(src).unwrap();
        assert!(file.spec.gauge.is_some());
        assert!(compile(&file.spec).is_ok());
    }
}

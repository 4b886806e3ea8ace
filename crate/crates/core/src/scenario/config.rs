//! Scenario files: TOML with flat dotted keys.
//!
//! ```toml
//! # comment
//! engine.g = 0.3333333333333333
//! hot.shape = "band_stop"
//! state.kind = ["coherent", "thermal"]
//! cold.table = [[0, 1], [10.5, 1], [11, 0]]
//! ```
//!
//! Overrides (`parse_with`, `--set`) take bare values: `state.kind=coherent, fock`.
//!
//! Frequencies, rates and temperatures are in units of `Omega_M` unless
//! `units = absolute`, in which case every such value is divided by
//! `engine.omega_m` (and times multiplied by it) while parsing.

use std::collections::BTreeMap;
use std::path::PathBuf;

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::baths::{BathLabel, BathSpectrum, EngineParams, SpectrumShape};
use crate::hilbert::{StateKind, StateSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error("`{key}`: cannot read {value:?} as {expected}")]
    Type { key: String, value: String, expected: &'static str },
    #[error("`{key}`: {msg}")]
    Invalid { key: String, msg: String },
    #[error("no bundled config named `{0}`")]
    UnknownBundle(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyType {
    Number,
    Integer,
    Text,
    Bool,
    List,
}

impl KeyType {
    pub fn is_scalar(self) -> bool {
        matches!(self, KeyType::Number | KeyType::Integer)
    }
}

const BATH_KEYS: &[(&str, KeyType)] = &[
    ("temperature", KeyType::Number),
    ("shape", KeyType::Text),
    ("peak", KeyType::Number),
    ("center", KeyType::Number),
    ("width", KeyType::Number),
    ("stop_lo", KeyType::Number),
    ("stop_hi", KeyType::Number),
    ("edge", KeyType::Number),
    ("table", KeyType::List),
];

const OTHER_KEYS: &[(&str, KeyType)] = &[
    ("name", KeyType::Text),
    ("units", KeyType::Text),
    ("engine.omega_o", KeyType::Number),
    ("engine.omega_m", KeyType::Number),
    ("engine.g", KeyType::Number),
    ("engine.gamma_m", KeyType::Number),
    ("engine.n_m_th", KeyType::Number),
    ("state.kind", KeyType::List),
    ("state.amplitude", KeyType::Number),
    ("state.phase", KeyType::Number),
    ("state.components", KeyType::Text),
    ("grid.t_end", KeyType::Text),
    ("grid.window", KeyType::Number),
    ("grid.samples", KeyType::Integer),
    ("run.pipeline", KeyType::Text),
    ("run.dim_o", KeyType::Integer),
    ("run.dim_m", KeyType::Integer),
    ("run.seed", KeyType::Integer),
    ("run.out", KeyType::Text),
    ("run.dressing", KeyType::Bool),
    ("run.leak_limit", KeyType::Number),
    ("run.tol", KeyType::Number),
    ("run.negate_gamma", KeyType::Bool),
    ("run.mc_trajectories", KeyType::Integer),
];

/// Declared type of a key, or `None` for an unknown key.
pub fn key_type(key: &str) -> Option<KeyType> {
    if let Some((sec, k)) = key.split_once('.') {
        if sec == "hot" || sec == "cold" {
            return BATH_KEYS.iter().find(|(n, _)| *n == k).map(|(_, t)| *t);
        }
    }
    OTHER_KEYS.iter().find(|(n, _)| *n == key).map(|(_, t)| *t)
}

/// Every accepted key, for help output.
pub fn known_keys() -> Vec<String> {
    let mut v: Vec<String> = OTHER_KEYS.iter().map(|(k, _)| k.to_string()).collect();
    for sec in ["hot", "cold"] {
        v.extend(BATH_KEYS.iter().map(|(k, _)| format!("{sec}.{k}")));
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pipeline {
    Oracle,
    Analytic,
    Compare,
}

impl std::str::FromStr for Pipeline {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "oracle" => Ok(Pipeline::Oracle),
            "analytic" => Ok(Pipeline::Analytic),
            "compare" => Ok(Pipeline::Compare),
            _ => Err(format!("pipeline must be oracle, analytic or compare (got {s})")),
        }
    }
}

impl std::fmt::Display for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pipeline::Oracle => "oracle",
            Pipeline::Analytic => "analytic",
            Pipeline::Compare => "compare",
        })
    }
}

/// End of the time grid: fixed, or a multiple of `1/|gamma + Gamma_M|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeEnd {
    Fixed(f64),
    DriftWindows(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelledState {
    pub label: String,
    pub spec: StateSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub params: EngineParams,
    pub states: Vec<LabelledState>,
    pub t_end: TimeEnd,
    pub samples: usize,
    pub pipeline: Pipeline,
    pub dim_o: Option<usize>,
    pub dim_m: Option<usize>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub dressing: bool,
    pub leak_limit: f64,
    pub tol: f64,
    pub negate_gamma: bool,
    pub mc_trajectories: usize,
    raw: BTreeMap<String, String>,
}

const BUNDLED: &[(&str, &str)] = &[
    ("default_engine", include_str!("../../configs/default_engine.toml")),
    ("single_bath", include_str!("../../configs/single_bath.toml")),
    ("fig2_states", include_str!("../../configs/fig2_states.toml")),
    ("thermal_noise_gain", include_str!("../../configs/thermal_noise_gain.toml")),
];

pub fn bundled_names() -> Vec<&'static str> {
    BUNDLED.iter().map(|(n, _)| *n).collect()
}

pub fn bundled(name: &str) -> Result<&'static str, ConfigError> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t).ok_or_else(|| ConfigError::UnknownBundle(name.into()))
}

fn syntax(text: &str, e: &toml::de::Error) -> ConfigError {
    let line = e.span().map_or(0, |r| text[..r.start.min(text.len())].matches('\n').count() + 1);
    ConfigError::Syntax { line, msg: e.message().trim().to_string() }
}

fn scalar_text(v: &toml::Value) -> Option<String> {
    match v {
        toml::Value::String(s) => Some(s.clone()),
        toml::Value::Integer(i) => Some(i.to_string()),
        toml::Value::Float(f) => Some(format!("{f:?}")),
        _ => None,
    }
}

/// Canonical text form of a value, checked against the key's declared type.
fn value_text(key: &str, ty: KeyType, v: &toml::Value) -> Result<String, ConfigError> {
    use toml::Value as V;
    let mismatch = |expected| ConfigError::Type { key: key.into(), value: v.to_string(), expected };
    match (ty, v) {
        (KeyType::Number, V::Integer(_) | V::Float(_)) => Ok(scalar_text(v).unwrap()),
        (KeyType::Number, _) => Err(mismatch("a number")),
        (KeyType::Integer, V::Integer(i)) => Ok(i.to_string()),
        (KeyType::Integer, _) => Err(mismatch("an integer")),
        (KeyType::Bool, V::Boolean(b)) => Ok(b.to_string()),
        (KeyType::Bool, _) => Err(mismatch("true or false")),
        (KeyType::Text, V::String(_) | V::Integer(_) | V::Float(_)) => Ok(scalar_text(v).unwrap()),
        (KeyType::Text, _) => Err(mismatch("a string")),
        (KeyType::List, V::String(s)) => Ok(s.clone()),
        (KeyType::List, V::Array(items)) => {
            let parts = items
                .iter()
                .map(|it| match it {
                    V::Array(pair) if pair.len() == 2 => match (scalar_text(&pair[0]), scalar_text(&pair[1])) {
                        (Some(a), Some(b)) => Some(format!("{a}:{b}")),
                        _ => None,
                    },
                    other => scalar_text(other),
                })
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| mismatch("a list of strings, numbers or [x, y] pairs"))?;
            Ok(parts.join(", "))
        }
        (KeyType::List, _) => Err(mismatch("a list")),
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, String>) -> Result<(), ConfigError> {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (v, key_type(&key)) {
            (toml::Value::Table(t), None) if prefix.is_empty() => flatten(&key, t, out)?,
            (_, None) => return Err(ConfigError::UnknownKey(key)),
            (v, Some(ty)) => {
                out.insert(key.clone(), value_text(&key, ty, v)?);
            }
        }
    }
    Ok(())
}

/// Parses TOML text with flat dotted keys into `key -> value text`,
/// rejecting unknown keys and mistyped values.
pub fn parse_raw(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let table: toml::Table = toml::from_str(text).map_err(|e| syntax(text, &e))?;
    let mut map = BTreeMap::new();
    flatten("", &table, &mut map)?;
    Ok(map)
}

struct Reader<'a> {
    raw: &'a BTreeMap<String, String>,
}

impl Reader<'_> {
    fn text(&self, key: &str) -> Option<&str> {
        self.raw.get(key).map(|s| s.as_str())
    }

    fn num(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.text(key)
            .map(|v| {
                v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| ConfigError::Type {
                    key: key.into(),
                    value: v.into(),
                    expected: "a finite number",
                })
            })
            .transpose()
    }

    fn num_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        Ok(self.num(key)?.unwrap_or(default))
    }

    fn req(&self, key: &str) -> Result<f64, ConfigError> {
        self.num(key)?.ok_or_else(|| ConfigError::Missing(key.into()))
    }

    fn int(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        self.text(key)
            .map(|v| v.parse::<u64>().map_err(|_| ConfigError::Type { key: key.into(), value: v.into(), expected: "a non-negative integer" }))
            .transpose()
    }

    fn boolean(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.text(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(ConfigError::Type { key: key.into(), value: v.into(), expected: "true or false" }),
        }
    }
}

fn invalid(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.into(), msg: msg.into() }
}

fn bath(r: &Reader<'_>, sec: &str, label: BathLabel, fscale: f64) -> Result<BathSpectrum, ConfigError> {
    let k = |n: &str| format!("{sec}.{n}");
    let temperature = r.req(&k("temperature"))? / fscale;
    let shape_name = r.text(&k("shape")).ok_or_else(|| ConfigError::Missing(k("shape")))?;
    let allowed: &[&str] = match shape_name {
        "lorentzian" => &["center", "width", "peak"],
        "band_stop" => &["peak", "stop_lo", "stop_hi", "edge"],
        "flat" => &["peak"],
        "tabulated" => &["table"],
        other => return Err(invalid(&k("shape"), format!("unknown shape {other:?}; use lorentzian, band_stop, flat or tabulated"))),
    };
    for (name, _) in BATH_KEYS {
        if !["temperature", "shape"].contains(name) && !allowed.contains(name) && r.text(&k(name)).is_some() {
            return Err(invalid(&k(name), format!("not used by shape {shape_name}")));
        }
    }
    let shape = match shape_name {
        "lorentzian" => SpectrumShape::Lorentzian {
            center: r.req(&k("center"))? / fscale,
            width: r.req(&k("width"))? / fscale,
            peak: r.req(&k("peak"))? / fscale,
        },
        "band_stop" => SpectrumShape::BandStop {
            peak: r.req(&k("peak"))? / fscale,
            stop_lo: r.req(&k("stop_lo"))? / fscale,
            stop_hi: r.req(&k("stop_hi"))? / fscale,
            edge: r.num_or(&k("edge"), 2.0 * fscale)? / fscale,
        },
        "flat" => SpectrumShape::Flat { peak: r.req(&k("peak"))? / fscale },
        _ => {
            let key = k("table");
            let text = r.text(&key).ok_or_else(|| ConfigError::Missing(key.clone()))?;
            let mut pts = Vec::new();
            for item in text.split(',') {
                let (w, g) = item.trim().split_once(':').ok_or_else(|| invalid(&key, format!("entry {item:?} is not `omega:G`")))?;
                let parse = |s: &str| {
                    s.trim().parse::<f64>().map_err(|_| ConfigError::Type { key: key.clone(), value: s.into(), expected: "a number" })
                };
                pts.push((parse(w)? / fscale, parse(g)? / fscale));
            }
            SpectrumShape::Tabulated(pts)
        }
    };
    BathSpectrum::new(label, temperature, shape).map_err(|e| invalid(sec, e.to_string()))
}

/// Parses `fock(2)`, `thermal(0.5)`, `coherent(1, 0.5)` (re, im) and
/// `phase_averaged(1)`.
fn atom(s: &str, key: &str) -> Result<StateKind, ConfigError> {
    let s = s.trim();
    let (name, rest) = s.split_once('(').ok_or_else(|| invalid(key, format!("expected kind(args), got {s:?}")))?;
    let args = rest.strip_suffix(')').ok_or_else(|| invalid(key, format!("missing `)` in {s:?}")))?;
    let nums: Vec<f64> = args
        .split(',')
        .map(|a| a.trim().parse::<f64>().map_err(|_| ConfigError::Type { key: key.into(), value: a.into(), expected: "a number" }))
        .collect::<Result<_, _>>()?;
    match (name.trim(), nums.as_slice()) {
        ("fock", [n]) if *n >= 0.0 && n.fract() == 0.0 => Ok(StateKind::Fock(*n as usize)),
        ("thermal", [n]) => Ok(StateKind::Thermal(*n)),
        ("coherent", [re]) => Ok(StateKind::Coherent(C64::new(*re, 0.0))),
        ("coherent", [re, im]) => Ok(StateKind::Coherent(C64::new(*re, *im))),
        ("phase_averaged", [r]) => Ok(StateKind::PhaseAveragedCoherent(*r)),
        _ => Err(invalid(key, format!("cannot build a state from {s:?}"))),
    }
}

fn states(r: &Reader<'_>, omega_m: f64) -> Result<Vec<LabelledState>, ConfigError> {
    let kinds = r.text("state.kind").ok_or_else(|| ConfigError::Missing("state.kind".into()))?;
    let amp = r.num_or("state.amplitude", 1.0)?;
    let phase = r.num_or("state.phase", 0.0)?;
    let mut out = Vec::new();
    for kind in kinds.split(',').map(str::trim) {
        let sk = match kind {
            "coherent" => StateKind::Coherent(C64::from_polar(amp, phase)),
            "thermal" => StateKind::Thermal(amp),
            "phase_averaged" => StateKind::PhaseAveragedCoherent(amp),
            "fock" => {
                if !(amp >= 0.0 && amp.fract() == 0.0) {
                    return Err(invalid("state.amplitude", format!("Fock level must be a whole number (got {amp})")));
                }
                StateKind::Fock(amp as usize)
            }
            "mixture" => {
                let key = "state.components";
                let text = r.text(key).ok_or_else(|| ConfigError::Missing(key.into()))?;
                let mut parts = Vec::new();
                for term in text.split('+') {
                    let (w, a) = term.split_once('*').ok_or_else(|| invalid(key, format!("term {term:?} is not `weight*kind(args)`")))?;
                    let w = w.trim().parse::<f64>().map_err(|_| ConfigError::Type { key: key.into(), value: w.into(), expected: "a weight" })?;
                    parts.push((w, atom(a, key)?));
                }
                StateKind::Mixture(parts)
            }
            other => return Err(invalid("state.kind", format!("unknown state kind {other:?}"))),
        };
        let spec = StateSpec::new(sk, omega_m);
        spec.required_dim(1e-8).map_err(|e| invalid("state.kind", format!("{kind}: {e}")))?;
        out.push(LabelledState { label: kind.to_string(), spec });
    }
    if out.is_empty() {
        return Err(invalid("state.kind", "no states listed"));
    }
    Ok(out)
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::from_raw(parse_raw(text)?)
    }

    /// Parses `text` with `key = value` overrides applied on top.
    pub fn parse_with(text: &str, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut raw = parse_raw(text)?;
        for (k, v) in overrides {
            if key_type(k).is_none() {
                return Err(ConfigError::UnknownKey(k.clone()));
            }
            raw.insert(k.clone(), v.clone());
        }
        Self::from_raw(raw)
    }

    /// A bundled config by name, or a file path.
    pub fn load(name_or_path: &str, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let text = match bundled(name_or_path) {
            Ok(t) => t.to_string(),
            Err(_) => std::fs::read_to_string(name_or_path)
                .map_err(|e| ConfigError::Invalid { key: "--config".into(), msg: format!("{name_or_path}: {e}") })?,
        };
        Self::parse_with(&text, overrides)
    }

    pub fn raw(&self) -> &BTreeMap<String, String> {
        &self.raw
    }

    pub fn from_raw(raw: BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let r = Reader { raw: &raw };
        let fscale = match r.text("units").unwrap_or("omega_m") {
            "omega_m" => 1.0,
            "absolute" => r.req("engine.omega_m")?,
            other => return Err(invalid("units", format!("expected omega_m or absolute (got {other:?})"))),
        };
        if !(fscale > 0.0) {
            return Err(invalid("engine.omega_m", "must be > 0"));
        }
        let omega_m = r.num_or("engine.omega_m", 1.0)? / fscale;
        let params = EngineParams {
            omega_o: r.req("engine.omega_o")? / fscale,
            omega_m,
            g: r.req("engine.g")? / fscale,
            hot: bath(&r, "hot", BathLabel::Hot, fscale)?,
            cold: bath(&r, "cold", BathLabel::Cold, fscale)?,
            gamma_m: r.num_or("engine.gamma_m", 0.0)? / fscale,
            n_m_th: r.num_or("engine.n_m_th", 0.0)?,
        };
        params.validate().map_err(|e| invalid("engine", e.to_string()))?;
        crate::baths::optical_steady_state(&params).map_err(|e| invalid("engine", e.to_string()))?;
        let t_end = match r.text("grid.t_end").unwrap_or("auto") {
            "auto" => {
                let w = r.num_or("grid.window", 3.0)?;
                if !(w > 0.0) {
                    return Err(invalid("grid.window", "must be > 0"));
                }
                TimeEnd::DriftWindows(w)
            }
            v => {
                if r.text("grid.window").is_some() {
                    return Err(invalid("grid.window", "only used with grid.t_end = auto"));
                }
                let t = v.parse::<f64>().ok().filter(|t| *t > 0.0 && t.is_finite()).ok_or_else(|| ConfigError::Type {
                    key: "grid.t_end".into(),
                    value: v.into(),
                    expected: "a positive number or auto",
                })?;
                TimeEnd::Fixed(t * fscale)
            }
        };
        let samples = r.int("grid.samples")?.unwrap_or(31) as usize;
        if samples < 2 {
            return Err(invalid("grid.samples", "need at least 2 samples"));
        }
        let pipeline = r.text("run.pipeline").unwrap_or("compare").parse().map_err(|m: String| invalid("run.pipeline", m))?;
        let dim = |key: &str| -> Result<Option<usize>, ConfigError> {
            match r.int(key)? {
                Some(d) if d < 2 => Err(invalid(key, "must be >= 2")),
                d => Ok(d.map(|d| d as usize)),
            }
        };
        let leak_limit = r.num_or("run.leak_limit", 1e-6)?;
        let tol = r.num_or("run.tol", 1e-9)?;
        if !(leak_limit > 0.0) || !(tol > 0.0) {
            return Err(invalid("run", "leak_limit and tol must be > 0"));
        }
        let states = states(&r, omega_m)?;
        Ok(Self {
            name: r.text("name").unwrap_or("scenario").to_string(),
            params,
            states,
            t_end,
            samples,
            pipeline,
            dim_o: dim("run.dim_o")?,
            dim_m: dim("run.dim_m")?,
            seed: r.int("run.seed")?.unwrap_or(0),
            out: r.text("run.out").map(PathBuf::from),
            dressing: r.boolean("run.dressing", true)?,
            leak_limit,
            tol,
            negate_gamma: r.boolean("run.negate_gamma", false)?,
            mc_trajectories: r.int("run.mc_trajectories")?.unwrap_or(0) as usize,
            raw,
        })
    }
}

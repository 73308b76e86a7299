//! Experiment configuration: flat sectioned TOML with key-path diagnostics.

use damageid_core::fem::{DomainSpec, Elasticity, MaterialModel, Side};
use damageid_core::forward::ForwardConfig;
use damageid_core::mollifier::{MollifierSpec, MollifierVariant};
use damageid_core::process::StrainFeature;
use std::cell::RefCell;
use std::collections::BTreeSet;
use std::path::PathBuf;
use toml::{Table, Value};

/// A configuration problem tied to a key path such as `material.omega1`.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into() }
    }
}

type Parsed<T> = std::result::Result<T, ConfigError>;

const SECTIONS: [&str; 11] = ["domain", "time", "material", "mollifier", "process", "loads", "initial", "truth", "forward", "landweber", "run"];

/// Time profile of a spatially uniform load vector.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadProfile {
    Zero,
    Constant { value: [f64; 2] },
    /// `value + rate·t`.
    Ramp { value: [f64; 2], rate: [f64; 2] },
    /// Piecewise linear interpolation of tabulated values.
    Table { times: Vec<f64>, values: Vec<[f64; 2]> },
}

impl LoadProfile {
    pub fn at(&self, t: f64) -> [f64; 2] {
        match self {
            LoadProfile::Zero => [0.0, 0.0],
            LoadProfile::Constant { value } => *value,
            LoadProfile::Ramp { value, rate } => [value[0] + rate[0] * t, value[1] + rate[1] * t],
            LoadProfile::Table { times, values } => {
                if t <= times[0] {
                    return values[0];
                }
                for k in 1..times.len() {
                    if t <= times[k] {
                        let w = (t - times[k - 1]) / (times[k] - times[k - 1]);
                        return [0, 1].map(|c| (1.0 - w) * values[k - 1][c] + w * values[k][c]);
                    }
                }
                values[values.len() - 1]
            }
        }
    }

    fn name(&self) -> &'static str {
        match self {
            LoadProfile::Zero => "zero",
            LoadProfile::Constant { .. } => "constant",
            LoadProfile::Ramp { .. } => "ramp",
            LoadProfile::Table { .. } => "table",
        }
    }
}

/// Closed-form recipe for a spline damage process; values are fractions of `g_max`
/// unless stated otherwise.
#[derive(Debug, Clone, PartialEq)]
pub enum TruthSpec {
    Constant { level: f64 },
    /// `min(g_max, coef·y²)` (absolute units).
    Quadratic { coef: f64 },
    /// `low + (high − low)/(1 + exp(−(y − center)/width))`, scaled by `1 + x_slope·x + t_slope·t`.
    Sigmoid { low: f64, high: f64, center: f64, width: f64, x_slope: f64, t_slope: f64 },
    /// Raw coefficients in basis order.
    Coefficients(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessDims {
    pub time_cells: usize,
    pub space_cells: [usize; 2],
    pub splines: usize,
    /// Sobolev exponent of the parameter Gram.
    pub gram_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandweberSettings {
    pub step: Option<f64>,
    pub tau: f64,
    pub max_iter: usize,
    /// Constant initial guess as a fraction of `g_max`.
    pub start: f64,
    /// Relative noise level used when data are synthesized.
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub seed: u64,
    pub out: PathBuf,
    pub parallel: bool,
    /// Record wall-clock times in the iterate log (otherwise zeros).
    pub timing: bool,
    pub trials: usize,
}

/// Fully validated experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub domain: DomainSpec,
    pub steps: usize,
    pub material: MaterialModel,
    pub mollifier: MollifierSpec,
    pub feature: StrainFeature,
    pub process: ProcessDims,
    pub body: LoadProfile,
    pub traction: LoadProfile,
    /// `d0(x) = value + slope·x1`.
    pub initial: (f64, f64),
    pub truth: TruthSpec,
    pub forward: ForwardConfig,
    pub landweber: LandweberSettings,
    pub run: RunSettings,
}

struct Section<'a> {
    name: &'static str,
    table: Option<&'a Table>,
    used: RefCell<BTreeSet<String>>,
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::String(_) => "string",
        Value::Integer(_) => "integer",
        Value::Float(_) => "float",
        Value::Boolean(_) => "boolean",
        Value::Datetime(_) => "datetime",
        Value::Array(_) => "array",
        Value::Table(_) => "table",
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn suggestion(word: &str, candidates: &[&str]) -> String {
    candidates
        .iter()
        .map(|c| (strsim::jaro_winkler(word, c), *c))
        .filter(|(score, _)| *score > 0.8)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| format!(" (did you mean \"{c}\"?)"))
        .unwrap_or_default()
}

impl<'a> Section<'a> {
    fn new(root: &'a Table, name: &'static str) -> Parsed<Self> {
        let table = match root.get(name) {
            None => None,
            Some(Value::Table(t)) => Some(t),
            Some(v) => return Err(ConfigError::new(name, format!("expected a section, found {}", type_name(v)))),
        };
        Ok(Self { name, table, used: RefCell::new(BTreeSet::new()) })
    }

    fn path(&self, key: &str) -> String {
        format!("{}.{key}", self.name)
    }

    fn raw(&self, key: &str) -> Option<&'a Value> {
        self.used.borrow_mut().insert(key.to_string());
        self.table.and_then(|t| t.get(key))
    }

    fn f64_opt(&self, key: &str) -> Parsed<Option<f64>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => as_f64(v)
                .map(Some)
                .ok_or_else(|| ConfigError::new(self.path(key), format!("expected a number, found {}", type_name(v)))),
        }
    }

    fn f64_or(&self, key: &str, default: f64) -> Parsed<f64> {
        Ok(self.f64_opt(key)?.unwrap_or(default))
    }

    fn usize_opt(&self, key: &str) -> Parsed<Option<usize>> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as usize)),
            Some(Value::Integer(i)) => Err(ConfigError::new(self.path(key), format!("must be non-negative, got {i}"))),
            Some(v) => Err(ConfigError::new(self.path(key), format!("expected an integer, found {}", type_name(v)))),
        }
    }

    fn usize_or(&self, key: &str, default: usize) -> Parsed<usize> {
        Ok(self.usize_opt(key)?.unwrap_or(default))
    }

    fn require_usize(&self, key: &str) -> Parsed<usize> {
        self.usize_opt(key)?.ok_or_else(|| ConfigError::new(self.path(key), "missing required key"))
    }

    fn bool_or(&self, key: &str, default: bool) -> Parsed<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some(Value::Boolean(b)) => Ok(*b),
            Some(v) => Err(ConfigError::new(self.path(key), format!("expected a boolean, found {}", type_name(v)))),
        }
    }

    fn str_opt(&self, key: &str) -> Parsed<Option<&'a str>> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.as_str())),
            Some(v) => Err(ConfigError::new(self.path(key), format!("expected a string, found {}", type_name(v)))),
        }
    }

    fn array(&self, key: &str) -> Parsed<Option<&'a Vec<Value>>> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Array(a)) => Ok(Some(a)),
            Some(v) => Err(ConfigError::new(self.path(key), format!("expected an array, found {}", type_name(v)))),
        }
    }

    fn f64_list(&self, key: &str) -> Parsed<Option<Vec<f64>>> {
        let Some(a) = self.array(key)? else { return Ok(None) };
        a.iter()
            .enumerate()
            .map(|(i, v)| as_f64(v).ok_or_else(|| ConfigError::new(format!("{}[{i}]", self.path(key)), format!("expected a number, found {}", type_name(v)))))
            .collect::<Parsed<Vec<_>>>()
            .map(Some)
    }

    fn usize_list(&self, key: &str) -> Parsed<Option<Vec<usize>>> {
        let Some(a) = self.array(key)? else { return Ok(None) };
        a.iter()
            .enumerate()
            .map(|(i, v)| match v {
                Value::Integer(n) if *n >= 0 => Ok(*n as usize),
                _ => Err(ConfigError::new(format!("{}[{i}]", self.path(key)), format!("expected a non-negative integer, found {}", type_name(v)))),
            })
            .collect::<Parsed<Vec<_>>>()
            .map(Some)
    }

    fn vector(&self, key: &str, dim: usize, default: [f64; 2]) -> Parsed<[f64; 2]> {
        match self.f64_list(key)? {
            None => Ok(default),
            Some(v) if v.len() == dim => Ok(if dim == 1 { [v[0], 0.0] } else { [v[0], v[1]] }),
            Some(v) => Err(ConfigError::new(self.path(key), format!("expected {dim} components, got {}", v.len()))),
        }
    }

    fn finish(&self, allowed: &[&str]) -> Parsed<()> {
        let Some(t) = self.table else { return Ok(()) };
        for key in t.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(ConfigError::new(self.path(key), format!("unknown key{}", suggestion(key, allowed))));
            }
        }
        Ok(())
    }
}

fn check(ok: bool, path: &str, message: impl Into<String>) -> Parsed<()> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::new(path, message))
    }
}

fn parse_load(sec: &Section, prefix: &str, dim: usize) -> Parsed<LoadProfile> {
    let kind = sec.str_opt(prefix)?.unwrap_or(if prefix == "traction" { "constant" } else { "zero" });
    let key = |s: &str| format!("{prefix}_{s}");
    let default = if prefix == "traction" { [1.0, 0.0] } else { [0.0, 0.0] };
    let profile = match kind {
        "zero" => LoadProfile::Zero,
        "constant" => LoadProfile::Constant { value: sec.vector(&key("value"), dim, default)? },
        "ramp" => LoadProfile::Ramp { value: sec.vector(&key("value"), dim, default)?, rate: sec.vector(&key("rate"), dim, [0.0, 0.0])? },
        "table" => {
            let tpath = sec.path(&key("times"));
            let times = sec.f64_list(&key("times"))?.ok_or_else(|| ConfigError::new(&tpath, "missing required key for a tabulated load"))?;
            let vpath = sec.path(&key("table"));
            let rows = sec.array(&key("table"))?.ok_or_else(|| ConfigError::new(&vpath, "missing required key for a tabulated load"))?;
            check(!times.is_empty() && times.len() == rows.len(), &vpath, format!("expected {} rows, one per tabulated time", times.len()))?;
            check(times.windows(2).all(|w| w[0] < w[1]), &tpath, "times must be strictly increasing")?;
            let mut values = Vec::with_capacity(rows.len());
            for (i, row) in rows.iter().enumerate() {
                let comps: Vec<f64> = match row {
                    Value::Array(a) => a.iter().filter_map(as_f64).collect(),
                    other => vec![as_f64(other).unwrap_or(f64::NAN)],
                };
                check(comps.len() == dim && comps.iter().all(|v| v.is_finite()), &format!("{vpath}[{i}]"), format!("expected {dim} numbers"))?;
                values.push(if dim == 1 { [comps[0], 0.0] } else { [comps[0], comps[1]] });
            }
            LoadProfile::Table { times, values }
        }
        other => return Err(ConfigError::new(sec.path(prefix), format!("unknown load profile \"{other}\"{}", suggestion(other, &["zero", "constant", "ramp", "table"])))),
    };
    Ok(profile)
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Parsed<ExperimentConfig> {
    let root: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::new("<document>", e.message().to_string()))?;
    for key in root.keys() {
        if !SECTIONS.contains(&key.as_str()) {
            return Err(ConfigError::new(key.clone(), format!("unknown section{}", suggestion(key, &SECTIONS))));
        }
    }

    let sec = Section::new(&root, "domain")?;
    let elements = sec.usize_list("elements")?.ok_or_else(|| ConfigError::new("domain.elements", "missing required key"))?;
    let dim = elements.len();
    check(dim == 1 || dim == 2, "domain.elements", format!("expected 1 or 2 entries, got {dim}"))?;
    check(elements.iter().all(|&n| n >= 1), "domain.elements", "element counts must be >= 1")?;
    let extent = sec.f64_list("extent")?.unwrap_or_else(|| vec![1.0; dim]);
    check(extent.len() == dim, "domain.extent", format!("expected {dim} entries to match domain.elements"))?;
    check(extent.iter().all(|&l| l > 0.0 && l.is_finite()), "domain.extent", "extents must be positive")?;
    let clamped = match sec.array("clamped")? {
        None => vec![Side::Left],
        Some(a) => a
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.as_str().and_then(Side::parse).filter(|s| Side::all(dim).contains(s)).ok_or_else(|| {
                    ConfigError::new(format!("domain.clamped[{i}]"), format!("expected one of {:?}", Side::all(dim).iter().map(|s| s.name()).collect::<Vec<_>>()))
                })
            })
            .collect::<Parsed<Vec<_>>>()?,
    };
    let domain = DomainSpec { extent, elements, clamped };
    domain.validate().map_err(|e| ConfigError::new("domain.clamped", e.to_string()))?;
    sec.finish(&["elements", "extent", "clamped"])?;

    let sec = Section::new(&root, "time")?;
    let horizon = sec.f64_or("horizon", 1.0)?;
    check(horizon > 0.0 && horizon.is_finite(), "time.horizon", format!("must be positive, got {horizon}"))?;
    let steps = sec.require_usize("steps")?;
    check(steps >= 1, "time.steps", "must be >= 1")?;
    sec.finish(&["horizon", "steps"])?;

    let sec = Section::new(&root, "material")?;
    let elasticity = if dim == 1 {
        let young = sec.f64_or("young", 1.0)?;
        check(young > 0.0, "material.young", format!("must be positive, got {young}"))?;
        Elasticity::Bar { young }
    } else {
        let lambda = sec.f64_or("lambda", 1.0)?;
        let mu = sec.f64_or("mu", 1.0)?;
        check(mu > 0.0, "material.mu", format!("must be positive, got {mu}"))?;
        check(lambda + mu > 0.0, "material.lambda", format!("lambda + mu must be positive, got {}", lambda + mu))?;
        Elasticity::Isotropic { lambda, mu }
    };
    let alpha = sec.f64_or("alpha", 1.0)?;
    check(alpha >= 1.0, "material.alpha", format!("must be >= 1, got {alpha}"))?;
    let omega1 = sec.f64_or("omega1", 0.5)?;
    check((0.0..1.0).contains(&omega1), "material.omega1", format!("must lie in [0, 1), got {omega1}"))?;
    let omega0 = sec.f64_or("omega0", 0.0)?;
    check(0.0 <= omega0 && omega0 <= omega1, "material.omega0", format!("must lie in [0, omega1], got {omega0}"))?;
    let y_bar = sec.f64_or("y_bar", 2.0)?;
    check(y_bar > 0.0, "material.y_bar", format!("must be positive, got {y_bar}"))?;
    let material = MaterialModel { elasticity, modulus_field: None, alpha, omega0, omega1, y_bar, horizon };
    sec.finish(if dim == 1 { &["young", "alpha", "omega0", "omega1", "y_bar"] } else { &["lambda", "mu", "alpha", "omega0", "omega1", "y_bar"] })?;

    let sec = Section::new(&root, "mollifier")?;
    let radius = sec.f64_opt("radius")?.ok_or_else(|| ConfigError::new("mollifier.radius", "missing required key"))?;
    let min_h = domain.extent.iter().zip(&domain.elements).map(|(l, &n)| l / n as f64).fold(f64::INFINITY, f64::min);
    check(radius >= min_h * (1.0 - 1e-12), "mollifier.radius", format!("must be at least the mesh spacing {min_h}, got {radius}"))?;
    let variant = match sec.str_opt("variant")? {
        None => MollifierVariant::Difference,
        Some(s) => MollifierVariant::parse(s).ok_or_else(|| ConfigError::new("mollifier.variant", format!("unknown variant \"{s}\"{}", suggestion(s, &["difference", "average"]))))?,
    };
    let feature = match sec.str_opt("feature")? {
        None => StrainFeature::default_for(dim),
        Some(s) => StrainFeature::parse(s).ok_or_else(|| ConfigError::new("mollifier.feature", format!("unknown feature \"{s}\"{}", suggestion(s, &["gradient", "strain_norm"]))))?,
    };
    check(!(dim == 2 && feature == StrainFeature::Gradient), "mollifier.feature", "the raw gradient feature is only available in 1D")?;
    sec.finish(&["radius", "variant", "feature"])?;

    let sec = Section::new(&root, "process")?;
    let time_cells = sec.usize_or("time_cells", 1)?;
    check(time_cells >= 1, "process.time_cells", "must be >= 1")?;
    let cells = sec.usize_list("space_cells")?.unwrap_or_else(|| vec![1; dim]);
    check(cells.len() == dim && cells.iter().all(|&c| c >= 1), "process.space_cells", format!("expected {dim} positive entries"))?;
    let splines = sec.usize_or("splines", 8)?;
    check(splines >= 4, "process.splines", format!("cubic splines need at least 4 functions, got {splines}"))?;
    let gram_s = sec.f64_or("gram_s", if dim == 1 { 3.0 } else { 5.0 })?;
    check(gram_s >= 0.0, "process.gram_s", format!("must be >= 0, got {gram_s}"))?;
    let process = ProcessDims { time_cells, space_cells: if dim == 1 { [cells[0], 1] } else { [cells[0], cells[1]] }, splines, gram_s };
    sec.finish(&["time_cells", "space_cells", "splines", "gram_s"])?;

    let sec = Section::new(&root, "loads")?;
    let body = parse_load(&sec, "body", dim)?;
    let traction = parse_load(&sec, "traction", dim)?;
    sec.finish(&[
        "body", "body_value", "body_rate", "body_times", "body_table", "traction", "traction_value", "traction_rate", "traction_times", "traction_table",
    ])?;

    let sec = Section::new(&root, "initial")?;
    let value = sec.f64_or("value", 0.0)?;
    let slope = sec.f64_or("slope", 0.0)?;
    let end = value + slope * domain.extent[0];
    check(value >= 0.0 && value <= omega0, "initial.value", format!("initial damage must lie in [0, material.omega0 = {omega0}], got {value}"))?;
    check(end >= 0.0 && end <= omega0, "initial.slope", format!("initial damage reaches {end} at the far end, outside [0, {omega0}]"))?;
    sec.finish(&["value", "slope"])?;

    let sec = Section::new(&root, "truth")?;
    let truth = match sec.str_opt("kind")?.unwrap_or("constant") {
        "constant" => TruthSpec::Constant { level: sec.f64_or("level", 0.0)? },
        "quadratic" => TruthSpec::Quadratic { coef: sec.f64_or("coef", 0.125)? },
        "sigmoid" => {
            let width = sec.f64_or("width", 1.0 / 3.0)?;
            check(width > 0.0, "truth.width", "must be positive")?;
            TruthSpec::Sigmoid { low: sec.f64_or("low", 0.3)?, high: sec.f64_or("high", 0.95)?, center: sec.f64_or("center", 1.0)?, width, x_slope: sec.f64_or("x_slope", 0.0)?, t_slope: sec.f64_or("t_slope", 0.0)? }
        }
        "coefficients" => TruthSpec::Coefficients(sec.f64_list("coeffs")?.ok_or_else(|| ConfigError::new("truth.coeffs", "missing required key for kind = \"coefficients\""))?),
        other => return Err(ConfigError::new("truth.kind", format!("unknown kind \"{other}\"{}", suggestion(other, &["constant", "quadratic", "sigmoid", "coefficients"])))),
    };
    match &truth {
        TruthSpec::Constant { level } => check((0.0..=1.0).contains(level), "truth.level", format!("must lie in [0, 1] (fraction of g_max), got {level}"))?,
        TruthSpec::Quadratic { coef } => check(*coef >= 0.0, "truth.coef", "must be >= 0")?,
        TruthSpec::Sigmoid { low, high, .. } => {
            check((0.0..=1.0).contains(low), "truth.low", "must lie in [0, 1]")?;
            check((0.0..=1.0).contains(high), "truth.high", "must lie in [0, 1]")?;
        }
        TruthSpec::Coefficients(c) => {
            let p = process.time_cells * process.space_cells[0] * process.space_cells[1] * process.splines;
            check(c.len() == p, "truth.coeffs", format!("expected {p} coefficients, got {}", c.len()))?;
            let gmax = material.source_bound();
            check(c.iter().all(|v| (0.0..=gmax).contains(v)), "truth.coeffs", format!("coefficients must lie in [0, g_max = {gmax}]"))?;
        }
    }
    sec.finish(&["kind", "level", "coef", "low", "high", "center", "width", "x_slope", "t_slope", "coeffs"])?;

    let sec = Section::new(&root, "forward")?;
    let tol = sec.f64_or("tol", 1e-10)?;
    check(tol > 0.0, "forward.tol", format!("must be positive, got {tol}"))?;
    let max_sweeps = sec.usize_or("max_sweeps", 100)?;
    check(max_sweeps >= 1, "forward.max_sweeps", "must be >= 1")?;
    let lambda = sec.f64_or("lambda", 10.0)?;
    check(lambda >= 0.0, "forward.lambda", "must be >= 0")?;
    let forward = ForwardConfig { tol, max_sweeps, lambda };
    sec.finish(&["tol", "max_sweeps", "lambda"])?;

    let sec = Section::new(&root, "landweber")?;
    let step = sec.f64_opt("step")?;
    if let Some(w) = step {
        check(w > 0.0 && w.is_finite(), "landweber.step", format!("must be positive, got {w}"))?;
    }
    let tau = sec.f64_or("tau", 1.5)?;
    check(tau > 1.0, "landweber.tau", format!("must exceed 1, got {tau}"))?;
    let max_iter = sec.usize_or("max_iter", 500)?;
    let start = sec.f64_or("start", 0.5)?;
    check((0.0..=1.0).contains(&start), "landweber.start", format!("must lie in [0, 1] (fraction of g_max), got {start}"))?;
    let noise = sec.f64_or("noise", 0.01)?;
    check(noise >= 0.0 && noise.is_finite(), "landweber.noise", format!("must be >= 0, got {noise}"))?;
    let landweber = LandweberSettings { step, tau, max_iter, start, noise };
    sec.finish(&["step", "tau", "max_iter", "start", "noise"])?;

    let sec = Section::new(&root, "run")?;
    let seed = match sec.raw("seed") {
        None => 0,
        Some(Value::Integer(i)) if *i >= 0 => *i as u64,
        Some(v) => return Err(ConfigError::new("run.seed", format!("expected a non-negative integer, found {}", type_name(v)))),
    };
    let out = PathBuf::from(sec.str_opt("out")?.unwrap_or("out"));
    let run = RunSettings { seed, out, parallel: sec.bool_or("parallel", true)?, timing: sec.bool_or("timing", false)?, trials: sec.usize_or("trials", 10)? };
    check(run.trials >= 1, "run.trials", "must be >= 1")?;
    sec.finish(&["seed", "out", "parallel", "timing", "trials"])?;

    Ok(ExperimentConfig { domain, steps, material, mollifier: MollifierSpec { radius, variant }, feature, process, body, traction, initial: (value, slope), truth, forward, landweber, run })
}

fn float_array(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|&x| Value::Float(x)).collect())
}

fn int_array(v: &[usize]) -> Value {
    Value::Array(v.iter().map(|&x| Value::Integer(x as i64)).collect())
}

impl ExperimentConfig {
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    fn vector(&self, v: [f64; 2]) -> Value {
        float_array(&v[..self.dim()])
    }

    fn load_entries(&self, t: &mut Table, prefix: &str, p: &LoadProfile) {
        t.insert(prefix.into(), Value::String(p.name().into()));
        match p {
            LoadProfile::Zero => {}
            LoadProfile::Constant { value } => {
                t.insert(format!("{prefix}_value"), self.vector(*value));
            }
            LoadProfile::Ramp { value, rate } => {
                t.insert(format!("{prefix}_value"), self.vector(*value));
                t.insert(format!("{prefix}_rate"), self.vector(*rate));
            }
            LoadProfile::Table { times, values } => {
                t.insert(format!("{prefix}_times"), float_array(times));
                t.insert(format!("{prefix}_table"), Value::Array(values.iter().map(|v| self.vector(*v)).collect()));
            }
        }
    }

    /// Effective configuration with every default spelled out.
    pub fn to_table(&self) -> Table {
        let mut root = Table::new();
        let mut t = Table::new();
        t.insert("elements".into(), int_array(&self.domain.elements));
        t.insert("extent".into(), float_array(&self.domain.extent));
        t.insert("clamped".into(), Value::Array(self.domain.clamped.iter().map(|s| Value::String(s.name().into())).collect()));
        root.insert("domain".into(), Value::Table(t));

        let mut t = Table::new();
        t.insert("horizon".into(), Value::Float(self.material.horizon));
        t.insert("steps".into(), Value::Integer(self.steps as i64));
        root.insert("time".into(), Value::Table(t));

        let mut t = Table::new();
        match self.material.elasticity {
            Elasticity::Bar { young } => {
                t.insert("young".into(), Value::Float(young));
            }
            Elasticity::Isotropic { lambda, mu } => {
                t.insert("lambda".into(), Value::Float(lambda));
                t.insert("mu".into(), Value::Float(mu));
            }
        }
        t.insert("alpha".into(), Value::Float(self.material.alpha));
        t.insert("omega0".into(), Value::Float(self.material.omega0));
        t.insert("omega1".into(), Value::Float(self.material.omega1));
        t.insert("y_bar".into(), Value::Float(self.material.y_bar));
        root.insert("material".into(), Value::Table(t));

        let mut t = Table::new();
        t.insert("radius".into(), Value::Float(self.mollifier.radius));
        t.insert("variant".into(), Value::String(self.mollifier.variant.name().into()));
        t.insert("feature".into(), Value::String(self.feature.name().into()));
        root.insert("mollifier".into(), Value::Table(t));

        let mut t = Table::new();
        t.insert("time_cells".into(), Value::Integer(self.process.time_cells as i64));
        t.insert("space_cells".into(), int_array(&self.process.space_cells[..self.dim()]));
        t.insert("splines".into(), Value::Integer(self.process.splines as i64));
        t.insert("gram_s".into(), Value::Float(self.process.gram_s));
        root.insert("process".into(), Value::Table(t));

        let mut t = Table::new();
        self.load_entries(&mut t, "body", &self.body);
        self.load_entries(&mut t, "traction", &self.traction);
        root.insert("loads".into(), Value::Table(t));

        let mut t = Table::new();
        t.insert("value".into(), Value::Float(self.initial.0));
        t.insert("slope".into(), Value::Float(self.initial.1));
        root.insert("initial".into(), Value::Table(t));

        let mut t = Table::new();
        match &self.truth {
            TruthSpec::Constant { level } => {
                t.insert("kind".into(), Value::String("constant".into()));
                t.insert("level".into(), Value::Float(*level));
            }
            TruthSpec::Quadratic { coef } => {
                t.insert("kind".into(), Value::String("quadratic".into()));
                t.insert("coef".into(), Value::Float(*coef));
            }
            TruthSpec::Sigmoid { low, high, center, width, x_slope, t_slope } => {
                t.insert("kind".into(), Value::String("sigmoid".into()));
                t.insert("x_slope".into(), Value::Float(*x_slope));
                t.insert("t_slope".into(), Value::Float(*t_slope));
                t.insert("low".into(), Value::Float(*low));
                t.insert("high".into(), Value::Float(*high));
                t.insert("center".into(), Value::Float(*center));
                t.insert("width".into(), Value::Float(*width));
            }
            TruthSpec::Coefficients(c) => {
                t.insert("kind".into(), Value::String("coefficients".into()));
                t.insert("coeffs".into(), float_array(c));
            }
        }
        root.insert("truth".into(), Value::Table(t));

        let mut t = Table::new();
        t.insert("tol".into(), Value::Float(self.forward.tol));
        t.insert("max_sweeps".into(), Value::Integer(self.forward.max_sweeps as i64));
        t.insert("lambda".into(), Value::Float(self.forward.lambda));
        root.insert("forward".into(), Value::Table(t));

        let mut t = Table::new();
        if let Some(w) = self.landweber.step {
            t.insert("step".into(), Value::Float(w));
        }
        t.insert("tau".into(), Value::Float(self.landweber.tau));
        t.insert("max_iter".into(), Value::Integer(self.landweber.max_iter as i64));
        t.insert("start".into(), Value::Float(self.landweber.start));
        t.insert("noise".into(), Value::Float(self.landweber.noise));
        root.insert("landweber".into(), Value::Table(t));

        let mut t = Table::new();
        t.insert("seed".into(), Value::Integer(self.run.seed as i64));
        t.insert("out".into(), Value::String(self.run.out.to_string_lossy().into_owned()));
        t.insert("parallel".into(), Value::Boolean(self.run.parallel));
        t.insert("timing".into(), Value::Boolean(self.run.timing));
        t.insert("trials".into(), Value::Integer(self.run.trials as i64));
        root.insert("run".into(), Value::Table(t));
        root
    }

    /// Serializes the effective configuration; parsing the result gives back `self`.
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_table()).expect("configuration tables always serialize")
    }
}

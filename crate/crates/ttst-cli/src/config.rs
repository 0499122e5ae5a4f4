//! Flat key-value experiment configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Unknown keys and
//! malformed values are reported with their line number. See the README
//! for the full key list and defaults.

use std::fmt;
use std::path::PathBuf;

/// Solution methods the driver can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Spectral space-time system solved in TT format.
    SpSpTt,
    /// Spectral space-time system solved on the full grid.
    SpSpFull,
    /// Backward-Euler-in-time system solved in TT format.
    FdFdTt,
    /// Backward-Euler-in-time system solved on the full grid.
    FdFdFull,
}

impl Method {
    pub fn parse(s: &str) -> Option<Method> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sp-sp-tt" => Some(Method::SpSpTt),
            "sp-sp-full" => Some(Method::SpSpFull),
            "fd-fd-tt" => Some(Method::FdFdTt),
            "fd-fd-full" => Some(Method::FdFdFull),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Method::SpSpTt => "sp-sp-tt",
            Method::SpSpFull => "sp-sp-full",
            Method::FdFdTt => "fd-fd-tt",
            Method::FdFdFull => "fd-fd-full",
        }
    }
}

/// Output format of the report file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

/// Parsed experiment configuration with defaults applied.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub case: String,
    pub methods: Vec<Method>,
    pub n_list: Vec<usize>,
    pub tt_tol: f64,
    pub solver_tol: f64,
    pub solver_max_sweeps: usize,
    pub cross_tol: f64,
    pub cross_max_sweeps: usize,
    pub kickrank: usize,
    /// 0 means unlimited.
    pub max_rank: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
    /// Directory for cached TT operators (none disables caching).
    pub cache_dir: Option<PathBuf>,
    pub domain: [(f64, f64); 3],
    pub t_final: f64,
    /// Constant coefficients used by `case = custom`.
    pub kappa: f64,
    pub convection: [f64; 3],
    pub reaction: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            case: "test1".into(),
            methods: vec![Method::SpSpTt],
            n_list: vec![4, 8],
            tt_tol: 1e-12,
            solver_tol: 1e-10,
            solver_max_sweeps: 60,
            cross_tol: 1e-12,
            cross_max_sweeps: 30,
            kickrank: 4,
            max_rank: 0,
            seed: 20230067,
            out: None,
            format: OutputFormat::Csv,
            cache_dir: None,
            domain: [(-1.0, 1.0); 3],
            t_final: 1.0,
            kappa: 1.0,
            convection: [1.0, 1.0, 1.0],
            reaction: 1.0,
        }
    }
}

/// Configuration error with position information.
#[derive(Debug)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "config error at line {line}: {}", self.message),
            None => write!(f, "config error: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line: Some(line),
        message: message.into(),
    }
}

fn parse_f64(line: usize, key: &str, v: &str) -> Result<f64, ConfigError> {
    v.trim()
        .parse()
        .map_err(|_| err(line, format!("key '{key}' expects a number, got '{v}'")))
}

fn parse_usize(line: usize, key: &str, v: &str) -> Result<usize, ConfigError> {
    v.trim()
        .parse()
        .map_err(|_| err(line, format!("key '{key}' expects an integer, got '{v}'")))
}

fn parse_interval(line: usize, key: &str, v: &str) -> Result<(f64, f64), ConfigError> {
    let parts: Vec<&str> = v.split(',').collect();
    if parts.len() != 2 {
        return Err(err(line, format!("key '{key}' expects 'a,b'")));
    }
    let a = parse_f64(line, key, parts[0])?;
    let b = parse_f64(line, key, parts[1])?;
    if !(a < b) {
        return Err(err(line, format!("key '{key}' needs a < b")));
    }
    Ok((a, b))
}

impl ExperimentConfig {
    /// Parses the flat key-value format and validates the result.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        let mut methods_set = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(line, "expected 'key = value'"))?;
            let key = key.trim();
            let value = value.trim();
            match key {
                "case" => cfg.case = value.to_string(),
                "methods" => {
                    let mut methods = Vec::new();
                    for item in value.split(',') {
                        let m = Method::parse(item)
                            .ok_or_else(|| err(line, format!("unknown method '{item}'")))?;
                        if !methods.contains(&m) {
                            methods.push(m);
                        }
                    }
                    cfg.methods = methods;
                    methods_set = true;
                }
                "n_list" => {
                    let mut ns = Vec::new();
                    for item in value.split(',') {
                        ns.push(parse_usize(line, key, item)?);
                    }
                    cfg.n_list = ns;
                }
                "tt_tol" => cfg.tt_tol = parse_f64(line, key, value)?,
                "solver_tol" => cfg.solver_tol = parse_f64(line, key, value)?,
                "solver_max_sweeps" => cfg.solver_max_sweeps = parse_usize(line, key, value)?,
                "cross_tol" => cfg.cross_tol = parse_f64(line, key, value)?,
                "cross_max_sweeps" => cfg.cross_max_sweeps = parse_usize(line, key, value)?,
                "kickrank" => cfg.kickrank = parse_usize(line, key, value)?,
                "max_rank" => cfg.max_rank = parse_usize(line, key, value)?,
                "seed" => {
                    cfg.seed = value
                        .parse()
                        .map_err(|_| err(line, format!("key 'seed' expects an integer, got '{value}'")))?
                }
                "out" => cfg.out = Some(PathBuf::from(value)),
                "cache_dir" => cfg.cache_dir = Some(PathBuf::from(value)),
                "format" => {
                    cfg.format = match value.to_ascii_lowercase().as_str() {
                        "csv" => OutputFormat::Csv,
                        "json" => OutputFormat::Json,
                        other => {
                            return Err(err(line, format!("format must be csv or json, got '{other}'")))
                        }
                    }
                }
                "domain_x" => cfg.domain[0] = parse_interval(line, key, value)?,
                "domain_y" => cfg.domain[1] = parse_interval(line, key, value)?,
                "domain_z" => cfg.domain[2] = parse_interval(line, key, value)?,
                "t_final" => cfg.t_final = parse_f64(line, key, value)?,
                "kappa" => cfg.kappa = parse_f64(line, key, value)?,
                "b_x" => cfg.convection[0] = parse_f64(line, key, value)?,
                "b_y" => cfg.convection[1] = parse_f64(line, key, value)?,
                "b_z" => cfg.convection[2] = parse_f64(line, key, value)?,
                "c" => cfg.reaction = parse_f64(line, key, value)?,
                other => return Err(err(line, format!("unknown key '{other}'"))),
            }
        }
        let _ = methods_set;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let fail = |message: &str| {
            Err(ConfigError {
                line: None,
                message: message.into(),
            })
        };
        if !matches!(self.case.as_str(), "test1" | "test2" | "test3" | "custom") {
            return fail(&format!(
                "case must be test1, test2, test3, or custom, got '{}'",
                self.case
            ));
        }
        if self.methods.is_empty() {
            return fail("methods must not be empty");
        }
        if self.n_list.is_empty() {
            return fail("n_list must not be empty");
        }
        if self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return fail("n_list must be strictly ascending");
        }
        if self.n_list[0] < 2 {
            return fail("n_list entries must be at least 2");
        }
        if !(self.tt_tol > 0.0) || !(self.solver_tol > 0.0) || !(self.cross_tol > 0.0) {
            return fail("tolerances must be positive");
        }
        if !(self.t_final > 0.0) {
            return fail("t_final must be positive");
        }
        Ok(())
    }

    /// Loads from a file, applying an optional seed override.
    pub fn load(path: &std::path::Path, seed_override: Option<u64>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            line: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        let mut cfg = Self::parse(&text)?;
        if let Some(seed) = seed_override {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

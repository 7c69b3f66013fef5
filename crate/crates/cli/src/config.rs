//! Run configuration: an INI file with one section per stage, overridden by
//! command-line flags.
//!
//! ```ini
//! [system]
//! name = linear_horseshoe
//! lambda = 0.2
//! mu = 4
//!
//! [sample]
//! budget = 100000
//! seed = 42
//!
//! [boxdim]
//! delta_max = 0.25
//! ratio = 0.5
//! scales = 8
//!
//! [bounds]
//! m_max = 32
//!
//! [output]
//! json = report.json
//! deterministic = true
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;
use invdim_core::bounds::DEFAULT_M_MAX;
use invdim_core::boxdim::{ScaleSchedule, DEFAULT_RATIO, DEFAULT_SCALES};
use invdim_core::systems::{build_system, SystemError};
use invdim_core::{PointCloud, SystemDescriptor};
use serde::Serialize;
use thiserror::Error;

pub const DEFAULT_BUDGET: usize = 100_000;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: ini::Error,
    },
    #[error("config: unknown section [{0}]")]
    UnknownSection(String),
    #[error("config: unknown key `{key}` in [{section}]")]
    UnknownKey { section: String, key: String },
    #[error("{what} = {value:?}: {msg}")]
    BadValue { what: String, value: String, msg: String },
    #[error("no system selected; pass --system or set `name` in [system]")]
    MissingSystem,
    #[error("--param expects key=value, got {0:?}")]
    BadParam(String),
    #[error("system: {0}")]
    System(#[from] SystemError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
    /// Raw point-cloud layout; `sample` only.
    Binary,
}

impl OutputFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
            OutputFormat::Binary => "binary",
        }
    }

    /// Format implied by a file extension, if any.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(OutputFormat::Csv),
            "json" => Some(OutputFormat::Json),
            "bin" | "idim" => Some(OutputFormat::Binary),
            _ => None,
        }
    }
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            "binary" | "bin" => Ok(OutputFormat::Binary),
            _ => Err("expected csv, json or binary".into()),
        }
    }
}

/// One destination; `path = None` means standard output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputSpec {
    pub format: OutputFormat,
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleConfig {
    /// Largest scale; `None` means a quarter of the sample's extent.
    pub delta_max: Option<f64>,
    pub ratio: f64,
    pub count: usize,
}

impl ScheduleConfig {
    pub fn resolve(&self, cloud: &PointCloud) -> Result<ScaleSchedule, invdim_core::boxdim::BoxDimError> {
        let delta_max = self.delta_max.unwrap_or_else(|| ScaleSchedule::default_for(cloud).deltas()[0]);
        ScaleSchedule::geometric(delta_max, self.ratio, self.count)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub system: String,
    pub params: BTreeMap<String, f64>,
    pub budget: usize,
    pub seed: u64,
    pub schedule: ScheduleConfig,
    pub m_max: usize,
    pub outputs: Vec<OutputSpec>,
    pub deterministic: bool,
}

/// Values given on the command line; `None` leaves the file (or default) value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub system: Option<String>,
    pub params: Vec<String>,
    pub budget: Option<usize>,
    pub seed: Option<u64>,
    pub m_max: Option<usize>,
    pub delta_max: Option<f64>,
    pub ratio: Option<f64>,
    pub scales: Option<usize>,
    pub out: Option<PathBuf>,
    pub format: Option<OutputFormat>,
    pub deterministic: bool,
}

fn parse<T: FromStr>(what: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e: T::Err| ConfigError::BadValue {
        what: what.to_string(),
        value: value.to_string(),
        msg: e.to_string(),
    })
}

fn bad(what: &str, value: impl ToString, msg: &str) -> ConfigError {
    ConfigError::BadValue { what: what.to_string(), value: value.to_string(), msg: msg.to_string() }
}

/// Splits `key=value` into a parameter entry.
pub fn parse_param(raw: &str) -> Result<(String, f64), ConfigError> {
    let (k, v) = raw.split_once('=').ok_or_else(|| ConfigError::BadParam(raw.to_string()))?;
    let key = k.trim();
    if key.is_empty() {
        return Err(ConfigError::BadParam(raw.to_string()));
    }
    Ok((key.to_string(), parse(&format!("--param {key}"), v)?))
}

impl RunConfig {
    /// Defaults, then the file at `path` (if any), then `overrides`.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<Self, ConfigError> {
        let mut system: Option<String> = None;
        let mut params = BTreeMap::new();
        let mut cfg = RunConfig {
            system: String::new(),
            params: BTreeMap::new(),
            budget: DEFAULT_BUDGET,
            seed: DEFAULT_SEED,
            schedule: ScheduleConfig { delta_max: None, ratio: DEFAULT_RATIO, count: DEFAULT_SCALES },
            m_max: DEFAULT_M_MAX,
            outputs: Vec::new(),
            deterministic: false,
        };

        if let Some(path) = path {
            let ini =
                Ini::load_from_file(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
            for (section, props) in ini.iter() {
                let section = section.unwrap_or("");
                for (key, value) in props.iter() {
                    let what = format!("[{section}] {key}");
                    match (section, key) {
                        ("system", "name") => system = Some(value.trim().to_string()),
                        ("system", _) => {
                            params.insert(key.to_string(), parse::<f64>(&what, value)?);
                        }
                        ("sample", "budget") => cfg.budget = parse(&what, value)?,
                        ("sample", "seed") => cfg.seed = parse(&what, value)?,
                        ("boxdim", "delta_max") => cfg.schedule.delta_max = Some(parse(&what, value)?),
                        ("boxdim", "ratio") => cfg.schedule.ratio = parse(&what, value)?,
                        ("boxdim", "scales") => cfg.schedule.count = parse(&what, value)?,
                        ("bounds", "m_max") => cfg.m_max = parse(&what, value)?,
                        ("output", "deterministic") => cfg.deterministic = parse(&what, value)?,
                        ("output", fmt) => {
                            let format: OutputFormat = parse(&what, fmt)?;
                            cfg.outputs.push(OutputSpec { format, path: Some(PathBuf::from(value.trim())) });
                        }
                        ("sample" | "boxdim" | "bounds", _) => {
                            return Err(ConfigError::UnknownKey { section: section.into(), key: key.into() })
                        }
                        _ => return Err(ConfigError::UnknownSection(section.to_string())),
                    }
                }
            }
        }

        if let Some(s) = &overrides.system {
            if system.as_deref() != Some(s.as_str()) {
                // parameters from the file belong to the file's system
                params.clear();
            }
            system = Some(s.clone());
        }
        for raw in &overrides.params {
            let (k, v) = parse_param(raw)?;
            params.insert(k, v);
        }
        cfg.system = system.ok_or(ConfigError::MissingSystem)?;
        cfg.params = params;
        if let Some(b) = overrides.budget {
            cfg.budget = b;
        }
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(m) = overrides.m_max {
            cfg.m_max = m;
        }
        if let Some(d) = overrides.delta_max {
            cfg.schedule.delta_max = Some(d);
        }
        if let Some(r) = overrides.ratio {
            cfg.schedule.ratio = r;
        }
        if let Some(c) = overrides.scales {
            cfg.schedule.count = c;
        }
        cfg.deterministic |= overrides.deterministic;
        match (&overrides.out, overrides.format) {
            (Some(path), fmt) => {
                let format = fmt.or_else(|| OutputFormat::from_path(path)).unwrap_or(OutputFormat::Json);
                cfg.outputs = vec![OutputSpec { format, path: Some(path.clone()) }];
            }
            (None, Some(format)) => cfg.outputs = vec![OutputSpec { format, path: None }],
            (None, None) => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks ranges and that the system/parameters are valid.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.build_system()?;
        if self.budget == 0 {
            return Err(bad("budget", self.budget, "must be at least 1"));
        }
        if self.m_max == 0 {
            return Err(bad("m_max", self.m_max, "must be at least 1"));
        }
        if !(self.schedule.ratio > 0.0 && self.schedule.ratio < 1.0) {
            return Err(bad("ratio", self.schedule.ratio, "must lie in (0, 1)"));
        }
        if self.schedule.count < 2 {
            return Err(bad("scales", self.schedule.count, "must be at least 2"));
        }
        if let Some(d) = self.schedule.delta_max {
            if !(d.is_finite() && d > 0.0) {
                return Err(bad("delta_max", d, "must be positive"));
            }
        }
        Ok(())
    }

    pub fn build_system(&self) -> Result<SystemDescriptor, ConfigError> {
        Ok(build_system(&self.system, &self.params)?)
    }

    /// Outputs, defaulting to `default` on standard output when none were requested.
    pub fn outputs_or(&self, default: OutputFormat) -> Vec<OutputSpec> {
        if self.outputs.is_empty() {
            vec![OutputSpec { format: default, path: None }]
        } else {
            self.outputs.clone()
        }
    }
}

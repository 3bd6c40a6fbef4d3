//! Benchmark scenario files.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::coordination::{CoordinationParams, Method};
use crate::error::{Error, Result};
use crate::estimation::LnrOptions;
use crate::grid::{cases, load_grid, GridModel};
use crate::injection::{ProfileParams, TrainConfig};
use crate::telemetry::{BadDataCase, ScheduleConfig, TargetSelector};

/// Where injection rows come from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InjectionSource {
    /// Whatever telemetry is due at the estimation time.
    Telemetry,
    /// Network outputs weighted by the error mixture.
    Dnn,
    /// Mixture means with `σ = pct/100 · |mean|`. `None` takes the scenario's
    /// `pseudo_pct`.
    Pseudo(Option<f64>),
}

/// An estimator plus an injection source, written `drse`, `drse_dnn`,
/// `drse_pseudo`, `drse_pseudo10`, `cwls_pseudo30`, ...
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MethodSpec {
    pub estimator: Method,
    pub injections: InjectionSource,
}

impl FromStr for MethodSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Validation(format!("unknown method '{s}'"));
        let (est, rest) = s.split_once('_').unwrap_or((s, ""));
        let estimator = match est {
            "cwls" => Method::Cwls,
            "dwls" => Method::Dwls,
            "drse" => Method::Drse,
            _ => return Err(bad()),
        };
        let injections = match rest {
            "" => InjectionSource::Telemetry,
            "dnn" => InjectionSource::Dnn,
            "pseudo" => InjectionSource::Pseudo(None),
            r => {
                let pct: f64 = r.strip_prefix("pseudo").and_then(|p| p.parse().ok()).ok_or_else(bad)?;
                if !(pct > 0.0 && pct.is_finite()) {
                    return Err(bad());
                }
                InjectionSource::Pseudo(Some(pct))
            }
        };
        Ok(Self { estimator, injections })
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let est = self.estimator.name();
        match self.injections {
            InjectionSource::Telemetry => write!(f, "{est}"),
            InjectionSource::Dnn => write!(f, "{est}_dnn"),
            InjectionSource::Pseudo(None) => write!(f, "{est}_pseudo"),
            InjectionSource::Pseudo(Some(p)) => write!(f, "{est}_pseudo{p}"),
        }
    }
}

impl Serialize for MethodSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MethodSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BadDataSpec {
    /// 1, 2 or 3.
    pub case: u8,
    #[serde(default)]
    pub selector: TargetSelector,
}

impl BadDataSpec {
    pub fn case(&self) -> Result<BadDataCase> {
        BadDataCase::from_number(self.case)
            .ok_or_else(|| Error::Validation(format!("bad-data case must be 1, 2 or 3, got {}", self.case)))
    }
}

/// Synthetic profile generator settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileSource {
    pub days: usize,
    pub seed: u64,
    pub params: ProfileParams,
}

impl Default for ProfileSource {
    fn default() -> Self {
        Self {
            days: 120,
            seed: 2014,
            params: ProfileParams::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementKind {
    /// SCADA at the substation, converters, metered AC lines and DC lines.
    #[default]
    Default,
    /// SCADA on every quantity.
    Full,
}

fn default_history() -> ProfileSource {
    ProfileSource {
        days: 365,
        seed: 2013,
        ..Default::default()
    }
}

/// Coordination defaults for benchmarks: a large multiplier step so the
/// boundary binds within a few iterations under noise.
pub fn bench_coordination() -> CoordinationParams {
    CoordinationParams {
        xi: 1e7,
        ..Default::default()
    }
}

fn default_runs() -> usize {
    100
}

fn default_pct() -> f64 {
    30.0
}

fn default_time() -> f64 {
    900.0
}

fn default_true() -> bool {
    true
}

fn default_screen() -> f64 {
    10.0
}

/// One Monte-Carlo experiment. Every listed method is applied to the same
/// truth and telemetry in every run, so comparisons are paired.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Grid file (relative to the scenario file) or a bundled case name.
    pub grid: String,
    pub methods: Vec<MethodSpec>,
    #[serde(default = "default_pct")]
    pub pseudo_pct: f64,
    #[serde(default)]
    pub bad_data: Option<BadDataSpec>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Estimation time (s); the default is a SCADA-only tick.
    #[serde(default = "default_time")]
    pub time: f64,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub placement: PlacementKind,
    /// Operating points are drawn from these profiles.
    #[serde(default)]
    pub profiles: ProfileSource,
    /// History the injection model learns from.
    #[serde(default = "default_history")]
    pub history: ProfileSource,
    #[serde(default)]
    pub training: TrainConfig,
    /// Trained model file; trained from `history` when absent.
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "bench_coordination")]
    pub coordination: CoordinationParams,
    #[serde(default)]
    pub lnr: LnrOptions,
    /// Residual test in the WLS methods.
    #[serde(default = "default_true")]
    pub reject_bad_data: bool,
    /// Weighted residual above which a SCADA input of the network is
    /// replaced by its estimated value.
    #[serde(default = "default_screen")]
    pub screen_threshold: f64,
    /// Worker threads; falls back to `ACDC_SE_WORKERS`, then to all cores.
    #[serde(default)]
    pub workers: Option<usize>,
}

impl Scenario {
    /// Scenario with defaults for everything but grid, methods and seed.
    pub fn new(grid: impl Into<String>, methods: Vec<MethodSpec>, seed: u64) -> Self {
        Self {
            grid: grid.into(),
            methods,
            pseudo_pct: default_pct(),
            bad_data: None,
            runs: default_runs(),
            seed,
            time: default_time(),
            schedule: ScheduleConfig::default(),
            placement: PlacementKind::default(),
            profiles: ProfileSource::default(),
            history: default_history(),
            training: TrainConfig::default(),
            model: None,
            coordination: bench_coordination(),
            lnr: LnrOptions::default(),
            reject_bad_data: true,
            screen_threshold: default_screen(),
            workers: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Validation("runs must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Validation("scenario lists no methods".into()));
        }
        if !(self.pseudo_pct > 0.0 && self.pseudo_pct.is_finite()) {
            return Err(Error::Validation(format!("pseudo_pct must be positive, got {}", self.pseudo_pct)));
        }
        if !(self.time >= 0.0 && self.time.is_finite()) {
            return Err(Error::Validation(format!("invalid estimation time {}", self.time)));
        }
        if self.profiles.days == 0 || self.history.days == 0 {
            return Err(Error::Validation("profile sources need at least one day".into()));
        }
        if let Some(b) = &self.bad_data {
            b.case()?;
        }
        if self.workers == Some(0) {
            return Err(Error::Validation("workers must be at least 1".into()));
        }
        self.schedule.validate()?;
        self.coordination.validate()
    }

    /// Whether any method needs the injection model.
    pub fn needs_model(&self) -> bool {
        self.methods.iter().any(|m| m.injections != InjectionSource::Telemetry)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let sc: Self = serde_json::from_str(s)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn resolve(&self, base: Option<&Path>, p: &str) -> PathBuf {
        match base {
            Some(b) if Path::new(p).is_relative() => b.join(p),
            _ => PathBuf::from(p),
        }
    }

    /// The grid: a bundled case name, or a file relative to `base`.
    pub fn load_grid(&self, base: Option<&Path>) -> Result<GridModel> {
        let name = self.grid.strip_prefix("bundled:").unwrap_or(&self.grid);
        let path = self.resolve(base, &self.grid);
        if !path.exists() {
            if let Some((_, g)) = cases::bundled().into_iter().find(|(n, _)| *n == name) {
                return Ok(g);
            }
        }
        load_grid(path)
    }

    pub fn model_path(&self, base: Option<&Path>) -> Option<PathBuf> {
        self.model.as_deref().map(|m| self.resolve(base, m))
    }
}

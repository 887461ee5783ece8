//! TOML experiment documents and ladder files.
//!
//! ```toml
//! seed = 7
//! [model]
//! rho = 0.9
//! [ladder]
//! kind = "fifo"
//! w = 4
//! horizon = "8"
//! [run]
//! m_init = 256
//! m_ar = 256
//! k = 3
//! [policy]
//! kind = "window"
//! m = 100
//! [[sweep]]
//! name = "M_ar"
//! values = [32, 64, 128]
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::sampler::{RunConfig, SamplerMode};
use crate::schedule::{Level, NoiseLadder, TimeGrid};
use crate::worldmodel::{OracleSpec, ReferencePolicy, WorldModel};

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn parse_ladder(text: &str) -> Result<NoiseLadder> {
    toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

pub fn load_ladder(path: &Path) -> Result<NoiseLadder> {
    parse_ladder(&read_text(path)?)
}

pub fn ladder_to_toml(ladder: &NoiseLadder) -> Result<String> {
    toml::to_string(ladder).map_err(|e| Error::Parse(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LadderSpec {
    Outpaint { w: usize, horizon: Level },
    Fifo { w: usize, horizon: Level },
    Block { w: usize, delta: usize, horizon: Level },
    /// Path relative to the experiment document.
    File { path: PathBuf },
}

impl LadderSpec {
    fn build(&self, base: &Path, horizon: Option<Level>) -> Result<NoiseLadder> {
        match self {
            LadderSpec::Outpaint { w, horizon: t } => NoiseLadder::outpaint(*w, horizon.unwrap_or(*t)),
            LadderSpec::Fifo { w, horizon: t } => NoiseLadder::fifo(*w, horizon.unwrap_or(*t)),
            LadderSpec::Block { w, delta, horizon: t } => NoiseLadder::block(*w, *delta, horizon.unwrap_or(*t)),
            LadderSpec::File { path } => {
                if horizon.is_some() {
                    return Err(Error::Config("a T sweep needs a generated ladder, not a ladder file".into()));
                }
                load_ladder(&base.join(path))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_steps")]
    pub m_init: usize,
    #[serde(default = "default_steps")]
    pub m_ar: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Defaults to the window size.
    pub i0: Option<usize>,
    #[serde(default)]
    pub mode: SamplerMode,
}

fn default_steps() -> usize {
    256
}

fn default_k() -> usize {
    3
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            m_init: default_steps(),
            m_ar: default_steps(),
            k: default_k(),
            i0: None,
            mode: SamplerMode::Euler,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum SweepValue {
    Int(i64),
    Float(f64),
    Text(String),
}

impl fmt::Display for SweepValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepValue::Int(v) => write!(f, "{v}"),
            SweepValue::Float(v) => write!(f, "{v}"),
            SweepValue::Text(v) => f.write_str(v),
        }
    }
}

impl SweepValue {
    fn as_f64(&self, axis: &str) -> Result<f64> {
        match self {
            SweepValue::Int(v) => Ok(*v as f64),
            SweepValue::Float(v) => Ok(*v),
            SweepValue::Text(s) => s.parse::<Level>().map(Level::to_f64).map_err(|_| bad_value(axis, self)),
        }
    }

    fn as_usize(&self, axis: &str) -> Result<usize> {
        match self {
            SweepValue::Int(v) if *v >= 0 => Ok(*v as usize),
            _ => Err(bad_value(axis, self)),
        }
    }

    fn as_level(&self, axis: &str) -> Result<Level> {
        match self {
            SweepValue::Int(v) => Ok(Level::integer(*v)),
            SweepValue::Text(s) => s.parse().map_err(|_| bad_value(axis, self)),
            SweepValue::Float(v) => v.to_string().parse().map_err(|_| bad_value(axis, self)),
        }
    }
}

fn bad_value(axis: &str, v: &SweepValue) -> Error {
    Error::Parse(format!("sweep axis {axis}: unusable value {v}"))
}

pub const SWEEP_AXES: [&str; 9] = ["T", "M", "M_init", "M_ar", "K", "i0", "eps", "window_m", "rho"];

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub name: String,
    pub values: Vec<SweepValue>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LowerboundSection {
    pub s: f64,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
}

fn default_n() -> usize {
    10_000
}

fn default_trials() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSection {
    pub n_paths: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotSection {
    /// Column for the horizontal axis; the first column when absent.
    pub x: Option<String>,
    /// Series to draw; every other numeric column when absent.
    pub y: Option<Vec<String>>,
    pub log_y: Option<bool>,
    pub title: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub model: WorldModel,
    pub ladder: Option<LadderSpec>,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default = "default_policy")]
    pub policy: ReferencePolicy,
    #[serde(default)]
    pub oracle: OracleSpec,
    #[serde(default)]
    pub sweep: Vec<SweepAxis>,
    pub lowerbound: Option<LowerboundSection>,
    pub sample: Option<SampleSection>,
    pub plot: Option<PlotSection>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_policy() -> ReferencePolicy {
    ReferencePolicy::None
}

/// One point of a sweep: the axis assignments and the resulting run.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub assignments: Vec<(String, String)>,
    pub run: RunConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        for axis in &cfg.sweep {
            if !SWEEP_AXES.contains(&axis.name.as_str()) {
                return Err(Error::Parse(format!(
                    "unknown sweep axis {:?}; expected one of {}",
                    axis.name,
                    SWEEP_AXES.join(", ")
                )));
            }
            if axis.values.is_empty() {
                return Err(Error::Parse(format!("sweep axis {} has no values", axis.name)));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        ExperimentConfig::parse(&read_text(path)?, &base)
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::Config("this command needs a seed (config `seed` or --seed)".into()))
    }

    /// Cartesian product of the sweep axes, first axis outermost. Without axes, one point.
    pub fn sweep_points(&self) -> Result<Vec<SweepPoint>> {
        let mut combos: Vec<Vec<(usize, usize)>> = vec![Vec::new()];
        for (a, axis) in self.sweep.iter().enumerate() {
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    (0..axis.values.len()).map(move |v| {
                        let mut next = c.clone();
                        next.push((a, v));
                        next
                    })
                })
                .collect();
        }
        combos
            .into_iter()
            .map(|combo| {
                let picks: Vec<(&str, &SweepValue)> = combo
                    .iter()
                    .map(|&(a, v)| (self.sweep[a].name.as_str(), &self.sweep[a].values[v]))
                    .collect();
                Ok(SweepPoint {
                    assignments: picks.iter().map(|(n, v)| (n.to_string(), v.to_string())).collect(),
                    run: self.build_run(&picks)?,
                })
            })
            .collect()
    }

    fn build_run(&self, picks: &[(&str, &SweepValue)]) -> Result<RunConfig> {
        let mut model = self.model.clone();
        let mut run = self.run.clone();
        let mut policy = self.policy.clone();
        let mut oracle = self.oracle.clone();
        let mut horizon = None;
        for &(name, value) in picks {
            match name {
                "T" => horizon = Some(value.as_level(name)?),
                "M" => {
                    run.m_init = value.as_usize(name)?;
                    run.m_ar = run.m_init;
                }
                "M_init" => run.m_init = value.as_usize(name)?,
                "M_ar" => run.m_ar = value.as_usize(name)?,
                "K" => run.k = value.as_usize(name)?,
                "i0" => run.i0 = Some(value.as_usize(name)?),
                "eps" => oracle = OracleSpec::Biased { norm: value.as_f64(name)? },
                "window_m" => policy = ReferencePolicy::Window { m: value.as_usize(name)? },
                "rho" => model.rho = value.as_f64(name)?,
                _ => unreachable!("axis names are checked at parse time"),
            }
        }
        let spec = self
            .ladder
            .as_ref()
            .ok_or_else(|| Error::Config("experiment needs a [ladder] section".into()))?;
        let ladder = spec.build(&self.base_dir, horizon)?;
        let t = ladder.horizon().to_f64();
        let cfg = RunConfig {
            init_grid: TimeGrid::uniform(0.0, t, run.m_init)?,
            ar_grid: TimeGrid::uniform(ladder.t_out(1).to_f64(), ladder.t_in(1).to_f64(), run.m_ar)?,
            i0: run.i0.unwrap_or(ladder.w()),
            k: run.k,
            model,
            ladder,
            policy,
            oracle,
            mode: run.mode,
            seed: self.seed.unwrap_or(0),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

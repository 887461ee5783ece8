//! Error decomposition of a generation run: closed-form bounds for the noise
//! initialization, score estimation and discretization errors, the exact memory
//! bottleneck on the true process, and the measured KL of the generated video.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gausscore::{cmi_gaussian, kl_gaussian, IndexSet};
use crate::sampler::{generate_law, true_video_law, GeneratedLaw, RunConfig, SamplerMode};
use crate::schedule::{step_index_sets, Coord, NoiseLadder, TimeGrid};
use crate::worldmodel::{
    joint_with_observation, prior_law, score_lipschitz, score_lipschitz_common, second_moment, Conditioning,
    OracleSpec, ReferencePolicy, StageKind, WorldModel,
};

pub fn nie_bound(dim: usize, second_moment: f64, t: f64) -> f64 {
    (dim as f64 + second_moment) * (-t).exp()
}

pub fn see_bound(span: f64, eps_sq: f64) -> f64 {
    span * eps_sq
}

pub fn de_bound(w: usize, d: usize, lipschitz: f64, grid: &TimeGrid) -> f64 {
    (w * d) as f64 * lipschitz * lipschitz * grid.sum_sq_increments()
}

/// `I(Output_k; Past_k | Input_k)` on the true process, for the window after frame `kΔ`.
pub fn mb_term(model: &WorldModel, ladder: &NoiseLadder, policy: &ReferencePolicy, k: usize) -> Result<f64> {
    let d = model.frame_dim;
    let (sets, cond) = match policy {
        ReferencePolicy::Compressed { .. } => (step_index_sets(ladder, k, &[])?, policy.conditioning(k, ladder.delta(), d)?),
        _ => (
            step_index_sets(ladder, k, &policy.reference_set(k, ladder.delta()))?,
            Conditioning::none(),
        ),
    };
    if sets.past.is_empty() {
        return Ok(0.0);
    }
    let items: Vec<(usize, f64)> = [&sets.output, &sets.past, &sets.input]
        .into_iter()
        .flat_map(|s| s.iter().map(|c: &Coord| (c.0, c.1.to_f64())))
        .collect();
    let joint = joint_with_observation(model, &items, &cond)?;
    let (no, np) = (sets.output.len() * d, sets.past.len() * d);
    let a = IndexSet::range(0, no);
    let b = IndexSet::range(no, no + np);
    let c = IndexSet::range(no + np, joint.dim());
    cmi_gaussian(&joint, &a, &b, &c)
}

/// `mb[k-1]` belongs to AR step `k`, whose window starts after frame `(k-1)Δ`.
pub fn mb_vector(cfg: &RunConfig) -> Result<Vec<f64>> {
    (0..cfg.k).map(|k| mb_term(&cfg.model, &cfg.ladder, &cfg.policy, k)).collect()
}

/// KL between the true and generated laws of clip `k`, frames `kΔ+1 ..= (k+1)Δ`.
pub fn clip_kl(model: &WorldModel, generated: &GeneratedLaw, k: usize, delta: usize) -> Result<f64> {
    let frames = k * delta + 1..=(k + 1) * delta;
    let truth = prior_law(model, frames.clone())?;
    kl_gaussian(&truth, &generated.clean_frames(frames)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigEcho {
    pub model: WorldModel,
    pub ladder: NoiseLadder,
    pub init_grid: TimeGrid,
    pub ar_grid: TimeGrid,
    pub i0: usize,
    pub k: usize,
    pub policy: ReferencePolicy,
    pub oracle: OracleSpec,
    pub mode: SamplerMode,
    pub seed: u64,
}

impl From<&RunConfig> for ConfigEcho {
    fn from(c: &RunConfig) -> Self {
        ConfigEcho {
            model: c.model.clone(),
            ladder: c.ladder.clone(),
            init_grid: c.init_grid.clone(),
            ar_grid: c.ar_grid.clone(),
            i0: c.i0,
            k: c.k,
            policy: c.policy.clone(),
            oracle: c.oracle.clone(),
            mode: c.mode,
            seed: c.seed,
        }
    }
}

impl From<ConfigEcho> for RunConfig {
    fn from(c: ConfigEcho) -> Self {
        RunConfig {
            model: c.model,
            ladder: c.ladder,
            init_grid: c.init_grid,
            ar_grid: c.ar_grid,
            i0: c.i0,
            k: c.k,
            policy: c.policy,
            oracle: c.oracle,
            mode: c.mode,
            seed: c.seed,
        }
    }
}

/// Bound fields for AR steps are per step; the audit multiplies them by `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecompositionReport {
    pub measured_joint_kl: f64,
    pub per_clip_kl: Vec<f64>,
    pub nie_init: f64,
    pub nie_ar: f64,
    pub see_init: f64,
    pub see_ar: f64,
    pub de_init: f64,
    pub de_ar: f64,
    pub mb: Vec<f64>,
    pub config: ConfigEcho,
}

pub const CSV_COLUMNS: [&str; 11] = [
    "measured_joint_kl",
    "nie_init",
    "nie_ar",
    "see_init",
    "see_ar",
    "de_init",
    "de_ar",
    "mb_total",
    "bound_total",
    "per_clip_kl",
    "mb",
];

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl DecompositionReport {
    pub fn init_bound(&self) -> f64 {
        self.nie_init + self.see_init + self.de_init
    }

    pub fn ar_bound(&self) -> f64 {
        self.nie_ar + self.see_ar + self.de_ar
    }

    pub fn mb_total(&self) -> f64 {
        self.mb.iter().sum()
    }

    /// Initialization bound plus every AR step's bound and memory bottleneck.
    pub fn bound_total(&self) -> f64 {
        self.init_bound() + self.config.k as f64 * self.ar_bound() + self.mb_total()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn csv_header() -> String {
        CSV_COLUMNS.join(",")
    }

    /// Vector fields are `;`-separated inside their cell.
    pub fn csv_row(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(";");
        let scalars = [
            self.measured_joint_kl,
            self.nie_init,
            self.nie_ar,
            self.see_init,
            self.see_ar,
            self.de_init,
            self.de_ar,
            self.mb_total(),
            self.bound_total(),
        ];
        let mut cells: Vec<String> = scalars.iter().map(|v| fmt_f64(*v)).collect();
        cells.push(join(&self.per_clip_kl));
        cells.push(join(&self.mb));
        cells.join(",")
    }
}

pub fn decomposition_report(cfg: &RunConfig) -> Result<DecompositionReport> {
    cfg.validate()?;
    let (model, ladder) = (&cfg.model, &cfg.ladder);
    let d = model.frame_dim;
    let (w, delta) = (ladder.w(), ladder.delta());
    let t = ladder.horizon().to_f64();
    let span_ar = (ladder.t_in(1) - ladder.t_out(1)).to_f64();

    let generated = generate_law(cfg)?;
    let measured_joint_kl = kl_gaussian(&true_video_law(cfg)?, &generated.joint)?;
    let per_clip_kl = (0..cfg.k).map(|k| clip_kl(model, &generated, k, delta)).collect::<Result<Vec<_>>>()?;

    let de_init = if cfg.i0 == 0 {
        0.0
    } else {
        de_bound(cfg.i0, d, score_lipschitz_common(model, cfg.i0, &cfg.init_grid)?, &cfg.init_grid)
    };
    let de_ar = de_bound(w, d, score_lipschitz(model, ladder, &cfg.ar_grid)?, &cfg.ar_grid);
    Ok(DecompositionReport {
        measured_joint_kl,
        per_clip_kl,
        nie_init: nie_bound(d * cfg.i0, second_moment(model, cfg.i0), t),
        nie_ar: nie_bound(d * delta, second_moment(model, delta), t),
        see_init: see_bound(t, cfg.oracle.eps_sq(StageKind::Init, d * cfg.i0)?),
        see_ar: see_bound(span_ar, cfg.oracle.eps_sq(StageKind::Ar, d * w)?),
        de_init,
        de_ar,
        mb: mb_vector(cfg)?,
        config: cfg.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditStatus {
    Pass,
    /// Above the audit threshold but below the fatal one.
    Logged,
    Fatal,
}

pub const AUDIT_FACTOR: f64 = 10.0;
pub const AUDIT_FATAL_FACTOR: f64 = 100.0;

/// Ratio of measured KL to the summed bound, and its classification.
pub fn audit(report: &DecompositionReport) -> (f64, AuditStatus) {
    let bound = report.bound_total();
    let ratio = if bound > 0.0 {
        report.measured_joint_kl / bound
    } else if report.measured_joint_kl <= 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    let status = if ratio <= AUDIT_FACTOR {
        AuditStatus::Pass
    } else if ratio <= AUDIT_FATAL_FACTOR {
        AuditStatus::Logged
    } else {
        AuditStatus::Fatal
    };
    (ratio, status)
}

//! Gauss–Markov video prior, OU forward noising, score oracles and reference policies.
//!
//! Frames are 1-based. A frame observed at several noise levels is one OU trajectory
//! sampled at several times, so `X^t` is Markov in `t` for every frame; injected noise is
//! independent across frames. Coordinates of a law over a list of items are item-major:
//! item `k` occupies `k*d .. (k+1)*d`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gausscore::{factor_spd, push_forward, regression, AffineChannel, GaussianLaw, IndexSet};
use crate::schedule::{extended_time, NoiseLadder, TimeGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldModel {
    pub n_frames: usize,
    pub frame_dim: usize,
    pub rho: f64,
    pub frame_var: f64,
}

impl Default for WorldModel {
    fn default() -> Self {
        WorldModel {
            n_frames: 64,
            frame_dim: 1,
            rho: 0.9,
            frame_var: 1.0,
        }
    }
}

impl WorldModel {
    pub fn new(n_frames: usize, frame_dim: usize, rho: f64, frame_var: f64) -> Result<Self> {
        let m = WorldModel {
            n_frames,
            frame_dim,
            rho,
            frame_var,
        };
        m.check()?;
        Ok(m)
    }

    pub fn check(&self) -> Result<()> {
        if self.n_frames == 0 || self.frame_dim == 0 {
            return Err(Error::InvalidArgument("n_frames and frame_dim must be positive".into()));
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(Error::InvalidArgument(format!("rho={} outside (-1, 1)", self.rho)));
        }
        if !(self.frame_var > 0.0 && self.frame_var.is_finite()) {
            return Err(Error::InvalidArgument(format!("frame_var={} must be positive", self.frame_var)));
        }
        Ok(())
    }

    fn check_frame(&self, frame: usize) -> Result<()> {
        if frame == 0 || frame > self.n_frames {
            return Err(Error::InvalidArgument(format!(
                "frame {frame} outside 1..={}",
                self.n_frames
            )));
        }
        Ok(())
    }

    /// Per-coordinate covariance of `X_i^s` and `X_j^t`.
    pub fn item_cov(&self, (i, s): (usize, f64), (j, t): (usize, f64)) -> f64 {
        let prior = self.frame_var * self.rho.powi(i.abs_diff(j) as i32);
        let signal = (-(s + t) / 2.0).exp() * prior;
        if i == j {
            // shared OU noise path between the two times
            signal + (-(t - s).abs() / 2.0).exp() - (-(s + t) / 2.0).exp()
        } else {
            signal
        }
    }
}

/// `E‖X‖²` over `frames` clean frames, used where bounds ask for an a.s. bound `B²`.
pub fn second_moment(model: &WorldModel, frames: usize) -> f64 {
    (frames * model.frame_dim) as f64 * model.frame_var
}

pub fn prior_law(model: &WorldModel, frames: std::ops::RangeInclusive<usize>) -> Result<GaussianLaw> {
    let items: Vec<(usize, f64)> = frames.map(|f| (f, 0.0)).collect();
    forward_joint_law(model, &items)
}

/// Joint law of `X_{frame}^{level}` for every listed item.
pub fn forward_joint_law(model: &WorldModel, items: &[(usize, f64)]) -> Result<GaussianLaw> {
    model.check()?;
    for &(frame, level) in items {
        model.check_frame(frame)?;
        if !level.is_finite() || level < 0.0 {
            return Err(Error::InvalidArgument(format!("negative or non-finite level {level}")));
        }
    }
    let d = model.frame_dim;
    let n = items.len() * d;
    let mut cov = DMatrix::zeros(n, n);
    for (a, &ia) in items.iter().enumerate() {
        for (b, &ib) in items.iter().enumerate().skip(a) {
            let c = model.item_cov(ia, ib);
            for r in 0..d {
                cov[(a * d + r, b * d + r)] = c;
                cov[(b * d + r, a * d + r)] = c;
            }
        }
    }
    GaussianLaw::new(DVector::zeros(n), cov)
}

/// Affine score `s(x) = A x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineScore {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl AffineScore {
    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }
}

/// Score of a window conditioned on an observation `g`: `s(x, g) = A x + B g + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalScore {
    pub a: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl ConditionalScore {
    pub fn at(&self, g: &DVector<f64>) -> AffineScore {
        AffineScore {
            a: self.a.clone(),
            b: &self.gain * g + &self.offset,
        }
    }
}

/// Observation `g = P · X^0_R` handed to a score. `projection = None` means `g = X^0_R`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Conditioning {
    pub frames: Vec<usize>,
    pub projection: Option<DMatrix<f64>>,
}

impl Conditioning {
    pub fn none() -> Self {
        Conditioning::default()
    }

    pub fn frames(frames: Vec<usize>) -> Self {
        Conditioning {
            frames,
            projection: None,
        }
    }

    /// Matrix taking the stacked clean reference frames to `g`.
    pub fn matrix(&self, d: usize) -> DMatrix<f64> {
        match &self.projection {
            Some(p) => p.clone(),
            None => DMatrix::identity(self.frames.len() * d, self.frames.len() * d),
        }
    }

    pub fn obs_dim(&self, d: usize) -> usize {
        match &self.projection {
            Some(p) => p.nrows(),
            None => self.frames.len() * d,
        }
    }

    fn check_causal(&self, items: &[(usize, f64)]) -> Result<()> {
        let first = items.iter().map(|i| i.0).min().unwrap_or(usize::MAX);
        match self.frames.iter().find(|&&r| r >= first) {
            Some(&frame) => Err(Error::Causality {
                frame,
                limit: first.saturating_sub(1),
            }),
            None => Ok(()),
        }
    }
}

/// Joint law of `[items; g]` on the true process.
pub fn joint_with_observation(model: &WorldModel, items: &[(usize, f64)], cond: &Conditioning) -> Result<GaussianLaw> {
    let d = model.frame_dim;
    let mut all = items.to_vec();
    all.extend(cond.frames.iter().map(|&f| (f, 0.0)));
    let joint = forward_joint_law(model, &all)?;
    if cond.projection.is_none() {
        return Ok(joint);
    }
    let p = cond.matrix(d);
    let (nx, nr) = (items.len() * d, cond.frames.len() * d);
    if p.ncols() != nr {
        return Err(Error::Dimension {
            what: "reference projection columns",
            expected: nr,
            got: p.ncols(),
        });
    }
    let mut a = DMatrix::zeros(nx + p.nrows(), nx + nr);
    a.view_mut((0, 0), (nx, nx)).fill_with_identity();
    a.view_mut((nx, nx), (p.nrows(), nr)).copy_from(&p);
    let n = a.nrows();
    push_forward(&joint, &AffineChannel::new(a, DVector::zeros(n), DMatrix::zeros(n, n))?)
}

/// Exact score of the items' noisy law given `g`, as an affine function of `(x, g)`.
pub fn conditional_score(model: &WorldModel, items: &[(usize, f64)], cond: &Conditioning) -> Result<ConditionalScore> {
    cond.check_causal(items)?;
    let d = model.frame_dim;
    let nx = items.len() * d;
    let joint = joint_with_observation(model, items, cond)?;
    let obs = IndexSet::range(nx, joint.dim());
    let reg = regression(&joint, &obs)?;
    let prec = factor_spd(&reg.cov)?.inverse();
    Ok(ConditionalScore {
        a: -&prec,
        gain: &prec * &reg.gain,
        offset: &prec * &reg.intercept,
    })
}

/// Exact score of the noisy items conditioned on clean reference frames at `ref_values`.
pub fn exact_score(model: &WorldModel, items: &[(usize, f64)], refs: &[usize], ref_values: &DVector<f64>) -> Result<AffineScore> {
    let cond = Conditioning::frames(refs.to_vec());
    let expect = refs.len() * model.frame_dim;
    if ref_values.len() != expect {
        return Err(Error::Dimension {
            what: "reference values",
            expected: expect,
            got: ref_values.len(),
        });
    }
    Ok(conditional_score(model, items, &cond)?.at(ref_values))
}

/// Constant-bias perturbation; `ε² = ‖δ‖²`.
pub fn perturbed_score(base: &AffineScore, bias: &DVector<f64>) -> Result<AffineScore> {
    if bias.len() != base.dim() {
        return Err(Error::Dimension {
            what: "score bias",
            expected: base.dim(),
            got: bias.len(),
        });
    }
    Ok(AffineScore {
        a: base.a.clone(),
        b: &base.b + bias,
    })
}

/// Symmetric random perturbation of the score matrix, `A + scale * (G + Gᵀ)/2` with standard
/// normal `G` drawn from `seed`. Not affine-exact in `ε`, so no score-error bound is attached.
pub fn perturbed_score_matrix(base: &AffineScore, scale: f64, seed: u64) -> AffineScore {
    let n = base.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    AffineScore {
        a: &base.a + (&g + g.transpose()) * (0.5 * scale),
        b: base.b.clone(),
    }
}

fn inverse_norm(cov: &DMatrix<f64>) -> Result<f64> {
    let min = SymmetricEigen::new(cov.clone()).eigenvalues.min();
    if min <= 0.0 {
        return Err(Error::Singular { condition: f64::INFINITY });
    }
    Ok(1.0 / min)
}

/// `max_t ‖Σ_{t̄(t)}⁻¹‖₂` over the grid for the window frames `1..=w`.
pub fn score_lipschitz(model: &WorldModel, ladder: &NoiseLadder, grid: &TimeGrid) -> Result<f64> {
    let mut best = 0.0f64;
    for &t in grid.points() {
        let items: Vec<(usize, f64)> = extended_time(ladder, t).into_iter().enumerate().map(|(j, l)| (j + 1, l)).collect();
        best = best.max(inverse_norm(forward_joint_law(model, &items)?.cov())?);
    }
    Ok(best)
}

/// Same constant for `frames` frames sharing one level, as in the initialization stage.
pub fn score_lipschitz_common(model: &WorldModel, frames: usize, grid: &TimeGrid) -> Result<f64> {
    let mut best = 0.0f64;
    for &t in grid.points() {
        let items: Vec<(usize, f64)> = (1..=frames).map(|f| (f, t)).collect();
        best = best.max(inverse_norm(forward_joint_law(model, &items)?.cov())?);
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferencePolicy {
    None,
    Window { m: usize },
    /// `g = P · X^0_{window}`; columns of `P` follow the window frames oldest first.
    Compressed { m: usize, projection: Vec<Vec<f64>> },
}

impl ReferencePolicy {
    fn window(&self) -> usize {
        match self {
            ReferencePolicy::None => 0,
            ReferencePolicy::Window { m } | ReferencePolicy::Compressed { m, .. } => *m,
        }
    }

    /// Clean reference frames for the window covering frames `kΔ+1 ..= kΔ+w`.
    pub fn reference_set(&self, k: usize, delta: usize) -> Vec<usize> {
        let end = k * delta;
        let m = self.window();
        if m == 0 || end == 0 {
            return Vec::new();
        }
        let start = if m >= end { 1 } else { end - m + 1 };
        (start..=end).collect()
    }

    /// The observation handed to the score at window offset `kΔ`. A compressed policy whose
    /// window is clipped at the start of the video keeps the columns of the newest frames.
    pub fn conditioning(&self, k: usize, delta: usize, d: usize) -> Result<Conditioning> {
        let frames = self.reference_set(k, delta);
        match self {
            ReferencePolicy::Compressed { m, projection } => {
                let p = projection_matrix(projection, m * d)?;
                let keep = frames.len() * d;
                let p = p.columns(m * d - keep, keep).into_owned();
                Ok(Conditioning {
                    frames,
                    projection: Some(p),
                })
            }
            _ => Ok(Conditioning::frames(frames)),
        }
    }
}

pub fn projection_matrix(rows: &[Vec<f64>], cols: usize) -> Result<DMatrix<f64>> {
    if let Some(r) = rows.iter().find(|r| r.len() != cols) {
        return Err(Error::Dimension {
            what: "projection row",
            expected: cols,
            got: r.len(),
        });
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// Which score the sampler uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleSpec {
    #[default]
    Exact,
    /// Constant bias of norm `norm` spread evenly over every noisy coordinate of each stage.
    Biased { norm: f64 },
    /// Explicit bias vectors for the initialization stage and for every AR step.
    BiasVectors { init: Vec<f64>, ar: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageKind {
    Init,
    Ar,
}

impl OracleSpec {
    pub fn bias(&self, stage: StageKind, dim: usize) -> Result<DVector<f64>> {
        match self {
            OracleSpec::Exact => Ok(DVector::zeros(dim)),
            OracleSpec::Biased { norm } => Ok(DVector::from_element(dim, norm / (dim as f64).sqrt())),
            OracleSpec::BiasVectors { init, ar } => {
                let v = if stage == StageKind::Init { init } else { ar };
                if v.is_empty() {
                    return Ok(DVector::zeros(dim));
                }
                if v.len() != dim {
                    return Err(Error::Dimension {
                        what: "oracle bias vector",
                        expected: dim,
                        got: v.len(),
                    });
                }
                Ok(DVector::from_column_slice(v))
            }
        }
    }

    /// `ε² = ‖δ‖²` for the stage.
    pub fn eps_sq(&self, stage: StageKind, dim: usize) -> Result<f64> {
        Ok(self.bias(stage, dim)?.norm_squared())
    }
}

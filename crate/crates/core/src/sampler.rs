//! Meta-ARVDM generation: an initialization stage followed by `K` autoregressive steps.
//!
//! Each run is compiled into a short list of operations on a keyed coordinate vector
//! (append fresh noise, apply an affine channel, drop coordinates). The same list drives
//! exact law propagation ([`generate_law`]) and the Monte Carlo twin ([`sample_paths`]).
//!
//! AR step `k` (1-based) works on the window of frames `(k-1)Δ+1 ..= (k-1)Δ+w` and emits
//! clean frames `(k-1)Δ+1 ..= kΔ`; the video is `Y⁰_{1:KΔ}`. The initialization denoises
//! `i0` frames, keeps their clean copies under [`Stage::Init`], and re-noises the last
//! `w-Δ` of them to `t_1^I, …, t_{w-Δ}^I` as window frames `1 ..= w-Δ` of the first step.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gausscore::{marginal, push_forward, regression, AffineChannel, GaussianLaw, IndexSet};
use crate::schedule::{extended_time, validate, Level, NoiseLadder, TimeGrid};
use crate::worldmodel::{
    conditional_score, forward_joint_law, joint_with_observation, prior_law, AffineScore, Conditioning,
    OracleSpec, ReferencePolicy, StageKind, WorldModel,
};

const GRID_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    /// Euler–Maruyama integration of the reverse SDE with the configured oracle.
    #[default]
    Euler,
    /// Exact conditional channels of the true process; only the memory bottleneck remains.
    IdealizedConditional,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
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

impl RunConfig {
    /// Uniform grids with `m_init` and `m_ar` steps, `i0 = w`, exact oracle, Euler mode.
    pub fn uniform(model: WorldModel, ladder: NoiseLadder, m_init: usize, m_ar: usize, k: usize) -> Result<Self> {
        let t = ladder.horizon().to_f64();
        let init_grid = TimeGrid::uniform(0.0, t, m_init)?;
        let ar_grid = TimeGrid::uniform(ladder.t_out(1).to_f64(), ladder.t_in(1).to_f64(), m_ar)?;
        let cfg = RunConfig {
            i0: ladder.w(),
            model,
            ladder,
            init_grid,
            ar_grid,
            k,
            policy: ReferencePolicy::None,
            oracle: OracleSpec::Exact,
            mode: SamplerMode::Euler,
            seed: 0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.check()?;
        let report = validate(&self.ladder);
        if !report.ok() {
            let first = &report.violations[0];
            return Err(Error::Schedule(format!("invalid ladder: {first}")));
        }
        let (w, delta) = (self.ladder.w(), self.ladder.delta());
        let t = self.ladder.horizon().to_f64();
        let close = |a: f64, b: f64| (a - b).abs() <= GRID_TOL * (1.0 + b.abs());
        if !close(self.init_grid.start(), 0.0) || !close(self.init_grid.end(), t) {
            return Err(Error::Config(format!("init grid must span [0, {t}]")));
        }
        let (lo, hi) = (self.ladder.t_out(1).to_f64(), self.ladder.t_in(1).to_f64());
        if !close(self.ar_grid.start(), lo) || !close(self.ar_grid.end(), hi) {
            return Err(Error::Config(format!("AR grid must span [{lo}, {hi}]")));
        }
        if self.i0 < w - delta {
            return Err(Error::Config(format!("i0={} below w-Δ={}", self.i0, w - delta)));
        }
        if self.k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        let needed = self.i0.max((self.k - 1) * delta + w);
        if needed > self.model.n_frames {
            return Err(Error::Config(format!(
                "run touches frame {needed} but the model has {} frames",
                self.model.n_frames
            )));
        }
        Ok(())
    }

    pub fn video_frames(&self) -> usize {
        self.k * self.ladder.delta()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Init,
    Video,
}

/// One frame at one level; occupies `d` consecutive coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CoordKey {
    pub stage: Stage,
    pub frame: usize,
    pub level: Level,
}

impl CoordKey {
    pub fn video(frame: usize, level: Level) -> Self {
        CoordKey {
            stage: Stage::Video,
            frame,
            level,
        }
    }

    pub fn init(frame: usize, level: Level) -> Self {
        CoordKey {
            stage: Stage::Init,
            frame,
            level,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedLaw {
    pub joint: GaussianLaw,
    pub coords: Vec<CoordKey>,
    pub frame_dim: usize,
}

impl GeneratedLaw {
    pub fn empty(frame_dim: usize) -> Self {
        GeneratedLaw {
            joint: GaussianLaw::standard(0),
            coords: Vec::new(),
            frame_dim,
        }
    }

    pub fn position(&self, key: &CoordKey) -> Result<usize> {
        self.coords.iter().position(|c| c == key).ok_or_else(|| Error::MissingCoordinate {
            frame: key.frame,
            level: key.level.to_string(),
        })
    }

    pub fn indices(&self, keys: &[CoordKey]) -> Result<IndexSet> {
        Ok(IndexSet::from_unsorted(expand(&self.positions(keys)?, self.frame_dim)))
    }

    fn positions(&self, keys: &[CoordKey]) -> Result<Vec<usize>> {
        keys.iter().map(|k| self.position(k)).collect()
    }

    /// Marginal over the listed keys, in the listed order.
    pub fn marginal_of(&self, keys: &[CoordKey]) -> Result<GaussianLaw> {
        let idx = expand(&self.positions(keys)?, self.frame_dim);
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        let law = marginal(&self.joint, &IndexSet::new(sorted.clone())?)?;
        if sorted == idx {
            return Ok(law);
        }
        let perm: Vec<usize> = idx.iter().map(|i| sorted.binary_search(i).unwrap()).collect();
        let n = perm.len();
        let a = DMatrix::from_fn(n, n, |r, c| if perm[r] == c { 1.0 } else { 0.0 });
        push_forward(&law, &AffineChannel::new(a, DVector::zeros(n), DMatrix::zeros(n, n))?)
    }

    /// Law of clean video frames `frames`.
    pub fn clean_frames(&self, frames: std::ops::RangeInclusive<usize>) -> Result<GaussianLaw> {
        let keys: Vec<CoordKey> = frames.map(|f| CoordKey::video(f, Level::ZERO)).collect();
        self.marginal_of(&keys)
    }
}

fn expand(positions: &[usize], d: usize) -> Vec<usize> {
    positions.iter().flat_map(|&p| p * d..(p + 1) * d).collect()
}

/// One reverse-time Euler–Maruyama step from `t_next` down to `t_n`, score frozen at `t_next`.
pub fn em_step_channel(score: &AffineScore, t_n: f64, t_next: f64) -> Result<AffineChannel> {
    let h = t_next - t_n;
    if h.is_nan() || h <= 0.0 {
        return Err(Error::InvalidArgument(format!("EM step needs t_next > t_n (h={h})")));
    }
    let n = score.dim();
    let a = DMatrix::identity(n, n) * (1.0 + h / 2.0) + &score.a * h;
    AffineChannel::new(a, &score.b * h, DMatrix::identity(n, n) * h)
}

#[derive(Debug, Clone)]
enum Op {
    Fresh(Vec<CoordKey>),
    /// Appends `outputs = ch([inputs])`.
    Channel {
        inputs: Vec<CoordKey>,
        outputs: Vec<CoordKey>,
        ch: AffineChannel,
    },
    Drop(Vec<CoordKey>),
}

/// Channel on `[x; y]` whose `x` rows follow the EM recursion and whose `y` block is frozen.
struct Recursion {
    f: DMatrix<f64>,
    g: DMatrix<f64>,
    c: DVector<f64>,
    q: DMatrix<f64>,
}

impl Recursion {
    fn new(nx: usize, ny: usize) -> Self {
        Recursion {
            f: DMatrix::identity(nx, nx),
            g: DMatrix::zeros(nx, ny),
            c: DVector::zeros(nx),
            q: DMatrix::zeros(nx, nx),
        }
    }

    /// `x <- (1 + h/2) x + h (A x + B y + b) + sqrt(h) z`.
    fn step(&mut self, h: f64, a: &DMatrix<f64>, b_y: &DMatrix<f64>, b: &DVector<f64>) {
        let nx = self.f.nrows();
        let s = DMatrix::identity(nx, nx) * (1.0 + h / 2.0) + a * h;
        self.f = &s * &self.f;
        self.g = &s * &self.g + b_y * h;
        self.c = &s * &self.c + b * h;
        self.q = &s * &self.q * s.transpose() + DMatrix::identity(nx, nx) * h;
    }

    fn channel(self) -> Result<AffineChannel> {
        let (nx, ny) = (self.f.nrows(), self.g.ncols());
        let mut a = DMatrix::zeros(nx, nx + ny);
        a.view_mut((0, 0), (nx, nx)).copy_from(&self.f);
        a.view_mut((0, nx), (nx, ny)).copy_from(&self.g);
        AffineChannel::new(a, self.c, self.q)
    }
}

fn ou_channel(levels: &[Level], d: usize) -> Result<AffineChannel> {
    let n = levels.len() * d;
    let decay: Vec<f64> = levels.iter().flat_map(|l| std::iter::repeat_n((-l.to_f64() / 2.0).exp(), d)).collect();
    let a = DMatrix::from_diagonal(&DVector::from_vec(decay.clone()));
    let q = DMatrix::from_diagonal(&DVector::from_iterator(n, decay.iter().map(|e| 1.0 - e * e)));
    AffineChannel::new(a, DVector::zeros(n), q)
}

/// `P(out | in, g)` on the true process, as a channel from `[in; X⁰_R]`.
fn regression_channel(model: &WorldModel, out: &[(usize, f64)], inp: &[(usize, f64)], cond: &Conditioning) -> Result<AffineChannel> {
    let d = model.frame_dim;
    let mut items = out.to_vec();
    items.extend_from_slice(inp);
    let joint = joint_with_observation(model, &items, cond)?;
    let reg = regression(&joint, &IndexSet::range(out.len() * d, joint.dim()))?;
    let n_in = inp.len() * d;
    let n_r = cond.frames.len() * d;
    let mut a = DMatrix::zeros(out.len() * d, n_in + n_r);
    a.view_mut((0, 0), (out.len() * d, n_in)).copy_from(&reg.gain.columns(0, n_in));
    if n_r > 0 {
        let gg = reg.gain.columns(n_in, cond.obs_dim(d)) * cond.matrix(d);
        a.view_mut((0, n_in), (out.len() * d, n_r)).copy_from(&gg);
    }
    AffineChannel::new(a, reg.intercept, reg.cov)
}

fn as_items(keys: &[CoordKey]) -> Vec<(usize, f64)> {
    keys.iter().map(|k| (k.frame, k.level.to_f64())).collect()
}

fn init_ops(cfg: &RunConfig) -> Result<Vec<Op>> {
    let (d, i0) = (cfg.model.frame_dim, cfg.i0);
    let carried = cfg.ladder.carried();
    if i0 == 0 {
        return Ok(Vec::new());
    }
    let horizon = cfg.ladder.horizon();
    let noisy: Vec<CoordKey> = (1..=i0).map(|f| CoordKey::init(f, horizon)).collect();
    let clean: Vec<CoordKey> = (1..=i0).map(|f| CoordKey::init(f, Level::ZERO)).collect();
    let mut ops = Vec::new();
    match cfg.mode {
        SamplerMode::Euler => {
            let n = i0 * d;
            let delta = cfg.oracle.bias(StageKind::Init, n)?;
            let pts = cfg.init_grid.points();
            let mut rec = Recursion::new(n, 0);
            let none = DMatrix::zeros(n, 0);
            for m in (1..pts.len()).rev() {
                let items: Vec<(usize, f64)> = (1..=i0).map(|f| (f, pts[m])).collect();
                let s = conditional_score(&cfg.model, &items, &Conditioning::none())?;
                rec.step(pts[m] - pts[m - 1], &s.a, &none, &(&s.offset + &delta));
            }
            ops.push(Op::Fresh(noisy.clone()));
            ops.push(Op::Channel {
                inputs: noisy.clone(),
                outputs: clean.clone(),
                ch: rec.channel()?,
            });
            ops.push(Op::Drop(noisy));
        }
        SamplerMode::IdealizedConditional => {
            let prior = prior_law(&cfg.model, 1..=i0)?;
            let n = prior.dim();
            let ch = AffineChannel::new(DMatrix::zeros(n, 0), DVector::zeros(n), prior.cov().clone())?;
            ops.push(Op::Channel {
                inputs: Vec::new(),
                outputs: clean.clone(),
                ch,
            });
        }
    }
    if carried > 0 {
        let levels: Vec<Level> = (1..=carried).map(|j| cfg.ladder.t_in(j)).collect();
        ops.push(Op::Channel {
            inputs: clean[i0 - carried..].to_vec(),
            outputs: (1..=carried).map(|j| CoordKey::video(j, levels[j - 1])).collect(),
            ch: ou_channel(&levels, d)?,
        });
    }
    Ok(ops)
}

fn ar_ops(cfg: &RunConfig, k: usize) -> Result<Vec<Op>> {
    if k == 0 || k > cfg.k {
        return Err(Error::InvalidArgument(format!("AR step {k} outside 1..={}", cfg.k)));
    }
    let (d, w, delta) = (cfg.model.frame_dim, cfg.ladder.w(), cfg.ladder.delta());
    let carried = cfg.ladder.carried();
    let o = (k - 1) * delta;
    let cond = cfg.policy.conditioning(k - 1, delta, d)?;
    let refs: Vec<CoordKey> = cond.frames.iter().map(|&r| CoordKey::video(r, Level::ZERO)).collect();
    let inputs: Vec<CoordKey> = (1..=w).map(|j| CoordKey::video(o + j, cfg.ladder.t_in(j))).collect();
    let outputs: Vec<CoordKey> = (1..=w).map(|j| CoordKey::video(o + j, cfg.ladder.t_out(j))).collect();
    let fresh = inputs[carried..].to_vec();
    let mut ops = Vec::new();
    match cfg.mode {
        SamplerMode::Euler => {
            let (nx, nr) = (w * d, refs.len() * d);
            let delta_b = cfg.oracle.bias(StageKind::Ar, nx)?;
            let proj = cond.matrix(d);
            let pts = cfg.ar_grid.points();
            let mut rec = Recursion::new(nx, nr);
            for m in (1..pts.len()).rev() {
                let items: Vec<(usize, f64)> = extended_time(&cfg.ladder, pts[m])
                    .into_iter()
                    .enumerate()
                    .map(|(j, l)| (o + j + 1, l))
                    .collect();
                let s = conditional_score(&cfg.model, &items, &cond)?;
                rec.step(pts[m] - pts[m - 1], &s.a, &(&s.gain * &proj), &(&s.offset + &delta_b));
            }
            let mut ins = inputs.clone();
            ins.extend_from_slice(&refs);
            ops.push(Op::Fresh(fresh));
            ops.push(Op::Channel {
                inputs: ins,
                outputs,
                ch: rec.channel()?,
            });
        }
        SamplerMode::IdealizedConditional => {
            let ch = regression_channel(&cfg.model, &as_items(&fresh), &as_items(&inputs[..carried]), &cond)?;
            let mut ins = inputs[..carried].to_vec();
            ins.extend_from_slice(&refs);
            ops.push(Op::Channel {
                inputs: ins,
                outputs: fresh,
                ch,
            });
            let ch = regression_channel(&cfg.model, &as_items(&outputs), &as_items(&inputs), &cond)?;
            let mut ins = inputs.clone();
            ins.extend_from_slice(&refs);
            ops.push(Op::Channel {
                inputs: ins,
                outputs,
                ch,
            });
        }
    }
    ops.push(Op::Drop(inputs));
    Ok(ops)
}

#[derive(Debug, Clone)]
enum Resolved {
    Fresh(usize),
    Channel { inputs: Vec<usize>, ch: AffineChannel },
    Keep(Vec<usize>),
}

fn resolve(ops: Vec<Op>, mut keys: Vec<CoordKey>, d: usize) -> Result<(Vec<Resolved>, Vec<CoordKey>)> {
    let find = |keys: &[CoordKey], k: &CoordKey| {
        keys.iter().position(|c| c == k).ok_or_else(|| Error::MissingCoordinate {
            frame: k.frame,
            level: k.level.to_string(),
        })
    };
    let mut out = Vec::with_capacity(ops.len());
    for op in ops {
        match op {
            Op::Fresh(new) => {
                out.push(Resolved::Fresh(new.len() * d));
                keys.extend(new);
            }
            Op::Channel { inputs, outputs, ch } => {
                let pos = inputs.iter().map(|k| find(&keys, k)).collect::<Result<Vec<_>>>()?;
                out.push(Resolved::Channel {
                    inputs: expand(&pos, d),
                    ch,
                });
                keys.extend(outputs);
            }
            Op::Drop(gone) => {
                for k in &gone {
                    find(&keys, k)?;
                }
                let keep: Vec<usize> = (0..keys.len()).filter(|&i| !gone.contains(&keys[i])).collect();
                keys = keep.iter().map(|&i| keys[i]).collect();
                out.push(Resolved::Keep(expand(&keep, d)));
            }
        }
    }
    Ok((out, keys))
}

fn run_law(mut law: GaussianLaw, ops: &[Resolved]) -> Result<GaussianLaw> {
    for op in ops {
        law = match op {
            Resolved::Fresh(n) => law.product(&GaussianLaw::standard(*n)),
            Resolved::Channel { inputs, ch } => {
                let n = law.dim();
                let m = ch.out_dim();
                let mut a = DMatrix::zeros(n + m, n);
                a.view_mut((0, 0), (n, n)).fill_with_identity();
                for (c, &i) in inputs.iter().enumerate() {
                    a.view_mut((n, i), (m, 1)).copy_from(&ch.matrix().column(c));
                }
                let mut b = DVector::zeros(n + m);
                b.rows_mut(n, m).copy_from(ch.offset());
                let mut q = DMatrix::zeros(n + m, n + m);
                q.view_mut((n, n), (m, m)).copy_from(ch.noise_cov());
                push_forward(&law, &AffineChannel::new(a, b, q)?)?
            }
            Resolved::Keep(idx) => marginal(&law, &IndexSet::new(idx.clone())?)?,
        };
    }
    Ok(law)
}

fn apply_ops(state: &GeneratedLaw, ops: Vec<Op>) -> Result<GeneratedLaw> {
    let (resolved, coords) = resolve(ops, state.coords.clone(), state.frame_dim)?;
    Ok(GeneratedLaw {
        joint: run_law(state.joint.clone(), &resolved)?,
        coords,
        frame_dim: state.frame_dim,
    })
}

/// Clean initialization frames plus the re-noised carried frames of the first window.
pub fn init_stage(cfg: &RunConfig) -> Result<GeneratedLaw> {
    cfg.validate()?;
    apply_ops(&GeneratedLaw::empty(cfg.model.frame_dim), init_ops(cfg)?)
}

pub fn ar_step(state: &GeneratedLaw, cfg: &RunConfig, k: usize) -> Result<GeneratedLaw> {
    apply_ops(state, ar_ops(cfg, k)?)
}

fn all_ops(cfg: &RunConfig) -> Result<Vec<Op>> {
    cfg.validate()?;
    let mut ops = init_ops(cfg)?;
    for k in 1..=cfg.k {
        ops.extend(ar_ops(cfg, k)?);
    }
    Ok(ops)
}

/// Full final state: clean video frames, the leftover carried frames and the init copies.
pub fn generate_state(cfg: &RunConfig) -> Result<GeneratedLaw> {
    apply_ops(&GeneratedLaw::empty(cfg.model.frame_dim), all_ops(cfg)?)
}

/// Law of the clean video `Y⁰_{1:KΔ}`.
pub fn generate_law(cfg: &RunConfig) -> Result<GeneratedLaw> {
    let state = generate_state(cfg)?;
    let coords: Vec<CoordKey> = (1..=cfg.video_frames()).map(|f| CoordKey::video(f, Level::ZERO)).collect();
    Ok(GeneratedLaw {
        joint: state.marginal_of(&coords)?,
        coords,
        frame_dim: cfg.model.frame_dim,
    })
}

fn psd_sqrt(q: &DMatrix<f64>) -> DMatrix<f64> {
    if q.nrows() == 0 {
        return q.clone();
    }
    let eig = SymmetricEigen::new(q.clone());
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals)
}

/// `n_paths` draws of the clean video, one row per path. Path `p` uses the ChaCha8 stream
/// `p` of `seed`, so results do not depend on thread scheduling.
pub fn sample_paths(cfg: &RunConfig, n_paths: usize) -> Result<DMatrix<f64>> {
    if n_paths == 0 {
        return Err(Error::InvalidArgument("n_paths must be at least 1".into()));
    }
    let d = cfg.model.frame_dim;
    let (resolved, keys) = resolve(all_ops(cfg)?, Vec::new(), d)?;
    let roots: Vec<Option<DMatrix<f64>>> = resolved
        .iter()
        .map(|op| match op {
            Resolved::Channel { ch, .. } => Some(psd_sqrt(ch.noise_cov())),
            _ => None,
        })
        .collect();
    let video: Vec<usize> = (1..=cfg.video_frames())
        .map(|f| keys.iter().position(|c| *c == CoordKey::video(f, Level::ZERO)).unwrap())
        .collect();
    let out_idx = expand(&video, d);
    let rows: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(p as u64);
            let mut x: Vec<f64> = Vec::new();
            for (op, root) in resolved.iter().zip(&roots) {
                match op {
                    Resolved::Fresh(n) => x.extend((0..*n).map(|_| rng.sample::<f64, _>(StandardNormal))),
                    Resolved::Channel { inputs, ch } => {
                        let root = root.as_ref().unwrap();
                        let v = DVector::from_iterator(inputs.len(), inputs.iter().map(|&i| x[i]));
                        let z = DVector::from_fn(root.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
                        let y = ch.matrix() * v + ch.offset() + root * z;
                        x.extend(y.iter());
                    }
                    Resolved::Keep(idx) => x = idx.iter().map(|&i| x[i]).collect(),
                }
            }
            out_idx.iter().map(|&i| x[i]).collect()
        })
        .collect();
    Ok(DMatrix::from_fn(n_paths, out_idx.len(), |r, c| rows[r][c]))
}

/// True law of `X⁰_{1:KΔ}` for the run.
pub fn true_video_law(cfg: &RunConfig) -> Result<GaussianLaw> {
    prior_law(&cfg.model, 1..=cfg.video_frames())
}

/// Exact law of `X^T` over the init frames, the quantity the init noise error measures.
pub fn init_terminal_law(cfg: &RunConfig) -> Result<GaussianLaw> {
    let t = cfg.ladder.horizon().to_f64();
    forward_joint_law(&cfg.model, &(1..=cfg.i0).map(|f| (f, t)).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gausscore::kl_gaussian;
    use approx::assert_relative_eq;

    fn model(rho: f64) -> WorldModel {
        WorldModel::new(32, 1, rho, 1.0).unwrap()
    }

    #[test]
    fn em_step_examples() {
        let s = AffineScore {
            a: -DMatrix::identity(1, 1),
            b: DVector::zeros(1),
        };
        assert!(em_step_channel(&s, 1.0, 1.0).is_err());
        let h = 0.1;
        let ch = em_step_channel(&s, 0.0, h).unwrap();
        assert_relative_eq!(ch.matrix()[(0, 0)], 1.0 - h / 2.0, epsilon = 1e-15);
        assert_relative_eq!(ch.noise_cov()[(0, 0)], h, epsilon = 1e-15);
        let out = push_forward(&GaussianLaw::standard(1), &ch).unwrap();
        assert_relative_eq!(out.cov()[(0, 0)], 1.0 + h * h / 4.0, epsilon = 1e-14);
    }

    #[test]
    fn em_composition_converges() {
        // reverse process of a N(0, 4) prior from X^T ~ N(0, Σ_T) down to 0
        let m = WorldModel::new(1, 1, 0.0, 4.0).unwrap();
        let t = 3.0;
        let start = forward_joint_law(&m, &[(1, t)]).unwrap();
        let target = prior_law(&m, 1..=1).unwrap();
        let mut last = f64::INFINITY;
        for steps in [8usize, 32, 128, 512, 1024] {
            let grid = TimeGrid::uniform(0.0, t, steps).unwrap();
            let pts = grid.points();
            let mut law = start.clone();
            for n in (1..pts.len()).rev() {
                let s = conditional_score(&m, &[(1, pts[n])], &Conditioning::none()).unwrap().at(&DVector::zeros(0));
                law = push_forward(&law, &em_step_channel(&s, pts[n - 1], pts[n]).unwrap()).unwrap();
            }
            let kl = kl_gaussian(&target, &law).unwrap();
            assert!(kl < last);
            last = kl;
        }
        assert!(last < 1e-5);
    }

    #[test]
    fn config_validation() {
        let lad = NoiseLadder::fifo(4, Level::integer(8)).unwrap();
        let mut cfg = RunConfig::uniform(model(0.9), lad.clone(), 8, 8, 3).unwrap();
        cfg.i0 = 2;
        assert!(cfg.validate().is_err());
        cfg.i0 = 3;
        cfg.validate().unwrap();
        cfg.k = 0;
        assert!(cfg.validate().is_err());
        assert!(RunConfig::uniform(WorldModel::new(4, 1, 0.9, 1.0).unwrap(), lad, 8, 8, 3).is_err());
    }

    #[test]
    fn init_stage_converges_and_short_horizon_is_poor() {
        let lad = NoiseLadder::outpaint(2, Level::integer(10)).unwrap();
        let cfg = RunConfig::uniform(model(0.9), lad, 1024, 16, 1).unwrap();
        let init = init_stage(&cfg).unwrap();
        let keys: Vec<CoordKey> = (1..=2).map(|f| CoordKey::init(f, Level::ZERO)).collect();
        let kl = kl_gaussian(&prior_law(&cfg.model, 1..=2).unwrap(), &init.marginal_of(&keys).unwrap()).unwrap();
        assert!(kl <= 1e-3, "{kl}");
        assert_eq!(init.coords.len(), 2);

        let lad = NoiseLadder::outpaint(2, Level::new(1, 10).unwrap()).unwrap();
        let cfg = RunConfig::uniform(model(0.9), lad, 64, 16, 1).unwrap();
        let init = init_stage(&cfg).unwrap();
        let short = kl_gaussian(&prior_law(&cfg.model, 1..=2).unwrap(), &init.marginal_of(&keys).unwrap()).unwrap();
        assert!(short > 100.0 * kl);
    }

    #[test]
    fn carried_levels_follow_the_ladder() {
        let lad = NoiseLadder::fifo(4, Level::integer(8)).unwrap();
        let cfg = RunConfig::uniform(model(0.9), lad.clone(), 16, 16, 3).unwrap();
        let mut state = init_stage(&cfg).unwrap();
        for k in 1..=3 {
            let o = (k - 1) * lad.delta();
            for j in 1..=lad.carried() {
                state.position(&CoordKey::video(o + j, lad.t_in(j))).unwrap();
            }
            state = ar_step(&state, &cfg, k).unwrap();
            for f in 1..=k * lad.delta() {
                state.position(&CoordKey::video(f, Level::ZERO)).unwrap();
            }
            let noisy: Vec<&CoordKey> = state.coords.iter().filter(|c| c.stage == Stage::Video && !c.level.is_zero()).collect();
            assert_eq!(noisy.len(), lad.carried());
            for (j, c) in noisy.iter().enumerate() {
                assert_eq!(c.frame, k * lad.delta() + j + 1);
                assert_eq!(c.level, lad.t_in(j + 1));
            }
        }
        assert!(ar_step(&init_stage(&cfg).unwrap(), &cfg, 2).is_err());
    }

    #[test]
    fn first_step_with_minimal_history() {
        let lad = NoiseLadder::block(4, 2, Level::integer(8)).unwrap();
        let mut cfg = RunConfig::uniform(model(0.9), lad.clone(), 8, 8, 1).unwrap();
        cfg.i0 = 2;
        let init = init_stage(&cfg).unwrap();
        let expect = vec![
            CoordKey::init(1, Level::ZERO),
            CoordKey::init(2, Level::ZERO),
            CoordKey::video(1, lad.t_in(1)),
            CoordKey::video(2, lad.t_in(2)),
        ];
        assert_eq!(init.coords, expect);
        let out = ar_step(&init, &cfg, 1).unwrap();
        let video: Vec<CoordKey> = out.coords.iter().filter(|c| c.stage == Stage::Video).copied().collect();
        assert_eq!(
            video,
            vec![
                CoordKey::video(1, Level::ZERO),
                CoordKey::video(2, Level::ZERO),
                CoordKey::video(3, lad.t_out(3)),
                CoordKey::video(4, lad.t_out(4)),
            ]
        );
        let outpaint = RunConfig::uniform(model(0.9), NoiseLadder::outpaint(2, Level::integer(8)).unwrap(), 8, 8, 1).unwrap();
        assert!(init_stage(&outpaint).unwrap().coords.iter().all(|c| c.stage == Stage::Init));
    }

    #[test]
    fn exact_outpaint_step_matches_true_conditional() {
        let lad = NoiseLadder::outpaint(2, Level::integer(10)).unwrap();
        let mut cfg = RunConfig::uniform(model(0.9), lad, 1024, 1024, 2).unwrap();
        cfg.policy = ReferencePolicy::Window { m: 1_000 };
        let law = generate_law(&cfg).unwrap();
        let one = kl_gaussian(&prior_law(&cfg.model, 1..=2).unwrap(), &law.clean_frames(1..=2).unwrap()).unwrap();
        assert!(one <= 2e-3, "{one}");
        let joint = kl_gaussian(&true_video_law(&cfg).unwrap(), &law.joint).unwrap();
        assert!(joint <= 2.0 * 5e-3, "{joint}");
        // conditional of the second clip given the first, via the chain rule
        assert!(joint - one <= 1e-3 + 1e-12, "{}", joint - one);
    }

    #[test]
    fn independent_frames_stay_independent() {
        let lad = NoiseLadder::fifo(4, Level::integer(6)).unwrap();
        let cfg = RunConfig::uniform(model(0.0), lad, 32, 32, 4).unwrap();
        let law = generate_law(&cfg).unwrap();
        let c = law.joint.cov();
        for i in 0..c.nrows() {
            for j in 0..c.ncols() {
                if i != j {
                    assert!(c[(i, j)].abs() <= 1e-8, "{i} {j} {}", c[(i, j)]);
                }
            }
        }
        assert_eq!(law, generate_law(&cfg).unwrap());
    }

    #[test]
    fn bias_shifts_mean_monotonically() {
        let lad = NoiseLadder::fifo(3, Level::integer(6)).unwrap();
        let base = RunConfig::uniform(model(0.9), lad, 32, 32, 3).unwrap();
        let mut prev = 0.0;
        for norm in [0.05, 0.1, 0.2, 0.4] {
            let mut cfg = base.clone();
            cfg.oracle = OracleSpec::Biased { norm };
            let shift = generate_law(&cfg).unwrap().joint.mean().norm();
            assert!(shift > prev);
            prev = shift;
        }
    }

    #[test]
    fn paths_are_deterministic() {
        let lad = NoiseLadder::fifo(3, Level::integer(6)).unwrap();
        let mut cfg = RunConfig::uniform(model(0.9), lad, 16, 16, 2).unwrap();
        cfg.seed = 11;
        let a = sample_paths(&cfg, 64).unwrap();
        assert_eq!(a, sample_paths(&cfg, 64).unwrap());
        cfg.seed = 12;
        assert_ne!(a, sample_paths(&cfg, 64).unwrap());
        assert!(sample_paths(&cfg, 0).is_err());
    }

    fn check_moments(cfg: &RunConfig, n: usize) {
        let law = generate_law(cfg).unwrap();
        let x = sample_paths(cfg, n).unwrap();
        let nf = n as f64;
        let dim = law.joint.dim();
        let mean = DVector::from_fn(dim, |c, _| x.column(c).sum() / nf);
        let cov = law.joint.cov();
        for c in 0..dim {
            let se = (cov[(c, c)] / nf).sqrt();
            assert!((mean[c] - law.joint.mean()[c]).abs() <= 5.0 * se, "mean {c}");
        }
        for i in 0..dim {
            for j in 0..=i {
                let xi = x.column(i).add_scalar(-mean[i]);
                let xj = x.column(j).add_scalar(-mean[j]);
                let prod = xi.component_mul(&xj);
                let s = prod.sum() / (nf - 1.0);
                let var = prod.map(|v| (v - s).powi(2)).sum() / (nf - 1.0);
                let se = (var / nf).sqrt();
                assert!((s - cov[(i, j)]).abs() <= 5.0 * se, "cov {i} {j}: {s} vs {}", cov[(i, j)]);
            }
        }
    }

    #[test]
    fn paths_match_law() {
        let lad = NoiseLadder::fifo(3, Level::integer(6)).unwrap();
        let mut cfg = RunConfig::uniform(model(0.9), lad, 32, 32, 3).unwrap();
        cfg.seed = 5;
        cfg.policy = ReferencePolicy::Window { m: 2 };
        check_moments(&cfg, 100_000);
        cfg.oracle = OracleSpec::Biased { norm: 0.5 };
        cfg.seed = 6;
        check_moments(&cfg, 100_000);
        cfg.mode = SamplerMode::IdealizedConditional;
        cfg.policy = ReferencePolicy::Compressed {
            m: 2,
            projection: vec![vec![0.5, 0.5]],
        };
        check_moments(&cfg, 50_000);
    }

    #[test]
    fn idealized_full_past_is_exact() {
        let lad = NoiseLadder::block(4, 2, Level::integer(8)).unwrap();
        let mut cfg = RunConfig::uniform(model(0.9), lad, 8, 8, 4).unwrap();
        cfg.mode = SamplerMode::IdealizedConditional;
        cfg.policy = ReferencePolicy::Window { m: 100 };
        let law = generate_law(&cfg).unwrap();
        let kl = kl_gaussian(&true_video_law(&cfg).unwrap(), &law.joint).unwrap();
        assert!(kl <= 1e-9, "{kl}");
    }
}

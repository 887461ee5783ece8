//! Distributions on `{0,1}³` and the two-point lower-bound construction, in bits.
//!
//! `P0` makes `X, Y, Z` independent fair bits; `P1(ε)` keeps `Y` independent and links `Z`
//! to `X` through a flip channel. Both induce the same `(X,Y)` and `(Y,Z)` marginals, so no
//! estimator that only sees those pairs can tell them apart.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-12;

/// `p[x][y][z]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteJoint {
    p: [[[f64; 2]; 2]; 2],
}

impl DiscreteJoint {
    pub fn new(p: [[[f64; 2]; 2]; 2]) -> Result<Self> {
        let flat = p.iter().flatten().flatten();
        if flat.clone().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument("joint table has a negative or non-finite entry".into()));
        }
        let total: f64 = flat.sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidArgument(format!("joint table sums to {total}")));
        }
        Ok(DiscreteJoint { p })
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights(w: [f64; 8]) -> Result<Self> {
        let total: f64 = w.iter().sum();
        if total.is_nan() || total <= 0.0 {
            return Err(Error::InvalidArgument("weights must have positive mass".into()));
        }
        let mut p = [[[0.0; 2]; 2]; 2];
        for (i, v) in w.iter().enumerate() {
            p[i >> 2][(i >> 1) & 1][i & 1] = v / total;
        }
        DiscreteJoint::new(p)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.p[x][y][z]
    }

    pub fn atoms(&self) -> impl Iterator<Item = ((usize, usize, usize), f64)> + '_ {
        (0..8).map(move |i| {
            let (x, y, z) = (i >> 2, (i >> 1) & 1, i & 1);
            ((x, y, z), self.p[x][y][z])
        })
    }

    pub fn marginal_xy(&self) -> [[f64; 2]; 2] {
        let mut m = [[0.0; 2]; 2];
        for ((x, y, _), v) in self.atoms() {
            m[x][y] += v;
        }
        m
    }

    pub fn marginal_yz(&self) -> [[f64; 2]; 2] {
        let mut m = [[0.0; 2]; 2];
        for ((_, y, z), v) in self.atoms() {
            m[y][z] += v;
        }
        m
    }

    pub fn marginal_y(&self) -> [f64; 2] {
        let xy = self.marginal_xy();
        [xy[0][0] + xy[1][0], xy[0][1] + xy[1][1]]
    }
}

fn xlog2x(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.log2()
    }
}

pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidArgument(format!("probability {x} outside [0, 1]")));
    }
    Ok(-xlog2x(x) - xlog2x(1.0 - x))
}

/// The `ε ∈ [0, ½]` with `H(ε) = y`, by bisection.
pub fn binary_entropy_inverse(y: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&y) {
        return Err(Error::InvalidArgument(format!("entropy {y} outside [0, 1]")));
    }
    let (mut lo, mut hi) = (0.0f64, 0.5f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if binary_entropy(mid)? < y {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * 0.25 {
            break;
        }
    }
    let (hl, hh) = (binary_entropy(lo)?, binary_entropy(hi)?);
    Ok(if (hl - y).abs() <= (hh - y).abs() { lo } else { hi })
}

pub fn construct_p0() -> DiscreteJoint {
    DiscreteJoint { p: [[[0.125; 2]; 2]; 2] }
}

pub fn construct_p1(eps: f64) -> Result<DiscreteJoint> {
    if !(0.0..=0.5).contains(&eps) {
        return Err(Error::InvalidArgument(format!("flip probability {eps} outside [0, 1/2]")));
    }
    let mut p = [[[0.0; 2]; 2]; 2];
    for (x, py) in p.iter_mut().enumerate() {
        for pz in py.iter_mut() {
            for (z, v) in pz.iter_mut().enumerate() {
                *v = 0.5 * if z == x { (1.0 - eps) / 2.0 } else { eps / 2.0 };
            }
        }
    }
    DiscreteJoint::new(p)
}

pub fn tv(p: &DiscreteJoint, q: &DiscreteJoint) -> f64 {
    0.5 * p.atoms().zip(q.atoms()).map(|((_, a), (_, b))| (a - b).abs()).sum::<f64>()
}

/// `KL(p ‖ q)` in bits; `+∞` when `p` is not absolutely continuous w.r.t. `q`.
pub fn kl_discrete(p: &DiscreteJoint, q: &DiscreteJoint) -> f64 {
    let mut total = 0.0;
    for ((_, a), (_, b)) in p.atoms().zip(q.atoms()) {
        if a > 0.0 {
            if b <= 0.0 {
                return f64::INFINITY;
            }
            total += a * (a / b).log2();
        }
    }
    total.max(0.0)
}

/// `I(X; Z | Y)` in bits.
pub fn cmi_discrete(p: &DiscreteJoint) -> f64 {
    let (xy, yz, y) = (p.marginal_xy(), p.marginal_yz(), p.marginal_y());
    let mut total = 0.0;
    for ((xi, yi, zi), v) in p.atoms() {
        if v > 0.0 {
            total += v * (v * y[yi] / (xy[xi][yi] * yz[yi][zi])).log2();
        }
    }
    total.max(0.0)
}

pub fn membership(p: &DiscreteJoint, s: f64) -> Result<bool> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::InvalidArgument(format!("CMI budget {s} outside [0, 1]")));
    }
    Ok(cmi_discrete(p) <= s + 1e-12)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HalfKlCheck {
    pub tv: f64,
    pub half_kl: f64,
    pub ok: bool,
}

/// `TV(P0, P1) ≥ ½ KL(P1 ‖ P0)`.
pub fn verify_tv_half_kl(eps: f64) -> Result<HalfKlCheck> {
    let (p0, p1) = (construct_p0(), construct_p1(eps)?);
    let tv_val = tv(&p0, &p1);
    let half_kl = 0.5 * kl_discrete(&p1, &p0);
    Ok(HalfKlCheck {
        tv: tv_val,
        half_kl,
        ok: tv_val >= half_kl - 1e-12,
    })
}

/// `(1 − β) / log₂(1/β)`, continued through `β = 1` by its expansion.
pub fn reverse_pinsker_coefficient(beta: f64) -> f64 {
    let u = 1.0 - beta;
    if u.abs() < 1e-8 {
        std::f64::consts::LN_2 * (1.0 - u / 2.0 - u * u / 12.0)
    } else {
        u / (1.0 / beta).log2()
    }
}

/// `TV(p, q) ≥ (1 − β)/log₂(1/β) · KL(p ‖ q)` with `1/β` the largest atom ratio `p/q`.
pub fn verify_reverse_pinsker(p: &DiscreteJoint, q: &DiscreteJoint) -> Result<bool> {
    if q.atoms().any(|(_, v)| v <= 0.0) {
        return Err(Error::InvalidArgument("reverse Pinsker needs a strictly positive q".into()));
    }
    let ratio = p.atoms().zip(q.atoms()).map(|((_, a), (_, b))| a / b).fold(0.0f64, f64::max);
    let beta = 1.0 / ratio.max(1.0);
    Ok(tv(p, q) >= reverse_pinsker_coefficient(beta) * kl_discrete(p, q) - 1e-12)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSet {
    pub xy_pairs: Vec<(u8, u8)>,
    pub yz_pairs: Vec<(u8, u8)>,
    pub seed: u64,
}

fn draw_pair(rng: &mut ChaCha8Rng, table: &[[f64; 2]; 2]) -> (u8, u8) {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (a, row) in table.iter().enumerate() {
        for (b, v) in row.iter().enumerate() {
            acc += v;
            if u < acc {
                return (a as u8, b as u8);
            }
        }
    }
    (1, 1)
}

/// `n` independent `(X,Y)` draws followed by `n` independent `(Y,Z)` draws.
pub fn draw_samples(p: &DiscreteJoint, n: usize, seed: u64) -> Result<SampleSet> {
    draw_samples_stream(p, n, seed, 0)
}

fn draw_samples_stream(p: &DiscreteJoint, n: usize, seed: u64, stream: u64) -> Result<SampleSet> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let (xy, yz) = (p.marginal_xy(), p.marginal_yz());
    let xy_pairs = (0..n).map(|_| draw_pair(&mut rng, &xy)).collect();
    let yz_pairs = (0..n).map(|_| draw_pair(&mut rng, &yz)).collect();
    Ok(SampleSet { xy_pairs, yz_pairs, seed })
}

/// `P̂(x|y) P̂(y) P̂(z|y)` with add-one smoothing; `P̂(y)` pools both halves.
pub fn plugin_estimator(s: &SampleSet) -> DiscreteJoint {
    let mut nxy = [[0.0f64; 2]; 2];
    let mut nyz = [[0.0f64; 2]; 2];
    for &(x, y) in &s.xy_pairs {
        nxy[x as usize][y as usize] += 1.0;
    }
    for &(y, z) in &s.yz_pairs {
        nyz[y as usize][z as usize] += 1.0;
    }
    let ny_xy = [nxy[0][0] + nxy[1][0], nxy[0][1] + nxy[1][1]];
    let ny_yz = [nyz[0][0] + nyz[0][1], nyz[1][0] + nyz[1][1]];
    let total = (s.xy_pairs.len() + s.yz_pairs.len()) as f64;
    let mut p = [[[0.0; 2]; 2]; 2];
    for (x, px) in p.iter_mut().enumerate() {
        for (y, py) in px.iter_mut().enumerate() {
            let p_y = (ny_xy[y] + ny_yz[y] + 1.0) / (total + 2.0);
            let p_x = (nxy[x][y] + 1.0) / (ny_xy[y] + 2.0);
            for (z, v) in py.iter_mut().enumerate() {
                *v = p_x * p_y * (nyz[y][z] + 1.0) / (ny_yz[y] + 2.0);
            }
        }
    }
    DiscreteJoint { p }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MinimaxOutcome {
    pub s: f64,
    pub eps: f64,
    pub threshold: f64,
    pub fraction: f64,
    /// `KL(P ‖ P̂)` as `N → ∞`, which equals `s`.
    pub limit_kl: f64,
}

/// Fraction of trials where the plugin estimate under `P1(H⁻¹(1−s))` has KL at least `s²/2`.
/// Trial `i` draws from stream `i` of `seed`.
pub fn minimax_demo(s: f64, n: usize, trials: usize, seed: u64) -> Result<MinimaxOutcome> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::InvalidArgument(format!("CMI budget {s} outside (0, 1]")));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let eps = binary_entropy_inverse(1.0 - s)?;
    let p = construct_p1(eps)?;
    let threshold = s * s / 2.0;
    let hits = (0..trials)
        .into_par_iter()
        .map(|i| draw_samples_stream(&p, n, seed, i as u64).map(|d| kl_discrete(&p, &plugin_estimator(&d)) >= threshold))
        .collect::<Result<Vec<bool>>>()?
        .into_iter()
        .filter(|&h| h)
        .count();
    Ok(MinimaxOutcome {
        s,
        eps,
        threshold,
        fraction: hits as f64 / trials as f64,
        limit_kl: cmi_discrete(&p),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlessingCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

/// `I(X; Z | Y, g(X)) ≤ I(X; Z | Y)` by enumeration over `(x, y, z, g(x))`.
pub fn blessing_check(p: &DiscreteJoint, g: [u8; 2]) -> BlessingCheck {
    // conditioning variable c = (y, g(x))
    let mut pc = [[0.0f64; 2]; 2];
    let mut pxc = [[[0.0f64; 2]; 2]; 2];
    let mut pzc = [[[0.0f64; 2]; 2]; 2];
    for ((x, y, z), v) in p.atoms() {
        let gx = g[x] as usize;
        pc[y][gx] += v;
        pxc[x][y][gx] += v;
        pzc[z][y][gx] += v;
    }
    let mut lhs = 0.0;
    for ((x, y, z), v) in p.atoms() {
        if v > 0.0 {
            let gx = g[x] as usize;
            lhs += v * (v * pc[y][gx] / (pxc[x][y][gx] * pzc[z][y][gx])).log2();
        }
    }
    let lhs = lhs.max(0.0);
    let rhs = cmi_discrete(p);
    BlessingCheck {
        lhs,
        rhs,
        ok: lhs <= rhs + 1e-12,
    }
}

//! Exact algebra on multivariate Gaussian laws.
//!
//! All information quantities here are in nats. Inversions and log-determinants go
//! through a Cholesky factor; a factor whose pivots collapse is retried with additive
//! jitter `1e-10 * trace / dim`, escalated tenfold up to three times.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue tolerance for the PSD check.
pub const PSD_TOL: f64 = 1e-10;
/// Negative KL/CMI values above `-CLAMP_TOL` are rounded to zero.
pub const CLAMP_TOL: f64 = 1e-9;

const JITTER_BASE: f64 = 1e-10;
const JITTER_RETRIES: usize = 3;
const PIVOT_RATIO_MIN: f64 = 1e-14;
// Conditional blocks with a worse pivot ratio are treated as degenerate when
// choosing which side of a CMI to evaluate.
const SIDE_PIVOT_RATIO_MIN: f64 = 1e-10;

/// Strictly increasing list of coordinate indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        for (position, pair) in indices.windows(2).enumerate() {
            if pair[0] >= pair[1] {
                return Err(Error::UnsortedIndex {
                    position: position + 1,
                });
            }
        }
        Ok(IndexSet(indices))
    }

    /// Sorts and deduplicates.
    pub fn from_unsorted(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        IndexSet(indices)
    }

    pub fn empty() -> Self {
        IndexSet(Vec::new())
    }

    pub fn range(start: usize, end: usize) -> Self {
        IndexSet((start..end).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.binary_search(&index).is_ok()
    }

    pub fn union(&self, other: &IndexSet) -> IndexSet {
        let mut all = self.0.clone();
        all.extend_from_slice(&other.0);
        IndexSet::from_unsorted(all)
    }

    /// Indices in `0..dim` not in `self`.
    pub fn complement(&self, dim: usize) -> IndexSet {
        IndexSet((0..dim).filter(|i| !self.contains(*i)).collect())
    }

    fn check_range(&self, dim: usize) -> Result<()> {
        match self.0.last() {
            Some(&index) if index >= dim => Err(Error::IndexOutOfRange { index, dim }),
            _ => Ok(()),
        }
    }

    fn check_disjoint(&self, other: &IndexSet) -> Result<()> {
        match self.0.iter().find(|i| other.contains(**i)) {
            Some(&index) => Err(Error::Overlap { index }),
            None => Ok(()),
        }
    }
}

impl FromIterator<usize> for IndexSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        IndexSet::from_unsorted(iter.into_iter().collect())
    }
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn check_psd(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() == 0 {
        return Ok(());
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "covariance" });
    }
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let max_eig = eig.max();
    let min_eig = eig.min();
    if min_eig < -PSD_TOL * max_eig.max(0.0) {
        return Err(Error::NotPsd { min_eig, max_eig });
    }
    Ok(())
}

fn checked_symmetric(m: DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::Dimension {
            what,
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    let scale = m.amax().max(1.0);
    let asymmetry = (&m - m.transpose()).amax();
    if asymmetry > 1e-9 * scale {
        return Err(Error::NotSymmetric { asymmetry });
    }
    let s = symmetrize(&m);
    check_psd(&s)?;
    Ok(s)
}

/// Cholesky factor of a symmetric positive definite matrix, possibly of `m + jitter*I`.
pub(crate) struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
}

impl SpdFactor {
    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    pub fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(rhs)
    }

    pub fn solve_vec(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        symmetrize(&self.chol.inverse())
    }
}

fn pivot_ratio(chol: &Cholesky<f64, Dyn>) -> f64 {
    let d = chol.l_dirty().diagonal();
    let max = d.max();
    let min = d.min();
    if max <= 0.0 {
        0.0
    } else {
        (min / max).powi(2)
    }
}

fn try_cholesky(m: &DMatrix<f64>, min_ratio: f64) -> Option<Cholesky<f64, Dyn>> {
    let chol = Cholesky::new(m.clone())?;
    if pivot_ratio(&chol) >= min_ratio {
        Some(chol)
    } else {
        None
    }
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let max = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Factor `m`, escalating jitter when the plain factor fails or is numerically rank deficient.
pub(crate) fn factor_spd(m: &DMatrix<f64>) -> Result<SpdFactor> {
    if let Some(chol) = try_cholesky(m, PIVOT_RATIO_MIN) {
        return Ok(SpdFactor { chol });
    }
    let n = m.nrows().max(1) as f64;
    let trace = m.trace();
    let mut jitter = JITTER_BASE * if trace > 0.0 { trace / n } else { 1.0 };
    for _ in 0..JITTER_RETRIES {
        let shifted = m + DMatrix::identity(m.nrows(), m.ncols()) * jitter;
        if let Some(chol) = try_cholesky(&shifted, PIVOT_RATIO_MIN) {
            return Ok(SpdFactor { chol });
        }
        jitter *= 10.0;
    }
    Err(Error::Singular {
        condition: condition_number(m),
    })
}

fn select(m: &DMatrix<f64>, rows: &IndexSet, cols: &IndexSet) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
        m[(rows.as_slice()[i], cols.as_slice()[j])]
    })
}

fn select_vec(v: &DVector<f64>, idx: &IndexSet) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|i| v[i]))
}

/// Multivariate normal law.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLaw {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianLaw {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() {
            return Err(Error::Dimension {
                what: "GaussianLaw covariance",
                expected: mean.len(),
                got: cov.nrows(),
            });
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "mean" });
        }
        let cov = checked_symmetric(cov, "GaussianLaw covariance")?;
        Ok(GaussianLaw { mean, cov })
    }

    pub fn standard(dim: usize) -> Self {
        GaussianLaw {
            mean: DVector::zeros(dim),
            cov: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Independent product `self ⊗ other`, coordinates of `self` first.
    pub fn product(&self, other: &GaussianLaw) -> GaussianLaw {
        let (n, m) = (self.dim(), other.dim());
        let mut mean = DVector::zeros(n + m);
        mean.rows_mut(0, n).copy_from(&self.mean);
        mean.rows_mut(n, m).copy_from(&other.mean);
        let mut cov = DMatrix::zeros(n + m, n + m);
        cov.view_mut((0, 0), (n, n)).copy_from(&self.cov);
        cov.view_mut((n, n), (m, m)).copy_from(&other.cov);
        GaussianLaw { mean, cov }
    }

    /// Log-density at `x`.
    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        let f = factor_spd(&self.cov)?;
        let r = x - &self.mean;
        let maha = r.dot(&f.solve_vec(&r));
        let n = self.dim() as f64;
        Ok(-0.5 * (maha + f.log_det() + n * (2.0 * std::f64::consts::PI).ln()))
    }
}

/// Affine Gaussian channel `x -> A x + b + N(0, Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineChannel {
    a: DMatrix<f64>,
    b: DVector<f64>,
    q: DMatrix<f64>,
}

impl AffineChannel {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, q: DMatrix<f64>) -> Result<Self> {
        if b.len() != a.nrows() {
            return Err(Error::Dimension {
                what: "AffineChannel offset",
                expected: a.nrows(),
                got: b.len(),
            });
        }
        if q.nrows() != a.nrows() {
            return Err(Error::Dimension {
                what: "AffineChannel noise covariance",
                expected: a.nrows(),
                got: q.nrows(),
            });
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "channel" });
        }
        let q = checked_symmetric(q, "AffineChannel noise covariance")?;
        Ok(AffineChannel { a, b, q })
    }

    pub fn identity(dim: usize) -> Self {
        AffineChannel {
            a: DMatrix::identity(dim, dim),
            b: DVector::zeros(dim),
            q: DMatrix::zeros(dim, dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// The channel `next ∘ self`.
    pub fn then(&self, next: &AffineChannel) -> Result<AffineChannel> {
        if next.in_dim() != self.out_dim() {
            return Err(Error::Dimension {
                what: "channel composition",
                expected: self.out_dim(),
                got: next.in_dim(),
            });
        }
        let a = &next.a * &self.a;
        let b = &next.a * &self.b + &next.b;
        let q = symmetrize(&(&next.a * &self.q * next.a.transpose() + &next.q));
        Ok(AffineChannel { a, b, q })
    }
}

pub fn push_forward(law: &GaussianLaw, ch: &AffineChannel) -> Result<GaussianLaw> {
    if ch.in_dim() != law.dim() {
        return Err(Error::Dimension {
            what: "push_forward",
            expected: law.dim(),
            got: ch.in_dim(),
        });
    }
    let mean = &ch.a * &law.mean + &ch.b;
    let cov = symmetrize(&(&ch.a * &law.cov * ch.a.transpose() + &ch.q));
    GaussianLaw::new(mean, cov)
}

pub fn marginal(law: &GaussianLaw, idx: &IndexSet) -> Result<GaussianLaw> {
    idx.check_range(law.dim())?;
    Ok(GaussianLaw {
        mean: select_vec(&law.mean, idx),
        cov: select(&law.cov, idx, idx),
    })
}

/// Linear-Gaussian regression of the unobserved coordinates on the observed ones:
/// `rest | obs = v  ~  N(intercept + gain * v, cov)`.
#[derive(Debug, Clone)]
pub struct Regression {
    pub rest: IndexSet,
    pub gain: DMatrix<f64>,
    pub intercept: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Regression {
    pub fn law_at(&self, value: &DVector<f64>) -> Result<GaussianLaw> {
        if value.len() != self.gain.ncols() {
            return Err(Error::Dimension {
                what: "observed value",
                expected: self.gain.ncols(),
                got: value.len(),
            });
        }
        GaussianLaw::new(&self.intercept + &self.gain * value, self.cov.clone())
    }

    /// The same regression as a channel from observed values to the rest.
    pub fn channel(&self) -> Result<AffineChannel> {
        AffineChannel::new(self.gain.clone(), self.intercept.clone(), self.cov.clone())
    }
}

pub fn regression(law: &GaussianLaw, obs: &IndexSet) -> Result<Regression> {
    obs.check_range(law.dim())?;
    let rest = obs.complement(law.dim());
    let s_oo = select(&law.cov, obs, obs);
    let s_ro = select(&law.cov, &rest, obs);
    let s_rr = select(&law.cov, &rest, &rest);
    let mu_o = select_vec(&law.mean, obs);
    let mu_r = select_vec(&law.mean, &rest);
    if obs.is_empty() {
        return Ok(Regression {
            rest,
            gain: DMatrix::zeros(mu_r.len(), 0),
            intercept: mu_r,
            cov: s_rr,
        });
    }
    let f = factor_spd(&s_oo)?;
    let gain = f.solve(&s_ro.transpose()).transpose();
    let intercept = &mu_r - &gain * &mu_o;
    let cov = symmetrize(&(&s_rr - &gain * s_ro.transpose()));
    let cov = clip_psd(cov);
    Ok(Regression {
        rest,
        gain,
        intercept,
        cov,
    })
}

// Schur complements of nearly singular blocks can come out a hair below zero.
fn clip_psd(m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 || check_psd(&m).is_ok() {
        return m;
    }
    let eig = SymmetricEigen::new(m);
    let vals = eig.eigenvalues.map(|v| v.max(0.0));
    symmetrize(&(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()))
}

pub fn condition(law: &GaussianLaw, obs: &IndexSet, value: &DVector<f64>) -> Result<GaussianLaw> {
    if value.len() != obs.len() {
        return Err(Error::Dimension {
            what: "condition value",
            expected: obs.len(),
            got: value.len(),
        });
    }
    regression(law, obs)?.law_at(value)
}

fn clamp_nonneg(value: f64, quantity: &'static str) -> Result<f64> {
    if value >= 0.0 {
        Ok(value)
    } else if value >= -CLAMP_TOL {
        Ok(0.0)
    } else {
        Err(Error::Consistency { quantity, value })
    }
}

/// KL(p ‖ q) in nats.
pub fn kl_gaussian(p: &GaussianLaw, q: &GaussianLaw) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::Dimension {
            what: "kl_gaussian",
            expected: p.dim(),
            got: q.dim(),
        });
    }
    let d = p.dim();
    if d == 0 {
        return Ok(0.0);
    }
    let fq = factor_spd(&q.cov)?;
    let fp = factor_spd(&p.cov)?;
    let trace = fq.solve(&p.cov).trace();
    let diff = &q.mean - &p.mean;
    let maha = diff.dot(&fq.solve_vec(&diff));
    let kl = 0.5 * (trace + maha - d as f64 + fq.log_det() - fp.log_det());
    clamp_nonneg(kl, "KL divergence")
}

fn conditional_cov(joint: &GaussianLaw, target: &IndexSet, given: &IndexSet) -> Result<DMatrix<f64>> {
    let s_tt = select(&joint.cov, target, target);
    if given.is_empty() {
        return Ok(s_tt);
    }
    let s_gg = select(&joint.cov, given, given);
    let s_tg = select(&joint.cov, target, given);
    let f = factor_spd(&s_gg)?;
    let gain = f.solve(&s_tg.transpose());
    Ok(symmetrize(&(s_tt - s_tg * gain)))
}

fn strict_log_det(m: &DMatrix<f64>) -> Option<f64> {
    if m.nrows() == 0 {
        return Some(0.0);
    }
    try_cholesky(m, SIDE_PIVOT_RATIO_MIN)
        .map(|c| 2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// `½[ln det Σ_{T|G} − ln det Σ_{T|G∪O}]`, or `None` when either block is degenerate.
fn cmi_one_side(joint: &GaussianLaw, target: &IndexSet, other: &IndexSet, given: &IndexSet) -> Result<Option<f64>> {
    let outer = conditional_cov(joint, target, given)?;
    let inner = conditional_cov(joint, target, &given.union(other))?;
    Ok(match (strict_log_det(&outer), strict_log_det(&inner)) {
        (Some(a), Some(b)) => Some(0.5 * (a - b)),
        _ => None,
    })
}

/// I(A; B | C) in nats for jointly Gaussian coordinate blocks.
///
/// Evaluated as `½[ln det Σ_{A|C} − ln det Σ_{A|B,C}]`, switching to the `B` side when a block
/// on the `A` side is degenerate (for example when `C` contains a function of `A`).
pub fn cmi_gaussian(joint: &GaussianLaw, a: &IndexSet, b: &IndexSet, c: &IndexSet) -> Result<f64> {
    for set in [a, b, c] {
        set.check_range(joint.dim())?;
    }
    a.check_disjoint(b)?;
    a.check_disjoint(c)?;
    b.check_disjoint(c)?;
    if a.is_empty() || b.is_empty() {
        return Ok(0.0);
    }
    let value = match cmi_one_side(joint, a, b, c)? {
        Some(v) => v,
        None => match cmi_one_side(joint, b, a, c)? {
            Some(v) => v,
            None => {
                let ab = a.union(b);
                let la = factor_spd(&conditional_cov(joint, a, c)?)?.log_det();
                let lb = factor_spd(&conditional_cov(joint, b, c)?)?.log_det();
                let lab = factor_spd(&conditional_cov(joint, &ab, c)?)?.log_det();
                0.5 * (la + lb - lab)
            }
        },
    };
    clamp_nonneg(value, "conditional mutual information")
}

/// I(A; B) in nats.
pub fn mutual_information(joint: &GaussianLaw, a: &IndexSet, b: &IndexSet) -> Result<f64> {
    cmi_gaussian(joint, a, b, &IndexSet::empty())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn law(mean: DVector<f64>, cov: DMatrix<f64>) -> GaussianLaw {
        GaussianLaw::new(mean, cov).unwrap()
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        symmetrize(&(&g * g.transpose() + DMatrix::identity(n, n) * 0.5))
    }

    #[test]
    fn identity_channel_keeps_law() {
        let p = law(dvector![1.0, -2.0], dmatrix![2.0, 0.3; 0.3, 1.0]);
        let out = push_forward(&p, &AffineChannel::identity(2)).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn constant_map() {
        let ch = AffineChannel::new(DMatrix::zeros(2, 2), dvector![1.0, 1.0], DMatrix::zeros(2, 2)).unwrap();
        let out = push_forward(&GaussianLaw::standard(2), &ch).unwrap();
        assert_eq!(out.mean(), &dvector![1.0, 1.0]);
        assert_eq!(out.cov(), &DMatrix::zeros(2, 2));
    }

    #[test]
    fn push_forward_scalar_matches_monte_carlo() {
        let ch = AffineChannel::new(dmatrix![2.0], dvector![0.0], dmatrix![1.0]).unwrap();
        let out = push_forward(&GaussianLaw::standard(1), &ch).unwrap();
        assert_relative_eq!(out.cov()[(0, 0)], 5.0, epsilon = 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let x: f64 = rng.sample(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            let y = 2.0 * x + e;
            sum_sq += y * y;
        }
        let var = sum_sq / n as f64;
        // standard error of a variance estimate is sqrt(2/n) * var
        assert!((var - 5.0).abs() < 5.0 * 5.0 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn dimension_mismatch_names_both_dims() {
        let ch = AffineChannel::identity(3);
        let err = push_forward(&GaussianLaw::standard(2), &ch).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('2') && msg.contains('3'), "{msg}");
    }

    #[test]
    fn marginal_examples() {
        let p = law(dvector![1.0, 2.0], DMatrix::from_diagonal(&dvector![3.0, 4.0]));
        let full = marginal(&p, &IndexSet::range(0, 2)).unwrap();
        assert_eq!(full, p);
        let m = marginal(&p, &IndexSet::new(vec![1]).unwrap()).unwrap();
        assert_eq!(m.mean()[0], 2.0);
        assert_eq!(m.cov()[(0, 0)], 4.0);

        let eq = law(DVector::zeros(3), dmatrix![1.0, 0.5, 0.5; 0.5, 1.0, 0.5; 0.5, 0.5, 1.0]);
        let m = marginal(&eq, &IndexSet::new(vec![0, 2]).unwrap()).unwrap();
        assert_eq!(m.cov()[(0, 1)], 0.5);
        assert!(marginal(&eq, &IndexSet::new(vec![3]).unwrap()).is_err());
    }

    #[test]
    fn condition_bivariate() {
        let p = law(DVector::zeros(2), dmatrix![1.0, 0.8; 0.8, 1.0]);
        let c = condition(&p, &IndexSet::new(vec![0]).unwrap(), &dvector![1.0]).unwrap();
        assert_relative_eq!(c.mean()[0], 0.8, epsilon = 1e-14);
        assert_relative_eq!(c.cov()[(0, 0)], 0.36, epsilon = 1e-14);
    }

    #[test]
    fn condition_bivariate_matches_regression_on_samples() {
        // least-squares fit of y on x over simulated pairs
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let x: f64 = rng.sample(StandardNormal);
            let z: f64 = rng.sample(StandardNormal);
            let y = 0.8 * x + 0.6 * z;
            sxx += x * x;
            sxy += x * y;
            syy += y * y;
        }
        let slope = sxy / sxx;
        let resid = (syy - slope * sxy) / n as f64;
        assert!((slope - 0.8).abs() < 0.01);
        assert!((resid - 0.36).abs() < 0.01);
    }

    #[test]
    fn condition_independent_and_full() {
        let p = law(dvector![1.0, 2.0], DMatrix::from_diagonal(&dvector![3.0, 4.0]));
        let c = condition(&p, &IndexSet::new(vec![0]).unwrap(), &dvector![10.0]).unwrap();
        assert_eq!(c.mean()[0], 2.0);
        assert_eq!(c.cov()[(0, 0)], 4.0);
        let all = condition(&p, &IndexSet::range(0, 2), &dvector![0.0, 0.0]).unwrap();
        assert_eq!(all.dim(), 0);
    }

    fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        // composite Simpson rule
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    fn normal_pdf(x: f64, mu: f64, var: f64) -> f64 {
        (-(x - mu).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
    }

    #[test]
    fn kl_examples_against_quadrature() {
        let p = GaussianLaw::standard(1);
        assert_eq!(kl_gaussian(&p, &p).unwrap(), 0.0);

        let q = law(dvector![0.0], dmatrix![2.0]);
        let exact = kl_gaussian(&p, &q).unwrap();
        let quad = integrate(
            |x| {
                let a = normal_pdf(x, 0.0, 1.0);
                a * (a / normal_pdf(x, 0.0, 2.0)).ln()
            },
            -12.0,
            12.0,
            20_000,
        );
        assert_relative_eq!(exact, quad, epsilon = 1e-9);
        assert_relative_eq!(exact, 0.096_573_590_279_972_65, epsilon = 1e-12);

        let p = law(dvector![3.0, 4.0], DMatrix::identity(2, 2));
        let q = GaussianLaw::standard(2);
        let exact = kl_gaussian(&p, &q).unwrap();
        // independent coordinates: the 2-D integral is the sum of 1-D integrals
        let quad: f64 = [3.0, 4.0]
            .iter()
            .map(|&mu| {
                integrate(
                    |x| {
                        let a = normal_pdf(x, mu, 1.0);
                        if a == 0.0 {
                            0.0
                        } else {
                            a * (a / normal_pdf(x, 0.0, 1.0)).ln()
                        }
                    },
                    mu - 14.0,
                    mu + 14.0,
                    20_000,
                )
            })
            .sum();
        assert_relative_eq!(exact, 12.5, epsilon = 1e-12);
        assert_relative_eq!(quad, 12.5, epsilon = 1e-8);
    }

    #[test]
    fn cmi_degenerate_cases() {
        // block diagonal
        let p = law(DVector::zeros(3), dmatrix![2.0, 0.0, 0.0; 0.0, 1.0, 0.3; 0.0, 0.3, 1.0]);
        let v = cmi_gaussian(
            &p,
            &IndexSet::new(vec![0]).unwrap(),
            &IndexSet::new(vec![1]).unwrap(),
            &IndexSet::new(vec![2]).unwrap(),
        )
        .unwrap();
        assert!(v.abs() < 1e-14);
        // A - C - B Markov chain with covariance rho^|i-j|, ordering (A, C, B)
        let r: f64 = 0.7;
        let chain = law(
            DVector::zeros(3),
            DMatrix::from_fn(3, 3, |i, j| r.powi((i as i32 - j as i32).abs())),
        );
        let v = cmi_gaussian(
            &chain,
            &IndexSet::new(vec![0]).unwrap(),
            &IndexSet::new(vec![2]).unwrap(),
            &IndexSet::new(vec![1]).unwrap(),
        )
        .unwrap();
        assert!(v.abs() < 1e-12, "{v}");
    }

    #[test]
    fn cmi_rejects_overlap() {
        let p = GaussianLaw::standard(3);
        let a = IndexSet::new(vec![0, 1]).unwrap();
        let b = IndexSet::new(vec![1]).unwrap();
        assert!(matches!(
            cmi_gaussian(&p, &a, &b, &IndexSet::empty()),
            Err(Error::Overlap { index: 1 })
        ));
    }

    // Kraskov-Stoegbauer-Grassberger estimator (first variant) with grid buckets for the
    // max-norm neighbour search.
    fn ksg_mi(xs: &[f64], ys: &[f64], k: usize) -> f64 {
        let n = xs.len();
        let cell = 0.005;
        let key = |v: f64| (v / cell).floor() as i64;
        let mut grid: std::collections::HashMap<(i64, i64), Vec<usize>> = Default::default();
        for i in 0..n {
            grid.entry((key(xs[i]), key(ys[i]))).or_default().push(i);
        }
        let mut sx = xs.to_vec();
        let mut sy = ys.to_vec();
        sx.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sy.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let count_within = |sorted: &[f64], c: f64, r: f64| {
            let lo = sorted.partition_point(|v| *v <= c - r);
            let hi = sorted.partition_point(|v| *v < c + r);
            hi - lo - 1
        };
        let digamma = |x: f64| {
            let mut x = x;
            let mut acc = 0.0;
            while x < 6.0 {
                acc -= 1.0 / x;
                x += 1.0;
            }
            let f = 1.0 / (x * x);
            acc + x.ln() - 0.5 / x - f * (1.0 / 12.0 - f * (1.0 / 120.0 - f / 252.0))
        };
        let mut total = 0.0;
        for i in 0..n {
            let (cx, cy) = (key(xs[i]), key(ys[i]));
            let mut ring = 1;
            let eps = loop {
                let mut d: Vec<f64> = Vec::new();
                for gx in cx - ring..=cx + ring {
                    for gy in cy - ring..=cy + ring {
                        if let Some(list) = grid.get(&(gx, gy)) {
                            for &j in list {
                                if j != i {
                                    d.push((xs[i] - xs[j]).abs().max((ys[i] - ys[j]).abs()));
                                }
                            }
                        }
                    }
                }
                d.sort_by(|a, b| a.partial_cmp(b).unwrap());
                if d.len() >= k && d[k - 1] <= ring as f64 * cell {
                    break d[k - 1];
                }
                ring += 1;
            };
            let nx = count_within(&sx, xs[i], eps);
            let ny = count_within(&sy, ys[i], eps);
            total += digamma(nx as f64 + 1.0) + digamma(ny as f64 + 1.0);
        }
        digamma(k as f64) + digamma(n as f64) - total / n as f64
    }

    #[test]
    fn mutual_information_bivariate_against_knn() {
        let p = law(DVector::zeros(2), dmatrix![1.0, 0.5; 0.5, 1.0]);
        let exact = mutual_information(&p, &IndexSet::new(vec![0]).unwrap(), &IndexSet::new(vec![1]).unwrap()).unwrap();
        assert_relative_eq!(exact, -0.5 * (0.75f64).ln(), epsilon = 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 1_000_000;
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let x: f64 = rng.sample(StandardNormal);
            let z: f64 = rng.sample(StandardNormal);
            xs.push(x);
            ys.push(0.5 * x + 0.75f64.sqrt() * z);
        }
        let est = ksg_mi(&xs, &ys, 3);
        assert!((est - exact).abs() < 0.05 * exact, "ksg {est} vs {exact}");
    }

    #[test]
    fn jitter_rescues_rank_deficient_conditioning() {
        // second coordinate duplicates the first
        let p = law(DVector::zeros(3), dmatrix![1.0, 1.0, 0.5; 1.0, 1.0, 0.5; 0.5, 0.5, 1.0]);
        let c = condition(&p, &IndexSet::new(vec![0, 1]).unwrap(), &dvector![1.0, 1.0]).unwrap();
        assert_relative_eq!(c.mean()[0], 0.5, epsilon = 1e-6);
        assert_relative_eq!(c.cov()[(0, 0)], 0.75, epsilon = 1e-6);
    }

    #[test]
    fn rejects_indefinite_covariance() {
        let err = GaussianLaw::new(DVector::zeros(2), dmatrix![1.0, 2.0; 2.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::NotPsd { .. }));
    }

    fn random_law(seed: u64, n: usize) -> GaussianLaw {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mean = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let cov = random_spd(&mut rng, n);
        law(mean, cov)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn composition_matches_sequential(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_law(seed ^ 1, 3);
            let mk = |rng: &mut ChaCha8Rng, o: usize, i: usize| {
                let a = DMatrix::from_fn(o, i, |_, _| rng.sample::<f64, _>(StandardNormal));
                let b = DVector::from_fn(o, |_, _| rng.sample::<f64, _>(StandardNormal));
                AffineChannel::new(a, b, random_spd(rng, o)).unwrap()
            };
            let c1 = mk(&mut rng, 4, 3);
            let c2 = mk(&mut rng, 2, 4);
            let seq = push_forward(&push_forward(&p, &c1).unwrap(), &c2).unwrap();
            let comp = push_forward(&p, &c1.then(&c2).unwrap()).unwrap();
            let scale = seq.cov().amax().max(seq.mean().amax());
            prop_assert!((seq.mean() - comp.mean()).amax() <= 1e-10 * scale);
            prop_assert!((seq.cov() - comp.cov()).amax() <= 1e-10 * scale);
        }

        #[test]
        fn condition_then_marginal_commutes(seed in any::<u64>()) {
            let p = random_law(seed, 5);
            let obs = IndexSet::new(vec![1, 3]).unwrap();
            let v = dvector![0.3, -1.2];
            let c = condition(&p, &obs, &v).unwrap();
            // rest = {0, 2, 4}; keep {0, 4}
            let kept = marginal(&c, &IndexSet::new(vec![0, 2]).unwrap()).unwrap();
            let m = marginal(&p, &IndexSet::new(vec![0, 1, 3, 4]).unwrap()).unwrap();
            let c2 = condition(&m, &IndexSet::new(vec![1, 2]).unwrap(), &v).unwrap();
            prop_assert!((kept.mean() - c2.mean()).amax() <= 1e-10 * (1.0 + kept.mean().amax()));
            prop_assert!((kept.cov() - c2.cov()).amax() <= 1e-10 * (1.0 + kept.cov().amax()));
        }

        #[test]
        fn kl_zero_iff_equal(seed in any::<u64>(), shift in 1e-4f64..1.0) {
            let p = random_law(seed, 4);
            prop_assert!(kl_gaussian(&p, &p).unwrap() <= 1e-9);
            let mut m = p.mean().clone();
            m[0] += shift;
            let q = law(m, p.cov().clone());
            prop_assert!(kl_gaussian(&p, &q).unwrap() > 0.0);
        }
    }
}

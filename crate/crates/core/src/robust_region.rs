//! The extended chi-square uncertainty set over domain weightings and exact
//! maximization of the weighted risk over it.
//!
//! A region `Q_n(alpha, rho)` holds the weightings `q` with
//!
//! * `sum q = 1`,
//! * `q_i >= -alpha` for every domain,
//! * `||n q - 1||^2 <= rho`, equivalently `||q - 1/n||^2 <= rho / n^2`.
//!
//! `rho` is always measured on that scale. The divergence reported by
//! [`phi_divergence`] is `(1/n) ||n q - 1||^2`, so membership reads
//! `phi_divergence(q) <= rho / n`.
//!
//! `alpha = -1/n` collapses the region to the uniform weighting (ERM),
//! `alpha = 0` with `rho = inf` is the probability simplex (group DRO) and
//! `rho = inf` in general gives the minimax risk-extrapolation set.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::risk_stats::RiskVector;
use crate::sum::sum;

/// Largest domain count the exact active-set solver enumerates by default.
pub const DEFAULT_ENUMERATION_CAP: usize = 16;

/// Tolerance on `sum q = 1`.
pub const SUM_TOLERANCE: f64 = 1e-10;
/// Slack allowed on inequality constraints when validating a weighting.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-8;

// slack used inside the enumeration; tighter than FEASIBILITY_TOLERANCE
const CANDIDATE_TOLERANCE: f64 = 1e-11;

/// A weighting over domains summing to one; entries may be negative.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureWeights(Vec<f64>);

impl MixtureWeights {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::invalid("weights need at least one domain"));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("weights must be finite"));
        }
        let total = sum(q.iter().copied());
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::invalid(alloc::format!("weights sum to {total}, not 1")));
        }
        Ok(Self(q))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `q^T r`.
    pub fn dot(&self, r: &[f64]) -> f64 {
        sum(self.0.iter().zip(r).map(|(q, r)| q * r))
    }
}

/// The region `Q_n(alpha, rho)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustRegion {
    alpha: f64,
    rho: f64,
    n: usize,
}

impl RobustRegion {
    /// `rho` may be `f64::INFINITY`.
    pub fn new(n: usize, alpha: f64, rho: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid("a robust region needs at least two domains"));
        }
        check_alpha(n, alpha)?;
        if rho.is_nan() || rho < 0.0 {
            return Err(Error::invalid("rho must be nonnegative"));
        }
        Ok(Self { alpha, rho, n })
    }

    /// The single uniform weighting.
    pub fn erm(n: usize) -> Result<Self> {
        Self::new(n, -1.0 / n as f64, 0.0)
    }

    /// The probability simplex.
    pub fn group_dro(n: usize) -> Result<Self> {
        Self::new(n, 0.0, f64::INFINITY)
    }

    /// The simplex extended to entries `>= -alpha`, without radius limit.
    pub fn extrapolated(n: usize, alpha: f64) -> Result<Self> {
        Self::new(n, alpha, f64::INFINITY)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Membership with the crate's feasibility tolerances.
    pub fn contains(&self, q: &[f64]) -> bool {
        if q.len() != self.n {
            return false;
        }
        let total = sum(q.iter().copied());
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return false;
        }
        if q.iter().any(|&v| v < -self.alpha - FEASIBILITY_TOLERANCE) {
            return false;
        }
        self.rho.is_infinite() || squared_spread(q) <= self.rho + FEASIBILITY_TOLERANCE
    }
}

fn check_alpha(n: usize, alpha: f64) -> Result<()> {
    let floor = -1.0 / n as f64;
    if alpha.is_nan() || alpha < floor - 1e-12 {
        return Err(Error::invalid(alloc::format!(
            "alpha = {alpha} is below -1/n = {floor}"
        )));
    }
    Ok(())
}

/// `||n q - 1||^2`.
fn squared_spread(q: &[f64]) -> f64 {
    let n = q.len() as f64;
    sum(q.iter().map(|&v| {
        let d = n * v - 1.0;
        d * d
    }))
}

/// Chi-square divergence of `q` from the uniform weighting,
/// `(1/n) * sum (n q_i - 1)^2`.
pub fn phi_divergence(q: &[f64]) -> Result<f64> {
    let q = MixtureWeights::new(q.to_vec())?;
    Ok(squared_spread(q.as_slice()) / q.len() as f64)
}

/// Radius `||n q+ - 1||^2 = n (n - 1) (1 + n alpha)^2` of the vertex
/// `q+ = (1 + n alpha) e_1 - alpha 1`, the farthest point of
/// `Q_n(alpha, inf)` from uniform.
pub fn rho_plus(n: usize, alpha: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid("rho_plus needs at least two domains"));
    }
    check_alpha(n, alpha)?;
    let nf = n as f64;
    let scale = (1.0 + nf * alpha).max(0.0);
    Ok(nf * (nf - 1.0) * scale * scale)
}

/// Offset threshold `C(r, rho) = -1/n + sqrt(rho) |min r - mean r| / (n^{3/2} s_n)`.
///
/// For every `alpha >= C` the maximum over `Q_n(alpha, rho)` equals
/// `mean + sqrt(rho/n) s_n`.
pub fn closed_form_threshold(r: &RiskVector, rho: f64) -> Result<f64> {
    let n = r.len();
    if n < 2 {
        return Err(Error::invalid("threshold needs at least two domains"));
    }
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(Error::invalid("rho must be finite and nonnegative"));
    }
    let s = r.sample_std()?;
    if s == 0.0 {
        return Err(Error::degenerate(
            "equal risks: the closed form always holds and no threshold exists",
        ));
    }
    let nf = n as f64;
    let gap = (r.min() - r.mean()).abs();
    Ok(-1.0 / nf + libm::sqrt(rho) * gap / (nf * libm::sqrt(nf) * s))
}

/// Largest radius `n (n alpha + 1)^2 s_n^2 / (2 (min r - mean r)^2)` that
/// the extrapolated set `Q_n(alpha, inf)` is guaranteed to cover in the
/// direction of `r`.
pub fn rho_minus(r: &RiskVector, alpha: f64) -> Result<f64> {
    let n = r.len();
    if n < 2 {
        return Err(Error::invalid("rho_minus needs at least two domains"));
    }
    check_alpha(n, alpha)?;
    let nf = n as f64;
    let var = r.sample_variance()?;
    let gap = r.min() - r.mean();
    if gap == 0.0 || var == 0.0 {
        return Err(Error::degenerate("minimum risk equals the mean risk"));
    }
    let scale = (nf * alpha + 1.0).max(0.0);
    Ok(nf * scale * scale * var / (2.0 * gap * gap))
}

/// Maximizer of `q^T r` over a region together with the maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerMaxResult {
    pub value: f64,
    pub argmax: MixtureWeights,
    /// Whether the value came from the `mean + sqrt(rho/n) s_n` expansion.
    pub closed_form_valid: bool,
}

/// Exact `max_{q in Q_n(alpha, rho)} q^T r`.
///
/// Uses the closed form whenever the risks are equal or `alpha` reaches
/// [`closed_form_threshold`]; otherwise falls back to [`active_set_max`]
/// with [`DEFAULT_ENUMERATION_CAP`]. An infinite `rho` is handled by
/// [`mmrex_max`].
pub fn quasi_dro_max(r: &RiskVector, region: &RobustRegion) -> Result<InnerMaxResult> {
    quasi_dro_max_with_cap(r, region, DEFAULT_ENUMERATION_CAP)
}

pub fn quasi_dro_max_with_cap(
    r: &RiskVector,
    region: &RobustRegion,
    cap: usize,
) -> Result<InnerMaxResult> {
    check_dims(r, region)?;
    if region.rho.is_infinite() {
        return mmrex_max(r, region.alpha);
    }
    if let Some(result) = closed_form_max(r, region)? {
        return Ok(result);
    }
    active_set_max(r, region, cap)
}

/// The Cauchy-Schwarz maximizer `q = 1/n + v`,
/// `v_i = (sqrt(rho) / n) (r_i - mean) / (sqrt(n) s_n)`, when it is feasible.
///
/// Returns `None` when `alpha` is below the threshold.
pub fn closed_form_max(r: &RiskVector, region: &RobustRegion) -> Result<Option<InnerMaxResult>> {
    check_dims(r, region)?;
    if region.rho.is_infinite() {
        return Err(Error::invalid("closed form needs a finite rho"));
    }
    let n = r.len();
    let nf = n as f64;
    let mean = r.mean();
    let s = r.sample_std()?;
    if s == 0.0 {
        return Ok(Some(InnerMaxResult {
            value: mean,
            argmax: MixtureWeights::uniform(n),
            closed_form_valid: true,
        }));
    }
    if region.alpha < closed_form_threshold(r, region.rho)? {
        return Ok(None);
    }
    let scale = libm::sqrt(region.rho) / (nf * libm::sqrt(nf) * s);
    let q: Vec<f64> = r.values().iter().map(|&ri| 1.0 / nf + scale * (ri - mean)).collect();
    Ok(Some(InnerMaxResult {
        value: mean + libm::sqrt(region.rho / nf) * s,
        argmax: MixtureWeights(q),
        closed_form_valid: true,
    }))
}

/// Exact maximum by enumerating which entries sit on the lower bound
/// `q_i = -alpha`.
///
/// For each clamp set the remaining entries maximize a linear function over
/// the intersection of a hyperplane and a ball, which has a closed form; the
/// best feasible candidate is the global maximum. Cost is `O(2^n n)`.
pub fn active_set_max(r: &RiskVector, region: &RobustRegion, cap: usize) -> Result<InnerMaxResult> {
    check_dims(r, region)?;
    let n = r.len();
    if n > cap || n >= usize::BITS as usize {
        return Err(Error::CapExceeded { n, cap });
    }
    if region.rho.is_infinite() {
        return Err(Error::invalid("active-set solver needs a finite rho"));
    }
    let nf = n as f64;
    let alpha = region.alpha;
    let radius2 = region.rho / (nf * nf);
    let clamp_cost = (alpha + 1.0 / nf) * (alpha + 1.0 / nf);
    let rv = r.values();

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut q = vec![0.0; n];
    let mut free: Vec<usize> = Vec::with_capacity(n);
    for mask in 0u64..(1u64 << n) {
        free.clear();
        free.extend((0..n).filter(|&i| mask & (1 << i) == 0));
        let clamped = n - free.len();
        let k = free.len();
        let mut budget = radius2 - clamped as f64 * clamp_cost;
        if budget < -CANDIDATE_TOLERANCE {
            continue;
        }
        for (i, qi) in q.iter_mut().enumerate() {
            if mask & (1 << i) != 0 {
                *qi = -alpha;
            }
        }
        if k == 0 {
            if (1.0 + alpha * nf).abs() > CANDIDATE_TOLERANCE {
                continue;
            }
        } else {
            let target = 1.0 + alpha * clamped as f64;
            let kf = k as f64;
            let shift = (target - kf / nf) / kf;
            budget -= kf * shift * shift;
            if budget < -CANDIDATE_TOLERANCE {
                continue;
            }
            let radius = libm::sqrt(budget.max(0.0));
            let free_mean = sum(free.iter().map(|&i| rv[i])) / kf;
            let norm = libm::sqrt(sum(free.iter().map(|&i| {
                let d = rv[i] - free_mean;
                d * d
            })));
            for &i in &free {
                let dir = if norm > 0.0 { (rv[i] - free_mean) / norm } else { 0.0 };
                q[i] = 1.0 / nf + shift + radius * dir;
            }
            if free.iter().any(|&i| q[i] < -alpha - CANDIDATE_TOLERANCE) {
                continue;
            }
        }
        let value = sum(q.iter().zip(rv).map(|(a, b)| a * b));
        if best.as_ref().is_none_or(|(v, _)| value > *v) {
            best = Some((value, q.clone()));
        }
    }
    // the uniform weighting is always feasible, so a candidate exists
    let (value, q) = best.unwrap_or_else(|| (r.mean(), vec![1.0 / nf; n]));
    Ok(InnerMaxResult { value, argmax: MixtureWeights(q), closed_form_valid: false })
}

/// `max_{q in Q_n(alpha, inf)} q^T r = (1 + n alpha) max r - alpha sum r`,
/// attained at the vertex `(1 + n alpha) e_i - alpha 1` of the largest risk
/// (smallest index on ties).
pub fn mmrex_max(r: &RiskVector, alpha: f64) -> Result<InnerMaxResult> {
    let n = r.len();
    check_alpha(n, alpha)?;
    let nf = n as f64;
    let rv = r.values();
    let mut top = 0;
    for (i, &v) in rv.iter().enumerate() {
        if v > rv[top] {
            top = i;
        }
    }
    let lift = 1.0 + nf * alpha;
    let mut q = vec![-alpha; n];
    q[top] = lift - alpha;
    let value = sum(q.iter().zip(rv).map(|(a, b)| a * b));
    Ok(InnerMaxResult { value, argmax: MixtureWeights(q), closed_form_valid: false })
}

/// Bounds sandwiching the extrapolated-set maximum between two
/// mean-plus-spread expansions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sandwich {
    /// `mean + sqrt(rho_minus / n) s_n`.
    pub lower: f64,
    /// [`mmrex_max`] value.
    pub mmrex: f64,
    /// `mean + sqrt(rho_plus / n) s_n`.
    pub upper: f64,
    pub rho_minus: f64,
    pub rho_plus: f64,
    /// The radius at which the expansion matches the maximum exactly,
    /// `n ((mmrex - mean) / s_n)^2`.
    pub rho_star: f64,
}

impl Sandwich {
    /// Whether `lower <= mmrex <= upper` and `rho_minus <= rho_star <= rho_plus`
    /// within `tol` (relative to the magnitude of the compared values).
    pub fn holds(&self, tol: f64) -> bool {
        let le = |a: f64, b: f64| a <= b + tol * a.abs().max(b.abs()).max(1.0);
        le(self.lower, self.mmrex)
            && le(self.mmrex, self.upper)
            && le(self.rho_minus, self.rho_star)
            && le(self.rho_star, self.rho_plus)
    }
}

pub fn mmrex_sandwich(r: &RiskVector, alpha: f64) -> Result<Sandwich> {
    let n = r.len();
    if n < 2 {
        return Err(Error::invalid("sandwich needs at least two domains"));
    }
    check_alpha(n, alpha)?;
    if alpha <= -1.0 / n as f64 {
        return Err(Error::invalid("sandwich needs alpha > -1/n"));
    }
    let nf = n as f64;
    let mean = r.mean();
    let s = r.sample_std()?;
    if s == 0.0 {
        return Err(Error::degenerate("equal risks have no spread to sandwich"));
    }
    let lo = rho_minus(r, alpha)?;
    let hi = rho_plus(n, alpha)?;
    let mm = mmrex_max(r, alpha)?.value;
    let z = (mm - mean) / s;
    Ok(Sandwich {
        lower: mean + libm::sqrt(lo / nf) * s,
        mmrex: mm,
        upper: mean + libm::sqrt(hi / nf) * s,
        rho_minus: lo,
        rho_plus: hi,
        rho_star: nf * z * z,
    })
}

fn check_dims(r: &RiskVector, region: &RobustRegion) -> Result<()> {
    if r.len() != region.n {
        return Err(Error::invalid(alloc::format!(
            "risk vector has {} domains but the region has {}",
            r.len(),
            region.n
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rv(v: &[f64]) -> RiskVector {
        RiskVector::new(v.to_vec()).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn divergence_examples() {
        assert_eq!(phi_divergence(&[0.5, 0.5]).unwrap(), 0.0);
        assert_eq!(phi_divergence(&[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(phi_divergence(&[2.0, -1.0]).unwrap(), 9.0);
        assert!(matches!(phi_divergence(&[0.5, 0.6]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn rho_plus_examples() {
        assert_eq!(rho_plus(4, -0.25).unwrap(), 0.0);
        assert_eq!(rho_plus(2, 1.0).unwrap(), 18.0);
        assert_eq!(rho_plus(3, 0.0).unwrap(), 6.0);
        assert!(rho_plus(2, -0.6).is_err());
        // radius of the vertex itself
        let vertex = [2.0, -1.0];
        assert_eq!(squared_spread(&vertex), rho_plus(2, 1.0).unwrap());
    }

    #[test]
    fn threshold_examples() {
        let r = rv(&[0.2, 0.8]);
        assert!(close(closed_form_threshold(&r, 2.0).unwrap(), 0.0, 1e-15));
        assert_eq!(closed_form_threshold(&r, 0.0).unwrap(), -0.5);
        assert!(close(closed_form_threshold(&r, 8.0).unwrap(), 0.5, 1e-15));
        assert!(matches!(
            closed_form_threshold(&rv(&[0.3, 0.3]), 1.0),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn rho_minus_examples() {
        let r = rv(&[0.2, 0.8]);
        assert!(close(rho_minus(&r, 1.0).unwrap(), 9.0, 1e-12));
        assert!(close(rho_minus(&r, 0.0).unwrap(), 1.0, 1e-12));
        assert_eq!(rho_minus(&r, -0.5).unwrap(), 0.0);
        assert!(matches!(rho_minus(&rv(&[0.4, 0.4]), 0.0), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn quasi_dro_examples() {
        let c = rv(&[0.7, 0.7, 0.7]);
        let res = quasi_dro_max(&c, &RobustRegion::new(3, 0.3, 2.0).unwrap()).unwrap();
        assert!(close(res.value, 0.7, 1e-15));
        assert_eq!(res.argmax, MixtureWeights::uniform(3));
        assert!(res.closed_form_valid);

        let r = rv(&[0.2, 0.8]);
        let res = quasi_dro_max(&r, &RobustRegion::new(2, 1.0, 2.0).unwrap()).unwrap();
        assert!(close(res.value, 0.8, 1e-12));
        assert!(res.closed_form_valid);
        assert!(close(res.argmax.as_slice()[0], 0.0, 1e-12));
        assert!(close(res.argmax.as_slice()[1], 1.0, 1e-12));

        let region = RobustRegion::new(2, 0.0, 8.0).unwrap();
        let res = quasi_dro_max(&r, &region).unwrap();
        assert!(!res.closed_form_valid);
        assert!(close(res.value, 0.8, 1e-12));
        assert!(close(res.argmax.as_slice()[0], 0.0, 1e-12));
        assert!(region.contains(res.argmax.as_slice()));
    }

    #[test]
    fn quasi_dro_errors() {
        assert!(RobustRegion::new(2, 0.0, -1.0).is_err());
        assert!(RobustRegion::new(2, -0.7, 1.0).is_err());
        let r = rv(&[0.1, 0.5, 0.2, 0.9, 0.3]);
        let region = RobustRegion::new(5, 0.0, 40.0).unwrap();
        assert_eq!(
            quasi_dro_max_with_cap(&r, &region, 4),
            Err(Error::CapExceeded { n: 5, cap: 4 })
        );
    }

    #[test]
    fn erm_region_is_a_point() {
        let r = rv(&[0.1, 0.5, 0.9]);
        let region = RobustRegion::new(3, -1.0 / 3.0, 5.0).unwrap();
        let res = quasi_dro_max(&r, &region).unwrap();
        assert!(close(res.value, 0.5, 1e-12));
        let exact = active_set_max(&r, &region, 16).unwrap();
        assert!(close(exact.value, 0.5, 1e-12));
    }

    #[test]
    fn mmrex_examples() {
        let r = rv(&[0.3, 0.9, 0.1, 0.9]);
        assert_eq!(mmrex_max(&r, 0.0).unwrap().value, 0.9);
        assert_eq!(mmrex_max(&r, 0.0).unwrap().argmax.as_slice(), &[0.0, 1.0, 0.0, 0.0]);
        assert!(close(mmrex_max(&r, -0.25).unwrap().value, r.mean(), 1e-15));
        let two = rv(&[0.2, 0.8]);
        assert!(close(mmrex_max(&two, 1.0).unwrap().value, 1.4, 1e-12));
        // oracle: every vertex of the extended simplex
        for alpha in [0.0, 0.5, 2.0] {
            let vertex_best = (0..4)
                .map(|i| {
                    (0..4)
                        .map(|j| if i == j { 1.0 + 3.0 * alpha } else { -alpha } * r.values()[j])
                        .sum::<f64>()
                })
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(close(mmrex_max(&r, alpha).unwrap().value, vertex_best, 1e-12));
        }
        assert!(mmrex_max(&r, -0.3).is_err());
    }

    #[test]
    fn sandwich_examples() {
        let r = rv(&[0.2, 0.8]);
        let s = mmrex_sandwich(&r, 1.0).unwrap();
        assert!(close(s.lower, 0.5 + libm::sqrt(4.5) * 0.3, 1e-12));
        assert!(close(s.mmrex, 1.4, 1e-12));
        assert!(close(s.upper, 1.4, 1e-12));
        assert!(close(s.rho_star, 18.0, 1e-9));
        assert!(s.holds(1e-9));

        let s = mmrex_sandwich(&r, 0.0).unwrap();
        assert!(close(s.lower, 0.5 + libm::sqrt(0.5) * 0.3, 1e-12));
        assert!(close(s.mmrex, 0.8, 1e-12));
        assert!(close(s.upper, 0.8, 1e-12));
        assert!(close(s.rho_star, 2.0, 1e-9));

        assert!(matches!(mmrex_sandwich(&rv(&[0.5, 0.5]), 1.0), Err(Error::DegenerateInput(_))));
    }
}

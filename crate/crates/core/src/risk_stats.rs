//! Statistics over per-domain and pooled risks.
//!
//! Variances here use the `1/n` normalizer throughout (never Bessel's
//! `1/(n-1)`), so that `s_n^2(r) = (1/n) * ||r - mean(r) 1||^2`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::sum::{sum, CompensatedSum};

/// Per-domain empirical risks, one value per training domain.
///
/// Optionally carries the per-domain sample sizes, which only the ERM
/// objective uses (as weights `m_e / sum m_e`).
#[derive(Debug, Clone, PartialEq)]
pub struct RiskVector {
    values: Vec<f64>,
    domain_sizes: Option<Vec<usize>>,
}

impl RiskVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_values(&values)?;
        Ok(Self { values, domain_sizes: None })
    }

    /// Risks of a loss declared to lie in `[0, bound]`.
    pub fn with_loss_bound(values: Vec<f64>, bound: f64) -> Result<Self> {
        if !(bound.is_finite() && bound > 0.0) {
            return Err(Error::invalid("loss bound must be finite and positive"));
        }
        check_values(&values)?;
        if let Some(v) = values.iter().find(|&&v| !(0.0..=bound).contains(&v)) {
            return Err(Error::invalid(alloc::format!(
                "risk {v} lies outside the declared loss range [0, {bound}]"
            )));
        }
        Ok(Self { values, domain_sizes: None })
    }

    /// Risks with the per-domain sample sizes they were computed from.
    pub fn with_domain_sizes(values: Vec<f64>, sizes: Vec<usize>) -> Result<Self> {
        check_values(&values)?;
        if sizes.len() != values.len() {
            return Err(Error::invalid("one domain size per risk value is required"));
        }
        if sizes.contains(&0) {
            return Err(Error::invalid("domain sizes must be positive"));
        }
        Ok(Self { values, domain_sizes: Some(sizes) })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn domain_sizes(&self) -> Option<&[usize]> {
        self.domain_sizes.as_deref()
    }

    /// ERM weights: `m_e / sum m_e`, or uniform when sizes are unknown.
    pub fn erm_weights(&self) -> Vec<f64> {
        match &self.domain_sizes {
            Some(sizes) => {
                let total: usize = sizes.iter().sum();
                sizes.iter().map(|&m| m as f64 / total as f64).collect()
            }
            None => {
                let n = self.values.len() as f64;
                alloc::vec![1.0 / n; self.values.len()]
            }
        }
    }

    pub fn mean(&self) -> f64 {
        sum(self.values.iter().copied()) / self.values.len() as f64
    }

    pub fn sample_variance(&self) -> Result<f64> {
        sample_variance(&self.values)
    }

    pub fn sample_std(&self) -> Result<f64> {
        sample_std(&self.values)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn check_values(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::invalid("risk vector must hold at least one domain"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("risk values must be finite"));
    }
    Ok(())
}

/// Arithmetic mean.
pub fn mean(r: &[f64]) -> Result<f64> {
    check_values(r)?;
    Ok(sum(r.iter().copied()) / r.len() as f64)
}

/// `(1/n) * sum (r_e - mean)^2`.
pub fn sample_variance(r: &[f64]) -> Result<f64> {
    check_values(r)?;
    if r.len() < 2 {
        return Err(Error::degenerate("sample variance needs at least two domains"));
    }
    Ok(centered_second_moment(r))
}

pub fn sample_std(r: &[f64]) -> Result<f64> {
    sample_variance(r).map(libm::sqrt)
}

/// Two-pass `1/n` variance with compensated accumulation; caller validates.
fn centered_second_moment(r: &[f64]) -> f64 {
    centered_second_moment_iter(r.iter().copied(), r.len())
}

/// Per-example losses of `n` domains with a common sample size `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledRisks {
    per_domain: Vec<Vec<f64>>,
}

impl PooledRisks {
    pub fn new(per_domain: Vec<Vec<f64>>) -> Result<Self> {
        let first = per_domain
            .first()
            .ok_or_else(|| Error::invalid("pooled risks need at least one domain"))?;
        let m = first.len();
        if m == 0 {
            return Err(Error::invalid("each domain needs at least one loss"));
        }
        if per_domain.iter().any(|d| d.len() != m) {
            return Err(Error::invalid(
                "ragged pooled risks: every domain must have the same number of losses",
            ));
        }
        if per_domain.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("losses must be finite"));
        }
        Ok(Self { per_domain })
    }

    pub fn domains(&self) -> usize {
        self.per_domain.len()
    }

    pub fn per_domain_len(&self) -> usize {
        self.per_domain[0].len()
    }

    pub fn per_domain(&self) -> &[Vec<f64>] {
        &self.per_domain
    }

    /// Mean loss of each domain.
    pub fn domain_risks(&self) -> RiskVector {
        let values = self
            .per_domain
            .iter()
            .map(|d| sum(d.iter().copied()) / d.len() as f64)
            .collect();
        RiskVector { values, domain_sizes: None }
    }
}

/// Total, mean within-domain and between-domain variance of pooled losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceDecomposition {
    /// Variance of all `n*m` losses around the grand mean.
    pub total: f64,
    /// `(1/n) * sum_e s_m^2` over the domains.
    pub within_mean: f64,
    /// Sample variance of the per-domain means.
    pub between: f64,
}

impl VarianceDecomposition {
    /// `|between - (total - within_mean)|`.
    pub fn identity_residual(&self) -> f64 {
        (self.between - (self.total - self.within_mean)).abs()
    }
}

/// Splits the pooled variance into its within- and between-domain parts.
///
/// `between == total - within_mean` holds up to rounding.
pub fn variance_decomposition(p: &PooledRisks) -> Result<VarianceDecomposition> {
    let n = p.domains();
    let m = p.per_domain_len();
    if n < 2 || m < 2 {
        return Err(Error::degenerate(
            "variance decomposition needs at least two domains of at least two losses",
        ));
    }
    let total = centered_second_moment_iter(p.per_domain.iter().flatten().copied(), n * m);
    let within = sum(p.per_domain.iter().map(|d| centered_second_moment(d))) / n as f64;
    let between = centered_second_moment(p.domain_risks().values());
    Ok(VarianceDecomposition { total, within_mean: within, between })
}

fn centered_second_moment_iter<I: Iterator<Item = f64> + Clone>(values: I, len: usize) -> f64 {
    let n = len as f64;
    let mu = sum(values.clone()) / n;
    // the linear term corrects for rounding left in `mu`
    let mut sq = CompensatedSum::new();
    let mut lin = CompensatedSum::new();
    for x in values {
        let d = x - mu;
        sq.add(d * d);
        lin.add(d);
    }
    let l = lin.value();
    ((sq.value() - l * l / n) / n).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn mean_examples() {
        assert_eq!(mean(&[0.5]).unwrap(), 0.5);
        assert_eq!(mean(&[0.2, 0.8]).unwrap(), 0.5);
        assert_eq!(mean(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 2.5);
        assert!(matches!(mean(&[]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn variance_examples() {
        assert_eq!(sample_variance(&[1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(sample_variance(&[0.0, 2.0]).unwrap(), 1.0);
        // ((0.2-0.5)^2 + (0.8-0.5)^2) / 2
        let oracle = (0.09 + 0.09) / 2.0;
        assert!(close(sample_variance(&[0.2, 0.8]).unwrap(), oracle, 1e-15));
        assert!(matches!(sample_variance(&[3.0]), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn std_examples() {
        assert_eq!(sample_std(&[1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(sample_std(&[0.0, 2.0]).unwrap(), 1.0);
        assert!(close(sample_std(&[0.2, 0.8]).unwrap(), 0.3, 1e-15));
    }

    #[test]
    fn decomposition_examples() {
        let p = PooledRisks::new(vec![vec![0.0, 2.0], vec![4.0, 6.0]]).unwrap();
        let d = variance_decomposition(&p).unwrap();
        assert_eq!((d.total, d.within_mean, d.between), (5.0, 1.0, 4.0));

        let c = 0.37;
        let p = PooledRisks::new(vec![vec![c, c], vec![c, c]]).unwrap();
        let d = variance_decomposition(&p).unwrap();
        assert_eq!((d.total, d.within_mean, d.between), (0.0, 0.0, 0.0));

        let p = PooledRisks::new(vec![vec![0.0, 2.0], vec![0.0, 2.0]]).unwrap();
        let d = variance_decomposition(&p).unwrap();
        assert_eq!((d.total, d.within_mean, d.between), (1.0, 1.0, 0.0));
    }

    #[test]
    fn decomposition_rejects_bad_shapes() {
        assert!(matches!(
            PooledRisks::new(vec![vec![0.0, 1.0], vec![1.0]]),
            Err(Error::InvalidInput(_))
        ));
        let one_domain = PooledRisks::new(vec![vec![0.0, 1.0]]).unwrap();
        assert!(matches!(variance_decomposition(&one_domain), Err(Error::DegenerateInput(_))));
        let one_loss = PooledRisks::new(vec![vec![0.0], vec![1.0]]).unwrap();
        assert!(matches!(variance_decomposition(&one_loss), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn risk_vector_constructors() {
        assert!(RiskVector::new(vec![]).is_err());
        assert!(RiskVector::new(vec![f64::NAN]).is_err());
        assert!(RiskVector::with_loss_bound(vec![0.2, 1.2], 1.0).is_err());
        assert!(RiskVector::with_loss_bound(vec![0.2, 1.0], 1.0).is_ok());
        let r = RiskVector::with_domain_sizes(vec![0.1, 0.4], vec![1, 3]).unwrap();
        assert_eq!(r.erm_weights(), vec![0.25, 0.75]);
        assert!(RiskVector::with_domain_sizes(vec![0.1], vec![0]).is_err());
    }
}

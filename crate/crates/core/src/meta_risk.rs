//! Parametric distributions of domain risks used to simulate the meta
//! distribution over domains.

use rand::Rng as _;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::normal::{normal_cdf, normal_pdf, normal_quantile};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetaRiskModel {
    /// Normal(`mean`, `std_dev`) conditioned on `[lower, upper]`.
    TruncatedNormal { mean: f64, std_dev: f64, lower: f64, upper: f64 },
    Uniform { lower: f64, upper: f64 },
    /// `lower + (upper - lower) * Beta(a, b)`.
    ScaledBeta { a: f64, b: f64, lower: f64, upper: f64 },
    /// Every domain has the same risk.
    Constant { value: f64 },
}

impl MetaRiskModel {
    pub fn validate(&self) -> Result<()> {
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        let ok = match *self {
            MetaRiskModel::TruncatedNormal { mean, std_dev, lower, upper } => {
                finite(&[mean, std_dev, lower, upper])
                    && std_dev > 0.0
                    && lower < upper
                    && normal_cdf((upper - mean) / std_dev) - normal_cdf((lower - mean) / std_dev)
                        > 1e-12
            }
            MetaRiskModel::Uniform { lower, upper } => finite(&[lower, upper]) && lower < upper,
            MetaRiskModel::ScaledBeta { a, b, lower, upper } => {
                finite(&[a, b, lower, upper]) && a > 0.0 && b > 0.0 && lower < upper
            }
            MetaRiskModel::Constant { value } => value.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(alloc::format!("invalid meta-risk model parameters: {self:?}")))
        }
    }

    /// Smallest interval holding every draw.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            MetaRiskModel::TruncatedNormal { lower, upper, .. }
            | MetaRiskModel::Uniform { lower, upper }
            | MetaRiskModel::ScaledBeta { lower, upper, .. } => (lower, upper),
            MetaRiskModel::Constant { value } => (value, value),
        }
    }

    /// Population mean of the domain risk.
    pub fn mean(&self) -> f64 {
        match *self {
            MetaRiskModel::TruncatedNormal { mean, std_dev, lower, upper } => {
                let (a, b) = ((lower - mean) / std_dev, (upper - mean) / std_dev);
                let z = normal_cdf(b) - normal_cdf(a);
                mean + std_dev * (normal_pdf(a) - normal_pdf(b)) / z
            }
            MetaRiskModel::Uniform { lower, upper } => 0.5 * (lower + upper),
            MetaRiskModel::ScaledBeta { a, b, lower, upper } => {
                lower + (upper - lower) * a / (a + b)
            }
            MetaRiskModel::Constant { value } => value,
        }
    }

    /// Population standard deviation of the domain risk.
    pub fn std_dev(&self) -> f64 {
        let var = match *self {
            MetaRiskModel::TruncatedNormal { mean, std_dev, lower, upper } => {
                let (a, b) = ((lower - mean) / std_dev, (upper - mean) / std_dev);
                let z = normal_cdf(b) - normal_cdf(a);
                let (pa, pb) = (normal_pdf(a), normal_pdf(b));
                let shift = (pa - pb) / z;
                std_dev * std_dev * (1.0 + (a * pa - b * pb) / z - shift * shift)
            }
            MetaRiskModel::Uniform { lower, upper } => (upper - lower) * (upper - lower) / 12.0,
            MetaRiskModel::ScaledBeta { a, b, lower, upper } => {
                let w = upper - lower;
                w * w * a * b / ((a + b) * (a + b) * (a + b + 1.0))
            }
            MetaRiskModel::Constant { .. } => 0.0,
        };
        libm::sqrt(var.max(0.0))
    }

    /// One domain risk. Assumes the model has been validated.
    pub fn sample(&self, rng: &mut Rng) -> f64 {
        match *self {
            MetaRiskModel::TruncatedNormal { mean, std_dev, lower, upper } => {
                let lo = normal_cdf((lower - mean) / std_dev);
                let hi = normal_cdf((upper - mean) / std_dev);
                loop {
                    let u = lo + (hi - lo) * rng.random::<f64>();
                    if u > 0.0 && u < 1.0 {
                        let x = mean + std_dev * normal_quantile(u).unwrap_or(0.0);
                        return x.clamp(lower, upper);
                    }
                }
            }
            MetaRiskModel::Uniform { lower, upper } => lower + (upper - lower) * rng.random::<f64>(),
            MetaRiskModel::ScaledBeta { a, b, lower, upper } => {
                let beta = Beta::new(a, b).expect("validated beta parameters");
                lower + (upper - lower) * beta.sample(rng)
            }
            MetaRiskModel::Constant { value } => value,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::sum::sum;
    use alloc::vec::Vec;

    fn moments(model: MetaRiskModel, draws: usize) -> (f64, f64) {
        let mut rng = seeded(11);
        let xs: Vec<f64> = (0..draws).map(|_| model.sample(&mut rng)).collect();
        let m = sum(xs.iter().copied()) / draws as f64;
        let v = sum(xs.iter().map(|x| (x - m) * (x - m))) / draws as f64;
        (m, libm::sqrt(v))
    }

    #[test]
    fn analytic_moments_match_draws() {
        let models = [
            MetaRiskModel::TruncatedNormal { mean: 0.5, std_dev: 0.1, lower: 0.0, upper: 1.0 },
            MetaRiskModel::TruncatedNormal { mean: 0.1, std_dev: 0.3, lower: 0.0, upper: 1.0 },
            MetaRiskModel::Uniform { lower: 0.0, upper: 1.0 },
            MetaRiskModel::ScaledBeta { a: 2.0, b: 5.0, lower: 0.0, upper: 2.0 },
        ];
        for model in models {
            model.validate().unwrap();
            let (m, s) = moments(model, 200_000);
            assert!((m - model.mean()).abs() < 5e-3, "{model:?}");
            assert!((s - model.std_dev()).abs() < 5e-3, "{model:?}");
            let (lo, hi) = model.support();
            let mut rng = seeded(3);
            assert!((0..1000).map(|_| model.sample(&mut rng)).all(|x| (lo..=hi).contains(&x)));
        }
    }

    #[test]
    fn uniform_std_is_one_over_root_twelve() {
        let u = MetaRiskModel::Uniform { lower: 0.0, upper: 1.0 };
        assert!((u.std_dev() - 1.0 / libm::sqrt(12.0)).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(MetaRiskModel::Uniform { lower: 1.0, upper: 0.0 }.validate().is_err());
        assert!(MetaRiskModel::ScaledBeta { a: 0.0, b: 1.0, lower: 0.0, upper: 1.0 }
            .validate()
            .is_err());
        assert!(MetaRiskModel::TruncatedNormal {
            mean: 0.5,
            std_dev: -0.1,
            lower: 0.0,
            upper: 1.0
        }
        .validate()
        .is_err());
        assert!(MetaRiskModel::Constant { value: f64::NAN }.validate().is_err());
    }
}

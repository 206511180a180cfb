//! Choosing the RVP penalty from a confidence level, checking the resulting
//! coverage by simulation, and the high-probability expansion bound for the
//! extrapolated region.

use libm::{exp, sqrt};
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::meta_risk::MetaRiskModel;
use crate::normal::{normal_cdf, normal_quantile};
use crate::risk_stats::{sample_std, RiskVector};
use crate::rng::stream;
use crate::robust_region::closed_form_threshold;

/// Smallest trial count accepted by the simulations.
pub const MIN_TRIALS: usize = 1000;

/// Miscoverage level `gamma` and domain count `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuningSpec {
    pub gamma: f64,
    pub n: usize,
}

impl TuningSpec {
    pub fn new(gamma: f64, n: usize) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::invalid(alloc::format!(
                "gamma must lie strictly between 0 and 1, got {gamma}"
            )));
        }
        if n == 0 {
            return Err(Error::invalid("n must be at least 1"));
        }
        Ok(Self { gamma, n })
    }
}

/// `Phi^{-1}(1 - gamma) / sqrt(n)`.
pub fn tune_lambda(spec: TuningSpec) -> Result<f64> {
    let spec = TuningSpec::new(spec.gamma, spec.n)?;
    Ok(normal_quantile(1.0 - spec.gamma)? / sqrt(spec.n as f64))
}

/// Asymptotic coverage `Phi(sqrt(n) lambda)` of the RVP objective.
pub fn coverage_target(lambda: f64, n: usize) -> f64 {
    normal_cdf(sqrt(n as f64) * lambda)
}

/// Binomial 95% half-width `1.96 sqrt(p (1 - p) / trials)`.
pub fn binomial_half_width(p: f64, trials: usize) -> f64 {
    1.96 * sqrt(p * (1.0 - p) / trials as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageReport {
    pub empirical_coverage: f64,
    pub target: f64,
    pub trials: usize,
    pub half_width: f64,
}

impl CoverageReport {
    pub fn from_hits(hits: usize, trials: usize, lambda: f64, n: usize) -> Self {
        let p = hits as f64 / trials as f64;
        Self {
            empirical_coverage: p,
            target: coverage_target(lambda, n),
            trials,
            half_width: binomial_half_width(p, trials),
        }
    }
}

fn check_coverage_inputs(lambda: f64, n: usize, model: &MetaRiskModel, trials: usize) -> Result<()> {
    if !lambda.is_finite() {
        return Err(Error::invalid("lambda must be finite"));
    }
    if n < 2 {
        return Err(Error::invalid("coverage needs at least two domains"));
    }
    if trials < MIN_TRIALS {
        return Err(Error::invalid(alloc::format!(
            "at least {MIN_TRIALS} trials are required, got {trials}"
        )));
    }
    model.validate()
}

/// Whether trial `trial` covers the true mean risk: one panel of `n` domain
/// risks, covered when `mu <= mean + lambda s_n`.
pub fn coverage_trial(lambda: f64, n: usize, model: &MetaRiskModel, seed: u64, trial: u64) -> bool {
    let mut rng = stream(seed, trial);
    let r: alloc::vec::Vec<f64> = (0..n).map(|_| model.sample(&mut rng)).collect();
    let mean = crate::sum::sum(r.iter().copied()) / n as f64;
    let s = sample_std(&r).unwrap_or(0.0);
    model.mean() <= mean + lambda * s
}

/// Monte-Carlo coverage of the RVP objective over `trials` panels.
///
/// Each trial draws from its own stream, so any partition of the trials
/// gives the same result.
pub fn coverage_simulation(
    lambda: f64,
    n: usize,
    model: &MetaRiskModel,
    trials: usize,
    seed: u64,
) -> Result<CoverageReport> {
    check_coverage_inputs(lambda, n, model, trials)?;
    let hits = (0..trials as u64)
        .filter(|&t| coverage_trial(lambda, n, model, seed, t))
        .count();
    Ok(CoverageReport::from_hits(hits, trials, lambda, n))
}

/// Inputs of the expansion bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpansionParams {
    /// Losses lie in `[0, loss_bound]`.
    pub loss_bound: f64,
    /// Samples per domain.
    pub m: usize,
    /// Number of domains.
    pub n: usize,
    /// Between-domain standard deviation of the risk.
    pub sigma_r: f64,
    pub epsilon: f64,
    pub alpha: f64,
}

impl ExpansionParams {
    pub fn validate(&self) -> Result<()> {
        let &ExpansionParams { loss_bound: big_m, m, n, sigma_r, epsilon, alpha } = self;
        if !(big_m.is_finite() && big_m > 0.0) {
            return Err(Error::invalid("loss bound M must be positive"));
        }
        if !(sigma_r.is_finite() && sigma_r > 0.0) {
            return Err(Error::invalid("sigma_r must be positive"));
        }
        if n < 2 || m == 0 {
            return Err(Error::invalid("need n >= 2 domains and m >= 1 samples"));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::invalid("alpha must be positive"));
        }
        let var_m = m as f64 * sigma_r * sigma_r;
        if 16.0 * big_m * big_m >= var_m {
            return Err(Error::invalid(alloc::format!(
                "violated 16 M^2 < m sigma_r^2: {} >= {}",
                16.0 * big_m * big_m,
                var_m
            )));
        }
        let floor = 4.0 * big_m / sqrt(var_m);
        if !(epsilon > floor && epsilon < 1.0) {
            return Err(Error::invalid(alloc::format!(
                "violated 4M/sqrt(m sigma_r^2) < epsilon < 1: need {floor} < {epsilon} < 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpansionBound {
    /// `n (n alpha + 1)^2 (1 - eps)^2 sigma_r^2 / M^2`.
    pub rho_prime_minus: f64,
    /// Lower bound on the probability that the expansion holds; may be
    /// nonpositive.
    pub prob_lower: f64,
    /// `prob_lower <= 0`.
    pub vacuous: bool,
}

pub fn expansion_bound(p: &ExpansionParams) -> Result<ExpansionBound> {
    p.validate()?;
    let nf = p.n as f64;
    let big_m2 = p.loss_bound * p.loss_bound;
    let s2 = p.sigma_r * p.sigma_r;
    let k = nf * p.alpha + 1.0;
    let rho = nf * k * k * (1.0 - p.epsilon) * (1.0 - p.epsilon) * s2 / big_m2;
    let t = p.epsilon * sqrt(p.m as f64 * s2) / (2.0 * p.loss_bound) - 2.0;
    let prob = 1.0 - exp(-nf * p.epsilon * p.epsilon * s2 / (8.0 * big_m2)) - exp(-nf * t * t);
    Ok(ExpansionBound { rho_prime_minus: rho, prob_lower: prob, vacuous: prob <= 0.0 })
}

fn check_model_in_range(p: &ExpansionParams, model: &MetaRiskModel) -> Result<()> {
    model.validate()?;
    let (lo, hi) = model.support();
    if lo < 0.0 || hi > p.loss_bound {
        return Err(Error::invalid(alloc::format!(
            "meta-risk support [{lo}, {hi}] exceeds the loss range [0, {}]",
            p.loss_bound
        )));
    }
    Ok(())
}

/// One simulated dataset: draws `n` domain risks, then each domain's
/// empirical risk as the mean of `m` losses in `{0, M}`. Returns whether
/// `alpha` clears the closed-form threshold at radius `rho`.
pub fn expansion_trial(
    p: &ExpansionParams,
    model: &MetaRiskModel,
    rho: f64,
    seed: u64,
    trial: u64,
) -> bool {
    let mut rng = stream(seed, trial);
    let mf = p.m as f64;
    let risks: alloc::vec::Vec<f64> = (0..p.n)
        .map(|_| {
            let r = model.sample(&mut rng);
            let prob = (r / p.loss_bound).clamp(0.0, 1.0);
            let hits = Binomial::new(p.m as u64, prob).expect("probability in [0, 1]").sample(&mut rng);
            p.loss_bound * hits as f64 / mf
        })
        .collect();
    let r = match RiskVector::new(risks) {
        Ok(r) => r,
        Err(_) => return false,
    };
    match closed_form_threshold(&r, rho) {
        Ok(c) => p.alpha >= c,
        // equal empirical risks: the closed form holds outright
        Err(Error::DegenerateInput(_)) => true,
        Err(_) => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpansionCheck {
    pub freq: f64,
    pub bound: ExpansionBound,
    pub trials: usize,
    pub half_width: f64,
}

impl ExpansionCheck {
    pub fn from_hits(hits: usize, trials: usize, bound: ExpansionBound) -> Self {
        let freq = hits as f64 / trials as f64;
        Self { freq, bound, trials, half_width: binomial_half_width(freq, trials) }
    }

    /// `freq >= bound - slack * half_width`; always true for a vacuous bound.
    pub fn passes(&self, slack: f64) -> bool {
        self.bound.vacuous || self.freq >= self.bound.prob_lower - slack * self.half_width
    }
}

/// Validates the inputs of [`expansion_empirical_check`] and returns the
/// bound it will be compared against.
pub fn expansion_setup(
    p: &ExpansionParams,
    model: &MetaRiskModel,
    trials: usize,
) -> Result<ExpansionBound> {
    let bound = expansion_bound(p)?;
    check_model_in_range(p, model)?;
    if trials < MIN_TRIALS {
        return Err(Error::invalid(alloc::format!(
            "at least {MIN_TRIALS} trials are required, got {trials}"
        )));
    }
    Ok(bound)
}

/// Frequency over `trials` simulated datasets with which the expansion at
/// radius `rho_prime_minus` holds.
pub fn expansion_empirical_check(
    p: &ExpansionParams,
    model: &MetaRiskModel,
    trials: usize,
    seed: u64,
) -> Result<ExpansionCheck> {
    let bound = expansion_setup(p, model, trials)?;
    let hits = (0..trials as u64)
        .filter(|&t| expansion_trial(p, model, bound.rho_prime_minus, seed, t))
        .count();
    Ok(ExpansionCheck::from_hits(hits, trials, bound))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tn() -> MetaRiskModel {
        MetaRiskModel::TruncatedNormal { mean: 0.5, std_dev: 0.1, lower: 0.0, upper: 1.0 }
    }

    #[test]
    fn tune_examples() {
        let l = tune_lambda(TuningSpec { gamma: 0.025, n: 3 }).unwrap();
        assert!((l - 1.959_963_984_540_054 / sqrt(3.0)).abs() < 1e-9);
        assert!((l - 1.131586).abs() < 5e-7);
        assert!((l - 1.1316).abs() < 5e-4);
        assert_eq!(tune_lambda(TuningSpec { gamma: 0.5, n: 9 }).unwrap(), 0.0);
        let l1 = tune_lambda(TuningSpec { gamma: 0.025, n: 1 }).unwrap();
        assert!((l1 - 1.959964).abs() < 1e-6);
        assert!(TuningSpec::new(1.5, 3).is_err());
        assert!(TuningSpec::new(0.1, 0).is_err());
    }

    #[test]
    fn tune_is_monotone() {
        let mut prev = f64::INFINITY;
        for g in [0.01, 0.05, 0.1, 0.2, 0.3, 0.45] {
            let l = tune_lambda(TuningSpec { gamma: g, n: 4 }).unwrap();
            assert!(l < prev);
            prev = l;
        }
        let mut prev = f64::INFINITY;
        for n in 1..20 {
            let l = tune_lambda(TuningSpec { gamma: 0.05, n }).unwrap();
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn coverage_at_zero_lambda_is_a_coin() {
        let rep = coverage_simulation(0.0, 200, &tn(), 20_000, 1).unwrap();
        assert_eq!(rep.target, 0.5);
        assert!((rep.empirical_coverage - 0.5).abs() < 0.02);
    }

    #[test]
    fn coverage_is_deterministic_and_rejects_few_trials() {
        let a = coverage_simulation(0.2, 10, &tn(), 2000, 9).unwrap();
        assert_eq!(a, coverage_simulation(0.2, 10, &tn(), 2000, 9).unwrap());
        assert!(coverage_simulation(0.2, 10, &tn(), 0, 9).is_err());
        assert!(coverage_simulation(0.2, 1, &tn(), 2000, 9).is_err());
        let bad = MetaRiskModel::Uniform { lower: 1.0, upper: 0.5 };
        assert!(coverage_simulation(0.2, 10, &bad, 2000, 9).is_err());
    }

    // With the 1/n normalizer, sqrt(n)(mean - mu)/s_n = sqrt(n/(n-1)) t_{n-1}
    // for normal risks, so the exact coverage at n = 50 is
    // P(t_49 >= -z sqrt(49/50)), computed with scipy.
    const T49_COVERAGE: f64 = 0.970_943_337_326_724_9;

    #[test]
    fn coverage_at_fifty_domains() {
        let lambda = tune_lambda(TuningSpec::new(0.025, 50).unwrap()).unwrap();
        let rep = coverage_simulation(lambda, 50, &tn(), 100_000, 11).unwrap();
        assert!((rep.target - 0.975).abs() < 1e-12);
        assert!((rep.empirical_coverage - T49_COVERAGE).abs() <= 3.0 * rep.half_width);
        assert!((rep.empirical_coverage - rep.target).abs() <= 0.02);
        // the limiting target sits about 0.004 above the finite-sample value
        assert!(rep.target - T49_COVERAGE > 3.0 * binomial_half_width(rep.target, 100_000));
    }

    #[test]
    fn expansion_bound_examples() {
        let p = ExpansionParams { loss_bound: 1.0, m: 10_000, n: 10, sigma_r: 0.2, epsilon: 0.5, alpha: 1.0 };
        let b = expansion_bound(&p).unwrap();
        // 10 * 11^2 * 0.5^2 * 0.2^2
        assert!((b.rho_prime_minus - 12.1).abs() < 1e-12);

        let near_one = ExpansionParams { epsilon: 1.0 - 1e-9, ..p };
        assert!(expansion_bound(&near_one).unwrap().rho_prime_minus < 1e-15);

        let small_m = ExpansionParams { m: 400, ..p };
        let err = expansion_bound(&small_m).unwrap_err();
        assert!(alloc::format!("{err}").contains("16 M^2 < m sigma_r^2"));
        let low_eps = ExpansionParams { epsilon: 0.1, ..p };
        let err = expansion_bound(&low_eps).unwrap_err();
        assert!(alloc::format!("{err}").contains("epsilon < 1"));
    }

    #[test]
    fn constant_risks_always_expand() {
        let p = ExpansionParams { loss_bound: 1.0, m: 10_000, n: 10, sigma_r: 0.2, epsilon: 0.5, alpha: 1.0 };
        let zero = MetaRiskModel::Constant { value: 0.0 };
        let c = expansion_empirical_check(&p, &zero, 1000, 3).unwrap();
        assert_eq!(c.freq, 1.0);
        assert!(c.passes(3.0));
    }

    #[test]
    fn vacuous_bound_auto_passes() {
        let b = ExpansionBound { rho_prime_minus: 1.0, prob_lower: -0.3, vacuous: true };
        assert!(ExpansionCheck::from_hits(0, 1000, b).passes(0.0));
    }

    #[test]
    fn rejects_out_of_range_model() {
        let p = ExpansionParams { loss_bound: 1.0, m: 10_000, n: 10, sigma_r: 0.2, epsilon: 0.5, alpha: 1.0 };
        let wide = MetaRiskModel::Uniform { lower: 0.0, upper: 2.0 };
        assert!(expansion_empirical_check(&p, &wide, 1000, 0).is_err());
    }
}

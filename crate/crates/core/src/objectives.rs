//! Training objectives as functions of the per-domain risk vector, with
//! their analytic gradients with respect to those risks.
//!
//! The parameter gradient of any objective follows by the chain rule:
//! `dL/dtheta = sum_e (dL/dr_e) (dr_e/dtheta)`.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::risk_stats::RiskVector;
use crate::robust_region::{self, RobustRegion};
use crate::sum::sum;

/// Spread below which the RVP penalty takes the zero subgradient.
pub const SPREAD_FLOOR: f64 = 1e-12;
/// Default smoothing constant for [`Smoothing::Smoothed`].
pub const DEFAULT_SMOOTHING: f64 = 1e-8;

/// How the RVP penalty is treated where all risks coincide.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Smoothing {
    /// `s_n` itself, with subgradient zero once `s_n < SPREAD_FLOOR`.
    #[default]
    Subgradient,
    /// `sqrt(s_n^2 + eps^2)`.
    Smoothed(f64),
}

/// Piecewise-constant penalty weight over epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSchedule {
    steps: Vec<(usize, f64)>,
}

impl LambdaSchedule {
    /// Steps as `(first epoch, lambda)`; the first step must start at 0 and
    /// starts must strictly increase.
    pub fn new(steps: Vec<(usize, f64)>) -> Result<Self> {
        match steps.first() {
            Some((0, _)) => {}
            _ => return Err(Error::invalid("schedule must start at epoch 0")),
        }
        if steps.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::invalid("schedule epochs must be strictly increasing"));
        }
        if steps.iter().any(|(_, l)| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::invalid("schedule values must be finite and nonnegative"));
        }
        Ok(Self { steps })
    }

    pub fn constant(lambda: f64) -> Result<Self> {
        Self::new(alloc::vec![(0, lambda)])
    }

    /// `first` for epochs before `switch`, `second` afterwards.
    pub fn two_phase(first: f64, switch: usize, second: f64) -> Result<Self> {
        Self::new(alloc::vec![(0, first), (switch, second)])
    }

    pub fn steps(&self) -> &[(usize, f64)] {
        &self.steps
    }

    pub fn lambda_at(&self, epoch: usize) -> f64 {
        self.steps
            .iter()
            .take_while(|(start, _)| *start <= epoch)
            .last()
            .map(|(_, l)| *l)
            .unwrap_or(self.steps[0].1)
    }
}

/// A training objective and its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum ObjectiveSpec {
    /// Size-weighted mean risk.
    Erm,
    /// Largest per-domain risk.
    GroupDro,
    /// Mean plus `beta` times the sample variance.
    VRex { beta: f64 },
    /// Maximum over the extrapolated set `q_i >= -alpha`.
    MmRex { alpha: f64 },
    /// Maximum over `Q_n(alpha, rho)`.
    QuasiDro { alpha: f64, rho: f64 },
    /// Mean plus `lambda` times the sample standard deviation.
    Rvp { lambda: f64 },
    /// `||r||^2 - lambda(epoch) sum r`.
    Elastic(LambdaSchedule),
}

impl ObjectiveSpec {
    /// Short lowercase name used in reports.
    pub fn method(&self) -> &'static str {
        match self {
            ObjectiveSpec::Erm => "erm",
            ObjectiveSpec::GroupDro => "gdro",
            ObjectiveSpec::VRex { .. } => "vrex",
            ObjectiveSpec::MmRex { .. } => "mmrex",
            ObjectiveSpec::QuasiDro { .. } => "quasidro",
            ObjectiveSpec::Rvp { .. } => "rvp",
            ObjectiveSpec::Elastic(_) => "elastic",
        }
    }

    /// Hyperparameters as `key=value` pairs joined by `;`.
    pub fn hyperparams(&self) -> String {
        match self {
            ObjectiveSpec::Erm | ObjectiveSpec::GroupDro => String::new(),
            ObjectiveSpec::VRex { beta } => alloc::format!("beta={beta}"),
            ObjectiveSpec::MmRex { alpha } => alloc::format!("alpha={alpha}"),
            ObjectiveSpec::QuasiDro { alpha, rho } => alloc::format!("alpha={alpha};rho={rho}"),
            ObjectiveSpec::Rvp { lambda } => alloc::format!("lambda={lambda}"),
            ObjectiveSpec::Elastic(s) => {
                let parts: Vec<String> =
                    s.steps().iter().map(|(e, l)| alloc::format!("{e}:{l}")).collect();
                alloc::format!("schedule={}", parts.join("/"))
            }
        }
    }

    /// Whether the objective is undefined on a single domain.
    pub fn needs_multiple_domains(&self) -> bool {
        matches!(
            self,
            ObjectiveSpec::VRex { .. }
                | ObjectiveSpec::MmRex { .. }
                | ObjectiveSpec::QuasiDro { .. }
                | ObjectiveSpec::Rvp { .. }
        )
    }

    /// Whether the objective is differentiable in the risks (away from the
    /// RVP kink at equal risks).
    pub fn is_smooth(&self) -> bool {
        !matches!(
            self,
            ObjectiveSpec::GroupDro | ObjectiveSpec::MmRex { .. } | ObjectiveSpec::QuasiDro { .. }
        )
    }

    /// Checks hyperparameter ranges for `n` domains.
    pub fn validate(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::invalid("objective needs at least one domain"));
        }
        if self.needs_multiple_domains() && n < 2 {
            return Err(Error::invalid(alloc::format!(
                "{} needs at least two training domains",
                self.method()
            )));
        }
        let floor = -1.0 / n as f64 - 1e-12;
        let ok = match self {
            ObjectiveSpec::Erm | ObjectiveSpec::GroupDro | ObjectiveSpec::Elastic(_) => true,
            ObjectiveSpec::VRex { beta } => beta.is_finite() && *beta >= 0.0,
            ObjectiveSpec::Rvp { lambda } => lambda.is_finite() && *lambda >= 0.0,
            ObjectiveSpec::MmRex { alpha } => alpha.is_finite() && *alpha >= floor,
            ObjectiveSpec::QuasiDro { alpha, rho } => {
                alpha.is_finite() && *alpha >= floor && !rho.is_nan() && *rho >= 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(alloc::format!(
                "hyperparameters out of range for {}: {}",
                self.method(),
                self.hyperparams()
            )))
        }
    }
}

/// `dL/dr_e` for each domain.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskGradient(pub Vec<f64>);

impl RiskGradient {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Objective value together with its risk-gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: RiskGradient,
}

pub fn objective_value(spec: &ObjectiveSpec, r: &RiskVector, epoch: usize) -> Result<f64> {
    evaluate(spec, r, epoch, Smoothing::Subgradient).map(|e| e.value)
}

pub fn objective_risk_gradient(
    spec: &ObjectiveSpec,
    r: &RiskVector,
    epoch: usize,
) -> Result<RiskGradient> {
    evaluate(spec, r, epoch, Smoothing::Subgradient).map(|e| e.gradient)
}

/// Value and risk-gradient of `spec` at `r`.
///
/// Max-type objectives (group DRO, MM-REx, quasi-DRO) return the maximizing
/// weighting as their gradient, with ties broken toward the smallest index.
pub fn evaluate(
    spec: &ObjectiveSpec,
    r: &RiskVector,
    epoch: usize,
    smoothing: Smoothing,
) -> Result<Evaluation> {
    let n = r.len();
    spec.validate(n)?;
    let nf = n as f64;
    let rv = r.values();
    let uniform = || alloc::vec![1.0 / nf; n];
    let (value, gradient) = match spec {
        ObjectiveSpec::Erm => {
            let w = r.erm_weights();
            let value = sum(w.iter().zip(rv).map(|(a, b)| a * b));
            (value, w)
        }
        ObjectiveSpec::GroupDro => {
            let res = robust_region::mmrex_max(r, 0.0)?;
            (res.value, res.argmax.into_vec())
        }
        ObjectiveSpec::MmRex { alpha } => {
            let res = robust_region::mmrex_max(r, *alpha)?;
            (res.value, res.argmax.into_vec())
        }
        ObjectiveSpec::QuasiDro { alpha, rho } => {
            let region = RobustRegion::new(n, *alpha, *rho)?;
            let res = robust_region::quasi_dro_max(r, &region)?;
            (res.value, res.argmax.into_vec())
        }
        ObjectiveSpec::VRex { beta } => {
            let mean = r.mean();
            let value = mean + beta * r.sample_variance()?;
            let g = rv.iter().map(|&x| 1.0 / nf + beta * 2.0 * (x - mean) / nf).collect();
            (value, g)
        }
        ObjectiveSpec::Rvp { lambda } => {
            let mean = r.mean();
            let s = r.sample_std()?;
            let (penalty, denom) = match smoothing {
                Smoothing::Subgradient => (s, if s < SPREAD_FLOOR { None } else { Some(s) }),
                Smoothing::Smoothed(eps) => {
                    let smooth = libm::sqrt(s * s + eps * eps);
                    (smooth, if smooth > 0.0 { Some(smooth) } else { None })
                }
            };
            let g = match denom {
                Some(d) => rv.iter().map(|&x| 1.0 / nf + lambda * (x - mean) / (nf * d)).collect(),
                None => uniform(),
            };
            (mean + lambda * penalty, g)
        }
        ObjectiveSpec::Elastic(schedule) => {
            let lambda = schedule.lambda_at(epoch);
            let value = sum(rv.iter().map(|&x| x * x - lambda * x));
            (value, rv.iter().map(|&x| 2.0 * x - lambda).collect())
        }
    };
    Ok(Evaluation { value, gradient: RiskGradient(gradient) })
}

/// RVP penalty weight matching the MM-REx objective at `r`, and the
/// mismatch between the two objective values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceWitness {
    /// `sqrt(rho_star / n)`.
    pub lambda_star: f64,
    /// `|RVP(lambda_star)(r) - MM-REx(alpha)(r)|`.
    pub residual: f64,
}

pub fn rvp_equals_mmrex_witness(r: &RiskVector, alpha: f64) -> Result<EquivalenceWitness> {
    let sandwich = robust_region::mmrex_sandwich(r, alpha)?;
    let lambda_star = libm::sqrt(sandwich.rho_star / r.len() as f64);
    let rvp = objective_value(&ObjectiveSpec::Rvp { lambda: lambda_star }, r, 0)?;
    let mm = objective_value(&ObjectiveSpec::MmRex { alpha }, r, 0)?;
    Ok(EquivalenceWitness { lambda_star, residual: (rvp - mm).abs() })
}

//! Randomized verification suites over the core library. Each check yields
//! one record; a suite passes when every record does.

use std::fmt;

use anyhow::Result;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use rvp_core::calibration::{
    expansion_bound, expansion_setup, expansion_trial, ExpansionCheck, ExpansionParams,
};
use rvp_core::meta_risk::MetaRiskModel;
use rvp_core::objectives::{objective_value, rvp_equals_mmrex_witness, ObjectiveSpec};
use rvp_core::risk_stats::{variance_decomposition, PooledRisks, RiskVector};
use rvp_core::rng::{derive_seed, stream, Rng};
use rvp_core::robust_region::{
    active_set_max, closed_form_threshold, mmrex_max, mmrex_sandwich, quasi_dro_max, rho_plus,
    RobustRegion, DEFAULT_ENUMERATION_CAP,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    /// Region maximum against the exact oracle.
    #[value(name = "prop1")]
    Region,
    /// Sandwich radii and the RVP / MM-REx match.
    #[value(name = "prop2")]
    Sandwich,
    Decomposition,
    Equivalence,
    /// Expansion bound against simulated datasets.
    #[value(name = "theorem3")]
    Expansion,
    All,
}

impl Suite {
    pub const fn name(self) -> &'static str {
        match self {
            Suite::Region => "prop1",
            Suite::Sandwich => "prop2",
            Suite::Decomposition => "decomposition",
            Suite::Equivalence => "equivalence",
            Suite::Expansion => "theorem3",
            Suite::All => "all",
        }
    }

    fn default_instances(self) -> usize {
        match self {
            Suite::Region => 200,
            _ => 100,
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    /// Instances per suite; each suite has its own default.
    pub instances: Option<usize>,
    pub seed: u64,
    /// Simulated datasets for the expansion-bound check.
    pub trials: usize,
    /// Random feasible points per instance in the region check.
    pub samples: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { instances: None, seed: 0, trials: 2000, samples: 100_000 }
    }
}

/// Outcome of one check: `value` is compared against `limit`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRecord {
    pub suite: &'static str,
    pub check: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instance: Option<usize>,
    pub passed: bool,
    pub value: f64,
    pub limit: f64,
}

impl CheckRecord {
    fn at_most(suite: &'static str, check: &'static str, instance: Option<usize>, value: f64, limit: f64) -> Self {
        Self { suite, check, instance, passed: value <= limit, value, limit }
    }

    fn at_least(suite: &'static str, check: &'static str, instance: Option<usize>, value: f64, limit: f64) -> Self {
        Self { suite, check, instance, passed: value >= limit, value, limit }
    }
}

pub fn run(suite: Suite, opts: &VerifyOptions) -> Result<Vec<CheckRecord>> {
    let n_for = |s: Suite| opts.instances.unwrap_or(s.default_instances());
    Ok(match suite {
        Suite::Region => region_suite(n_for(suite), opts.seed, opts.samples),
        Suite::Sandwich => sandwich_suite(n_for(suite), opts.seed),
        Suite::Decomposition => decomposition(n_for(suite), opts.seed),
        Suite::Equivalence => equivalence(n_for(suite), opts.seed),
        Suite::Expansion => expansion_suite(opts.seed, opts.trials)?,
        Suite::All => {
            let mut all = Vec::new();
            for s in [Suite::Region, Suite::Sandwich, Suite::Decomposition, Suite::Equivalence, Suite::Expansion] {
                all.extend(run(s, opts)?);
            }
            all
        }
    })
}

fn instance_rng(seed: u64, suite: &str, i: usize) -> Rng {
    let tag = suite.bytes().fold(0u64, |h, b| h.wrapping_mul(131).wrapping_add(b as u64));
    stream(derive_seed(seed, 0, tag), i as u64)
}

fn uniform_risks(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>()).collect()
}

/// Best of `draws` random points of `Q_n(alpha, rho)`, biased toward the
/// boundary.
fn sampled_best(r: &[f64], alpha: f64, rho: f64, draws: usize, rng: &mut Rng) -> f64 {
    let n = r.len();
    let nf = n as f64;
    let mut best = r.iter().sum::<f64>() / nf;
    let mut v = vec![0.0; n];
    for _ in 0..draws {
        v.iter_mut().for_each(|x| *x = StandardNormal.sample(rng));
        let mv = v.iter().sum::<f64>() / nf;
        v.iter_mut().for_each(|x| *x -= mv);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let mut t = rho.sqrt() / (nf * norm);
        for &vi in &v {
            if vi < 0.0 {
                t = t.min((1.0 / nf + alpha) / -vi);
            }
        }
        t *= rng.random::<f64>().powf(0.25);
        let value: f64 = r.iter().zip(&v).map(|(ri, vi)| ri * (1.0 / nf + t * vi)).sum();
        best = best.max(value);
    }
    best
}

fn region_suite(instances: usize, seed: u64, samples: usize) -> Vec<CheckRecord> {
    const S: &str = Suite::Region.name();
    let per: Vec<Vec<CheckRecord>> = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = instance_rng(seed, S, i);
            let n = rng.random_range(2..=6);
            let r = uniform_risks(&mut rng, n);
            let alpha = [0.0, 0.5, 1.0, 5.0][rng.random_range(0..4)];
            let plus = rho_plus(n, alpha).expect("alpha in range");
            let rho = [0.1, 1.0, plus / 2.0, plus][rng.random_range(0..4)];
            let rv = RiskVector::new(r.clone()).expect("finite risks");
            let region = RobustRegion::new(n, alpha, rho).expect("valid region");
            let res = quasi_dro_max(&rv, &region).expect("solvable");
            let oracle = active_set_max(&rv, &region, DEFAULT_ENUMERATION_CAP).expect("solvable");
            let s = rv.sample_std().expect("n >= 2");
            let bound = rv.mean() + (rho / n as f64).sqrt() * s;
            let mut out = vec![
                CheckRecord::at_most(S, "oracle_match", Some(i), (res.value - oracle.value).abs(), 1e-8),
                CheckRecord::at_most(S, "upper_bound", Some(i), res.value - bound, 1e-10),
                CheckRecord {
                    suite: S,
                    check: "feasible_argmax",
                    instance: Some(i),
                    passed: region.contains(res.argmax.as_slice()),
                    value: (res.argmax.dot(&r) - res.value).abs(),
                    limit: 1e-10,
                },
                CheckRecord::at_least(
                    S,
                    "beats_sampled_points",
                    Some(i),
                    res.value - sampled_best(&r, alpha, rho, samples, &mut rng),
                    -1e-6,
                ),
            ];
            if let Ok(c) = closed_form_threshold(&rv, rho) {
                if alpha > c {
                    let mut rec = CheckRecord::at_most(S, "closed_form_exact", Some(i), (bound - oracle.value).abs(), 1e-8);
                    rec.passed &= res.closed_form_valid;
                    out.push(rec);
                }
            }
            let bigger = RobustRegion::new(n, alpha + 0.5, 2.0 * rho).expect("valid region");
            out.push(CheckRecord::at_least(
                S,
                "monotone",
                Some(i),
                quasi_dro_max(&rv, &bigger).expect("solvable").value - res.value,
                -1e-10,
            ));
            let mm = mmrex_max(&rv, alpha).expect("alpha in range").value;
            let ball = RobustRegion::new(n, 1e6, plus).expect("valid region");
            out.push(CheckRecord::at_most(
                S,
                "nesting",
                Some(i),
                mm - quasi_dro_max(&rv, &ball).expect("solvable").value,
                1e-10,
            ));
            out
        })
        .collect();
    per.into_iter().flatten().collect()
}

fn nondegenerate_risks(rng: &mut Rng, n: usize) -> RiskVector {
    loop {
        let r = RiskVector::new(uniform_risks(rng, n)).expect("finite risks");
        if r.sample_std().expect("n >= 2") > 1e-6 {
            return r;
        }
    }
}

fn sandwich_suite(instances: usize, seed: u64) -> Vec<CheckRecord> {
    const S: &str = Suite::Sandwich.name();
    let per: Vec<Vec<CheckRecord>> = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = instance_rng(seed, S, i);
            let n = rng.random_range(2..=8);
            let rv = nondegenerate_risks(&mut rng, n);
            let alpha = 5.0 * rng.random::<f64>();
            let sw = mmrex_sandwich(&rv, alpha).expect("nondegenerate");
            let w = rvp_equals_mmrex_witness(&rv, alpha).expect("nondegenerate");
            let tol = 1e-9;
            vec![
                CheckRecord::at_most(S, "lower_le_mmrex", Some(i), sw.lower - sw.mmrex, tol),
                CheckRecord::at_most(S, "mmrex_le_upper", Some(i), sw.mmrex - sw.upper, tol),
                CheckRecord::at_most(S, "rho_minus_le_rho_star", Some(i), sw.rho_minus - sw.rho_star, tol * sw.rho_star.max(1.0)),
                CheckRecord::at_most(S, "rho_star_le_rho_plus", Some(i), sw.rho_star - sw.rho_plus, tol * sw.rho_plus.max(1.0)),
                CheckRecord::at_most(S, "rvp_matches_mmrex", Some(i), w.residual, 1e-10),
            ]
        })
        .collect();
    per.into_iter().flatten().collect()
}

fn decomposition(instances: usize, seed: u64) -> Vec<CheckRecord> {
    const S: &str = "decomposition";
    (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = instance_rng(seed, S, i);
            let n = rng.random_range(2..=10);
            let m = rng.random_range(2..=1000);
            let data: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let shift = rng.random::<f64>();
                    (0..m).map(|_| shift + rng.random::<f64>()).collect()
                })
                .collect();
            let d = variance_decomposition(&PooledRisks::new(data).expect("rectangular")).expect("n, m >= 2");
            CheckRecord::at_most(S, "identity", Some(i), d.identity_residual() / d.total, 1e-12)
        })
        .collect()
}

fn equivalence(instances: usize, seed: u64) -> Vec<CheckRecord> {
    const S: &str = "equivalence";
    let per: Vec<Vec<CheckRecord>> = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = instance_rng(seed, S, i);
            let n = rng.random_range(2..=8);
            let rv = nondegenerate_risks(&mut rng, n);
            let value = |spec: ObjectiveSpec| objective_value(&spec, &rv, 0).expect("valid objective");
            let mut out = Vec::new();
            for alpha in [0.0, 0.25, 1.0, 5.0] {
                let w = rvp_equals_mmrex_witness(&rv, alpha).expect("nondegenerate");
                out.push(CheckRecord::at_most(S, "rvp_matches_mmrex", Some(i), w.residual, 1e-10));
            }
            out.push(CheckRecord::at_most(
                S,
                "mmrex_zero_is_group_dro",
                Some(i),
                (value(ObjectiveSpec::MmRex { alpha: 0.0 }) - value(ObjectiveSpec::GroupDro)).abs(),
                0.0,
            ));
            out.push(CheckRecord::at_most(
                S,
                "mmrex_floor_is_erm",
                Some(i),
                (mmrex_max(&rv, -1.0 / n as f64).expect("alpha in range").value - rv.mean()).abs(),
                1e-15,
            ));
            let l = 3.0 * rng.random::<f64>();
            out.push(CheckRecord::at_most(
                S,
                "erm_le_rvp",
                Some(i),
                value(ObjectiveSpec::Erm) - value(ObjectiveSpec::Rvp { lambda: l }),
                1e-15,
            ));
            out
        })
        .collect();
    per.into_iter().flatten().collect()
}

/// Parameters with a clearly positive bound: `n = 200`, `eps = 0.9`,
/// uniform risks on `[0, 1]`.
pub fn expansion_acceptance_params() -> (ExpansionParams, MetaRiskModel) {
    let model = MetaRiskModel::Uniform { lower: 0.0, upper: 1.0 };
    let params = ExpansionParams {
        loss_bound: 1.0,
        m: 10_000,
        n: 200,
        sigma_r: model.std_dev(),
        epsilon: 0.9,
        alpha: 1.0,
    };
    (params, model)
}

/// [`rvp_core::calibration::expansion_empirical_check`] with the trials spread
/// across threads.
pub fn expansion_check_parallel(
    p: &ExpansionParams,
    model: &MetaRiskModel,
    trials: usize,
    seed: u64,
) -> Result<ExpansionCheck> {
    let bound = expansion_setup(p, model, trials)?;
    let hits = (0..trials as u64)
        .into_par_iter()
        .filter(|&t| expansion_trial(p, model, bound.rho_prime_minus, seed, t))
        .count();
    Ok(ExpansionCheck::from_hits(hits, trials, bound))
}

fn expansion_suite(seed: u64, trials: usize) -> Result<Vec<CheckRecord>> {
    const S: &str = Suite::Expansion.name();
    let mut out = Vec::new();
    let example = ExpansionParams { loss_bound: 1.0, m: 10_000, n: 10, sigma_r: 0.2, epsilon: 0.5, alpha: 1.0 };
    let b = expansion_bound(&example)?;
    out.push(CheckRecord::at_most(S, "rho_prime_example", None, (b.rho_prime_minus - 12.1).abs(), 1e-12));

    let (params, model) = expansion_acceptance_params();
    let c = expansion_check_parallel(&params, &model, trials, seed)?;
    let mut rec = CheckRecord::at_least(
        S,
        "empirical_frequency",
        None,
        c.freq,
        c.bound.prob_lower - 3.0 * c.half_width,
    );
    rec.passed = c.passes(3.0) && !c.bound.vacuous;
    out.push(rec);

    let constant = MetaRiskModel::Constant { value: 0.3 };
    let c = expansion_check_parallel(&example, &constant, trials, seed)?;
    out.push(CheckRecord::at_least(S, "constant_risks_always_expand", None, c.freq, 1.0));

    let thin = ExpansionParams { epsilon: 0.2001, ..example };
    let b = expansion_bound(&thin)?;
    out.push(CheckRecord {
        suite: S,
        check: "vacuous_bound_flagged",
        instance: None,
        passed: b.vacuous && b.prob_lower <= 0.0,
        value: b.prob_lower,
        limit: 0.0,
    });
    Ok(out)
}

/// One line per suite with its pass count, then one line per failure.
pub fn human_summary(records: &[CheckRecord]) -> String {
    let mut suites: Vec<&str> = Vec::new();
    for r in records {
        if !suites.contains(&r.suite) {
            suites.push(r.suite);
        }
    }
    let mut out = String::new();
    for s in suites {
        let of: Vec<&CheckRecord> = records.iter().filter(|r| r.suite == s).collect();
        let ok = of.iter().filter(|r| r.passed).count();
        let status = if ok == of.len() { "PASS" } else { "FAIL" };
        out.push_str(&format!("{status} {s}: {ok}/{} checks passed\n", of.len()));
        for r in of.iter().filter(|r| !r.passed) {
            let at = r.instance.map(|i| format!(" instance {i}")).unwrap_or_default();
            out.push_str(&format!("  failed {}{at}: value {:e} vs limit {:e}\n", r.check, r.value, r.limit));
        }
    }
    out
}

pub fn to_jsonl(records: &[CheckRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect()
}

//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use anyhow::{ensure, Context, Result};
use rand::Rng as _;
use rayon::prelude::*;

use rvp::config::{Hyper, RunConfig};
use rvp::run::{experiment, generate, run_cell, run_seeds};
use rvp::verify::{self, expansion_acceptance_params, expansion_check_parallel, CheckRecord, Suite, VerifyOptions};
use rvp_core::calibration::{tune_lambda, TuningSpec};
use rvp_core::meta_risk::MetaRiskModel;
use rvp_core::model::{domain_risk, domain_risk_grad, Activation, Layout, Loss, ModelParams};
use rvp_core::objectives::{objective_risk_gradient, objective_value, LambdaSchedule, ObjectiveSpec};
use rvp_core::risk_stats::RiskVector;
use rvp_core::rng::seeded;
use rvp_core::synth_data::{generate_domain, DomainSpec};
use rvp_core::trainer::pearson;

const SEED: u64 = 1;

type Criterion<'a> = (&'static str, u64, Box<dyn Fn() -> Result<Verdict> + 'a>);

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Result<Verdict> {
    Ok(Verdict { passed, detail })
}

fn config(name: &str) -> Result<RunConfig> {
    RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name))
}

fn suite(s: Suite, instances: usize) -> Result<Vec<CheckRecord>> {
    verify::run(s, &VerifyOptions { instances: Some(instances), seed: SEED, ..Default::default() })
}

fn worst_of(records: &[CheckRecord], check: &str) -> f64 {
    records.iter().filter(|r| r.check == check).map(|r| r.value).fold(f64::NEG_INFINITY, f64::max)
}

fn failures(records: &[CheckRecord]) -> usize {
    records.iter().filter(|r| !r.passed).count()
}

fn tuning() -> Result<Verdict> {
    let out = Command::new(env!("CARGO_BIN_EXE_rvp")).args(["tune", "--gamma", "0.025", "--n", "3"]).output()?;
    ensure!(out.status.success(), "tune exited with {}", out.status);
    let text = String::from_utf8(out.stdout)?;
    let lambda: f64 = text.trim().parse().context("tune output")?;
    verdict((lambda - 1.1316).abs() <= 0.0005, format!("tune(0.025, 3) = {}", text.trim()))
}

fn region() -> Result<Verdict> {
    let recs = suite(Suite::Region, 200)?;
    verdict(
        failures(&recs) == 0,
        format!(
            "200 instances, max |closed form - oracle| {:.1e}, max bound excess {:.1e}, {} failed checks",
            worst_of(&recs, "closed_form_exact"),
            worst_of(&recs, "upper_bound"),
            failures(&recs)
        ),
    )
}

fn sandwich() -> Result<Verdict> {
    let recs = suite(Suite::Sandwich, 100)?;
    verdict(
        failures(&recs) == 0,
        format!(
            "{} checks on 100 instances, max |rvp - mmrex| {:.1e}, {} failed",
            recs.len(),
            worst_of(&recs, "rvp_matches_mmrex"),
            failures(&recs)
        ),
    )
}

fn decomposition() -> Result<Verdict> {
    let recs = suite(Suite::Decomposition, 100)?;
    verdict(
        failures(&recs) == 0,
        format!("100 pools, max relative residual {:.1e}", recs.iter().map(|r| r.value).fold(0.0, f64::max)),
    )
}

fn coverage() -> Result<Verdict> {
    let mut cfg = RunConfig { seed: Some(SEED), ..Default::default() };
    let c = &mut cfg.coverage;
    c.gamma = 0.025;
    c.n = 50;
    c.trials = 100_000;
    c.lambda = None;
    c.model.family = "truncated_normal".into();
    ensure!(c.model.model()? == MetaRiskModel::TruncatedNormal { mean: 0.5, std_dev: 0.1, lower: 0.0, upper: 1.0 });
    let rec = rvp::run::coverage(&cfg)?;
    let expected = tune_lambda(TuningSpec::new(0.025, 50)?)?;
    verdict(
        rec.lambda == expected && (rec.empirical_coverage - 0.975).abs() <= 0.02,
        format!("lambda {:.6}, coverage {:.4} vs {:.4}", rec.lambda, rec.empirical_coverage, rec.target),
    )
}

fn expansion() -> Result<Verdict> {
    let (params, model) = expansion_acceptance_params();
    let c = expansion_check_parallel(&params, &model, 2000, SEED)?;
    verdict(
        !c.bound.vacuous && c.passes(3.0),
        format!(
            "frequency {:.4} vs bound {:.4} - 3 x {:.4}",
            c.freq, c.bound.prob_lower, c.half_width
        ),
    )
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 { diff } else { diff / scale }
}

fn objective_case(rng: &mut rvp_core::rng::Rng, case: usize) -> Result<Option<f64>> {
    let n = rng.random_range(2..=6);
    let r: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.95)).collect();
    let spec = match case % 7 {
        0 => ObjectiveSpec::Erm,
        1 => ObjectiveSpec::GroupDro,
        2 => ObjectiveSpec::VRex { beta: rng.random_range(0.5..50.0) },
        3 => ObjectiveSpec::MmRex { alpha: rng.random_range(0.0..3.0) },
        4 => ObjectiveSpec::QuasiDro { alpha: rng.random_range(0.0..3.0), rho: rng.random_range(0.1..4.0) },
        5 => ObjectiveSpec::Rvp { lambda: rng.random_range(0.1..100.0) },
        _ => ObjectiveSpec::Elastic(LambdaSchedule::constant(rng.random_range(0.1..5.0))?),
    };
    let grad = |v: &[f64]| objective_risk_gradient(&spec, &RiskVector::new(v.to_vec())?, 0);
    let value = |v: &[f64]| objective_value(&spec, &RiskVector::new(v.to_vec())?, 0);
    let g = grad(&r)?;
    let h = 1e-6;
    let mut fd = vec![0.0; n];
    for i in 0..n {
        let mut p = r.clone();
        let mut m = r.clone();
        p[i] += h;
        m[i] -= h;
        if !spec.is_smooth() && rel_err(grad(&p)?.as_slice(), grad(&m)?.as_slice()) > 1e-3 {
            return Ok(None);
        }
        fd[i] = (value(&p)? - value(&m)?) / (2.0 * h);
    }
    Ok(Some(rel_err(g.as_slice(), &fd)))
}

fn model_case(rng: &mut rvp_core::rng::Rng, case: usize) -> Result<f64> {
    let d_noise = rng.random_range(0..3);
    let data = generate_domain(&DomainSpec { d_noise, ..DomainSpec::new(0.25, 0.2, 40, rng.random()) })?;
    let inputs = data.dim();
    let layout = if case.is_multiple_of(2) {
        Layout::Linear { inputs }
    } else {
        Layout::Mlp { inputs, hidden: rng.random_range(2..8), activation: Activation::Tanh }
    };
    let params = ModelParams::init_uniform(layout, rng.random(), 0.8);
    let g = domain_risk_grad(&params, &data, Loss::Logistic)?.grad;
    let h = 1e-6;
    let mut fd = vec![0.0; g.len()];
    for (i, slot) in fd.iter_mut().enumerate() {
        let mut p = params.clone();
        p.theta_mut()[i] += h;
        let mut m = params.clone();
        m.theta_mut()[i] -= h;
        *slot = (domain_risk(&p, &data, Loss::Logistic)? - domain_risk(&m, &data, Loss::Logistic)?) / (2.0 * h);
    }
    Ok(rel_err(&g, &fd))
}

fn gradients() -> Result<Verdict> {
    let mut rng = seeded(SEED);
    let mut objective_errs = Vec::new();
    let mut case = 0;
    while objective_errs.len() < 20 {
        if let Some(e) = objective_case(&mut rng, case)? {
            objective_errs.push(e);
        }
        case += 1;
    }
    let model_errs = (0..20).map(|c| model_case(&mut rng, c)).collect::<Result<Vec<f64>>>()?;
    let worst_obj = objective_errs.iter().copied().fold(0.0, f64::max);
    let worst_model = model_errs.iter().copied().fold(0.0, f64::max);
    verdict(
        worst_obj <= 1e-5 && worst_model <= 1e-5,
        format!(
            "max relative error: objectives {worst_obj:.1e} ({} kinked draws skipped), models {worst_model:.1e}",
            case - 20
        ),
    )
}

fn example_one(out: &Path) -> Result<Verdict> {
    let mut cfg = config("example1.toml")?;
    cfg.seed = Some(SEED);
    cfg.out = Some(out.to_path_buf());
    let tables = experiment(&cfg)?;
    let at = |p: f64| tables.iter().find(|t| t.p_eps == p).context("missing table");
    let low = at(0.25)?;
    let high = at(0.5)?;
    let worst = |rows: &[rvp::formats::ResultRow], method: &str, seed: u64| {
        rows.iter().find(|r| r.method == method && r.seed == seed).map(|r| r.worst).context("missing row")
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for k in 0..cfg.experiment.seeds {
        let erm = worst(&low.rows, "erm", k)?;
        let rvp = worst(&low.rows, "rvp", k)?;
        ok &= erm < 0.4 && rvp >= 0.55 && rvp - erm >= 0.15;
        parts.push(format!("seed {k}: erm {erm:.3} rvp {rvp:.3}"));
    }
    let high_max = high.rows.iter().map(|r| r.worst).fold(0.0, f64::max);
    ok &= high_max <= 0.55;
    verdict(ok, format!("{}; P_eps 0.5 max {high_max:.3}", parts.join(", ")))
}

fn example_two() -> Result<Verdict> {
    let cfg = config("example2.toml")?;
    let seeds: Vec<u64> = (0..cfg.experiment.seeds).collect();
    let runs = [0.25, 0.5]
        .iter()
        .flat_map(|&p| seeds.iter().map(move |&k| (p, k)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(p, k)| {
            let (data_seed, train_seed) = run_seeds(SEED, k);
            let data = generate(&cfg, p, data_seed)?;
            Ok(((p, k), run_cell(&cfg, &data, "elastic", Hyper::None, k, train_seed)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ok = true;
    let mut max_gap: f64 = 0.0;
    let mut max_risk_dev: f64 = 0.0;
    let mut max_corr = f64::NEG_INFINITY;
    for &k in &seeds {
        let cell = |p: f64| runs.iter().find(|((q, j), _)| *q == p && *j == k).map(|(_, c)| c).context("missing run");
        let (a, b) = (cell(0.25)?, cell(0.5)?);
        max_gap = max_gap.max((a.row.worst - b.row.worst).abs());
        for c in [a, b] {
            let rec = c.report.records.iter().find(|r| r.epoch == 100).context("no epoch 100 record")?;
            max_risk_dev = rec.risks.iter().map(|r| (r - 0.5).abs()).fold(max_risk_dev, f64::max);
            let acc = |e: usize| -> Result<Vec<f64>> {
                let src = format!("epoch{e}");
                let v: Vec<f64> = c.curves.iter().filter(|p| p.source == src).map(|p| p.accuracy).collect();
                ensure!(v.len() == 9, "missing {src} curve");
                Ok(v)
            };
            let corr = pearson(&acc(100)?, &acc(200)?).unwrap_or(f64::NAN);
            ok &= corr < 0.0;
            max_corr = max_corr.max(corr);
        }
    }
    ok &= max_gap <= 0.05 && max_risk_dev <= 0.05;
    verdict(
        ok,
        format!("gap {max_gap:.3}, max |risk - 0.5| at epoch 100 {max_risk_dev:.3}, max corr(100, 200) {max_corr:.3}"),
    )
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let criteria: Vec<Criterion> = vec![
        ("tuning rule", 1, Box::new(tuning)),
        ("region maximum suite", 10, Box::new(region)),
        ("sandwich and equivalence suite", 5, Box::new(sandwich)),
        ("variance decomposition", 5, Box::new(decomposition)),
        ("coverage at n = 50", 30, Box::new(coverage)),
        ("expansion bound frequency", 60, Box::new(expansion)),
        ("gradient checks", 10, Box::new(gradients)),
        ("two-domain example", 600, Box::new(|| example_one(tmp.path()))),
        ("elastic probe", 600, Box::new(example_two)),
    ];
    let mut failed = 0;
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(*limit);
        let (passed, detail) = match result {
            Ok(v) => (v.passed && in_time, v.detail),
            Err(e) => (false, format!("error: {e:#}")),
        };
        failed += usize::from(!passed);
        println!(
            "{} {:>2} {name}: {detail} [{:.2} s, limit {limit} s]",
            if passed { "PASS" } else { "FAIL" },
            i + 1,
            elapsed.as_secs_f64()
        );
    }
    println!("N/A  10 large image benchmarks: not reproducible at this scale, no check");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

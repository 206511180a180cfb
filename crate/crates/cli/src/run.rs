//! Command bodies shared by the binary and the tests.

use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rvp_core::calibration::{coverage_trial, CoverageReport, MIN_TRIALS};
use rvp_core::rng::derive_seed;
use rvp_core::synth_data::{build_grid, GridData, GRID_PROBS};
use rvp_core::trainer::{elastic_probe, evaluate_grid, train, TrainReport};

use crate::config::{Hyper, RunConfig};
use crate::formats::{
    checkpoint_to_string, curves_to_csv, dataset_to_string, report_to_jsonl, table_to_csv, write_atomic,
    CurvePoint, ResultRow, RunLabel, GRID_SIZE,
};

const DATA_TAG: u64 = 0x6461_7461;
const TRAIN_TAG: u64 = 0x0074_726e;

/// Data and initialization seeds of run `k` under a master seed.
pub fn run_seeds(master: u64, k: u64) -> (u64, u64) {
    (derive_seed(master, k, DATA_TAG), derive_seed(master, k, TRAIN_TAG))
}

pub fn generate(cfg: &RunConfig, p_eps: f64, data_seed: u64) -> Result<GridData> {
    Ok(build_grid(&cfg.data.grid(p_eps, data_seed))?)
}

// ---- gen-data ----

pub fn gen_data(cfg: &RunConfig) -> Result<GridData> {
    let out = cfg.out()?;
    let (data_seed, _) = run_seeds(cfg.seed()?, 0);
    let data = generate(cfg, cfg.data.p_eps, data_seed)?;
    for (i, ds) in data.train.iter().enumerate() {
        write_atomic(&out.join(format!("train_{i}.csv")), dataset_to_string(ds).as_bytes())?;
    }
    for (i, ds) in data.test.iter().enumerate() {
        write_atomic(&out.join(format!("test_p{}.csv", i + 1)), dataset_to_string(ds).as_bytes())?;
    }
    cfg.capture()?;
    Ok(data)
}

// ---- coverage ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRecord {
    pub lambda: f64,
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    pub empirical_coverage: f64,
    pub target: f64,
    pub half_width: f64,
}

pub fn coverage(cfg: &RunConfig) -> Result<CoverageRecord> {
    let seed = cfg.seed()?;
    let c = &cfg.coverage;
    let lambda = c.resolved_lambda()?;
    let model = c.model.model()?;
    if c.trials < MIN_TRIALS {
        bail!("coverage needs at least {MIN_TRIALS} trials, got {}", c.trials);
    }
    if c.n < 2 {
        bail!("coverage needs n >= 2 domains");
    }
    let hits = (0..c.trials as u64)
        .into_par_iter()
        .filter(|&t| coverage_trial(lambda, c.n, &model, seed, t))
        .count();
    let rep = CoverageReport::from_hits(hits, c.trials, lambda, c.n);
    let rec = CoverageRecord {
        lambda,
        n: c.n,
        trials: c.trials,
        seed,
        empirical_coverage: rep.empirical_coverage,
        target: rep.target,
        half_width: rep.half_width,
    };
    if let Some(out) = &cfg.out {
        write_atomic(&out.join("coverage.json"), (serde_json::to_string(&rec)? + "\n").as_bytes())?;
        cfg.capture()?;
    }
    Ok(rec)
}

// ---- single runs ----

/// Everything produced by one (method, hyperparameter, seed) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub label: RunLabel,
    pub report: TrainReport,
    pub row: ResultRow,
    pub curves: Vec<CurvePoint>,
}

pub fn run_cell(cfg: &RunConfig, data: &GridData, method: &str, hyper: Hyper, k: u64, train_seed: u64) -> Result<CellOutcome> {
    let objective = cfg.train.objective(method, hyper)?;
    let inputs = data.train[0].dim();
    let tc = cfg.train.train_config(objective.clone(), inputs, train_seed)?;
    let report = if method == "elastic" {
        elastic_probe(&tc, &data.train, &data.test)?
    } else {
        train(&tc, &data.train, &data.test)?
    };
    let label = RunLabel { method: method.to_string(), hyperparams: objective.hyperparams(), seed: k };
    let best = report.best_ood().context("run produced no evaluations")?;
    if best.accuracy.per_domain.len() != GRID_SIZE {
        bail!("evaluation grid must have {GRID_SIZE} domains");
    }
    let mut acc = [0.0; GRID_SIZE];
    acc.copy_from_slice(&best.accuracy.per_domain);
    let row = ResultRow {
        method: label.method.clone(),
        hyperparams: label.hyperparams.clone(),
        seed: k,
        acc,
        worst: best.accuracy.worst,
        best_epoch: best.epoch,
    };
    let point = |source: String, p_i: f64, accuracy: f64| CurvePoint {
        method: label.method.clone(),
        hyperparams: label.hyperparams.clone(),
        seed: k,
        source,
        p_i,
        accuracy,
    };
    let mut curves: Vec<CurvePoint> =
        GRID_PROBS.iter().zip(&acc).map(|(&p, &a)| point("best".into(), p, a)).collect();
    for c in &report.checkpoints {
        let eval = evaluate_grid(&c.params, &data.test)?;
        curves.extend(
            GRID_PROBS.iter().zip(&eval.per_domain).map(|(&p, &a)| point(format!("epoch{}", c.epoch), p, a)),
        );
    }
    Ok(CellOutcome { label, report, row, curves })
}

fn file_stem(label: &RunLabel) -> String {
    let hp: String = label
        .hyperparams
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    if hp.is_empty() {
        format!("{}_seed{}", label.method, label.seed)
    } else {
        format!("{}_{hp}_seed{}", label.method, label.seed)
    }
}

fn write_run(dir: &Path, cell: &CellOutcome) -> Result<()> {
    let stem = file_stem(&cell.label);
    write_atomic(&dir.join("runs").join(format!("{stem}.jsonl")), report_to_jsonl(&cell.report, &cell.label).as_bytes())?;
    for c in &cell.report.checkpoints {
        write_atomic(
            &dir.join("checkpoints").join(format!("{stem}_epoch{}.ckpt", c.epoch)),
            checkpoint_to_string(c.epoch, &c.params).as_bytes(),
        )?;
    }
    let last = cell.report.records.last().map(|r| r.epoch).unwrap_or(0);
    write_atomic(
        &dir.join("checkpoints").join(format!("{stem}_final.ckpt")),
        checkpoint_to_string(last, &cell.report.final_params).as_bytes(),
    )
}

/// One training run from the `[data]` and `[train]` sections.
pub fn train_single(cfg: &RunConfig) -> Result<CellOutcome> {
    let out = cfg.out()?;
    let (data_seed, train_seed) = run_seeds(cfg.seed()?, 0);
    let data = generate(cfg, cfg.data.p_eps, data_seed)?;
    let cell = run_cell(cfg, &data, &cfg.train.method, Hyper::None, 0, train_seed)?;
    write_run(out, &cell)?;
    write_atomic(&out.join("results.csv"), table_to_csv(std::slice::from_ref(&cell.row))?.as_bytes())?;
    write_atomic(&out.join("curves.csv"), curves_to_csv(&cell.curves)?.as_bytes())?;
    cfg.capture()?;
    Ok(cell)
}

// ---- sweeps ----

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub p_eps: f64,
    pub rows: Vec<ResultRow>,
    pub curves: Vec<CurvePoint>,
}

pub fn sweep_dir(out: &Path, p_eps: f64) -> std::path::PathBuf {
    out.join(format!("peps_{p_eps}"))
}

/// Runs every (P_eps, seed, method, value) cell in parallel and writes one
/// result table and one curve file per `P_eps`.
pub fn experiment(cfg: &RunConfig) -> Result<Vec<SweepTable>> {
    let out = cfg.out()?.to_path_buf();
    let master = cfg.seed()?;
    let cells = cfg.experiment.cells()?;
    if cfg.experiment.p_eps.is_empty() || cfg.experiment.seeds == 0 {
        bail!("experiment needs at least one p_eps value and one seed");
    }
    let seeds: Vec<u64> = (0..cfg.experiment.seeds).collect();
    let datasets: Vec<((f64, u64), GridData)> = cfg
        .experiment
        .p_eps
        .iter()
        .flat_map(|&p| seeds.iter().map(move |&k| (p, k)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(p, k)| Ok(((p, k), generate(cfg, p, run_seeds(master, k).0)?)))
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, u64, &(String, Hyper))> = datasets
        .iter()
        .enumerate()
        .flat_map(|(di, ((_, k), _))| cells.iter().map(move |c| (di, *k, c)))
        .collect();
    let outcomes: Vec<(usize, CellOutcome)> = jobs
        .into_par_iter()
        .map(|(di, k, (method, hyper))| {
            let ((p, _), data) = &datasets[di];
            let cell = run_cell(cfg, data, method, *hyper, k, run_seeds(master, k).1)?;
            write_run(&sweep_dir(&out, *p), &cell)?;
            Ok((di, cell))
        })
        .collect::<Result<_>>()?;

    let mut tables = Vec::new();
    for &p in &cfg.experiment.p_eps {
        let mut rows = Vec::new();
        let mut curves = Vec::new();
        // rows ordered by method cell, then seed
        for (method, hyper) in &cells {
            for (di, cell) in &outcomes {
                let ((dp, _), _) = &datasets[*di];
                let hp = cfg.train.objective(method, *hyper)?.hyperparams();
                if *dp == p && cell.label.method == *method && cell.label.hyperparams == hp {
                    rows.push(cell.row.clone());
                    curves.extend(cell.curves.iter().cloned());
                }
            }
        }
        let dir = sweep_dir(&out, p);
        write_atomic(&dir.join("results.csv"), table_to_csv(&rows)?.as_bytes())?;
        write_atomic(&dir.join("curves.csv"), curves_to_csv(&curves)?.as_bytes())?;
        tables.push(SweepTable { p_eps: p, rows, curves });
    }
    cfg.capture()?;
    Ok(tables)
}

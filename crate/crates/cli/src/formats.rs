//! Text formats for datasets, checkpoints, training reports and result
//! tables. Every format parses back to exactly the value that was written.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use rvp_core::model::{Activation, Layout, ModelParams};
use rvp_core::synth_data::{DomainDataset, DomainSpec};
use rvp_core::trainer::{Checkpoint, EpochRecord, GridAccuracy, GridEvaluation, TrainReport};

const DATASET_MAGIC: &str = "# rvp-dataset v1";
const CHECKPOINT_MAGIC: &str = "# rvp-checkpoint v1";

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| anyhow!("bad number {s:?}: {e}"))
}

fn parse_usize(s: &str) -> Result<usize> {
    s.trim().parse::<usize>().map_err(|e| anyhow!("bad count {s:?}: {e}"))
}

// ---- datasets ----

/// Dataset text: a magic line, the header `p_eps,p_i,m,d,seed,shape_scale`
/// with its values, then one row per example, features in `{:.16e}` and the
/// label last.
pub fn dataset_to_string(ds: &DomainDataset) -> String {
    let s = ds.spec();
    let mut out = String::with_capacity(ds.len() * (ds.dim() + 1) * 24 + 128);
    out.push_str(DATASET_MAGIC);
    out.push('\n');
    out.push_str("p_eps,p_i,m,d,seed,shape_scale\n");
    let _ = writeln!(out, "{},{},{},{},{},{}", s.p_flip_label, s.p_flip_color, s.m, ds.dim(), s.seed, s.shape_scale);
    for (x, y) in ds.rows() {
        for v in x {
            let _ = write!(out, "{v:.16e},");
        }
        let _ = writeln!(out, "{y}");
    }
    out
}

pub fn dataset_from_str(text: &str) -> Result<DomainDataset> {
    let mut lines = text.lines();
    ensure!(lines.next() == Some(DATASET_MAGIC), "not a dataset file");
    ensure!(lines.next() == Some("p_eps,p_i,m,d,seed,shape_scale"), "bad dataset header");
    let meta: Vec<&str> = lines.next().context("missing dataset metadata")?.split(',').collect();
    ensure!(meta.len() == 6, "dataset metadata needs 6 fields");
    let m = parse_usize(meta[2])?;
    let d = parse_usize(meta[3])?;
    ensure!(d >= 2, "datasets have at least 2 features");
    let spec = DomainSpec {
        p_flip_label: parse_f64(meta[0])?,
        p_flip_color: parse_f64(meta[1])?,
        m,
        seed: meta[4].trim().parse().context("bad seed")?,
        d_noise: d - 2,
        shape_scale: parse_f64(meta[5])?,
    };
    let mut features = Vec::with_capacity(m * d);
    let mut labels = Vec::with_capacity(m);
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        ensure!(fields.len() == d + 1, "row {i}: expected {} fields, got {}", d + 1, fields.len());
        for f in &fields[..d] {
            features.push(parse_f64(f)?);
        }
        labels.push(match fields[d].trim() {
            "0" => 0,
            "1" => 1,
            other => bail!("row {i}: label must be 0 or 1, got {other:?}"),
        });
    }
    Ok(DomainDataset::from_parts(features, labels, spec)?)
}

// ---- checkpoints ----

pub fn layout_to_string(layout: Layout) -> String {
    match layout {
        Layout::Linear { inputs } => format!("layout=linear inputs={inputs}"),
        Layout::Mlp { inputs, hidden, activation } => format!(
            "layout=mlp inputs={inputs} hidden={hidden} activation={}",
            activation_name(activation)
        ),
    }
}

pub fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Tanh => "tanh",
        Activation::Relu => "relu",
    }
}

pub fn parse_activation(s: &str) -> Result<Activation> {
    match s {
        "tanh" => Ok(Activation::Tanh),
        "relu" => Ok(Activation::Relu),
        other => bail!("unknown activation {other:?} (expected tanh or relu)"),
    }
}

pub fn layout_from_str(line: &str) -> Result<Layout> {
    let mut kind = None;
    let (mut inputs, mut hidden, mut activation) = (None, None, None);
    for part in line.split_whitespace() {
        let (k, v) = part.split_once('=').with_context(|| format!("bad layout field {part:?}"))?;
        match k {
            "layout" => kind = Some(v.to_string()),
            "inputs" => inputs = Some(parse_usize(v)?),
            "hidden" => hidden = Some(parse_usize(v)?),
            "activation" => activation = Some(parse_activation(v)?),
            other => bail!("unknown layout field {other:?}"),
        }
    }
    let inputs = inputs.context("layout needs inputs")?;
    match kind.as_deref() {
        Some("linear") => Ok(Layout::Linear { inputs }),
        Some("mlp") => Ok(Layout::Mlp {
            inputs,
            hidden: hidden.context("mlp layout needs hidden")?,
            activation: activation.context("mlp layout needs activation")?,
        }),
        _ => bail!("layout must be linear or mlp"),
    }
}

/// Checkpoint text: magic line, layout line, `epoch=`, `count=`, then one
/// parameter per line in `{:.16e}`.
pub fn checkpoint_to_string(epoch: usize, params: &ModelParams) -> String {
    let mut out = format!(
        "{CHECKPOINT_MAGIC}\n{}\nepoch={epoch}\ncount={}\n",
        layout_to_string(params.layout()),
        params.theta().len()
    );
    for t in params.theta() {
        let _ = writeln!(out, "{t:.16e}");
    }
    out
}

pub fn checkpoint_from_str(text: &str) -> Result<(usize, ModelParams)> {
    let mut lines = text.lines();
    ensure!(lines.next() == Some(CHECKPOINT_MAGIC), "not a checkpoint file");
    let layout = layout_from_str(lines.next().context("missing layout")?)?;
    let epoch = lines
        .next()
        .and_then(|l| l.strip_prefix("epoch="))
        .context("missing epoch")
        .and_then(parse_usize)?;
    let count = lines
        .next()
        .and_then(|l| l.strip_prefix("count="))
        .context("missing count")
        .and_then(parse_usize)?;
    let theta = lines.map(parse_f64).collect::<Result<Vec<_>>>()?;
    ensure!(theta.len() == count, "checkpoint declares {count} values, holds {}", theta.len());
    Ok((epoch, ModelParams::from_theta(layout, theta)?))
}

// ---- training reports ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReportLine {
    Epoch { epoch: usize, risks: Vec<f64>, spread: f64, objective: f64 },
    Eval { epoch: usize, per_domain: Vec<f64>, worst: f64 },
    Checkpoint { epoch: usize, layout: String, theta: Vec<f64> },
    Final { layout: String, theta: Vec<f64> },
    Summary {
        method: String,
        hyperparams: String,
        seed: u64,
        best_epoch: Option<usize>,
        best_worst: Option<f64>,
        per_domain_at_best: Option<Vec<f64>>,
    },
}

/// Identifies the run a report belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLabel {
    pub method: String,
    pub hyperparams: String,
    pub seed: u64,
}

/// One JSON record per epoch, evaluation and checkpoint, then the final
/// parameters and a summary.
pub fn report_to_jsonl(report: &TrainReport, label: &RunLabel) -> String {
    let mut lines: Vec<ReportLine> = Vec::new();
    for r in &report.records {
        lines.push(ReportLine::Epoch {
            epoch: r.epoch,
            risks: r.risks.clone(),
            spread: r.spread,
            objective: r.objective,
        });
    }
    for e in &report.evaluations {
        lines.push(ReportLine::Eval {
            epoch: e.epoch,
            per_domain: e.accuracy.per_domain.clone(),
            worst: e.accuracy.worst,
        });
    }
    for c in &report.checkpoints {
        lines.push(ReportLine::Checkpoint {
            epoch: c.epoch,
            layout: layout_to_string(c.params.layout()),
            theta: c.params.theta().to_vec(),
        });
    }
    lines.push(ReportLine::Final {
        layout: layout_to_string(report.final_params.layout()),
        theta: report.final_params.theta().to_vec(),
    });
    let best = report.best_ood();
    lines.push(ReportLine::Summary {
        method: label.method.clone(),
        hyperparams: label.hyperparams.clone(),
        seed: label.seed,
        best_epoch: best.map(|b| b.epoch),
        best_worst: best.map(|b| b.accuracy.worst),
        per_domain_at_best: best.map(|b| b.accuracy.per_domain.clone()),
    });
    let mut out = String::new();
    for line in lines {
        out.push_str(&serde_json::to_string(&line).expect("report records serialize"));
        out.push('\n');
    }
    out
}

pub fn report_from_jsonl(text: &str) -> Result<(TrainReport, RunLabel)> {
    let mut records = Vec::new();
    let mut evaluations = Vec::new();
    let mut checkpoints = Vec::new();
    let mut final_params = None;
    let mut label = None;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: ReportLine =
            serde_json::from_str(line).with_context(|| format!("report line {}", i + 1))?;
        match rec {
            ReportLine::Epoch { epoch, risks, spread, objective } => {
                records.push(EpochRecord { epoch, risks, spread, objective })
            }
            ReportLine::Eval { epoch, per_domain, worst } => {
                evaluations.push(GridEvaluation { epoch, accuracy: GridAccuracy { per_domain, worst } })
            }
            ReportLine::Checkpoint { epoch, layout, theta } => checkpoints.push(Checkpoint {
                epoch,
                params: ModelParams::from_theta(layout_from_str(&layout)?, theta)?,
            }),
            ReportLine::Final { layout, theta } => {
                final_params = Some(ModelParams::from_theta(layout_from_str(&layout)?, theta)?)
            }
            ReportLine::Summary { method, hyperparams, seed, .. } => {
                label = Some(RunLabel { method, hyperparams, seed })
            }
        }
    }
    let report = TrainReport {
        records,
        evaluations,
        checkpoints,
        final_params: final_params.context("report has no final parameters")?,
    };
    Ok((report, label.context("report has no summary")?))
}

// ---- result tables ----

pub const GRID_SIZE: usize = 9;

/// One (method, hyperparameters, seed) cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: String,
    pub hyperparams: String,
    pub seed: u64,
    /// Accuracy on `P_1 .. P_9` at the best epoch.
    pub acc: [f64; GRID_SIZE],
    pub worst: f64,
    pub best_epoch: usize,
}

pub fn result_header() -> Vec<String> {
    let mut h: Vec<String> = ["method", "hyperparams", "seed"].iter().map(|s| s.to_string()).collect();
    h.extend((1..=GRID_SIZE).map(|i| format!("acc_p{i}")));
    h.push("worst".into());
    h.push("best_epoch".into());
    h
}

/// CSV with the header `method,hyperparams,seed,acc_p1..acc_p9,worst,best_epoch`.
pub fn table_to_csv(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(result_header())?;
    for r in rows {
        let mut rec = vec![r.method.clone(), r.hyperparams.clone(), r.seed.to_string()];
        rec.extend(r.acc.iter().map(|a| a.to_string()));
        rec.push(r.worst.to_string());
        rec.push(r.best_epoch.to_string());
        w.write_record(rec)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn table_from_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    ensure!(header == result_header(), "unexpected result table header");
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let mut acc = [0.0; GRID_SIZE];
        for (i, a) in acc.iter_mut().enumerate() {
            *a = parse_f64(&rec[3 + i])?;
        }
        rows.push(ResultRow {
            method: rec[0].to_string(),
            hyperparams: rec[1].to_string(),
            seed: rec[2].parse()?,
            acc,
            worst: parse_f64(&rec[3 + GRID_SIZE])?,
            best_epoch: parse_usize(&rec[4 + GRID_SIZE])?,
        });
    }
    Ok(rows)
}

/// Long-format accuracy curve point: one grid domain of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub method: String,
    pub hyperparams: String,
    pub seed: u64,
    /// `best` or `epoch<k>` for a checkpoint.
    pub source: String,
    pub p_i: f64,
    pub accuracy: f64,
}

pub fn curves_to_csv(points: &[CurvePoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in points {
        w.serialize(p)?;
    }
    if points.is_empty() {
        w.write_record(["method", "hyperparams", "seed", "source", "p_i", "accuracy"])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn curves_from_csv(text: &str) -> Result<Vec<CurvePoint>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().map(|p| p.map_err(Into::into)).collect()
}

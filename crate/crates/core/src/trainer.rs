//! Gradient-descent training of an objective over several domains, with
//! periodic evaluation on a grid of test domains.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::model::{self, accuracy, Layout, Loss, ModelParams, DEFAULT_INIT_SCALE};
use crate::objectives::{evaluate, ObjectiveSpec, Smoothing};
use crate::risk_stats::RiskVector;
use crate::rng::{derive_seed, stream};
use crate::synth_data::DomainDataset;

pub const DEFAULT_LEARNING_RATE: f64 = 0.05;
pub const DEFAULT_REPORT_EVERY: usize = 5;
pub const DEFAULT_EPOCHS: usize = 500;

const INIT_TAG: u64 = 0x696e_6974;
const SHUFFLE_TAG: u64 = 0x7368_7566;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    Full,
    /// Per-domain batches of the given size, reshuffled every epoch.
    Minibatch(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub objective: ObjectiveSpec,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_mode: BatchMode,
    pub seed: u64,
    pub smoothing: Smoothing,
    pub report_every: usize,
    pub layout: Layout,
    pub loss: Loss,
    pub init_scale: f64,
    /// Epochs whose parameters are kept in the report.
    pub checkpoint_epochs: Vec<usize>,
}

impl TrainConfig {
    pub fn new(objective: ObjectiveSpec, layout: Layout) -> Self {
        Self {
            objective,
            epochs: DEFAULT_EPOCHS,
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_mode: BatchMode::Full,
            seed: 0,
            smoothing: Smoothing::Subgradient,
            report_every: DEFAULT_REPORT_EVERY,
            layout,
            loss: Loss::Logistic,
            init_scale: DEFAULT_INIT_SCALE,
            checkpoint_epochs: Vec::new(),
        }
    }

    pub fn validate(&self, domains: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.report_every == 0 {
            return Err(Error::invalid("report_every must be at least 1"));
        }
        if let BatchMode::Minibatch(0) = self.batch_mode {
            return Err(Error::invalid("minibatch size must be at least 1"));
        }
        if let Smoothing::Smoothed(eps) = self.smoothing {
            if !(eps.is_finite() && eps > 0.0) {
                return Err(Error::invalid("smoothing epsilon must be positive"));
            }
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(Error::invalid("init_scale must be finite and nonnegative"));
        }
        self.loss.validate()?;
        self.objective.validate(domains)
    }
}

/// Training statistics after `epoch` updates.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub risks: Vec<f64>,
    /// `s_n` of the risks (0 for a single domain).
    pub spread: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridAccuracy {
    pub per_domain: Vec<f64>,
    pub worst: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridEvaluation {
    pub epoch: usize,
    pub accuracy: GridAccuracy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub params: ModelParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub evaluations: Vec<GridEvaluation>,
    pub checkpoints: Vec<Checkpoint>,
    pub final_params: ModelParams,
}

impl TrainReport {
    /// Evaluation with the highest worst-domain accuracy; the earliest wins
    /// ties.
    pub fn best_ood(&self) -> Option<&GridEvaluation> {
        self.evaluations.iter().fold(None, |best: Option<&GridEvaluation>, e| match best {
            Some(b) if b.accuracy.worst >= e.accuracy.worst => Some(b),
            _ => Some(e),
        })
    }

    pub fn checkpoint(&self, epoch: usize) -> Option<&ModelParams> {
        self.checkpoints.iter().find(|c| c.epoch == epoch).map(|c| &c.params)
    }
}

pub fn evaluate_grid(params: &ModelParams, grid: &[DomainDataset]) -> Result<GridAccuracy> {
    if grid.is_empty() {
        return Err(Error::invalid("evaluation grid is empty"));
    }
    let per_domain = grid.iter().map(|d| accuracy(params, d)).collect::<Result<Vec<_>>>()?;
    let worst = per_domain.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(GridAccuracy { per_domain, worst })
}

/// Risks, objective value and parameter gradient over the given batches.
fn step_stats(
    cfg: &TrainConfig,
    params: &ModelParams,
    batches: &[&DomainDataset],
    epoch: usize,
) -> Result<(EpochRecord, Vec<f64>)> {
    let per = batches
        .iter()
        .map(|d| model::domain_risk_grad(params, d, cfg.loss))
        .collect::<Result<Vec<_>>>()?;
    let risks: Vec<f64> = per.iter().map(|p| p.risk).collect();
    let sizes: Vec<usize> = batches.iter().map(|d| d.len()).collect();
    let rv = RiskVector::with_domain_sizes(risks.clone(), sizes)?;
    let eval = evaluate(&cfg.objective, &rv, epoch, cfg.smoothing)?;
    let mut grad = vec![0.0; params.theta().len()];
    for (w, p) in eval.gradient.as_slice().iter().zip(&per) {
        for (g, d) in grad.iter_mut().zip(&p.grad) {
            *g += w * d;
        }
    }
    let spread = if rv.len() > 1 { rv.sample_std()? } else { 0.0 };
    Ok((EpochRecord { epoch, risks, spread, objective: eval.value }, grad))
}

fn shuffled(data: &DomainDataset, seed: u64, epoch: usize, domain: usize) -> DomainDataset {
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = stream(derive_seed(seed, domain as u64, SHUFFLE_TAG), epoch as u64);
    order.shuffle(&mut rng);
    let mut features = Vec::with_capacity(data.features().len());
    let mut labels = Vec::with_capacity(data.len());
    for i in order {
        features.extend_from_slice(data.row(i));
        labels.push(data.labels()[i]);
    }
    DomainDataset::from_parts(features, labels, *data.spec()).expect("permutation keeps the shape")
}

fn descend(params: &mut ModelParams, grad: &[f64], lr: f64) {
    for (t, g) in params.theta_mut().iter_mut().zip(grad) {
        *t -= lr * g;
    }
}

/// Trains from a seeded initialization. Statistics are recorded for
/// epochs `0..=epochs`; the grid is evaluated every `report_every` epochs
/// (and after the last one).
pub fn train(cfg: &TrainConfig, train_domains: &[DomainDataset], eval_grid: &[DomainDataset]) -> Result<TrainReport> {
    cfg.validate(train_domains.len())?;
    if eval_grid.is_empty() {
        return Err(Error::invalid("evaluation grid is empty"));
    }
    let mut params =
        ModelParams::init_uniform(cfg.layout, derive_seed(cfg.seed, 0, INIT_TAG), cfg.init_scale);
    let all: Vec<&DomainDataset> = train_domains.iter().collect();
    let mut records = Vec::with_capacity(cfg.epochs + 1);
    let mut evaluations = Vec::new();
    let mut checkpoints = Vec::new();

    for epoch in 0..=cfg.epochs {
        let (record, grad) = step_stats(cfg, &params, &all, epoch)?;
        if !record.objective.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::degenerate(alloc::format!(
                "training diverged at epoch {epoch}; lower the learning rate"
            )));
        }
        records.push(record);
        if epoch > 0 && (epoch % cfg.report_every == 0 || epoch == cfg.epochs) {
            evaluations.push(GridEvaluation { epoch, accuracy: evaluate_grid(&params, eval_grid)? });
        }
        if cfg.checkpoint_epochs.contains(&epoch) {
            checkpoints.push(Checkpoint { epoch, params: params.clone() });
        }
        if epoch == cfg.epochs {
            break;
        }
        match cfg.batch_mode {
            BatchMode::Full => descend(&mut params, &grad, cfg.learning_rate),
            BatchMode::Minibatch(size) => {
                let perm: Vec<DomainDataset> = train_domains
                    .iter()
                    .enumerate()
                    .map(|(i, d)| shuffled(d, cfg.seed, epoch, i))
                    .collect();
                let longest = perm.iter().map(|d| d.len()).max().unwrap_or(0);
                let mut start = 0;
                while start < longest {
                    let batches: Vec<DomainDataset> = perm
                        .iter()
                        .map(|d| {
                            // shorter domains wrap around to the front
                            let s = start % d.len();
                            d.slice(s, (s + size).min(d.len()))
                        })
                        .collect();
                    let refs: Vec<&DomainDataset> = batches.iter().collect();
                    let (_, g) = step_stats(cfg, &params, &refs, epoch)?;
                    descend(&mut params, &g, cfg.learning_rate);
                    start += size;
                }
            }
        }
    }
    Ok(TrainReport { records, evaluations, checkpoints, final_params: params })
}

/// Trains an Elastic objective, keeping checkpoints at every phase change
/// and at twice the first one.
pub fn elastic_probe(
    cfg: &TrainConfig,
    train_domains: &[DomainDataset],
    eval_grid: &[DomainDataset],
) -> Result<TrainReport> {
    let ObjectiveSpec::Elastic(schedule) = &cfg.objective else {
        return Err(Error::invalid("elastic_probe needs an Elastic objective"));
    };
    let mut cfg = cfg.clone();
    let breaks: Vec<usize> = schedule.steps().iter().map(|s| s.0).filter(|&e| e > 0).collect();
    if let Some(&first) = breaks.first() {
        cfg.checkpoint_epochs.push(2 * first);
    }
    cfg.checkpoint_epochs.extend(breaks);
    cfg.checkpoint_epochs.sort_unstable();
    cfg.checkpoint_epochs.dedup();
    train(&cfg, train_domains, eval_grid)
}

/// Pearson correlation; `None` when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / libm::sqrt(saa * sbb))
}

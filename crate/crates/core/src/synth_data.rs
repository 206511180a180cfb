//! Colored-digit style domains with an abstract feature encoding.
//!
//! Each example draws a pre-label `y0 ~ Bernoulli(1/2)`, a shape feature
//! that reads `y0`, the label `y` as `y0` flipped with probability `P_eps`,
//! and a color `z` as `y` flipped with the domain's own probability `P_i`.
//! Shape and color are encoded as `+-1`; labels stay in `{0, 1}`.

use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};

/// Color-flip probabilities of the evaluation grid, `P_i = i / 10`.
pub const GRID_PROBS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

const TRAIN_TAG: u64 = 0x0074_7261_696e;
const TEST_TAG: u64 = 0x7465_7374;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainSpec {
    /// Label noise `P_eps`.
    pub p_flip_label: f64,
    /// Domain-specific color flip `P_i`.
    pub p_flip_color: f64,
    pub m: usize,
    pub seed: u64,
    /// Standard-normal nuisance coordinates appended to each example.
    pub d_noise: usize,
    /// Magnitude of the shape coordinate.
    pub shape_scale: f64,
}

impl DomainSpec {
    pub fn new(p_flip_label: f64, p_flip_color: f64, m: usize, seed: u64) -> Self {
        Self { p_flip_label, p_flip_color, m, seed, d_noise: 0, shape_scale: 1.0 }
    }

    pub fn dim(&self) -> usize {
        2 + self.d_noise
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_flip_label", self.p_flip_label), ("p_flip_color", self.p_flip_color)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(alloc::format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.m == 0 {
            return Err(Error::invalid("a domain needs at least one example"));
        }
        if !(self.shape_scale.is_finite() && self.shape_scale > 0.0) {
            return Err(Error::invalid("shape_scale must be finite and positive"));
        }
        Ok(())
    }
}

/// Examples of one domain; features are stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    features: Vec<f64>,
    labels: Vec<u8>,
    d: usize,
    spec: DomainSpec,
}

impl DomainDataset {
    pub fn from_parts(features: Vec<f64>, labels: Vec<u8>, spec: DomainSpec) -> Result<Self> {
        spec.validate()?;
        let d = spec.dim();
        if labels.len() != spec.m || features.len() != spec.m * d {
            return Err(Error::invalid(alloc::format!(
                "dataset shape mismatch: expected {} rows of {d} features",
                spec.m
            )));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::invalid("labels must be 0 or 1"));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("features must be finite"));
        }
        Ok(Self { features, labels, d, spec })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], u8)> + '_ {
        self.features.chunks_exact(self.d).zip(self.labels.iter().copied())
    }

    /// Rows `start..end` as a new dataset with the same spec (and `m`
    /// adjusted).
    pub fn slice(&self, start: usize, end: usize) -> Self {
        let spec = DomainSpec { m: end - start, ..self.spec };
        Self {
            features: self.features[start * self.d..end * self.d].to_vec(),
            labels: self.labels[start..end].to_vec(),
            d: self.d,
            spec,
        }
    }
}

fn bit(rng: &mut crate::rng::Rng, p: f64) -> bool {
    rng.random::<f64>() < p
}

pub fn generate_domain(spec: &DomainSpec) -> Result<DomainDataset> {
    spec.validate()?;
    let d = spec.dim();
    let mut rng = seeded(spec.seed);
    let mut features = Vec::with_capacity(spec.m * d);
    let mut labels = Vec::with_capacity(spec.m);
    for _ in 0..spec.m {
        let pre = bit(&mut rng, 0.5);
        let y = pre ^ bit(&mut rng, spec.p_flip_label);
        let z = y ^ bit(&mut rng, spec.p_flip_color);
        features.push(spec.shape_scale * if pre { 1.0 } else { -1.0 });
        features.push(if z { 1.0 } else { -1.0 });
        for _ in 0..spec.d_noise {
            features.push(StandardNormal.sample(&mut rng));
        }
        labels.push(y as u8);
    }
    Ok(DomainDataset { features, labels, d, spec: *spec })
}

/// Accuracies of predicting `y` from the shape alone and from the color
/// alone: `(1 - P_eps, 1 - P_i)`.
pub fn oracle_accuracies(spec: &DomainSpec) -> (f64, f64) {
    (1.0 - spec.p_flip_label, 1.0 - spec.p_flip_color)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub p_eps: f64,
    pub train_probs: Vec<f64>,
    pub m_train: usize,
    pub m_test: usize,
    pub d_noise: usize,
    pub shape_scale: f64,
    pub master_seed: u64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            p_eps: 0.25,
            train_probs: alloc::vec![0.1, 0.2],
            m_train: 5000,
            m_test: 10_000,
            d_noise: 0,
            shape_scale: 1.0,
            master_seed: 0,
        }
    }
}

/// Training domains and the evaluation grid over [`GRID_PROBS`].
///
/// Training domains need not lie on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainGrid {
    pub train: Vec<DomainSpec>,
    pub test: Vec<DomainSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridData {
    pub grid: DomainGrid,
    pub train: Vec<DomainDataset>,
    pub test: Vec<DomainDataset>,
}

impl GridConfig {
    pub fn grid(&self) -> Result<DomainGrid> {
        if self.train_probs.is_empty() {
            return Err(Error::invalid("train_probs must name at least one domain"));
        }
        if let Some(p) = self.train_probs.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(Error::invalid(alloc::format!("training probabilities must lie in (0, 1), got {p}")));
        }
        if self.m_train == 0 || self.m_test == 0 {
            return Err(Error::invalid("m_train and m_test must be positive"));
        }
        let spec = |p_i: f64, m: usize, index: usize, tag: u64| DomainSpec {
            p_flip_label: self.p_eps,
            p_flip_color: p_i,
            m,
            seed: derive_seed(self.master_seed, index as u64, tag),
            d_noise: self.d_noise,
            shape_scale: self.shape_scale,
        };
        let train: Vec<DomainSpec> = self
            .train_probs
            .iter()
            .enumerate()
            .map(|(i, &p)| spec(p, self.m_train, i, TRAIN_TAG))
            .collect();
        let test: Vec<DomainSpec> =
            GRID_PROBS.iter().enumerate().map(|(i, &p)| spec(p, self.m_test, i, TEST_TAG)).collect();
        for s in train.iter().chain(&test) {
            s.validate()?;
        }
        Ok(DomainGrid { train, test })
    }
}

pub fn build_grid(cfg: &GridConfig) -> Result<GridData> {
    let grid = cfg.grid()?;
    let train = grid.train.iter().map(generate_domain).collect::<Result<Vec<_>>>()?;
    let test = grid.test.iter().map(generate_domain).collect::<Result<Vec<_>>>()?;
    Ok(GridData { grid, train, test })
}

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::linalg::{regularized_inverse, ScatterAccumulator, SpdMatrix};

/// Class-conditional mean feature vectors for every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    layer_dims: Vec<usize>,
    // [layer][class] -> mean of length layer_dims[layer]
    means: Vec<Vec<Vec<f64>>>,
    counts: Vec<u64>,
}

impl PrototypeBank {
    /// Builds a bank from precomputed means, indexed `[layer][class]`.
    pub fn from_means(means: Vec<Vec<Vec<f64>>>, counts: Vec<u64>) -> Result<Self> {
        let n_classes = counts.len();
        if means.is_empty() || n_classes == 0 {
            return Err(Error::InvalidModel("prototype bank needs at least one layer and class".into()));
        }
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::EmptyClass(c));
        }
        let mut layer_dims = Vec::with_capacity(means.len());
        for layer in &means {
            if layer.len() != n_classes {
                return Err(Error::InvalidModel(format!(
                    "layer has {} prototypes for {n_classes} classes",
                    layer.len()
                )));
            }
            let d = layer[0].len();
            if d == 0 || layer.iter().any(|mu| mu.len() != d) {
                return Err(Error::InvalidModel("inconsistent prototype dimensions".into()));
            }
            if layer.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::InvalidModel("non-finite prototype".into()));
            }
            layer_dims.push(d);
        }
        Ok(Self {
            layer_dims,
            means,
            counts,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.layer_dims.len()
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn layer_means(&self, layer: usize) -> &[Vec<f64>] {
        &self.means[layer]
    }

    pub fn mean(&self, layer: usize, class: usize) -> &[f64] {
        &self.means[layer][class]
    }
}

pub(crate) fn class_labels(train: &FeatureSet) -> Result<Vec<usize>> {
    let labels = train
        .labels()
        .iter()
        .enumerate()
        .map(|(i, y)| y.map(|y| y as usize).ok_or(Error::UnlabeledSample(i)))
        .collect::<Result<Vec<_>>>()?;
    let mut counts = vec![0u64; train.n_classes()];
    for &y in &labels {
        counts[y] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass(c));
    }
    Ok(labels)
}

/// Per-class means of one layer, accumulated in f64 in sample order.
pub(crate) fn class_means(train: &FeatureSet, labels: &[usize], layer: usize) -> Vec<Vec<f64>> {
    let d = train.layer_dims()[layer];
    let mut sums = vec![vec![0.0f64; d]; train.n_classes()];
    let mut counts = vec![0u64; train.n_classes()];
    for (i, &y) in labels.iter().enumerate() {
        for (acc, &v) in sums[y].iter_mut().zip(train.row(layer, i)) {
            *acc += v as f64;
        }
        counts[y] += 1;
    }
    for (sum, n) in sums.iter_mut().zip(counts) {
        for v in sum.iter_mut() {
            *v /= n as f64;
        }
    }
    sums
}

/// Class-conditional prototypes of every layer over the full labeled set.
pub fn fit_prototypes(train: &FeatureSet) -> Result<PrototypeBank> {
    let labels = class_labels(train)?;
    let means = (0..train.n_layers())
        .into_par_iter()
        .map(|l| class_means(train, &labels, l))
        .collect();
    let mut counts = vec![0u64; train.n_classes()];
    for &y in &labels {
        counts[y] += 1;
    }
    PrototypeBank::from_means(means, counts)
}

/// Pooled within-class covariance of one layer: scatter around each sample's
/// class mean, divided by the total sample count. Row-major `d x d`.
pub fn pooled_covariance(train: &FeatureSet, layer: usize, means: &[Vec<f64>]) -> Result<Vec<f64>> {
    let labels = class_labels(train)?;
    pooled_scatter(train, &labels, layer, means)
}

fn pooled_scatter(train: &FeatureSet, labels: &[usize], layer: usize, means: &[Vec<f64>]) -> Result<Vec<f64>> {
    let d = train.layer_dims()[layer];
    let mut acc = ScatterAccumulator::new(d);
    let mut centered = vec![0.0; d];
    for (i, &y) in labels.iter().enumerate() {
        for ((c, &v), m) in centered.iter_mut().zip(train.row(layer, i)).zip(&means[y]) {
            *c = v as f64 - m;
        }
        acc.add_centered(&centered);
    }
    acc.covariance()
}

/// Regularized inverse of [`pooled_covariance`].
pub(crate) fn pooled_inverse(
    train: &FeatureSet,
    labels: &[usize],
    layer: usize,
    means: &[Vec<f64>],
) -> Result<SpdMatrix> {
    let cov = pooled_scatter(train, labels, layer, means)?;
    regularized_inverse(train.layer_dims()[layer], &cov)
}

/// Shared-covariance inverses for every layer, using the bank's means.
pub fn pooled_covariance_inverses(train: &FeatureSet, bank: &PrototypeBank) -> Result<Vec<SpdMatrix>> {
    let labels = class_labels(train)?;
    if train.layer_dims() != bank.layer_dims() {
        return Err(Error::arg("feature set layers do not match prototype bank"));
    }
    (0..bank.n_layers())
        .into_par_iter()
        .map(|l| pooled_inverse(train, &labels, l, bank.layer_means(l)))
        .collect()
}

//! Layer scores and functional trajectories.
//!
//! A sample is mapped to one scalar per probed layer: the softmax-weighted
//! scalar projection of its layer features onto the class prototypes of that
//! layer. Stacking the per-layer scores gives the sample's trajectory.

mod prototypes;
mod reference;
mod smoothing;

pub use prototypes::{fit_prototypes, pooled_covariance, pooled_covariance_inverses, PrototypeBank};
pub(crate) use prototypes::{class_labels, class_means};
pub use reference::{
    decide, fit_reference, fit_reference_with_trajectories, subsample_indices, threshold_at_tpr, Decision, ReferenceModel, ScoreNormalization,
    DEFAULT_SUBSAMPLE, DEGENERATE_SCALE,
};
pub use smoothing::smooth_trajectory;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, SpdMatrix};

/// Prototypes with a norm below this contribute nothing to a projection score.
pub const DEGENERATE_PROTOTYPE: f64 = 1e-12;

/// Softmax output over `C` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Wraps an existing probability vector, checking entries lie in `[0, 1]`
    /// and sum to one within 1e-9.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::arg("probabilities must lie in [0, 1]"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::arg(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self(probs))
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax<T: Copy + Into<f64>>(logits: &[T]) -> Result<ProbVector> {
    if logits.is_empty() {
        return Err(Error::EmptyInput("softmax of an empty logit vector"));
    }
    let mut out: Vec<f64> = logits.iter().map(|&v| v.into()).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("non-finite logit"));
    }
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in &mut out {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in &mut out {
        *v /= total;
    }
    Ok(ProbVector(out))
}

/// Probability-weighted scalar projection of `z` onto the class prototypes:
/// `Σ_y p_y ⟨z, μ_y⟩ / ‖μ_y‖`.
pub fn layer_score<T: Copy + Into<f64>>(z: &[T], prototypes: &[Vec<f64>], probs: &ProbVector) -> Result<f64> {
    check_classes(prototypes.len(), probs.len())?;
    let norms = prototypes
        .iter()
        .map(|mu| {
            check_dim(z.len(), mu.len())?;
            Ok(norm(mu))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(projection_score(z, prototypes, &norms, probs.as_slice()))
}

fn projection_score<T: Copy + Into<f64>>(z: &[T], prototypes: &[Vec<f64>], norms: &[f64], probs: &[f64]) -> f64 {
    prototypes
        .iter()
        .zip(norms)
        .zip(probs)
        .filter(|((_, &n), _)| n >= DEGENERATE_PROTOTYPE)
        .map(|((mu, &n), &p)| {
            let ip: f64 = z.iter().zip(mu).map(|(&a, b)| a.into() * b).sum();
            p * ip / n
        })
        .sum()
}

/// Negative distance to the nearest prototype under the metric `cov_inv`:
/// `-min_y sqrt((z - μ_y)ᵀ Σ⁻¹ (z - μ_y))`. Zero at a prototype, lower elsewhere.
pub fn layer_score_mahalanobis<T: Copy + Into<f64>>(
    z: &[T],
    prototypes: &[Vec<f64>],
    cov_inv: &SpdMatrix,
) -> Result<f64> {
    check_dim(cov_inv.dim(), z.len())?;
    let z: Vec<f64> = z.iter().map(|&v| v.into()).collect();
    let wz = cov_inv.whiten(&z);
    let whitened = prototypes
        .iter()
        .map(|mu| {
            check_dim(z.len(), mu.len())?;
            Ok(cov_inv.whiten(mu))
        })
        .collect::<Result<Vec<_>>>()?;
    min_distance(&wz, &whitened)
}

fn min_distance(wz: &[f64], whitened_means: &[Vec<f64>]) -> Result<f64> {
    let best = whitened_means
        .iter()
        .map(|wm| wz.iter().zip(wm).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(Error::EmptyInput("no prototypes"));
    }
    Ok(-best.sqrt())
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

fn check_classes(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::arg(format!(
            "{expected} prototypes but {actual} class probabilities"
        )));
    }
    Ok(())
}

/// Per-layer score function used to build trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerScoreKind {
    /// Probability-weighted scalar projection.
    Projection,
    /// Negative minimum Mahalanobis distance with a pooled per-layer covariance.
    Mahalanobis,
}

impl LayerScoreKind {
    pub fn tag(self) -> u32 {
        match self {
            LayerScoreKind::Projection => 0,
            LayerScoreKind::Mahalanobis => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(LayerScoreKind::Projection),
            1 => Some(LayerScoreKind::Mahalanobis),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerScoreKind::Projection => "projection",
            LayerScoreKind::Mahalanobis => "mahalanobis",
        }
    }
}

impl std::str::FromStr for LayerScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "projection" | "proj" => Ok(LayerScoreKind::Projection),
            "mahalanobis" | "m+proj" => Ok(LayerScoreKind::Mahalanobis),
            other => Err(Error::arg(format!("unknown layer score kind `{other}`"))),
        }
    }
}

/// Layer scoring configuration together with any fitted metric.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerScoring {
    Projection,
    Mahalanobis(Vec<SpdMatrix>),
}

impl LayerScoring {
    pub fn kind(&self) -> LayerScoreKind {
        match self {
            LayerScoring::Projection => LayerScoreKind::Projection,
            LayerScoring::Mahalanobis(_) => LayerScoreKind::Mahalanobis,
        }
    }
}

/// A sample's vector of per-layer scores, logits last.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory(Vec<f64>);

impl Trajectory {
    pub fn new(coords: Vec<f64>) -> Self {
        Self(coords)
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Trajectories of a set of samples, all of the same length.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectorySet {
    rows: Vec<Trajectory>,
}

impl TrajectorySet {
    pub fn new(rows: Vec<Trajectory>) -> Result<Self> {
        if let Some(first) = rows.first() {
            if let Some(bad) = rows.iter().find(|r| r.len() != first.len()) {
                return Err(Error::DimensionMismatch {
                    expected: first.len(),
                    actual: bad.len(),
                });
            }
        }
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Trajectory length, or 0 for an empty set.
    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Trajectory::len)
    }

    pub fn rows(&self) -> &[Trajectory] {
        &self.rows
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Trajectory> {
        self.rows.iter()
    }
}

/// Maps samples to trajectories with prototype norms (or whitened prototypes)
/// precomputed once.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryExtractor {
    bank: PrototypeBank,
    scoring: LayerScoring,
    cache: Vec<Vec<f64>>,
    whitened: Vec<Vec<Vec<f64>>>,
}

impl TrajectoryExtractor {
    pub fn new(bank: PrototypeBank, scoring: LayerScoring) -> Result<Self> {
        let n_layers = bank.n_layers();
        let mut whitened = Vec::new();
        if let LayerScoring::Mahalanobis(covs) = &scoring {
            check_dim(n_layers, covs.len())?;
            for (l, cov) in covs.iter().enumerate() {
                check_dim(bank.layer_dims()[l], cov.dim())?;
                whitened.push(bank.layer_means(l).iter().map(|mu| cov.whiten(mu)).collect());
            }
        }
        let cache = (0..n_layers)
            .map(|l| bank.layer_means(l).iter().map(|mu| norm(mu)).collect())
            .collect();
        Ok(Self {
            bank,
            scoring,
            cache,
            whitened,
        })
    }

    pub fn bank(&self) -> &PrototypeBank {
        &self.bank
    }

    pub fn scoring(&self) -> &LayerScoring {
        &self.scoring
    }

    pub fn n_layers(&self) -> usize {
        self.bank.n_layers()
    }

    pub fn trajectory(&self, sample: &[&[f32]]) -> Result<Trajectory> {
        check_dim(self.n_layers(), sample.len())?;
        for (z, &d) in sample.iter().zip(self.bank.layer_dims()) {
            check_dim(d, z.len())?;
        }
        let coords = match &self.scoring {
            LayerScoring::Projection => {
                let probs = softmax(sample[self.n_layers() - 1])?;
                sample
                    .iter()
                    .enumerate()
                    .map(|(l, z)| projection_score(z, self.bank.layer_means(l), &self.cache[l], probs.as_slice()))
                    .collect()
            }
            LayerScoring::Mahalanobis(covs) => sample
                .iter()
                .zip(covs)
                .zip(&self.whitened)
                .map(|((z, cov), means)| {
                    let z: Vec<f64> = z.iter().map(|&v| v as f64).collect();
                    min_distance(&cov.whiten(&z), means)
                })
                .collect::<Result<_>>()?,
        };
        Ok(Trajectory(coords))
    }
}

/// Trajectory of one sample (per-layer feature rows, logits last). The same
/// softmax of the sample's logits weights every layer.
pub fn make_trajectory(sample: &[&[f32]], bank: &PrototypeBank, scoring: &LayerScoring) -> Result<Trajectory> {
    TrajectoryExtractor::new(bank.clone(), scoring.clone())?.trajectory(sample)
}

pub(crate) fn scaled_dot(coords: &[f64], scale: &[f64], reference: &[f64]) -> f64 {
    coords
        .iter()
        .zip(scale)
        .zip(reference)
        .map(|((u, s), r)| u / s * r)
        .sum()
}

pub(crate) fn norm_sq(v: &[f64]) -> f64 {
    dot(v, v)
}

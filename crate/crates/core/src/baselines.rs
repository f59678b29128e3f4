//! Comparison scores computable from exported features alone.
//!
//! Every score is oriented so that higher means more in-distribution.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::linalg::{regularized_inverse, ScatterAccumulator, SpdMatrix};
use crate::trajectory::{class_labels, class_means, pooled_covariance, softmax, ReferenceModel, TrajectorySet};

pub const DEFAULT_KNN_K: usize = 10;
pub const DEFAULT_KNN_ALPHA: f64 = 0.01;
pub const DEFAULT_ENERGY_TEMPERATURE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    Msp,
    MaxLogit,
    Energy,
    MahalanobisPenultimate,
    Knn,
    TrajEuclidean,
    TrajMahalanobis,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 7] = [
        BaselineKind::Msp,
        BaselineKind::MaxLogit,
        BaselineKind::Energy,
        BaselineKind::MahalanobisPenultimate,
        BaselineKind::Knn,
        BaselineKind::TrajEuclidean,
        BaselineKind::TrajMahalanobis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Msp => "msp",
            BaselineKind::MaxLogit => "max_logit",
            BaselineKind::Energy => "energy",
            BaselineKind::MahalanobisPenultimate => "mahalanobis_penultimate",
            BaselineKind::Knn => "knn",
            BaselineKind::TrajEuclidean => "traj_euclidean",
            BaselineKind::TrajMahalanobis => "traj_mahalanobis",
        }
    }

    /// Whether fitting this baseline draws random numbers.
    pub fn is_randomized(self) -> bool {
        matches!(
            self,
            BaselineKind::Knn | BaselineKind::TrajEuclidean | BaselineKind::TrajMahalanobis
        )
    }

    /// How the original score was re-signed to the higher-is-in convention.
    pub fn orientation(self) -> &'static str {
        match self {
            BaselineKind::Msp | BaselineKind::MaxLogit => "higher = in-distribution (native)",
            BaselineKind::Energy => "higher = in-distribution (negative free energy)",
            BaselineKind::MahalanobisPenultimate
            | BaselineKind::Knn
            | BaselineKind::TrajEuclidean
            | BaselineKind::TrajMahalanobis => "higher = in-distribution (negated distance)",
        }
    }
}

impl std::fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::arg(format!("unknown baseline kind `{s}`")))
    }
}

/// Maximum softmax probability.
pub fn msp<T: Copy + Into<f64>>(logits: &[T]) -> Result<f64> {
    Ok(softmax(logits)?.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

pub fn max_logit<T: Copy + Into<f64>>(logits: &[T]) -> f64 {
    logits.iter().map(|&v| v.into()).fold(f64::NEG_INFINITY, f64::max)
}

/// Negative free energy `T log Σ exp(l / T)`.
pub fn energy<T: Copy + Into<f64>>(logits: &[T], temperature: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(Error::arg(format!("temperature {temperature} must be positive")));
    }
    if logits.is_empty() {
        return Err(Error::EmptyInput("energy of an empty logit vector"));
    }
    let scaled: Vec<f64> = logits.iter().map(|&v| v.into() / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = scaled.iter().map(|v| (v - max).exp()).sum();
    Ok(temperature * (max + sum.ln()))
}

/// Class means and shared covariance of the penultimate layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MahalanobisPenultimate {
    pub layer: usize,
    pub means: Vec<Vec<f64>>,
    pub cov_inv: SpdMatrix,
}

pub fn fit_mahalanobis_penultimate(train: &FeatureSet) -> Result<MahalanobisPenultimate> {
    let layer = train
        .penultimate()
        .ok_or_else(|| Error::arg("need a layer before the logits"))?;
    let labels = class_labels(train)?;
    let means = class_means(train, &labels, layer);
    let cov = pooled_covariance(train, layer, &means)?;
    let cov_inv = regularized_inverse(train.layer_dims()[layer], &cov)?;
    Ok(MahalanobisPenultimate { layer, means, cov_inv })
}

/// `-min_y` Mahalanobis distance from the penultimate features to the class means.
pub fn mahalanobis_penultimate_score<T: Copy + Into<f64>>(z: &[T], fitted: &MahalanobisPenultimate) -> Result<f64> {
    crate::trajectory::layer_score_mahalanobis(z, &fitted.means, &fitted.cov_inv)
}

/// Exhaustive k-nearest-neighbour index over unit-normalized penultimate features.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnIndex {
    dim: usize,
    rows: Vec<f64>,
    k: usize,
    alpha: f64,
    seed: u64,
}

fn normalized(v: impl Iterator<Item = f64> + Clone) -> Option<Vec<f64>> {
    let n = v.clone().map(|x| x * x).sum::<f64>().sqrt();
    (n > 0.0).then(|| v.map(|x| x / n).collect())
}

impl KnnIndex {
    /// Builds an index from a seeded `alpha` fraction of the rows of a
    /// row-major `dim`-wide buffer. Rows are scaled to unit norm; all-zero
    /// rows are skipped.
    pub fn new<T: Copy + Into<f64>>(dim: usize, data: &[T], k: usize, alpha: f64, seed: u64) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: data.len(),
            });
        }
        if k == 0 {
            return Err(Error::arg("k must be positive"));
        }
        let n = data.len() / dim;
        let picked = crate::trajectory::subsample_indices(n, alpha, seed)?;
        let mut rows = Vec::with_capacity(picked.len() * dim);
        for i in picked {
            if let Some(r) = normalized(data[i * dim..(i + 1) * dim].iter().map(|&v| v.into())) {
                rows.extend(r);
            }
        }
        let index = Self {
            dim,
            rows,
            k,
            alpha,
            seed,
        };
        if k > index.len() {
            return Err(Error::arg(format!("k = {k} exceeds index size {}", index.len())));
        }
        Ok(index)
    }

    /// Index over the penultimate layer of `train`.
    pub fn build(train: &FeatureSet, k: usize, alpha: f64, seed: u64) -> Result<Self> {
        let layer = train
            .penultimate()
            .ok_or_else(|| Error::arg("need a layer before the logits"))?;
        Self::new(train.layer_dims()[layer], train.layer(layer), k, alpha, seed)
    }

    /// Rebuilds an index from already-normalized rows (used when loading).
    pub fn from_parts(dim: usize, rows: Vec<f64>, k: usize, alpha: f64, seed: u64) -> Result<Self> {
        if dim == 0 || rows.len() % dim != 0 || k == 0 || k > rows.len() / dim {
            return Err(Error::InvalidModel("inconsistent knn index".into()));
        }
        for r in rows.chunks_exact(dim) {
            let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !((n - 1.0).abs() <= 1e-6) {
                return Err(Error::InvalidModel("knn row is not unit-norm".into()));
            }
        }
        Ok(Self {
            dim,
            rows,
            k,
            alpha,
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }
}

/// Negative Euclidean distance from the normalized query to its k-th nearest
/// stored row.
pub fn knn_score<T: Copy + Into<f64>>(z: &[T], index: &KnnIndex) -> Result<f64> {
    if z.len() != index.dim {
        return Err(Error::DimensionMismatch {
            expected: index.dim,
            actual: z.len(),
        });
    }
    if index.k > index.len() {
        return Err(Error::arg(format!("k = {} exceeds index size {}", index.k, index.len())));
    }
    let q = normalized(z.iter().map(|&v| v.into())).unwrap_or_else(|| vec![0.0; z.len()]);
    let mut dists: Vec<f64> = index
        .rows
        .chunks_exact(index.dim)
        .map(|r| r.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum())
        .collect();
    let (_, kth, _) = dists.select_nth_unstable_by(index.k - 1, f64::total_cmp);
    Ok(-kth.sqrt())
}

/// Mean and regularized inverse covariance of scaled training trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStats {
    pub mean: Vec<f64>,
    pub cov_inv: SpdMatrix,
}

/// Fits the multivariate aggregators on the model's scaled training
/// trajectories (raw trajectories divided by the model's training maxima).
pub fn fit_trajectory_stats(model: &ReferenceModel, raw: &TrajectorySet) -> Result<TrajectoryStats> {
    if raw.is_empty() {
        return Err(Error::EmptyInput("no training trajectories"));
    }
    let d = raw.dim();
    if d != model.n_layers() {
        return Err(Error::DimensionMismatch {
            expected: model.n_layers(),
            actual: d,
        });
    }
    let scaled: Vec<Vec<f64>> = raw.iter().map(|t| model.scaled(t)).collect();
    let mut mean = vec![0.0; d];
    for row in &scaled {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= scaled.len() as f64;
    }
    let mut acc = ScatterAccumulator::new(d);
    let mut centered = vec![0.0; d];
    for row in &scaled {
        for ((c, v), m) in centered.iter_mut().zip(row).zip(&mean) {
            *c = v - m;
        }
        acc.add_centered(&centered);
    }
    let cov_inv = regularized_inverse(d, &acc.covariance()?)?;
    Ok(TrajectoryStats { mean, cov_inv })
}

/// `-‖traj - mean‖` over scaled trajectory coordinates.
pub fn traj_euclidean_score(traj: &[f64], mean: &[f64]) -> Result<f64> {
    if traj.len() != mean.len() {
        return Err(Error::DimensionMismatch {
            expected: mean.len(),
            actual: traj.len(),
        });
    }
    Ok(-traj.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}

/// `-sqrt((traj - mean)ᵀ Σ⁻¹ (traj - mean))` over scaled trajectory coordinates.
pub fn traj_mahalanobis_score(traj: &[f64], mean: &[f64], cov_inv: &SpdMatrix) -> Result<f64> {
    if traj.len() != mean.len() || cov_inv.dim() != mean.len() {
        return Err(Error::DimensionMismatch {
            expected: mean.len(),
            actual: traj.len(),
        });
    }
    let diff: Vec<f64> = traj.iter().zip(mean).map(|(a, b)| a - b).collect();
    Ok(-cov_inv.quadratic_form(&diff).max(0.0).sqrt())
}

/// Fitted state for whichever baselines have been fit.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FittedBaselines {
    pub mahalanobis: Option<MahalanobisPenultimate>,
    pub knn: Option<KnnIndex>,
    pub trajectory: Option<TrajectoryStats>,
}

impl FittedBaselines {
    pub fn is_empty(&self) -> bool {
        self.mahalanobis.is_none() && self.knn.is_none() && self.trajectory.is_none()
    }

    /// Scores every sample of `fs` with `kind`. The trajectory aggregators
    /// also need the reference model that produced their statistics.
    pub fn score_set(&self, kind: BaselineKind, fs: &FeatureSet, model: Option<&ReferenceModel>) -> Result<Vec<f64>> {
        let missing = |what: &str| Error::arg(format!("baseline `{kind}` needs fitted {what}"));
        let n = fs.n_samples();
        match kind {
            BaselineKind::Msp => (0..n).into_par_iter().map(|i| msp(fs.logits(i))).collect(),
            BaselineKind::MaxLogit => Ok((0..n).into_par_iter().map(|i| max_logit(fs.logits(i))).collect()),
            BaselineKind::Energy => (0..n)
                .into_par_iter()
                .map(|i| energy(fs.logits(i), DEFAULT_ENERGY_TEMPERATURE))
                .collect(),
            BaselineKind::MahalanobisPenultimate => {
                let m = self.mahalanobis.as_ref().ok_or_else(|| missing("class means"))?;
                (0..n)
                    .into_par_iter()
                    .map(|i| mahalanobis_penultimate_score(fs.row(m.layer, i), m))
                    .collect()
            }
            BaselineKind::Knn => {
                let index = self.knn.as_ref().ok_or_else(|| missing("knn index"))?;
                let layer = fs.penultimate().ok_or_else(|| Error::arg("need a layer before the logits"))?;
                (0..n)
                    .into_par_iter()
                    .map(|i| knn_score(fs.row(layer, i), index))
                    .collect()
            }
            BaselineKind::TrajEuclidean | BaselineKind::TrajMahalanobis => {
                let stats = self.trajectory.as_ref().ok_or_else(|| missing("trajectory statistics"))?;
                let model = model.ok_or_else(|| missing("reference model"))?;
                let trajs = model.trajectories(fs)?;
                trajs
                    .rows()
                    .par_iter()
                    .map(|t| {
                        let scaled = model.scaled(t);
                        if kind == BaselineKind::TrajEuclidean {
                            traj_euclidean_score(&scaled, &stats.mean)
                        } else {
                            traj_mahalanobis_score(&scaled, &stats.mean, &stats.cov_inv)
                        }
                    })
                    .collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn msp_values() {
        assert_eq!(msp(&[0.0f64, 0.0]).unwrap(), 0.5);
        assert!((msp(&[3f64.ln(), 0.0, 0.0]).unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn max_logit_values() {
        assert_eq!(max_logit(&[1.0f64, 2.0, 3.0]), 3.0);
        assert_eq!(max_logit(&[-2.5f64; 4]), -2.5);
    }

    #[test]
    fn energy_values() {
        assert!((energy(&[0.0f64, 0.0], 1.0).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((energy(&[50.0f64, 0.0], 1.0).unwrap() - 50.0).abs() < 1e-9);
        assert!(energy(&[1.0f64], 0.0).is_err());
    }

    #[test]
    fn knn_orthonormal_pair() {
        let index = KnnIndex::new(2, &[1.0f64, 0.0, 0.0, 1.0], 2, 1.0, 0).unwrap();
        assert!((knn_score(&[1.0f64, 0.0], &index).unwrap() + 2f64.sqrt()).abs() < 1e-15);
        let index = KnnIndex::new(2, &[1.0f64, 0.0, 0.0, 1.0], 1, 1.0, 0).unwrap();
        assert_eq!(knn_score(&[5.0f64, 0.0], &index).unwrap(), 0.0);
    }

    #[test]
    fn knn_k_too_large() {
        assert!(KnnIndex::new(2, &[1.0f64, 0.0], 2, 1.0, 0).is_err());
    }

    #[test]
    fn traj_euclidean_values() {
        assert_eq!(traj_euclidean_score(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(traj_euclidean_score(&[1.0, 5.0], &[1.0, 2.0]).unwrap(), -3.0);
    }

    #[test]
    fn traj_mahalanobis_identity_reduces_to_euclidean() {
        let t = [0.3, -1.1, 2.0];
        let m = [1.0, 0.5, 0.25];
        assert_eq!(
            traj_mahalanobis_score(&t, &m, &SpdMatrix::identity(3)).unwrap(),
            traj_euclidean_score(&t, &m).unwrap()
        );
        assert_eq!(traj_mahalanobis_score(&m, &m, &SpdMatrix::identity(3)).unwrap(), 0.0);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in BaselineKind::ALL {
            assert_eq!(k.name().parse::<BaselineKind>().unwrap(), k);
        }
        assert!("odin".parse::<BaselineKind>().is_err());
    }
}

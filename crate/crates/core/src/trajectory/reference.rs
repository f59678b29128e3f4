use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::prototypes::{class_labels, pooled_inverse};
use super::{
    fit_prototypes, norm_sq, scaled_dot, LayerScoreKind, LayerScoring, PrototypeBank, Trajectory,
    TrajectoryExtractor, TrajectorySet,
};
use crate::error::{Error, Result};
use crate::features::FeatureSet;

/// Fraction of training samples whose trajectories form the reference set.
pub const DEFAULT_SUBSAMPLE: f64 = 0.01;
/// Training maxima with a magnitude below this cannot be used as a scale.
pub const DEGENERATE_SCALE: f64 = 1e-12;

/// Which inner product to report as the score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreNormalization {
    /// `⟨φ̄(x), ū⟩ / ‖ū‖²`: the coefficient of the projection onto `ū`.
    #[default]
    Reference,
    /// Plain `⟨φ̄(x), ū⟩`.
    InnerProduct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    InDistribution,
    OutOfDistribution,
}

/// `OutOfDistribution` iff `score <= gamma`.
pub fn decide(score: f64, gamma: f64) -> Decision {
    if score <= gamma {
        Decision::OutOfDistribution
    } else {
        Decision::InDistribution
    }
}

/// Largest order statistic `γ` of `in_scores` such that the fraction of
/// scores strictly above `γ` is at least `tpr`. Returns `-inf` when no sample
/// value qualifies (e.g. all scores tied), which keeps every sample.
pub fn threshold_at_tpr(in_scores: &[f64], tpr: f64) -> Result<f64> {
    if in_scores.is_empty() {
        return Err(Error::EmptyInput("threshold needs at least one in-distribution score"));
    }
    if !(tpr > 0.0 && tpr < 1.0) {
        return Err(Error::arg(format!("tpr {tpr} must lie in (0, 1)")));
    }
    if in_scores.iter().any(|s| s.is_nan()) {
        return Err(Error::arg("NaN score"));
    }
    let mut sorted = in_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut gamma = f64::NEG_INFINITY;
    let mut i = 0;
    while i < n {
        let v = sorted[i];
        let mut j = i;
        while j < n && sorted[j] == v {
            j += 1;
        }
        // j = number of scores <= v
        if (n - j) as f64 / n as f64 >= tpr {
            gamma = v;
        } else {
            break;
        }
        i = j;
    }
    Ok(gamma)
}

/// Sorted indices of a seeded uniform subsample of `ceil(n * fraction)`
/// samples (at least one). A fraction of one returns every index regardless
/// of the seed.
pub fn subsample_indices(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::arg(format!("subsample fraction {fraction} must lie in (0, 1]")));
    }
    if n == 0 {
        return Err(Error::EmptyInput("cannot subsample an empty set"));
    }
    let count = ((n as f64 * fraction - 1e-9).ceil() as usize).clamp(1, n);
    if count == n {
        return Ok((0..n).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, count).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Fitted detector: prototypes, per-coordinate training maxima, and the
/// scaled mean training trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceModel {
    extractor: TrajectoryExtractor,
    scale: Vec<f64>,
    reference: Vec<f64>,
    reference_norm_sq: f64,
    gamma: Option<f64>,
}

impl ReferenceModel {
    pub fn from_parts(
        bank: PrototypeBank,
        scoring: LayerScoring,
        scale: Vec<f64>,
        reference: Vec<f64>,
        gamma: Option<f64>,
    ) -> Result<Self> {
        let n = bank.n_layers();
        if scale.len() != n || reference.len() != n {
            return Err(Error::InvalidModel(format!(
                "scale ({}) and reference ({}) must have one entry per layer ({n})",
                scale.len(),
                reference.len()
            )));
        }
        if let Some(l) = scale.iter().position(|s| !s.is_finite() || s.abs() < DEGENERATE_SCALE) {
            return Err(Error::DegenerateScale {
                layer: format!("#{l}"),
                value: scale[l],
            });
        }
        if reference.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite reference trajectory".into()));
        }
        let reference_norm_sq = norm_sq(&reference);
        if !(reference_norm_sq > 0.0) || !reference_norm_sq.is_finite() {
            return Err(Error::DegenerateReference);
        }
        if gamma.is_some_and(f64::is_nan) {
            return Err(Error::InvalidModel("threshold is NaN".into()));
        }
        Ok(Self {
            extractor: TrajectoryExtractor::new(bank, scoring)?,
            scale,
            reference,
            reference_norm_sq,
            gamma,
        })
    }

    pub fn bank(&self) -> &PrototypeBank {
        self.extractor.bank()
    }

    pub fn scoring(&self) -> &LayerScoring {
        self.extractor.scoring()
    }

    pub fn kind(&self) -> LayerScoreKind {
        self.scoring().kind()
    }

    pub fn n_layers(&self) -> usize {
        self.extractor.n_layers()
    }

    /// Per-coordinate training maxima.
    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    /// Reference trajectory `ū`.
    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    pub fn gamma(&self) -> Option<f64> {
        self.gamma
    }

    pub fn with_gamma(mut self, gamma: Option<f64>) -> Self {
        self.gamma = gamma;
        self
    }

    /// +1 when larger layer scores mean more typical (projection), -1 when
    /// scaling by the negative training maxima of distance scores turns
    /// larger scaled values into less typical ones.
    pub fn orientation(&self) -> f64 {
        match self.kind() {
            LayerScoreKind::Projection => 1.0,
            LayerScoreKind::Mahalanobis => -1.0,
        }
    }

    pub fn trajectory(&self, sample: &[&[f32]]) -> Result<Trajectory> {
        self.extractor.trajectory(sample)
    }

    /// Trajectory divided coordinate-wise by the training maxima.
    pub fn scaled(&self, traj: &Trajectory) -> Vec<f64> {
        traj.coords().iter().zip(&self.scale).map(|(u, s)| u / s).collect()
    }

    pub fn score_trajectory(&self, traj: &Trajectory, normalization: ScoreNormalization) -> f64 {
        let ip = self.orientation() * scaled_dot(traj.coords(), &self.scale, &self.reference);
        match normalization {
            ScoreNormalization::Reference => ip / self.reference_norm_sq,
            ScoreNormalization::InnerProduct => ip,
        }
    }

    /// Score of one sample; higher means more in-distribution.
    pub fn score(&self, sample: &[&[f32]]) -> Result<f64> {
        self.score_with(sample, ScoreNormalization::Reference)
    }

    pub fn score_with(&self, sample: &[&[f32]], normalization: ScoreNormalization) -> Result<f64> {
        Ok(self.score_trajectory(&self.trajectory(sample)?, normalization))
    }

    fn check_layout(&self, fs: &FeatureSet) -> Result<()> {
        if fs.layer_dims() != self.bank().layer_dims() || fs.n_classes() != self.bank().n_classes() {
            return Err(Error::InvalidFeatureSet(format!(
                "feature layout {:?} (C={}) does not match model {:?} (C={})",
                fs.layer_dims(),
                fs.n_classes(),
                self.bank().layer_dims(),
                self.bank().n_classes()
            )));
        }
        Ok(())
    }

    /// Trajectories of every sample, in sample order.
    pub fn trajectories(&self, fs: &FeatureSet) -> Result<TrajectorySet> {
        self.check_layout(fs)?;
        let rows = (0..fs.n_samples())
            .into_par_iter()
            .map(|i| self.trajectory(&fs.sample(i)))
            .collect::<Result<Vec<_>>>()?;
        TrajectorySet::new(rows)
    }

    /// Scores of every sample, in sample order.
    pub fn score_set(&self, fs: &FeatureSet, normalization: ScoreNormalization) -> Result<Vec<f64>> {
        self.check_layout(fs)?;
        (0..fs.n_samples())
            .into_par_iter()
            .map(|i| self.score_with(&fs.sample(i), normalization))
            .collect()
    }

    /// Decision under the stored threshold, if any.
    pub fn decide(&self, score: f64) -> Option<Decision> {
        self.gamma.map(|g| decide(score, g))
    }
}

/// Fits a detector on a labeled training set.
///
/// Prototypes (and, for the Mahalanobis kind, pooled covariances) use every
/// training sample; the trajectories that define the scale and reference use
/// a seeded subsample of `subsample_fraction`.
pub fn fit_reference(
    train: &FeatureSet,
    kind: LayerScoreKind,
    subsample_fraction: f64,
    seed: u64,
) -> Result<ReferenceModel> {
    fit_reference_with_trajectories(train, kind, subsample_fraction, seed).map(|(m, _)| m)
}

/// Like [`fit_reference`], also returning the raw training trajectories of
/// the subsample.
pub fn fit_reference_with_trajectories(
    train: &FeatureSet,
    kind: LayerScoreKind,
    subsample_fraction: f64,
    seed: u64,
) -> Result<(ReferenceModel, TrajectorySet)> {
    let indices = subsample_indices(train.n_samples(), subsample_fraction, seed)?;
    let bank = fit_prototypes(train)?;
    let scoring = match kind {
        LayerScoreKind::Projection => LayerScoring::Projection,
        LayerScoreKind::Mahalanobis => {
            let labels = class_labels(train)?;
            let covs = (0..bank.n_layers())
                .into_par_iter()
                .map(|l| pooled_inverse(train, &labels, l, bank.layer_means(l)))
                .collect::<Result<Vec<_>>>()?;
            LayerScoring::Mahalanobis(covs)
        }
    };
    let extractor = TrajectoryExtractor::new(bank, scoring)?;
    let rows = indices
        .par_iter()
        .map(|&i| extractor.trajectory(&train.sample(i)))
        .collect::<Result<Vec<_>>>()?;

    let n_layers = train.n_layers();
    let mut scale = vec![f64::NEG_INFINITY; n_layers];
    for row in &rows {
        for (m, &u) in scale.iter_mut().zip(row.coords()) {
            *m = m.max(u);
        }
    }
    if let Some(l) = scale.iter().position(|s| s.abs() < DEGENERATE_SCALE) {
        return Err(Error::DegenerateScale {
            layer: train.layer_names()[l].clone(),
            value: scale[l],
        });
    }

    let mut reference = vec![0.0; n_layers];
    for row in &rows {
        for ((acc, &u), s) in reference.iter_mut().zip(row.coords()).zip(&scale) {
            *acc += u / s;
        }
    }
    for v in &mut reference {
        *v /= rows.len() as f64;
    }

    let TrajectoryExtractor { bank, scoring, .. } = extractor;
    let model = ReferenceModel::from_parts(bank, scoring, scale, reference, None)?;
    Ok((model, TrajectorySet::new(rows)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decide_boundary_is_ood() {
        assert_eq!(decide(0.3, 0.5), Decision::OutOfDistribution);
        assert_eq!(decide(0.5, 0.5), Decision::OutOfDistribution);
        assert_eq!(decide(0.7, 0.5), Decision::InDistribution);
    }

    #[test]
    fn threshold_hundred_scores() {
        let scores: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(threshold_at_tpr(&scores, 0.95).unwrap(), 5.0);
    }

    /// Scans every candidate order statistic directly.
    fn threshold_oracle(scores: &[f64], tpr: f64) -> f64 {
        let n = scores.len() as f64;
        scores
            .iter()
            .copied()
            .filter(|&g| scores.iter().filter(|&&s| s > g).count() as f64 / n >= tpr)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn threshold_matches_exhaustive_scan() {
        let scores: Vec<f64> = (0..257).map(|i| ((i * 37) % 41) as f64 * 0.5).collect();
        for &tpr in &[0.5, 0.8, 0.9, 0.95, 0.99] {
            assert_eq!(threshold_at_tpr(&scores, tpr).unwrap(), threshold_oracle(&scores, tpr));
        }
    }

    #[test]
    fn threshold_all_tied() {
        assert_eq!(threshold_at_tpr(&[2.0; 10], 0.5).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn threshold_single() {
        assert_eq!(threshold_at_tpr(&[7.0], 0.95).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn threshold_empty() {
        assert!(threshold_at_tpr(&[], 0.95).is_err());
    }

    #[test]
    fn subsample_full_ignores_seed() {
        assert_eq!(subsample_indices(10, 1.0, 1).unwrap(), subsample_indices(10, 1.0, 99).unwrap());
    }

    #[test]
    fn subsample_one_percent() {
        let idx = subsample_indices(10_000, 0.01, 3).unwrap();
        assert_eq!(idx.len(), 100);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(subsample_indices(50, 0.01, 3).unwrap().len(), 1);
    }

    #[test]
    fn subsample_rejects_bad_fraction() {
        assert!(subsample_indices(10, 0.0, 1).is_err());
        assert!(subsample_indices(10, 1.5, 1).is_err());
    }
}

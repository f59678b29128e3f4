//! Centrality diagnostics for class prototypes and trajectory structure.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::linalg::dot;
use crate::trajectory::TrajectorySet;

pub const DEFAULT_DIRECTIONS: usize = 1000;

/// Seeded set of unit directions, drawn from an isotropic Gaussian.
///
/// Depth comparisons between points must share one set, otherwise the
/// comparison is dominated by direction-sampling noise.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSet {
    dim: usize,
    directions: Vec<Vec<f64>>,
    seed: u64,
}

impl DirectionSet {
    pub fn sample(dim: usize, count: usize, seed: u64) -> Result<Self> {
        if dim == 0 || count == 0 {
            return Err(Error::arg("need a positive dimension and direction count"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut directions = Vec::with_capacity(count);
        while directions.len() < count {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = dot(&v, &v).sqrt();
            if n > 0.0 {
                directions.push(v.into_iter().map(|x| x / n).collect());
            }
        }
        Ok(Self { dim, directions, seed })
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Projections of every data row onto every direction, `[direction][row]`.
    fn project(&self, data: &[Vec<f64>]) -> Vec<Vec<f64>> {
        self.directions
            .par_iter()
            .map(|u| data.iter().map(|x| dot(x, u)).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DepthEstimate {
    pub value: f64,
    pub n_directions: usize,
    pub seed: u64,
}

/// Random-direction approximation of Tukey depth against a fixed data set,
/// with the data projections cached so many points can be evaluated cheaply.
#[derive(Debug, Clone)]
pub struct DepthEvaluator {
    directions: DirectionSet,
    projections: Vec<Vec<f64>>,
    n: usize,
}

impl DepthEvaluator {
    pub fn new(data: &[Vec<f64>], directions: DirectionSet) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyInput("depth needs at least one data point"));
        }
        if let Some(bad) = data.iter().find(|x| x.len() != directions.dim()) {
            return Err(Error::DimensionMismatch {
                expected: directions.dim(),
                actual: bad.len(),
            });
        }
        let projections = directions.project(data);
        Ok(Self {
            directions,
            projections,
            n: data.len(),
        })
    }

    /// `min_u (1/n) min(#{⟨x_i,u⟩ <= ⟨x,u⟩}, #{⟨x_i,u⟩ >= ⟨x,u⟩})`.
    pub fn depth(&self, x: &[f64]) -> Result<DepthEstimate> {
        if x.len() != self.directions.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.directions.dim(),
                actual: x.len(),
            });
        }
        let min_count = self
            .directions
            .directions
            .iter()
            .zip(&self.projections)
            .map(|(u, proj)| {
                let t = dot(x, u);
                let below = proj.iter().filter(|&&p| p <= t).count();
                let above = proj.iter().filter(|&&p| p >= t).count();
                below.min(above)
            })
            .min()
            .unwrap();
        Ok(DepthEstimate {
            value: min_count as f64 / self.n as f64,
            n_directions: self.directions.len(),
            seed: self.directions.seed(),
        })
    }
}

/// Approximate halfspace depth of `x` in `data`. An upper bound on the exact
/// Tukey depth that is exact in one dimension.
pub fn approx_halfspace_depth(x: &[f64], data: &[Vec<f64>], n_directions: usize, seed: u64) -> Result<DepthEstimate> {
    if data.is_empty() {
        return Err(Error::EmptyInput("depth needs at least one data point"));
    }
    let dirs = DirectionSet::sample(x.len(), n_directions, seed)?;
    DepthEvaluator::new(data, dirs)?.depth(x)
}

fn median_of_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Rows of one layer belonging to `class`, as f64.
pub fn class_rows(fs: &FeatureSet, layer: usize, class: u32) -> Vec<Vec<f64>> {
    (0..fs.n_samples())
        .filter(|&i| fs.labels()[i] == Some(class))
        .map(|i| fs.row(layer, i).iter().map(|&v| v as f64).collect())
        .collect()
}

/// Per-coordinate `|mean - median|` of one class at one layer. The median of
/// an even count is the midpoint of the two central values.
pub fn mean_median_gap(fs: &FeatureSet, layer: usize, class: u32) -> Result<Vec<f64>> {
    if layer >= fs.n_layers() {
        return Err(Error::arg(format!("layer {layer} out of range")));
    }
    let rows = class_rows(fs, layer, class);
    if rows.is_empty() {
        return Err(Error::EmptyClass(class as usize));
    }
    let d = fs.layer_dims()[layer];
    let mut column = vec![0.0; rows.len()];
    Ok((0..d)
        .map(|j| {
            for (c, r) in column.iter_mut().zip(&rows) {
                *c = r[j];
            }
            let mean = column.iter().sum::<f64>() / column.len() as f64;
            column.sort_by(f64::total_cmp);
            (mean - median_of_sorted(&column)).abs()
        })
        .collect())
}

/// Symmetric correlation matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationMatrix {
    pub dim: usize,
    pub values: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.dim + j]
    }
}

/// Pearson correlation between trajectory coordinates.
pub fn layer_score_correlation(trajs: &TrajectorySet) -> Result<CorrelationMatrix> {
    if trajs.len() < 2 {
        return Err(Error::EmptyInput("correlation needs at least two trajectories"));
    }
    let d = trajs.dim();
    let n = trajs.len() as f64;
    let mut mean = vec![0.0; d];
    for t in trajs.iter() {
        for (m, v) in mean.iter_mut().zip(t.coords()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut cov = vec![0.0; d * d];
    for t in trajs.iter() {
        let c: Vec<f64> = t.coords().iter().zip(&mean).map(|(v, m)| v - m).collect();
        for i in 0..d {
            for j in i..d {
                cov[i * d + j] += c[i] * c[j];
            }
        }
    }
    if let Some(j) = (0..d).find(|&j| !(cov[j * d + j] > 0.0)) {
        return Err(Error::ZeroVariance(j));
    }
    let mut values = vec![0.0; d * d];
    for i in 0..d {
        values[i * d + i] = 1.0;
        for j in (i + 1)..d {
            let r = (cov[i * d + j] / (cov[i * d + i].sqrt() * cov[j * d + j].sqrt())).clamp(-1.0, 1.0);
            values[i * d + j] = r;
            values[j * d + i] = r;
        }
    }
    Ok(CorrelationMatrix { dim: d, values })
}

/// Fixed-width histogram over `[0, max]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

pub fn histogram(values: &[f64], bins: usize) -> Histogram {
    let bins = bins.max(1);
    let max = values.iter().copied().fold(0.0f64, f64::max);
    let width = if max > 0.0 { max / bins as f64 } else { 1.0 };
    let mut counts = vec![0u64; bins];
    for &v in values {
        let b = ((v / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Histogram {
        edges: (0..=bins).map(|i| i as f64 * width).collect(),
        counts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::Trajectory;

    #[test]
    fn one_dimensional_depth_exact() {
        let data = vec![vec![-1.0], vec![1.0]];
        assert_eq!(approx_halfspace_depth(&[0.0], &data, 10, 1).unwrap().value, 0.5);
        assert_eq!(approx_halfspace_depth(&[2.0], &data, 10, 1).unwrap().value, 0.0);
    }

    #[test]
    fn empty_data_rejected() {
        assert!(approx_halfspace_depth(&[0.0], &[], 10, 1).is_err());
    }

    #[test]
    fn directions_are_unit() {
        let d = DirectionSet::sample(5, 20, 9).unwrap();
        assert!(d.directions.iter().all(|u| (dot(u, u) - 1.0).abs() < 1e-12));
    }

    fn one_coord_set(values: &[f32]) -> FeatureSet {
        let n = values.len();
        FeatureSet::new(
            vec!["h".into(), "logits".into()],
            vec![1, 1],
            1,
            vec![Some(0); n],
            vec![values.to_vec(), vec![0.0; n]],
        )
        .unwrap()
    }

    #[test]
    fn gap_symmetric() {
        assert_eq!(mean_median_gap(&one_coord_set(&[1.0, 2.0, 3.0]), 0, 0).unwrap(), vec![0.0]);
    }

    #[test]
    fn gap_skewed() {
        assert_eq!(mean_median_gap(&one_coord_set(&[0.0, 0.0, 0.0, 10.0]), 0, 0).unwrap(), vec![2.5]);
    }

    #[test]
    fn gap_empty_class() {
        assert!(matches!(
            mean_median_gap(&one_coord_set(&[1.0]), 0, 3),
            Err(Error::EmptyClass(3))
        ));
    }

    #[test]
    fn correlation_affine_dependence() {
        let rows = (0..20)
            .map(|i| {
                let a = ((i * 7) % 11) as f64;
                Trajectory::new(vec![a, 2.0 * a + 1.0, (i % 3) as f64])
            })
            .collect();
        let c = layer_score_correlation(&TrajectorySet::new(rows).unwrap()).unwrap();
        assert_eq!(c.get(0, 0), 1.0);
        assert!((c.get(0, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn correlation_zero_variance() {
        let rows = (0..5).map(|i| Trajectory::new(vec![i as f64, 3.0])).collect();
        assert!(matches!(
            layer_score_correlation(&TrajectorySet::new(rows).unwrap()),
            Err(Error::ZeroVariance(1))
        ));
    }

    #[test]
    fn histogram_counts() {
        let h = histogram(&[0.0, 0.5, 1.0, 1.0], 2);
        assert_eq!(h.counts, vec![1, 3]);
        assert_eq!(h.edges, vec![0.0, 0.5, 1.0]);
    }
}

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use trajod_core::FeatureSet;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn random_probs(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..c).map(|_| rng.random_range(0.01..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Small labeled feature set with Gaussian features, every class populated.
pub fn random_feature_set(seed: u64, n: usize, dims: &[usize], n_classes: usize) -> FeatureSet {
    let mut r = rng(seed);
    let mut all_dims = dims.to_vec();
    all_dims.push(n_classes);
    let names = (0..all_dims.len()).map(|l| format!("l{l}")).collect();
    let labels = (0..n).map(|i| Some((i % n_classes) as u32)).collect();
    let layers = all_dims
        .iter()
        .map(|&d| (0..n * d).map(|_| { let v: f64 = StandardNormal.sample(&mut r); (v + 2.0) as f32 }).collect())
        .collect();
    FeatureSet::new(names, all_dims, n_classes, labels, layers).unwrap()
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = ((row + 1)..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Inverse of a square matrix by solving against each unit vector.
pub fn invert(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            solve(a.to_vec(), e)
        })
        .collect();
    (0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect()
}

/// Random SPD matrix `B Bᵀ + d I`.
pub fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> Vec<Vec<f64>> {
    let b: Vec<Vec<f64>> = (0..d).map(|_| gaussian(rng, d)).collect();
    (0..d)
        .map(|i| {
            (0..d)
                .map(|j| {
                    let s: f64 = (0..d).map(|k| b[i][k] * b[j][k]).sum();
                    s + if i == j { d as f64 } else { 0.0 }
                })
                .collect()
        })
        .collect()
}

pub fn symmetrized_flat(m: &[Vec<f64>]) -> Vec<f64> {
    let d = m.len();
    (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .map(|(i, j)| 0.5 * (m[i][j] + m[j][i]))
        .collect()
}

/// Exact 2-D Tukey depth: the halfspace count only changes where the
/// boundary passes through a data point, so it suffices to test one
/// direction inside each arc between consecutive critical angles.
pub fn exact_depth_2d(x: [f64; 2], data: &[[f64; 2]]) -> f64 {
    use std::f64::consts::PI;
    let mut angles: Vec<f64> = Vec::new();
    for p in data {
        let (dx, dy) = (p[0] - x[0], p[1] - x[1]);
        if dx == 0.0 && dy == 0.0 {
            continue;
        }
        let a = dy.atan2(dx);
        for t in [a + PI / 2.0, a - PI / 2.0] {
            angles.push(t.rem_euclid(2.0 * PI));
        }
    }
    if angles.is_empty() {
        // every point coincides with x
        return 1.0;
    }
    angles.sort_by(f64::total_cmp);
    let mut best = usize::MAX;
    for i in 0..angles.len() {
        let next = if i + 1 < angles.len() { angles[i + 1] } else { angles[0] + 2.0 * PI };
        let mid = 0.5 * (angles[i] + next);
        let u = [mid.cos(), mid.sin()];
        let t = x[0] * u[0] + x[1] * u[1];
        let proj: Vec<f64> = data.iter().map(|p| p[0] * u[0] + p[1] * u[1]).collect();
        let below = proj.iter().filter(|&&p| p <= t).count();
        let above = proj.iter().filter(|&&p| p >= t).count();
        best = best.min(below.min(above));
    }
    best as f64 / data.len() as f64
}

//! Independent reference implementations checked against the library.

mod common;

use common::*;
use rand::Rng;
use trajod_core::baselines::{
    energy, fit_mahalanobis_penultimate, knn_score, mahalanobis_penultimate_score, msp, traj_euclidean_score,
    traj_mahalanobis_score, KnnIndex,
};
use trajod_core::diagnostics::{approx_halfspace_depth, layer_score_correlation, mean_median_gap};
use trajod_core::features::global_max_pool;
use trajod_core::trajectory::{
    fit_prototypes, fit_reference, layer_score, layer_score_mahalanobis, make_trajectory, smooth_trajectory,
    softmax, LayerScoreKind, LayerScoring, ProbVector, ScoreNormalization, Trajectory, TrajectorySet,
};
use trajod_core::{auroc, FeatureSet, SpdMatrix};

#[test]
fn max_pool_matches_triple_loop() {
    let mut r = rng(11);
    let (c, h, w) = (3, 4, 4);
    let map: Vec<f32> = gaussian(&mut r, c * h * w).into_iter().map(|v| v as f32).collect();
    let mut expected = vec![f32::NEG_INFINITY; c];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let v = map[ch * h * w + y * w + x];
                if v > expected[ch] {
                    expected[ch] = v;
                }
            }
        }
    }
    assert_eq!(global_max_pool(&map, c, h, w).unwrap(), expected);
}

#[test]
fn prototypes_match_two_pass_oracle() {
    let fs = random_feature_set(3, 97, &[5, 9], 4);
    let bank = fit_prototypes(&fs).unwrap();
    for l in 0..fs.n_layers() {
        let d = fs.layer_dims()[l];
        for y in 0..4u32 {
            let members: Vec<usize> = (0..fs.n_samples()).filter(|&i| fs.labels()[i] == Some(y)).collect();
            for j in 0..d {
                let mut s = 0.0f64;
                for &i in &members {
                    s += fs.row(l, i)[j] as f64;
                }
                let expected = s / members.len() as f64;
                let got = bank.mean(l, y as usize)[j];
                assert!((got - expected).abs() <= 1e-12 * expected.abs().max(1.0));
            }
        }
    }
}

#[test]
fn layer_score_matches_class_loop() {
    let mut r = rng(5);
    for &d in &[2usize, 8, 64] {
        for _ in 0..50 {
            let c = r.random_range(1..12);
            let z = gaussian(&mut r, d);
            let protos: Vec<Vec<f64>> = (0..c).map(|_| gaussian(&mut r, d)).collect();
            let probs = random_probs(&mut r, c);
            let mut expected = 0.0;
            let mut magnitude = 0.0;
            for y in 0..c {
                let mut ip = 0.0;
                let mut nn = 0.0;
                for k in 0..d {
                    ip += z[k] * protos[y][k];
                    nn += protos[y][k] * protos[y][k];
                }
                expected += probs[y] * ip / nn.sqrt();
                magnitude += (probs[y] * ip / nn.sqrt()).abs();
            }
            let got = layer_score(&z, &protos, &ProbVector::new(probs).unwrap()).unwrap();
            assert!((got - expected).abs() <= 1e-12 * magnitude.max(1e-300));
        }
    }
}

#[test]
fn mahalanobis_layer_score_matches_explicit_solve() {
    let mut r = rng(21);
    for &d in &[2usize, 5, 12] {
        let cov = random_spd(&mut r, d);
        let cov_inv = SpdMatrix::new(d, symmetrized_flat(&invert(&cov))).unwrap();
        let protos: Vec<Vec<f64>> = (0..4).map(|_| gaussian(&mut r, d)).collect();
        let z = gaussian(&mut r, d);
        let expected = -protos
            .iter()
            .map(|mu| {
                let v: Vec<f64> = z.iter().zip(mu).map(|(a, b)| a - b).collect();
                let x = solve(cov.clone(), v.clone());
                v.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>().sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        let got = layer_score_mahalanobis(&z, &protos, &cov_inv).unwrap();
        assert!((got - expected).abs() < 1e-8, "{got} vs {expected}");
    }
}

#[test]
fn trajectory_is_layerwise_layer_score() {
    let fs = random_feature_set(8, 60, &[4, 7, 3], 3);
    let bank = fit_prototypes(&fs).unwrap();
    for i in [0, 17, 59] {
        let sample = fs.sample(i);
        let t = make_trajectory(&sample, &bank, &LayerScoring::Projection).unwrap();
        assert_eq!(t.len(), fs.n_layers());
        let probs = softmax(fs.logits(i)).unwrap();
        for (l, z) in sample.iter().enumerate() {
            let expected = layer_score(z, bank.layer_means(l), &probs).unwrap();
            assert_eq!(t.coords()[l], expected);
        }
    }
}

#[test]
fn identical_training_samples_give_unit_reference() {
    let row_h = [1.5f32, 2.0, 0.5];
    let row_l = [3.0f32, 0.0];
    let n = 12;
    let labels = vec![Some(0); n / 2].into_iter().chain(vec![Some(1); n / 2]).collect();
    // both classes share the same features so all trajectories coincide
    let fs = FeatureSet::new(
        vec!["h".into(), "logits".into()],
        vec![3, 2],
        2,
        labels,
        vec![row_h.repeat(n), row_l.repeat(n)],
    )
    .unwrap();
    let model = fit_reference(&fs, LayerScoreKind::Projection, 1.0, 0).unwrap();
    let u = model.trajectory(&fs.sample(0)).unwrap();
    assert_eq!(model.scale(), u.coords());
    assert!(model.reference().iter().all(|&v| (v - 1.0).abs() < 1e-15));
}

#[test]
fn full_subsample_scale_is_sorted_maximum() {
    let fs = random_feature_set(13, 10, &[6, 4], 2);
    let model = fit_reference(&fs, LayerScoreKind::Projection, 1.0, 99).unwrap();
    let bank = fit_prototypes(&fs).unwrap();
    let trajs: Vec<Vec<f64>> = (0..10)
        .map(|i| make_trajectory(&fs.sample(i), &bank, &LayerScoring::Projection).unwrap().into_inner())
        .collect();
    for j in 0..fs.n_layers() {
        let mut col: Vec<f64> = trajs.iter().map(|t| t[j]).collect();
        col.sort_by(f64::total_cmp);
        assert_eq!(model.scale()[j], *col.last().unwrap());
    }
}

#[test]
fn score_matches_explicit_dot_product() {
    let train = random_feature_set(31, 300, &[6, 10], 3);
    let test = random_feature_set(32, 40, &[6, 10], 3);
    let model = fit_reference(&train, LayerScoreKind::Projection, 0.2, 4).unwrap();
    let scores = model.score_set(&test, ScoreNormalization::Reference).unwrap();
    let ubar = model.reference();
    let norm_sq: f64 = ubar.iter().map(|v| v * v).sum();
    for (i, s) in scores.iter().enumerate() {
        let u = model.trajectory(&test.sample(i)).unwrap();
        let mut acc = 0.0;
        for j in 0..u.len() {
            acc += u.coords()[j] / model.scale()[j] * ubar[j];
        }
        let expected = acc / norm_sq;
        assert!((s - expected).abs() <= 1e-12 * expected.abs().max(1.0));
    }
}

#[test]
fn reference_score_of_reference_is_one() {
    let train = random_feature_set(2, 200, &[5], 2);
    let model = fit_reference(&train, LayerScoreKind::Projection, 0.5, 1).unwrap();
    // a trajectory whose scaled version equals the reference
    let raw: Vec<f64> = model.reference().iter().zip(model.scale()).map(|(r, s)| r * s).collect();
    let s = model.score_trajectory(&Trajectory::new(raw), ScoreNormalization::Reference);
    assert!((s - 1.0).abs() < 1e-12);
    // orthogonal to the reference in scaled coordinates
    let r = model.reference();
    let orth = [r[1] * model.scale()[0], -r[0] * model.scale()[1]];
    let s = model.score_trajectory(&Trajectory::new(orth.to_vec()), ScoreNormalization::Reference);
    assert!(s.abs() < 1e-12);
}

/// Evaluates the least-squares polynomial at the window centre by solving the
/// normal equations directly.
fn normal_equations_fit(y: &[f64], degree: usize) -> f64 {
    let h = (y.len() / 2) as f64;
    let x: Vec<f64> = (0..y.len()).map(|i| i as f64 - h).collect();
    let p = degree + 1;
    let ata: Vec<Vec<f64>> = (0..p)
        .map(|a| (0..p).map(|b| x.iter().map(|v| v.powi((a + b) as i32)).sum()).collect())
        .collect();
    let aty: Vec<f64> = (0..p)
        .map(|a| x.iter().zip(y).map(|(v, t)| v.powi(a as i32) * t).sum())
        .collect();
    solve(ata, aty)[0]
}

#[test]
fn smoothing_matches_normal_equations() {
    let mut r = rng(44);
    let y: Vec<f64> = (0..11)
        .map(|i| (i as f64 * 0.4).sin() + 0.1 * gaussian(&mut r, 1)[0])
        .collect();
    let smoothed = smooth_trajectory(&Trajectory::new(y.clone()), 5, 2).unwrap();
    for i in 0..y.len() {
        let h = 2usize.min(i).min(y.len() - 1 - i);
        let deg = 2usize.min(2 * h);
        let expected = if h == 0 { y[i] } else { normal_equations_fit(&y[i - h..=i + h], deg) };
        assert!((smoothed.coords()[i] - expected).abs() < 1e-8, "position {i}");
    }
}

#[test]
fn msp_is_max_of_softmax() {
    let mut r = rng(6);
    for _ in 0..20 {
        let logits = gaussian(&mut r, 7);
        let m: f64 = logits.iter().map(|v| v.exp()).sum();
        let expected = logits.iter().map(|v| v.exp() / m).fold(0.0, f64::max);
        assert!((msp(&logits).unwrap() - expected).abs() < 1e-15);
    }
}

/// Log-sum-exp with a compensated (Neumaier) sum, no max subtraction.
fn energy_oracle(logits: &[f64]) -> f64 {
    let mut terms: Vec<f64> = logits.iter().map(|v| v.exp()).collect();
    terms.sort_by(f64::total_cmp);
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for t in terms {
        let s = sum + t;
        comp += if sum.abs() >= t.abs() { (sum - s) + t } else { (t - s) + sum };
        sum = s;
    }
    (sum + comp).ln()
}

#[test]
fn energy_matches_compensated_oracle() {
    let mut r = rng(9);
    for _ in 0..50 {
        let logits: Vec<f64> = gaussian(&mut r, 10).into_iter().map(|v| 5.0 * v).collect();
        assert!((energy(&logits, 1.0).unwrap() - energy_oracle(&logits)).abs() < 1e-10);
    }
}

#[test]
fn pooled_covariance_matches_two_pass_oracle() {
    let mut r = rng(77);
    let d = 3;
    let n = 400;
    let mut hidden = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let y = i % 2;
        let offset = if y == 0 { 5.0 } else { -5.0 };
        for v in gaussian(&mut r, d) {
            hidden.push((v + offset) as f32);
        }
        labels.push(Some(y as u32));
    }
    let fs = FeatureSet::new(
        vec!["h".into(), "logits".into()],
        vec![d, 2],
        2,
        labels,
        vec![hidden, vec![0.0; 2 * n]],
    )
    .unwrap();
    let fitted = fit_mahalanobis_penultimate(&fs).unwrap();

    // two passes: class means, then centered scatter
    let mut means = vec![vec![0.0; d]; 2];
    for i in 0..n {
        for j in 0..d {
            means[i % 2][j] += fs.row(0, i)[j] as f64 / (n / 2) as f64;
        }
    }
    let mut cov = vec![vec![0.0; d]; d];
    for i in 0..n {
        let c: Vec<f64> = (0..d).map(|j| fs.row(0, i)[j] as f64 - means[i % 2][j]).collect();
        for a in 0..d {
            for b in 0..d {
                cov[a][b] += c[a] * c[b] / n as f64;
            }
        }
    }
    let trace: f64 = (0..d).map(|i| cov[i][i]).sum();
    for (i, row) in cov.iter_mut().enumerate() {
        row[i] += 1e-6 * trace / d as f64;
    }
    let expected = invert(&cov);
    for a in 0..d {
        assert!((fitted.means[0][a] - means[0][a]).abs() < 1e-12);
        for b in 0..d {
            assert!((fitted.cov_inv.values()[a * d + b] - expected[a][b]).abs() < 1e-9);
            // unit within-class scatter
            let id = if a == b { 1.0 } else { 0.0 };
            assert!((cov[a][b] - id).abs() < 0.25);
        }
    }
}

#[test]
fn single_sample_classes_give_ridge_only_covariance() {
    let fs = FeatureSet::new(
        vec!["h".into(), "logits".into()],
        vec![2, 2],
        2,
        vec![Some(0), Some(1)],
        vec![vec![1.0, 2.0, -3.0, 4.0], vec![0.0; 4]],
    )
    .unwrap();
    let fitted = fit_mahalanobis_penultimate(&fs).unwrap();
    let v = fitted.cov_inv.values();
    assert_eq!(v[1], 0.0);
    assert_eq!(v[0], v[3]);
    assert_eq!(mahalanobis_penultimate_score(&[1.0f32, 2.0], &fitted).unwrap(), 0.0);
}

#[test]
fn mahalanobis_penultimate_identity_distance() {
    let fitted = trajod_core::baselines::MahalanobisPenultimate {
        layer: 0,
        means: vec![vec![0.0, 0.0], vec![10.0, 10.0]],
        cov_inv: SpdMatrix::identity(2),
    };
    assert!((mahalanobis_penultimate_score(&[3.0f64, 4.0], &fitted).unwrap() + 5.0).abs() < 1e-12);
}

#[test]
fn knn_matches_exhaustive_scan() {
    let mut r = rng(15);
    let d = 6;
    let n = 200;
    let data = gaussian(&mut r, n * d);
    let index = KnnIndex::new(d, &data, 10, 1.0, 0).unwrap();
    let rows: Vec<Vec<f64>> = data
        .chunks(d)
        .map(|c| {
            let nn = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            c.iter().map(|v| v / nn).collect()
        })
        .collect();
    for _ in 0..20 {
        let q = gaussian(&mut r, d);
        let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let qu: Vec<f64> = q.iter().map(|v| v / qn).collect();
        let mut dists: Vec<f64> = rows
            .iter()
            .map(|row| row.iter().zip(&qu).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .collect();
        dists.sort_by(f64::total_cmp);
        let got = knn_score(&q, &index).unwrap();
        assert!((got + dists[9]).abs() < 1e-12);
    }
}

#[test]
fn knn_self_distance_is_zero() {
    let mut r = rng(16);
    let data = gaussian(&mut r, 30 * 4);
    let index = KnnIndex::new(4, &data, 1, 1.0, 3).unwrap();
    for row in data.chunks(4) {
        assert!(knn_score(row, &index).unwrap().abs() < 1e-7);
    }
}

#[test]
fn trajectory_distances_match_per_coordinate_oracle() {
    let mut r = rng(3);
    let t = gaussian(&mut r, 5);
    let m = gaussian(&mut r, 5);
    let mut s = 0.0;
    for j in 0..5 {
        s += (t[j] - m[j]).powi(2);
    }
    assert!((traj_euclidean_score(&t, &m).unwrap() + s.sqrt()).abs() < 1e-14);

    let cov = random_spd(&mut r, 5);
    let cov_inv = SpdMatrix::new(5, symmetrized_flat(&invert(&cov))).unwrap();
    let v: Vec<f64> = t.iter().zip(&m).map(|(a, b)| a - b).collect();
    let x = solve(cov, v.clone());
    let expected = -v.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>().sqrt();
    assert!((traj_mahalanobis_score(&t, &m, &cov_inv).unwrap() - expected).abs() < 1e-8);
}

fn pairwise_auroc(ins: &[f64], outs: &[f64]) -> f64 {
    let mut num = 0.0;
    for a in ins {
        for b in outs {
            num += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }
    num / (ins.len() * outs.len()) as f64
}

#[test]
fn auroc_matches_pairwise_on_random_scores() {
    let mut r = rng(200);
    let ins: Vec<f64> = (0..200).map(|_| (r.random_range(0..50) as f64) * 0.5).collect();
    let outs: Vec<f64> = (0..200).map(|_| (r.random_range(0..40) as f64) * 0.5).collect();
    assert_eq!(auroc(&ins, &outs).unwrap(), pairwise_auroc(&ins, &outs));
}

#[test]
fn depth_is_upper_bound_on_exact_2d() {
    let mut r = rng(50);
    let data: Vec<[f64; 2]> = (0..40).map(|_| [gaussian(&mut r, 1)[0], gaussian(&mut r, 1)[0]]).collect();
    let rows: Vec<Vec<f64>> = data.iter().map(|p| p.to_vec()).collect();
    for x in [[0.0, 0.0], [0.5, -0.3], [2.0, 2.0], data[3]] {
        let exact = exact_depth_2d(x, &data);
        let approx = approx_halfspace_depth(&x, &rows, 300, 1).unwrap().value;
        assert!(approx >= exact - 1e-12, "approx {approx} below exact {exact}");
    }
}

#[test]
fn mean_median_gap_matches_sort_oracle() {
    let fs = random_feature_set(71, 41, &[5], 3);
    let gaps = mean_median_gap(&fs, 0, 1).unwrap();
    for (j, g) in gaps.iter().enumerate() {
        let mut col: Vec<f64> = (0..fs.n_samples())
            .filter(|&i| fs.labels()[i] == Some(1))
            .map(|i| fs.row(0, i)[j] as f64)
            .collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        col.sort_by(f64::total_cmp);
        let n = col.len();
        let median = if n % 2 == 1 { col[n / 2] } else { (col[n / 2 - 1] + col[n / 2]) / 2.0 };
        assert_eq!(*g, (mean - median).abs());
    }
}

#[test]
fn independent_coordinates_are_uncorrelated() {
    let mut r = rng(1234);
    let rows = (0..10_000).map(|_| Trajectory::new(gaussian(&mut r, 4))).collect();
    let c = layer_score_correlation(&TrajectorySet::new(rows).unwrap()).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            if i != j {
                assert!(c.get(i, j).abs() < 0.05);
            }
        }
    }
}

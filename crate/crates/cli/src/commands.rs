use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;
use trajod_core::baselines::{fit_mahalanobis_penultimate, fit_trajectory_stats, BaselineKind, FittedBaselines, KnnIndex};
use trajod_core::diagnostics::{class_rows, histogram, layer_score_correlation, mean_median_gap, DepthEvaluator, DirectionSet};
use trajod_core::features::encode_feature_set;
use trajod_core::metrics::round_sig6;
use trajod_core::persist::encode_model;
use trajod_core::synth::{generate, SynthConfig};
use trajod_core::trajectory::fit_reference_with_trajectories;
use trajod_core::{
    threshold_at_tpr, DatasetResult, Decision, DetectionReport, FeatureSet, LayerScoreKind, ModelFile, ReferenceModel,
    ScoreNormalization,
};

use crate::io::{load_features, load_model, write_atomic, CliError, CliResult};
use crate::{BaselineArgs, DiagnoseArgs, EvaluateArgs, FitArgs, ScoreArgs, SynthArgs};

fn check_fraction(flag: &str, v: f64) -> CliResult<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(CliError::usage(flag, format!("must lie in (0, 1], got {v}")))
    }
}

fn check_tpr(flag: &str, v: f64) -> CliResult<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(CliError::usage(flag, format!("must lie in (0, 1), got {v}")))
    }
}

fn ctx(path: &Path) -> impl Fn(trajod_core::Error) -> CliError + '_ {
    move |e| CliError::core(&path.display().to_string(), e)
}

fn dataset_name(explicit: Option<String>, out_data: &Path) -> String {
    explicit.unwrap_or_else(|| {
        let name = out_data.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        name.strip_suffix(".ftx").map(str::to_owned).unwrap_or(name)
    })
}

fn emit_report(report: &DetectionReport, json: Option<&Path>, text: Option<&Path>) -> CliResult<()> {
    if let Some(p) = json {
        write_atomic(p, report.to_json().as_bytes())?;
    }
    if let Some(p) = text {
        write_atomic(p, report.to_text().as_bytes())?;
    }
    if json.is_none() && text.is_none() {
        print!("{}", report.to_text());
    }
    Ok(())
}

pub fn fit(a: FitArgs) -> CliResult<()> {
    check_fraction("--subsample", a.subsample)?;
    if let Some(t) = a.tpr {
        check_tpr("--tpr", t)?;
    }
    let train = load_features(&a.train)?;
    let err = ctx(&a.train);
    let (mut model, raw) = fit_reference_with_trajectories(&train, a.kind, a.subsample, a.seed).map_err(&err)?;
    if let Some(t) = a.tpr {
        let scores = model.score_set(&train, ScoreNormalization::Reference).map_err(&err)?;
        model = model.with_gamma(Some(threshold_at_tpr(&scores, t).map_err(&err)?));
    }
    let mut file = ModelFile::from(model);
    if a.with_baselines {
        file.baselines = FittedBaselines {
            mahalanobis: Some(fit_mahalanobis_penultimate(&train).map_err(&err)?),
            knn: Some(KnnIndex::build(&train, trajod_core::baselines::DEFAULT_KNN_K, trajod_core::baselines::DEFAULT_KNN_ALPHA, a.seed).map_err(&err)?),
            trajectory: Some(fit_trajectory_stats(&file.model, &raw).map_err(&err)?),
        };
    }
    let bytes = encode_model(&file).map_err(ctx(&a.out))?;
    write_atomic(&a.out, &bytes)
}

pub fn score(a: ScoreArgs) -> CliResult<()> {
    let file = load_model(&a.model)?;
    let data = load_features(&a.data)?;
    let norm = if a.inner_product {
        ScoreNormalization::InnerProduct
    } else {
        ScoreNormalization::Reference
    };
    let model = &file.model;
    let scores = model.score_set(&data, norm).map_err(ctx(&a.data))?;
    let mut csv = String::from(if model.gamma().is_some() { "index,score,decision\n" } else { "index,score\n" });
    for (i, s) in scores.iter().enumerate() {
        match model.decide(*s) {
            Some(d) => {
                let label = if d == Decision::OutOfDistribution { "ood" } else { "in" };
                writeln!(csv, "{i},{s},{label}").unwrap();
            }
            None => writeln!(csv, "{i},{s}").unwrap(),
        }
    }
    match &a.out {
        Some(p) => write_atomic(p, csv.as_bytes()),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn raw_scores_csv(s_in: &[f64], s_out: &[f64]) -> String {
    let mut csv = String::from("set,index,score\n");
    for (set, scores) in [("in", s_in), ("out", s_out)] {
        for (i, s) in scores.iter().enumerate() {
            writeln!(csv, "{set},{i},{s}").unwrap();
        }
    }
    csv
}

pub fn evaluate(a: EvaluateArgs) -> CliResult<()> {
    check_tpr("--tpr", a.tpr)?;
    let file = load_model(&a.model)?;
    let ins = load_features(&a.in_data)?;
    let outs = load_features(&a.out_data)?;
    let model = &file.model;
    let s_in = model.score_set(&ins, ScoreNormalization::Reference).map_err(ctx(&a.in_data))?;
    let s_out = model.score_set(&outs, ScoreNormalization::Reference).map_err(ctx(&a.out_data))?;
    let mut report = DetectionReport::new(
        format!("trajectory_{}", model.kind().name()),
        "higher score = in-distribution; OOD iff score <= gamma",
    );
    let name = dataset_name(a.dataset, &a.out_data);
    report
        .results
        .push(DatasetResult::evaluate(name, &s_in, &s_out, a.tpr).map_err(ctx(&a.out_data))?);
    if let Some(p) = &a.raw_scores {
        write_atomic(p, raw_scores_csv(&s_in, &s_out).as_bytes())?;
    }
    emit_report(&report, a.json.as_deref(), a.text.as_deref())
}

/// Fitted state for `kind`, from the model file when it has it, otherwise
/// fitted on `--train`.
fn baseline_state(a: &BaselineArgs) -> CliResult<(FittedBaselines, Option<ReferenceModel>)> {
    let kind = a.kind;
    let stored = a.model.as_deref().map(load_model).transpose()?;
    let has_state = |f: &ModelFile| match kind {
        BaselineKind::MahalanobisPenultimate => f.baselines.mahalanobis.is_some(),
        BaselineKind::Knn => f.baselines.knn.is_some(),
        BaselineKind::TrajEuclidean | BaselineKind::TrajMahalanobis => f.baselines.trajectory.is_some(),
        _ => true,
    };
    if let Some(f) = stored.as_ref().filter(|f| has_state(f)) {
        return Ok((f.baselines.clone(), Some(f.model.clone())));
    }
    if matches!(kind, BaselineKind::Msp | BaselineKind::MaxLogit | BaselineKind::Energy) {
        return Ok((FittedBaselines::default(), None));
    }
    let train_path = a
        .train
        .as_deref()
        .ok_or_else(|| CliError::usage("--train", format!("required to fit `{kind}` (or pass a --model that stores it)")))?;
    let seed = match (kind.is_randomized(), a.seed) {
        (true, None) => return Err(CliError::usage("--seed", format!("required to fit `{kind}`"))),
        (_, s) => s.unwrap_or(0),
    };
    let train = load_features(train_path)?;
    let err = ctx(train_path);
    let mut fitted = FittedBaselines::default();
    let mut model = None;
    match kind {
        BaselineKind::MahalanobisPenultimate => {
            fitted.mahalanobis = Some(fit_mahalanobis_penultimate(&train).map_err(&err)?);
        }
        BaselineKind::Knn => {
            check_fraction("--alpha", a.alpha)?;
            if a.k == 0 {
                return Err(CliError::usage("--k", "must be positive"));
            }
            fitted.knn = Some(KnnIndex::build(&train, a.k, a.alpha, seed).map_err(&err)?);
        }
        _ => {
            check_fraction("--subsample", a.subsample)?;
            let (m, raw) =
                fit_reference_with_trajectories(&train, LayerScoreKind::Projection, a.subsample, seed).map_err(&err)?;
            fitted.trajectory = Some(fit_trajectory_stats(&m, &raw).map_err(&err)?);
            model = Some(m);
        }
    }
    Ok((fitted, model))
}

pub fn baseline(a: BaselineArgs) -> CliResult<()> {
    check_tpr("--tpr", a.tpr)?;
    let (fitted, model) = baseline_state(&a)?;
    let ins = load_features(&a.in_data)?;
    let outs = load_features(&a.out_data)?;
    let s_in = fitted.score_set(a.kind, &ins, model.as_ref()).map_err(ctx(&a.in_data))?;
    let s_out = fitted.score_set(a.kind, &outs, model.as_ref()).map_err(ctx(&a.out_data))?;
    let mut report = DetectionReport::new(a.kind.name(), a.kind.orientation());
    let name = dataset_name(a.dataset.clone(), &a.out_data);
    report
        .results
        .push(DatasetResult::evaluate(name, &s_in, &s_out, a.tpr).map_err(ctx(&a.out_data))?);
    emit_report(&report, a.json.as_deref(), None)
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn synth(a: SynthArgs) -> CliResult<()> {
    let mut cfg = SynthConfig::default();
    if let Some(p) = &a.config {
        let text = std::fs::read_to_string(p).map_err(|e| CliError::data(p, format!("cannot read: {e}")))?;
        cfg.apply_kv(&text).map_err(|e| CliError::usage("--config", format!("{}: {e}", p.display())))?;
    }
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::usage("--set", format!("expected key=value, got `{kv}`")))?;
        cfg.set(k, v).map_err(|e| CliError::usage("--set", e))?;
    }
    // the explicit flag always wins over a seed in the config file
    cfg.seed = a.seed;
    let data = generate(&cfg).map_err(|e| CliError::usage("--config/--set", e))?;
    for (suffix, fs) in [(".train.ftx", &data.train), (".in.ftx", &data.test_in), (".out.ftx", &data.test_out)] {
        let path = with_suffix(&a.out_prefix, suffix);
        let bytes = encode_feature_set(fs).map_err(ctx(&path))?;
        write_atomic(&path, &bytes)?;
    }
    Ok(())
}

fn depth_table(train: &FeatureSet, a: &DiagnoseArgs) -> CliResult<Vec<serde_json::Value>> {
    let mut table = Vec::new();
    for layer in 0..train.n_layers() {
        let dim = train.layer_dims()[layer];
        // one direction set per layer, shared by the mean and every sample
        let dirs = DirectionSet::sample(dim, a.directions, a.seed).map_err(ctx(&a.train))?;
        for class in 0..train.n_classes() as u32 {
            let mut rows = class_rows(train, layer, class);
            rows.truncate(a.max_per_class);
            if rows.is_empty() {
                continue;
            }
            let mean: Vec<f64> = (0..dim)
                .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64)
                .collect();
            let eval = DepthEvaluator::new(&rows, dirs.clone()).map_err(ctx(&a.train))?;
            let at_mean = eval.depth(&mean).map_err(ctx(&a.train))?.value;
            let mut max_sample = 0.0f64;
            for r in &rows {
                max_sample = max_sample.max(eval.depth(r).map_err(ctx(&a.train))?.value);
            }
            table.push(json!({
                "layer": train.layer_names()[layer],
                "class": class,
                "n": rows.len(),
                "mean_depth": round_sig6(at_mean),
                "max_sample_depth": round_sig6(max_sample),
            }));
        }
    }
    Ok(table)
}

pub fn diagnose(a: DiagnoseArgs) -> CliResult<()> {
    check_fraction("--subsample", a.subsample)?;
    if a.directions == 0 {
        return Err(CliError::usage("--directions", "must be positive"));
    }
    if a.max_per_class == 0 {
        return Err(CliError::usage("--max-per-class", "must be positive"));
    }
    let train = load_features(&a.train)?;
    let err = ctx(&a.train);

    let depth = depth_table(&train, &a)?;

    let mut gaps = Vec::new();
    for layer in 0..train.n_layers() {
        let mut all = Vec::new();
        for class in 0..train.n_classes() as u32 {
            if let Ok(g) = mean_median_gap(&train, layer, class) {
                all.extend(g);
            }
        }
        let h = histogram(&all, a.bins);
        gaps.push(json!({
            "layer": train.layer_names()[layer],
            "edges": h.edges.iter().map(|&v| round_sig6(v)).collect::<Vec<_>>(),
            "counts": h.counts,
        }));
    }

    let (_, raw) = fit_reference_with_trajectories(&train, LayerScoreKind::Projection, a.subsample, a.seed).map_err(&err)?;
    let corr = layer_score_correlation(&raw).map_err(&err)?;

    let out = json!({
        "seed": a.seed,
        "n_directions": a.directions,
        "depth": depth,
        "mean_median_gap": gaps,
        "layer_correlation": {
            "layers": train.layer_names(),
            "dim": corr.dim,
            "values": corr.values.iter().map(|&v| round_sig6(v)).collect::<Vec<_>>(),
        },
    });
    let mut text = serde_json::to_string_pretty(&out).expect("json value serializes");
    text.push('\n');
    match &a.json {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

//! Detection metrics (AUROC, TNR at a fixed TPR) and report rendering.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::trajectory::threshold_at_tpr;

pub const DEFAULT_TPR: f64 = 0.95;

/// Probability that a random in-distribution score exceeds a random OOD
/// score, ties counting one half. Computed from mid-ranks after one sort.
pub fn auroc(in_scores: &[f64], out_scores: &[f64]) -> Result<f64> {
    if in_scores.is_empty() || out_scores.is_empty() {
        return Err(Error::EmptyInput("auroc needs in and out scores"));
    }
    if in_scores.iter().chain(out_scores).any(|s| s.is_nan()) {
        return Err(Error::arg("NaN score"));
    }
    let mut all: Vec<(f64, bool)> = in_scores
        .iter()
        .map(|&s| (s, true))
        .chain(out_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // twice the rank sum of the in-scores, using 1-based mid-ranks; integral
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let n_in = all[i..j].iter().filter(|e| e.1).count() as u128;
        // mid-rank of positions i+1 ..= j is (i + 1 + j) / 2
        twice_rank_sum += n_in * (i + 1 + j) as u128;
        i = j;
    }
    let n_in = in_scores.len() as u128;
    let n_out = out_scores.len() as u128;
    let twice_u = twice_rank_sum - n_in * (n_in + 1);
    Ok(twice_u as f64 / (2 * n_in * n_out) as f64)
}

/// TNR of OOD detection (fraction of `out_scores <= γ`) at the threshold
/// that keeps at least `tpr` of the in-distribution scores strictly above it.
/// Returns `(tnr, γ)`.
pub fn tnr_at_tpr(in_scores: &[f64], out_scores: &[f64], tpr: f64) -> Result<(f64, f64)> {
    if out_scores.is_empty() {
        return Err(Error::EmptyInput("tnr needs out scores"));
    }
    let gamma = threshold_at_tpr(in_scores, tpr)?;
    let detected = out_scores.iter().filter(|&&s| s <= gamma).count();
    Ok((detected as f64 / out_scores.len() as f64, gamma))
}

/// Rounds to 6 significant digits so serialized reports are stable.
pub fn round_sig6(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.5e}").parse().unwrap()
}

fn ser_sig6<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(round_sig6(*x))
}

fn ser_gamma<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(round_sig6(*x))
    } else {
        s.serialize_none()
    }
}

/// One method evaluated on one in/out dataset pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetResult {
    pub dataset: String,
    #[serde(serialize_with = "ser_sig6")]
    pub auroc: f64,
    #[serde(serialize_with = "ser_sig6")]
    pub tnr_at_95_tpr: f64,
    /// `null` in JSON when the threshold is the `-inf` sentinel.
    #[serde(serialize_with = "ser_gamma")]
    pub gamma: f64,
    pub n_in: usize,
    pub n_out: usize,
}

impl DatasetResult {
    pub fn evaluate(dataset: impl Into<String>, in_scores: &[f64], out_scores: &[f64], tpr: f64) -> Result<Self> {
        let (tnr, gamma) = tnr_at_tpr(in_scores, out_scores, tpr)?;
        Ok(Self {
            dataset: dataset.into(),
            auroc: auroc(in_scores, out_scores)?,
            tnr_at_95_tpr: tnr,
            gamma,
            n_in: in_scores.len(),
            n_out: out_scores.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport {
    pub method: String,
    pub orientation: String,
    pub results: Vec<DatasetResult>,
}

impl DetectionReport {
    pub fn new(method: impl Into<String>, orientation: impl Into<String>) -> Self {
        Self {
            method: method.into(),
            orientation: orientation.into(),
            results: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let mut out = format!("method: {}\norientation: {}\n", self.method, self.orientation);
        let header = ["dataset", "auroc", "tnr_at_95_tpr", "gamma", "n_in", "n_out"];
        let rows: Vec<[String; 6]> = self
            .results
            .iter()
            .map(|r| {
                [
                    r.dataset.clone(),
                    fmt_sig6(r.auroc),
                    fmt_sig6(r.tnr_at_95_tpr),
                    fmt_sig6(r.gamma),
                    r.n_in.to_string(),
                    r.n_out.to_string(),
                ]
            })
            .collect();
        let widths: Vec<usize> = (0..6)
            .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap())
            .collect();
        let line = |cells: Vec<&str>| {
            let mut l: String = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, w))| if c == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
                .collect::<Vec<_>>()
                .join("  ");
            l.push('\n');
            l
        };
        out.push_str(&line(header.to_vec()));
        for r in &rows {
            out.push_str(&line(r.iter().map(String::as_str).collect()));
        }
        out
    }
}

/// Decimal rendering of [`round_sig6`]; `-inf` for the sentinel threshold.
pub fn fmt_sig6(x: f64) -> String {
    if x == f64::NEG_INFINITY {
        return "-inf".into();
    }
    format!("{}", round_sig6(x))
}

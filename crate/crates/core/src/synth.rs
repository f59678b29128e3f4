//! Seeded synthetic feature sets with class structure and a controllable
//! out-of-distribution shift.
//!
//! Each class gets one random mean per hidden layer, scaled to norm
//! `mean_scale`; samples are Gaussian around it with per-coordinate standard
//! deviation `within_std`. Logits are generated directly as
//! `logit_margin * one_hot(y) + noise`. OOD samples use the same recipe with
//! the shift given by [`OodMode`] and carry the unlabeled sentinel.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::features::FeatureSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OodMode {
    /// Class means moved toward the origin by this distance.
    MeanShift(f64),
    /// Feature and logit noise inflated by this factor.
    Scale(f64),
    /// Each hidden layer uses the mean of a different class (a per-layer
    /// derangement) while the logits stay typical of the sample's class.
    Shape,
}

impl fmt::Display for OodMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OodMode::MeanShift(d) => write!(f, "mean_shift:{d}"),
            OodMode::Scale(k) => write!(f, "scale:{k}"),
            OodMode::Shape => f.write_str("shape"),
        }
    }
}

impl FromStr for OodMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = s.split_once(':').map_or((s, None), |(a, b)| (a, Some(b)));
        let num = |what: &str| -> Result<f64> {
            arg.ok_or_else(|| Error::InvalidConfig(format!("{what} needs a value, e.g. `{what}:2`")))?
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad {what} value in `{s}`")))
        };
        match name.trim() {
            "mean_shift" => Ok(OodMode::MeanShift(num("mean_shift")?)),
            "scale" => Ok(OodMode::Scale(num("scale")?)),
            "shape" | "permute_layers" => Ok(OodMode::Shape),
            other => Err(Error::InvalidConfig(format!("unknown ood_mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_classes: usize,
    /// Hidden layer dimensions; the logits layer (dim `n_classes`) is appended.
    pub layer_dims: Vec<usize>,
    pub n_train: usize,
    pub n_test_in: usize,
    pub n_test_out: usize,
    pub mean_scale: f64,
    pub within_std: f64,
    pub ood_mode: OodMode,
    pub logit_margin: f64,
    pub logit_noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// The separable benchmark: 10 classes, hidden dims 32/64/128, OOD means
    /// shifted by five within-class standard deviations.
    fn default() -> Self {
        Self {
            n_classes: 10,
            layer_dims: vec![32, 64, 128],
            n_train: 10_000,
            n_test_in: 5_000,
            n_test_out: 5_000,
            mean_scale: 10.0,
            within_std: 1.0,
            ood_mode: OodMode::MeanShift(5.0),
            logit_margin: 8.0,
            logit_noise_std: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn separable(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// OOD drawn from exactly the in-distribution law.
    pub fn identical(seed: u64) -> Self {
        Self {
            ood_mode: OodMode::MeanShift(0.0),
            seed,
            ..Self::default()
        }
    }

    /// Layer-permuted OOD means at a noise level where detection is not
    /// saturated.
    pub fn shape_anomaly(seed: u64) -> Self {
        Self {
            mean_scale: 1.0,
            ood_mode: OodMode::Shape,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_classes == 0 || self.n_train == 0 || self.n_test_in == 0 || self.n_test_out == 0 {
            return bad("n_classes and all sample counts must be positive".into());
        }
        if self.layer_dims.is_empty() || self.layer_dims.contains(&0) {
            return bad("need at least one hidden layer, all dims positive".into());
        }
        if !(self.within_std > 0.0) || !self.within_std.is_finite() {
            return bad(format!("within_std must be positive, got {}", self.within_std));
        }
        if !(self.mean_scale >= 0.0) || !self.mean_scale.is_finite() {
            return bad(format!("mean_scale must be non-negative, got {}", self.mean_scale));
        }
        if !self.logit_margin.is_finite() || !(self.logit_noise_std >= 0.0) || !self.logit_noise_std.is_finite() {
            return bad("logit_margin must be finite and logit_noise_std non-negative".into());
        }
        match self.ood_mode {
            OodMode::MeanShift(d) if !d.is_finite() => bad("mean shift must be finite".into()),
            OodMode::Scale(k) if !(k > 0.0) || !k.is_finite() => bad("scale factor must be positive".into()),
            OodMode::Shape if self.n_classes < 2 => bad("shape mode needs at least two classes".into()),
            _ => Ok(()),
        }
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad value `{v}` for `{key}`")))
        }
        match key.trim() {
            "n_classes" => self.n_classes = parse(key, value)?,
            "layer_dims" | "dims" => {
                self.layer_dims = value
                    .split(',')
                    .map(|d| parse(key, d))
                    .collect::<Result<_>>()?
            }
            "n_train" => self.n_train = parse(key, value)?,
            "n_test_in" => self.n_test_in = parse(key, value)?,
            "n_test_out" => self.n_test_out = parse(key, value)?,
            "mean_scale" => self.mean_scale = parse(key, value)?,
            "within_std" | "sigma_in" => self.within_std = parse(key, value)?,
            "ood_mode" => self.ood_mode = value.trim().parse()?,
            "logit_margin" => self.logit_margin = parse(key, value)?,
            "logit_noise_std" => self.logit_noise_std = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            other => return Err(Error::InvalidConfig(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a flat `key=value` file on top of `self`. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key=value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let dims: Vec<String> = self.layer_dims.iter().map(ToString::to_string).collect();
        format!(
            "n_classes={}\nlayer_dims={}\nn_train={}\nn_test_in={}\nn_test_out={}\nmean_scale={}\nwithin_std={}\nood_mode={}\nlogit_margin={}\nlogit_noise_std={}\nseed={}\n",
            self.n_classes,
            dims.join(","),
            self.n_train,
            self.n_test_in,
            self.n_test_out,
            self.mean_scale,
            self.within_std,
            self.ood_mode,
            self.logit_margin,
            self.logit_noise_std,
            self.seed
        )
    }
}

/// Generated train / in-distribution test / OOD test sets.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub train: FeatureSet,
    pub test_in: FeatureSet,
    pub test_out: FeatureSet,
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    rng: ChaCha8Rng,
    // [layer][class] -> mean
    means: Vec<Vec<Vec<f64>>>,
}

enum Split {
    In,
    Out { permutations: Vec<Vec<usize>> },
}

impl Generator<'_> {
    fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    fn class_mean(&mut self, dim: usize) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| self.normal()).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                return v.into_iter().map(|x| x / n * self.cfg.mean_scale).collect();
            }
        }
    }

    fn derangement(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        loop {
            p.shuffle(&mut self.rng);
            if p.iter().enumerate().all(|(i, &v)| i != v) {
                return p;
            }
        }
    }

    fn split(&mut self, n: usize, split: &Split) -> Result<FeatureSet> {
        let cfg = self.cfg;
        let c = cfg.n_classes;
        let hidden = cfg.layer_dims.len();
        let mut layers: Vec<Vec<f32>> = cfg
            .layer_dims
            .iter()
            .chain(std::iter::once(&c))
            .map(|&d| Vec::with_capacity(n * d))
            .collect();
        let (noise_scale, shift) = match (split, cfg.ood_mode) {
            (Split::In, _) => (1.0, 0.0),
            (Split::Out { .. }, OodMode::MeanShift(d)) => (1.0, d),
            (Split::Out { .. }, OodMode::Scale(k)) => (k, 0.0),
            (Split::Out { .. }, OodMode::Shape) => (1.0, 0.0),
        };
        for i in 0..n {
            let y = i % c;
            for l in 0..hidden {
                let source = match split {
                    Split::Out { permutations } if !permutations.is_empty() => permutations[l][y],
                    _ => y,
                };
                let shrink = if shift != 0.0 && cfg.mean_scale > 0.0 {
                    1.0 - shift / cfg.mean_scale
                } else {
                    1.0
                };
                for j in 0..cfg.layer_dims[l] {
                    let mu = self.means[l][source][j] * shrink;
                    let v = mu + noise_scale * cfg.within_std * self.normal();
                    layers[l].push(v as f32);
                }
            }
            for k in 0..c {
                let base = if k == y { cfg.logit_margin } else { 0.0 };
                let v = base + noise_scale * cfg.logit_noise_std * self.normal();
                layers[hidden].push(v as f32);
            }
        }
        let mut names: Vec<String> = (1..=hidden).map(|l| format!("layer{l}")).collect();
        names.push("logits".into());
        let mut dims = cfg.layer_dims.clone();
        dims.push(c);
        let labels = match split {
            Split::In => (0..n).map(|i| Some((i % c) as u32)).collect(),
            Split::Out { .. } => vec![None; n],
        };
        FeatureSet::new(names, dims, c, labels, layers)
    }
}

/// Generates the three sets; fully determined by the config (including its seed).
pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut g = Generator {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        means: Vec::new(),
    };
    for &d in &cfg.layer_dims {
        let layer = (0..cfg.n_classes).map(|_| g.class_mean(d)).collect();
        g.means.push(layer);
    }
    let permutations = match cfg.ood_mode {
        OodMode::Shape => (0..cfg.layer_dims.len()).map(|_| g.derangement(cfg.n_classes)).collect(),
        _ => Vec::new(),
    };
    let train = g.split(cfg.n_train, &Split::In)?;
    let test_in = g.split(cfg.n_test_in, &Split::In)?;
    let test_out = g.split(cfg.n_test_out, &Split::Out { permutations })?;
    Ok(SynthData {
        train,
        test_in,
        test_out,
    })
}

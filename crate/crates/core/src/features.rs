//! Per-layer feature sets and the FTX v1 binary exchange format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "FTRJ" | version u32 = 1 | n_samples u64 | n_layers u32 | n_classes u32
//! per layer:  name_len u32 | name (UTF-8) | dim u32
//! labels:     n_samples x u32   (0xFFFF_FFFF = unlabeled)
//! per layer:  n_samples x dim x f32, row-major
//! ```
//!
//! The last layer is always the logits layer and must have `dim == n_classes`.

use std::io::{Read, Write};

use crate::codec::{put_len, put_u32, put_u64, ByteReader};
use crate::error::{Error, Result};

pub const FTX_MAGIC: [u8; 4] = *b"FTRJ";
pub const FTX_VERSION: u32 = 1;
pub const UNLABELED: u32 = u32::MAX;

/// Features of a set of samples at every probed layer, plus labels.
///
/// Immutable once constructed; every constructor enforces the invariants
/// (finite values, consistent shapes, logits last, labels in range).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    layer_names: Vec<String>,
    layer_dims: Vec<usize>,
    n_classes: usize,
    labels: Vec<Option<u32>>,
    layers: Vec<Vec<f32>>,
}

impl FeatureSet {
    pub fn new(
        layer_names: Vec<String>,
        layer_dims: Vec<usize>,
        n_classes: usize,
        labels: Vec<Option<u32>>,
        layers: Vec<Vec<f32>>,
    ) -> Result<Self> {
        let fs = Self {
            layer_names,
            layer_dims,
            n_classes,
            labels,
            layers,
        };
        fs.validate()?;
        Ok(fs)
    }

    fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidFeatureSet(msg));
        if self.layer_dims.is_empty() {
            return invalid("at least one layer (the logits) is required".into());
        }
        if self.layer_names.len() != self.layer_dims.len() || self.layers.len() != self.layer_dims.len() {
            return invalid(format!(
                "{} names, {} dims and {} layer buffers disagree",
                self.layer_names.len(),
                self.layer_dims.len(),
                self.layers.len()
            ));
        }
        if self.n_classes == 0 || self.n_classes >= UNLABELED as usize {
            return invalid(format!("n_classes {} out of range", self.n_classes));
        }
        if let Some(pos) = self.layer_dims.iter().position(|&d| d == 0) {
            return invalid(format!("layer `{}` has zero dimension", self.layer_names[pos]));
        }
        let logits_dim = *self.layer_dims.last().unwrap();
        if logits_dim != self.n_classes {
            return invalid(format!(
                "final layer dim {logits_dim} does not match n_classes {}",
                self.n_classes
            ));
        }
        let n = self.labels.len();
        for (name, (&dim, data)) in self.layer_names.iter().zip(self.layer_dims.iter().zip(&self.layers)) {
            if data.len() != n * dim {
                return invalid(format!(
                    "layer `{name}` holds {} values, expected {n} x {dim}",
                    data.len()
                ));
            }
            if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    layer: name.clone(),
                    sample: pos / dim,
                });
            }
        }
        if let Some((i, y)) = self
            .labels
            .iter()
            .enumerate()
            .find_map(|(i, y)| y.filter(|&y| y as usize >= self.n_classes).map(|y| (i, y)))
        {
            return invalid(format!("sample {i} has label {y} >= n_classes {}", self.n_classes));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    /// Number of probed layers including the logits, `L + 1`.
    pub fn n_layers(&self) -> usize {
        self.layer_dims.len()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn layer_names(&self) -> &[String] {
        &self.layer_names
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn labels(&self) -> &[Option<u32>] {
        &self.labels
    }

    /// Row-major `n_samples x dim` buffer of one layer.
    pub fn layer(&self, layer: usize) -> &[f32] {
        &self.layers[layer]
    }

    pub fn row(&self, layer: usize, sample: usize) -> &[f32] {
        let d = self.layer_dims[layer];
        &self.layers[layer][sample * d..(sample + 1) * d]
    }

    pub fn logits(&self, sample: usize) -> &[f32] {
        self.row(self.n_layers() - 1, sample)
    }

    /// Index of the layer right before the logits, if there is one.
    pub fn penultimate(&self) -> Option<usize> {
        self.n_layers().checked_sub(2)
    }

    /// Per-layer feature rows of one sample, logits last.
    pub fn sample(&self, sample: usize) -> Vec<&[f32]> {
        (0..self.n_layers()).map(|l| self.row(l, sample)).collect()
    }

    /// New set holding the given samples in the given order.
    pub fn select(&self, indices: &[usize]) -> FeatureSet {
        let layers = self
            .layers
            .iter()
            .zip(&self.layer_dims)
            .map(|(data, &d)| {
                let mut out = Vec::with_capacity(indices.len() * d);
                for &i in indices {
                    out.extend_from_slice(&data[i * d..(i + 1) * d]);
                }
                out
            })
            .collect();
        FeatureSet {
            layer_names: self.layer_names.clone(),
            layer_dims: self.layer_dims.clone(),
            n_classes: self.n_classes,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            layers,
        }
    }

    /// Copy with one layer multiplied by `factor`, rounded back to f32.
    pub fn with_scaled_layer(&self, layer: usize, factor: f64) -> Result<FeatureSet> {
        if layer >= self.n_layers() {
            return Err(Error::arg(format!("layer {layer} out of range")));
        }
        let mut out = self.clone();
        for v in &mut out.layers[layer] {
            *v = (*v as f64 * factor) as f32;
        }
        out.validate()?;
        Ok(out)
    }
}

/// Reads an FTX v1 stream. The whole stream is consumed; trailing bytes are
/// rejected.
pub fn read_feature_set<R: Read>(mut reader: R) -> Result<FeatureSet> {
    let mut buf = Vec::new();
    reader.read_to_end(&mut buf)?;
    decode_feature_set(&buf)
}

pub fn decode_feature_set(bytes: &[u8]) -> Result<FeatureSet> {
    let mut r = ByteReader::new(bytes);
    r.magic(FTX_MAGIC)?;
    let version = r.u32("version")?;
    if version != FTX_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let n_samples = r.u64("n_samples")?;
    let n_layers = r.u32("n_layers")? as usize;
    let n_classes = r.u32("n_classes")? as usize;
    if n_layers == 0 {
        return Err(Error::InvalidHeader("n_layers is zero".into()));
    }

    // each layer header takes at least 8 bytes
    let mut layer_names = Vec::with_capacity(n_layers.min(r.remaining() / 8));
    let mut layer_dims = Vec::with_capacity(layer_names.capacity());
    for _ in 0..n_layers {
        let name_len = r.u32("layer name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "layer name")?)
            .map_err(|_| Error::InvalidHeader("layer name is not valid UTF-8".into()))?;
        layer_names.push(name.to_owned());
        layer_dims.push(r.u32("layer dim")? as usize);
    }

    let row_width = layer_dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_add(d))
        .ok_or_else(|| Error::InvalidHeader("layer dims overflow".into()))?;
    let n = usize::try_from(n_samples).map_err(|_| Error::Truncated("labels"))?;
    let needed = n
        .checked_mul(row_width)
        .and_then(|v| v.checked_mul(4))
        .ok_or(Error::Truncated("payload"))?;
    if needed > r.remaining() {
        return Err(Error::Truncated("payload"));
    }

    let labels = r
        .take(n * 4, "labels")?
        .chunks_exact(4)
        .map(|c| match u32::from_le_bytes(c.try_into().unwrap()) {
            UNLABELED => None,
            y => Some(y),
        })
        .collect();
    let layers = layer_dims
        .iter()
        .map(|&d| r.f32_vec(n * d, "layer payload"))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;

    FeatureSet::new(layer_names, layer_dims, n_classes, labels, layers)
}

pub fn encode_feature_set(fs: &FeatureSet) -> Result<Vec<u8>> {
    let payload: usize = fs.layer_dims.iter().sum::<usize>() * fs.n_samples() * 4;
    let mut out = Vec::with_capacity(32 + fs.n_samples() * 4 + payload);
    out.extend_from_slice(&FTX_MAGIC);
    put_u32(&mut out, FTX_VERSION);
    put_u64(&mut out, fs.n_samples() as u64);
    put_len(&mut out, fs.n_layers(), "n_layers")?;
    put_len(&mut out, fs.n_classes, "n_classes")?;
    for (name, &dim) in fs.layer_names.iter().zip(&fs.layer_dims) {
        put_len(&mut out, name.len(), "layer name length")?;
        out.extend_from_slice(name.as_bytes());
        put_len(&mut out, dim, "layer dim")?;
    }
    for y in &fs.labels {
        put_u32(&mut out, y.unwrap_or(UNLABELED));
    }
    for data in &fs.layers {
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Writes `fs` as FTX v1. The full encoding is built before the sink is
/// touched, so encoding errors leave the sink untouched.
pub fn write_feature_set<W: Write>(fs: &FeatureSet, mut sink: W) -> Result<()> {
    let bytes = encode_feature_set(fs)?;
    sink.write_all(&bytes)?;
    sink.flush()?;
    Ok(())
}

/// Reduces a `channels x height x width` map to one value per channel by
/// taking the spatial maximum.
pub fn global_max_pool(map: &[f32], channels: usize, height: usize, width: usize) -> Result<Vec<f32>> {
    let plane = height * width;
    if plane == 0 {
        return Err(Error::arg("empty spatial extent"));
    }
    if map.len() != channels * plane {
        return Err(Error::DimensionMismatch {
            expected: channels * plane,
            actual: map.len(),
        });
    }
    Ok(map
        .chunks_exact(plane)
        .map(|c| c.iter().copied().fold(f32::NEG_INFINITY, f32::max))
        .collect())
}

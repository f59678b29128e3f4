//! FTRM v1: fitted detector state, same integer and endianness conventions
//! as FTX.
//!
//! ```text
//! magic "FTRM" | version u32 = 1 | kind u32 (0 projection, 1 mahalanobis)
//! n_layers u32 | n_classes u32 | per layer: dim u32
//! class counts: n_classes x u64
//! prototypes:   per layer, per class: dim x f64
//! scale:        n_layers x f64
//! reference:    n_layers x f64
//! has_cov u8    [per layer: dim x dim f64 inverse covariance, row-major]
//! has_gamma u8  [gamma f64]
//! n_sections u32, then per section: tag u32 | byte_len u64 | payload
//! ```
//!
//! Section tags: 1 penultimate Mahalanobis, 2 KNN index, 3 trajectory
//! statistics. Unknown tags are skipped.

use std::io::{Read, Write};

use crate::baselines::{FittedBaselines, KnnIndex, MahalanobisPenultimate, TrajectoryStats};
use crate::codec::{put_f64s, put_len, put_u32, put_u64, ByteReader};
use crate::error::{Error, Result};
use crate::linalg::SpdMatrix;
use crate::trajectory::{LayerScoreKind, LayerScoring, PrototypeBank, ReferenceModel};

pub const FTRM_MAGIC: [u8; 4] = *b"FTRM";
pub const FTRM_VERSION: u32 = 1;

const TAG_MAHALANOBIS: u32 = 1;
const TAG_KNN: u32 = 2;
const TAG_TRAJECTORY: u32 = 3;

/// Everything stored in one FTRM file.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: ReferenceModel,
    pub baselines: FittedBaselines,
}

impl From<ReferenceModel> for ModelFile {
    fn from(model: ReferenceModel) -> Self {
        Self {
            model,
            baselines: FittedBaselines::default(),
        }
    }
}

fn put_spd(out: &mut Vec<u8>, m: &SpdMatrix) {
    put_f64s(out, m.values());
}

fn read_spd(r: &mut ByteReader<'_>, dim: usize) -> Result<SpdMatrix> {
    let n = dim.checked_mul(dim).ok_or(Error::Truncated("matrix"))?;
    SpdMatrix::new(dim, r.f64_vec(n, "matrix")?)
}

pub fn encode_model(file: &ModelFile) -> Result<Vec<u8>> {
    let m = &file.model;
    let bank = m.bank();
    let mut out = Vec::new();
    out.extend_from_slice(&FTRM_MAGIC);
    put_u32(&mut out, FTRM_VERSION);
    put_u32(&mut out, m.kind().tag());
    put_len(&mut out, bank.n_layers(), "n_layers")?;
    put_len(&mut out, bank.n_classes(), "n_classes")?;
    for &d in bank.layer_dims() {
        put_len(&mut out, d, "layer dim")?;
    }
    for &c in bank.counts() {
        put_u64(&mut out, c);
    }
    for l in 0..bank.n_layers() {
        for mu in bank.layer_means(l) {
            put_f64s(&mut out, mu);
        }
    }
    put_f64s(&mut out, m.scale());
    put_f64s(&mut out, m.reference());
    match m.scoring() {
        LayerScoring::Projection => out.push(0),
        LayerScoring::Mahalanobis(covs) => {
            out.push(1);
            for c in covs {
                put_spd(&mut out, c);
            }
        }
    }
    match m.gamma() {
        Some(g) => {
            out.push(1);
            put_f64s(&mut out, &[g]);
        }
        None => out.push(0),
    }

    let mut sections: Vec<(u32, Vec<u8>)> = Vec::new();
    let b = &file.baselines;
    if let Some(mp) = &b.mahalanobis {
        let mut s = Vec::new();
        put_len(&mut s, mp.layer, "layer")?;
        put_len(&mut s, mp.cov_inv.dim(), "dim")?;
        put_len(&mut s, mp.means.len(), "n_classes")?;
        for mu in &mp.means {
            put_f64s(&mut s, mu);
        }
        put_spd(&mut s, &mp.cov_inv);
        sections.push((TAG_MAHALANOBIS, s));
    }
    if let Some(k) = &b.knn {
        let mut s = Vec::new();
        put_len(&mut s, k.dim(), "dim")?;
        put_len(&mut s, k.k(), "k")?;
        put_f64s(&mut s, &[k.alpha()]);
        put_u64(&mut s, k.seed());
        put_u64(&mut s, k.len() as u64);
        put_f64s(&mut s, k.rows());
        sections.push((TAG_KNN, s));
    }
    if let Some(t) = &b.trajectory {
        let mut s = Vec::new();
        put_len(&mut s, t.mean.len(), "dim")?;
        put_f64s(&mut s, &t.mean);
        put_spd(&mut s, &t.cov_inv);
        sections.push((TAG_TRAJECTORY, s));
    }
    put_len(&mut out, sections.len(), "n_sections")?;
    for (tag, payload) in sections {
        put_u32(&mut out, tag);
        put_u64(&mut out, payload.len() as u64);
        out.extend_from_slice(&payload);
    }
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelFile> {
    let mut r = ByteReader::new(bytes);
    r.magic(FTRM_MAGIC)?;
    let version = r.u32("version")?;
    if version != FTRM_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let kind_tag = r.u32("kind")?;
    let kind = LayerScoreKind::from_tag(kind_tag)
        .ok_or_else(|| Error::InvalidModel(format!("unknown layer score kind tag {kind_tag}")))?;
    let n_layers = r.u32("n_layers")? as usize;
    let n_classes = r.u32("n_classes")? as usize;
    if n_layers == 0 || n_classes == 0 {
        return Err(Error::InvalidModel("zero layers or classes".into()));
    }
    let dims = (0..n_layers)
        .map(|_| r.u32("layer dim").map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let counts = (0..n_classes).map(|_| r.u64("class count")).collect::<Result<Vec<_>>>()?;
    let means = dims
        .iter()
        .map(|&d| (0..n_classes).map(|_| r.f64_vec(d, "prototype")).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let bank = PrototypeBank::from_means(means, counts)?;
    let scale = r.f64_vec(n_layers, "scale")?;
    let reference = r.f64_vec(n_layers, "reference")?;
    let scoring = match (r.u8("covariance flag")?, kind) {
        (0, LayerScoreKind::Projection) => LayerScoring::Projection,
        (1, LayerScoreKind::Mahalanobis) => LayerScoring::Mahalanobis(
            dims.iter().map(|&d| read_spd(&mut r, d)).collect::<Result<_>>()?,
        ),
        (flag, kind) => {
            return Err(Error::InvalidModel(format!(
                "covariance flag {flag} inconsistent with kind {}",
                kind.name()
            )))
        }
    };
    let gamma = match r.u8("gamma flag")? {
        0 => None,
        1 => Some(r.f64("gamma")?),
        f => return Err(Error::InvalidModel(format!("bad gamma flag {f}"))),
    };
    let model = ReferenceModel::from_parts(bank, scoring, scale, reference, gamma)?;

    let mut baselines = FittedBaselines::default();
    let n_sections = r.u32("section count")?;
    for _ in 0..n_sections {
        let tag = r.u32("section tag")?;
        let len = usize::try_from(r.u64("section length")?).map_err(|_| Error::Truncated("section"))?;
        let mut s = ByteReader::new(r.take(len, "section")?);
        match tag {
            TAG_MAHALANOBIS => {
                let layer = s.u32("layer")? as usize;
                let dim = s.u32("dim")? as usize;
                let c = s.u32("n_classes")? as usize;
                let means = (0..c).map(|_| s.f64_vec(dim, "means")).collect::<Result<Vec<_>>>()?;
                let cov_inv = read_spd(&mut s, dim)?;
                baselines.mahalanobis = Some(MahalanobisPenultimate { layer, means, cov_inv });
            }
            TAG_KNN => {
                let dim = s.u32("dim")? as usize;
                let k = s.u32("k")? as usize;
                let alpha = s.f64("alpha")?;
                let seed = s.u64("seed")?;
                let rows = usize::try_from(s.u64("rows")?).map_err(|_| Error::Truncated("knn rows"))?;
                let n = rows.checked_mul(dim).ok_or(Error::Truncated("knn rows"))?;
                let data = s.f64_vec(n, "knn rows")?;
                baselines.knn = Some(KnnIndex::from_parts(dim, data, k, alpha, seed)?);
            }
            TAG_TRAJECTORY => {
                let dim = s.u32("dim")? as usize;
                let mean = s.f64_vec(dim, "trajectory mean")?;
                let cov_inv = read_spd(&mut s, dim)?;
                baselines.trajectory = Some(TrajectoryStats { mean, cov_inv });
            }
            _ => continue,
        }
        s.finish()?;
    }
    r.finish()?;
    Ok(ModelFile { model, baselines })
}

pub fn read_model<R: Read>(mut reader: R) -> Result<ModelFile> {
    let mut buf = Vec::new();
    reader.read_to_end(&mut buf)?;
    decode_model(&buf)
}

pub fn write_model<W: Write>(file: &ModelFile, mut sink: W) -> Result<()> {
    let bytes = encode_model(file)?;
    sink.write_all(&bytes)?;
    sink.flush()?;
    Ok(())
}

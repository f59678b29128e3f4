//! Out-of-distribution detection from layer-wise functional trajectories.
//!
//! Per-layer features of a classifier are reduced to one score per layer
//! (a softmax-weighted scalar projection onto class prototypes). The vector
//! of those scores is the sample's trajectory. A detector is fitted by
//! averaging max-scaled training trajectories into a reference trajectory,
//! and a test sample is scored by its inner product with that reference.
//!
//! Modules:
//! - [`features`]: the FTX feature exchange format and spatial pooling
//! - [`trajectory`]: prototypes, layer scores, fitting and scoring
//! - [`baselines`]: logit, penultimate-feature and trajectory-distance scores
//! - [`metrics`]: AUROC, TNR at fixed TPR, reports
//! - [`diagnostics`]: halfspace depth, mean/median gaps, layer correlation
//! - [`synth`]: seeded synthetic feature sets
//! - [`persist`]: the FTRM model format

pub mod baselines;
mod codec;
pub mod diagnostics;
pub mod error;
pub mod features;
pub mod linalg;
pub mod metrics;
pub mod persist;
pub mod synth;
pub mod trajectory;

pub use error::{Error, Result};
pub use features::{global_max_pool, read_feature_set, write_feature_set, FeatureSet};
pub use linalg::SpdMatrix;
pub use metrics::{auroc, tnr_at_tpr, DatasetResult, DetectionReport};
pub use persist::{read_model, write_model, ModelFile};
pub use trajectory::{
    decide, fit_prototypes, fit_reference, layer_score, layer_score_mahalanobis, make_trajectory, softmax,
    threshold_at_tpr, Decision, LayerScoreKind, LayerScoring, PrototypeBank, ReferenceModel, ScoreNormalization,
    Trajectory, TrajectorySet,
};

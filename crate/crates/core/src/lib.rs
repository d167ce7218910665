//! Symmetrical bidirectional knowledge alignment for cross-modality
//! retrieval, at desk scale.
//!
//! The crate trains a small two-headed MLP encoder with an alternating
//! teacher/student procedure: the student learns from hard labels, a
//! modality-alignment constraint against a fixed reference distribution, and
//! the teacher's soft labels; after a warm-up window the teacher starts
//! updating towards the student's soft labels in return. At retrieval time,
//! gallery embeddings are clustered per subspace with EM-fitted Gaussian
//! mixtures and queries are ranked by a fused dissimilarity that adds the
//! distances to each item's assigned cluster centroids.
//!
//! Modules:
//! - [`numerics`]: softmax/KL/distance primitives, seeded draws, finite
//!   differences.
//! - [`model`]: the MLP encoder, explicit backward pass, Adam, checkpoints.
//! - [`losses`]: the four loss terms and the composite student objective.
//! - [`data`]: labeled samples, the synthetic generator, embedding files.
//! - [`trainer`]: teacher pretraining and the alternating training loop.
//! - [`gmm`]: diagonal-covariance mixtures fitted by EM.
//! - [`codebook`]: subspace codebooks, fused dissimilarity, ranking.
//! - [`metrics`]: mAP/precision evaluation.
//! - [`ablation`]: the end-to-end pipeline, ablation table and sweeps.
//! - [`gradcheck`]: the finite-difference verification suite.

pub mod ablation;
pub mod codebook;
pub mod data;
pub mod error;
pub mod format;
pub mod gmm;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod trainer;

pub use ablation::{run_ablation, AblationRow, AblationTable, BenchmarkConfig};
pub use codebook::{MatchMode, SubspaceCodebook};
pub use data::{Dataset, DatasetConfig, LabeledSample, Modality};
pub use error::{Error, Result};
pub use gmm::{EmConfig, GmmModel};
pub use gradcheck::{run_gradcheck, GradcheckReport};
pub use losses::{LossBreakdown, SemanticPrior};
pub use metrics::{MetricsReport, RankedResult};
pub use model::{AdamState, ForwardCache, ModelDims, ModelParams};
pub use numerics::{Distribution, RngSeed};
pub use trainer::{TrainConfig, TrainHistory, TrainSeeds};

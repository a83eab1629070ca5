//! Fiber clustering atlas construction and tract analysis.
//!
//! The pipeline consumes tractograms (streamline sets with per-point FA/MD),
//! aligns subjects into a common space with a groupwise kernel-entropy
//! registration, clusters fibers in a Nyström spectral embedding, labels the
//! clusters from a reference atlas, and parcellates new subjects into
//! anatomical tracts for per-tract measures and developmental statistics.

pub mod atlas;
pub mod error;
pub mod io;
pub mod kmeans;
pub mod measures;
pub mod metric;
pub mod optimize;
pub mod parcellation;
pub mod registration;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod synth;
pub mod tractogram;
pub mod transform;

pub use error::{BundleError, Error, Result};
pub use metric::{affinity, mcp, mcp_directed, pairwise_distance_matrix, FiberDistanceParams, McpVariant};
pub use tractogram::{
    apply_transform, resample, subsample, Group, IngestReport, ResampledFiber, Sex, Streamline, SubjectMeta,
    Tractogram,
};
pub use transform::{AffineTransform, Point};

pub use atlas::{build_atlas, load_atlas, save_atlas, transfer_labels, AnatomicalLabel, Atlas, AtlasConfig};
pub use measures::{extract_measures, Aggregation, Measure, TractMeasureRow, TractMeasureTable};
pub use parcellation::{identification_rate, identify, parcellate, IdentificationResult, Parcellation, ParcellationConfig};
pub use registration::{group_objective, register_group, register_to_atlas, RegistrationConfig, TransformFamily};
pub use spectral::{embed, fit_nystrom, FiberEmbedding, NystromConfig, NystromModel};
pub use kmeans::{assign, cluster, ClusterModel, KMeansConfig};
pub use stats::{adjusted_rand_index, bonferroni, compare_groups, glm_fit, paired_ttest, GlmResult, GlmSpec};

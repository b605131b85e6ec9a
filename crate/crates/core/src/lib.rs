//! Manifold alignment with orthogonality constraints for feature-space style transfer.
//!
//! The pipeline builds a sparse cross-domain affinity between content and
//! style feature locations ([`affinity`]), learns a pair of orthogonal
//! projections into a common subspace ([`optim`]) and moves features between
//! the two spaces with the composite orthogonal map ([`transfer`]). The
//! [`io`] and [`job`] modules provide the on-disk tensor format and the
//! end-to-end job runner used by the `mast` command-line tool.

pub mod affinity;
pub mod error;
pub mod exec;
pub mod feature;
pub mod io;
pub mod job;
pub mod optim;
pub mod transfer;

pub use affinity::{
    knn_affinity, merge_user_regions, normalize_affinity, normalize_columns, semantic_affinity,
    AffinityMatrix, NormalizedAffinity, DEFAULT_K,
};
pub use error::{MastError, Result};
pub use exec::Execution;
pub use feature::{validate_regions, FeatureMap, ProjectionPair, RegionKind, RegionSpec};
pub use optim::{align, procrustes_oracle, CrossKernel, SolverConfig, SolverReport, Termination};
pub use transfer::{transfer_to_content, transfer_to_style};

//! Transformation synchronisation and multi-shape alignment.
//!
//! Noisy pairwise transforms between `k` objects are replaced by the nearest
//! transitively consistent set, obtained from the approximate null space of
//! the stacked pairwise matrix. The same machinery solves generalised
//! Procrustes analysis by synchronising all pairwise absolute-orientation
//! solutions.

pub mod error;
pub mod io;
pub mod procrustes;
pub mod simulate;
pub mod sync;
pub mod transform;

pub use error::{Error, Result};
pub use sync::{
    append_homogeneous_row, build_z, consistency_residual, extract_null_basis, fix_gauge,
    reconstruct_pairwise, synchronise, NullBasis, PairwiseTransformSet, SyncResult,
};
pub use transform::{
    decompose_similarity, project_class, project_orthogonal, scale_arithmetic, scale_geometric,
    Kind, ScaleMode, SimilarityParts, Transform, TransformClass,
};
pub use procrustes::{
    apply, gpa_iterative_mean, gpa_reference, gpa_reference_with, gpa_sync, gpa_sync_with, mean_shape, shape_error,
    solve_aop, GpaMethod, GpaOutcome, IterativeMeanOptions, PointCloud,
};
pub use simulate::{
    add_gaussian_noise, drop_points, gen_ground_truth, gen_shapes, run_experiment,
    scramble_correspondences, transform_error, ExperimentConfig, GroundTruth, ResultRow,
};

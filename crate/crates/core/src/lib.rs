//! Class-agnostic BEV motion estimation from optimal-transport pseudo
//! labels.
//!
//! Point frames are voxelized into a bird's-eye-view grid, non-ground
//! cells of the current frame are matched to each future (and past) frame
//! with entropic optimal transport, and the resulting pseudo labels
//! supervise per-scene motion fields regularized by cluster consistency
//! and forward/backward temporal consistency.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*F32`
//! and `*F64` aliases below name the common instantiations.

pub mod clustering;
pub mod config;
pub mod error;
pub mod eval;
pub mod frame;
pub mod gradcheck;
pub mod losses;
pub mod motion;
pub mod optimizer;
pub mod preprocess;
pub mod scalar;
pub mod synth;
pub mod transport;

pub use clustering::{bfs_cluster, cluster_quality, ClusterQuality, ClusterSet};
pub use config::{validate_config, Config, GridSpec};
pub use error::{Error, Result, Violation};
pub use eval::{bucketed_errors, divergence_report, BucketStats, BucketedMetrics, DivergenceReport, SpeedBucket};
pub use frame::{PointFrame, SceneSequence};
pub use losses::{total_loss, LossParams, LossReport, LossToggles};
pub use motion::{Direction, MotionStack};
pub use optimizer::{optimize_scene, run_suite, OptState};
pub use preprocess::{extract_cells, remove_ground, voxelize, BevGrid, CellSet};
pub use scalar::Scalar;
pub use synth::{generate, recipe_suite, SceneRecipe};
pub use transport::{cost_matrix, label_stack, pseudo_labels, sinkhorn, CostMatrix, TransportPlan};

pub type MotionStackF32 = MotionStack<f32>;
pub type MotionStackF64 = MotionStack<f64>;
pub type TransportPlanF32 = TransportPlan<f32>;
pub type TransportPlanF64 = TransportPlan<f64>;
pub type LossReportF32 = LossReport<f32>;
pub type LossReportF64 = LossReport<f64>;
pub type OptStateF32 = OptState<f32>;
pub type OptStateF64 = OptState<f64>;

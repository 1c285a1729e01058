//! Category-level non-rigid registration.
//!
//! A canonical model of an object category is warped onto partially observed
//! instances. Per-pixel deformations of the visible surface (produced by a
//! pluggable [`oracle`]) are lifted to a full deformation field through a
//! low-dimensional [`shape_space`] learned from Coherent Point Drift
//! registrations of the category's training instances.
//!
//! Module map:
//!
//! - [`geometry`]: point clouds, meshes, the Gaussian kernel and warps
//! - [`cpd`]: non-rigid Coherent Point Drift
//! - [`shape_space`]: PCA deformation space and its file format
//! - [`completion`]: inference of occluded deformations by least squares
//! - [`imaging`]: point splatting, deformation-target rasterization, zoom
//! - [`dataset`]: synthetic training corpus generation
//! - [`oracle`]: stand-ins for the deformation-predicting network
//! - [`evaluation`]: error metric and evaluation protocols
//! - [`cli`]: the `morphfield` command line
//!
//! Runnable walkthroughs live in the crate's `examples/` directory.

pub mod cli;
pub mod completion;
pub mod cpd;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod imaging;
pub mod io;
mod linalg;
pub mod oracle;
pub mod pipeline;
pub mod shape_space;
pub mod spatial;
pub mod synthetic;

pub use error::{Error, Result};
pub use geometry::{
    apply_deformation, expand_kernel, gaussian_kernel, viewpoint_sphere, voxel_downsample,
    CameraView, DeformationField, Intrinsics, KernelParams, Mesh, Point, PointCloud, Pose,
};

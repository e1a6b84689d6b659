//! Volumetric spherical Gaussian (VSG) lighting.
//!
//! A VSG volume is a voxel grid where every cell carries an opacity and a
//! spherical Gaussian emission lobe. Incident radiance at any point is found
//! by alpha compositing along a ray through the grid. On top of that this
//! crate provides Lambertian re-rendering with soft HDR clipping, analytic
//! reverse-mode gradients for the whole chain, the supervision losses, an
//! Adam-based volume fitter, analytic oracle scenes and the file formats.

pub mod camera;
pub mod composite;
pub mod error;
pub mod grad;
pub mod image;
pub mod io;
pub mod loss;
pub mod math;
pub mod objective;
pub mod optim;
pub mod quadrature;
pub mod scene;
pub mod shading;
pub mod surface;
pub mod unproject;
pub mod volume;

pub use camera::{Camera, Intrinsics, Pose};
pub use composite::{composite_depth, composite_radiance, MarchConfig, Sampling};
pub use error::{Error, Result};
pub use grad::{grad_check, GradCheckReport, GradientTape};
pub use image::{Image, RenderedImage, RgbImage, ScalarImage, ValueRange};
pub use math::{Rgb, Vec3};
pub use objective::{LossTerms, LossWeights, Objective, Observation};
pub use optim::{fit_volume, FitConfig, FitResult};
pub use quadrature::{fibonacci_hemisphere, HemisphereQuadrature};
pub use shading::{soft_clip, ShadingOptions};
pub use surface::SurfaceBuffers;
pub use volume::{sg_eval, Aabb, Interp, Ray, SphericalGaussian, VsgVolume};

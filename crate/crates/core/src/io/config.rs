//! Scene configuration JSON. Paths inside a config are kept exactly as
//! written and resolved against the directory of the config file on use.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Rotation3};
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::composite::{MarchConfig, Sampling};
use crate::error::{Error, Result};
use crate::io::{load_pfm, load_png, load_rgb, load_scalar, load_surface, load_vsg1};
use crate::loss::MaskImage;
use crate::math::{Rgb, Vec3};
use crate::objective::{LossWeights, Observation};
use crate::optim::{AdamConfig, FitConfig};
use crate::shading::ShadingOptions;
use crate::surface::SurfaceBuffers;
use crate::volume::{Aabb, Interp, SphericalGaussian, VsgVolume};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeConfig {
    pub dims: [usize; 3],
    pub bounds: Aabb,
    /// Optional VSG1 file to start from instead of a uniform volume.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<String>,
    #[serde(default = "default_init_alpha")]
    pub init_alpha: f64,
    #[serde(default = "default_init_color")]
    pub init_color: f64,
}

/// Cells per axis of the default grid.
pub const DEFAULT_GRID_DIMS: usize = 128;
/// Edge length in meters of the default cube, giving 5 cm voxels.
pub const DEFAULT_GRID_EXTENT: f64 = 6.4;

impl VolumeConfig {
    /// Default grid: a cube centered on the camera.
    pub fn camera_centered(camera: &Camera) -> Self {
        Self {
            dims: [DEFAULT_GRID_DIMS; 3],
            bounds: Aabb::centered(camera.center(), DEFAULT_GRID_EXTENT),
            initial: None,
            init_alpha: default_init_alpha(),
            init_color: default_init_color(),
        }
    }
}

fn default_init_alpha() -> f64 {
    0.1
}

fn default_init_color() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservationSpec {
    Panorama {
        image: String,
        center: [f64; 3],
        /// Row-major world-from-panorama rotation; identity when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rotation: Option<[[f64; 3]; 3]>,
    },
    Perspective {
        image: String,
        /// Key into `cameras`.
        camera: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        depth: Option<String>,
    },
    AlbedoGt {
        image: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mask: Option<String>,
    },
    NormalGt {
        image: String,
    },
    DepthGt {
        image: String,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub iterations: usize,
    pub adam: AdamConfig,
    pub eval_every: usize,
    pub pixel_budget: usize,
    /// Ray-march samples; 0 means one per voxel crossing.
    pub samples: usize,
    pub interp: Interp,
    pub k: usize,
    pub share_neighbors: bool,
    pub surface_offset: f64,
    pub tau: f64,
    pub fit_surface: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let fit = FitConfig::default();
        Self {
            iterations: fit.iterations,
            adam: fit.adam,
            eval_every: fit.eval_every,
            pixel_budget: fit.pixel_budget,
            samples: 128,
            interp: Interp::Trilinear,
            k: fit.shading.k,
            share_neighbors: fit.shading.share_neighbors,
            surface_offset: fit.shading.surface_offset,
            tau: fit.shading.tau,
            fit_surface: fit.fit_surface,
        }
    }
}

impl OptimizerConfig {
    pub fn march(&self) -> MarchConfig {
        MarchConfig {
            sampling: if self.samples == 0 {
                Sampling::VoxelCrossings
            } else {
                Sampling::Uniform(self.samples)
            },
            interp: self.interp,
        }
    }

    pub fn fit_config(&self, seed: u64) -> FitConfig {
        let march = self.march();
        FitConfig {
            iterations: self.iterations,
            adam: self.adam,
            seed,
            eval_every: self.eval_every,
            pixel_budget: self.pixel_budget,
            shading: ShadingOptions {
                k: self.k,
                share_neighbors: self.share_neighbors,
                march,
                surface_offset: self.surface_offset,
                tau: self.tau,
            },
            march,
            fit_surface: self.fit_surface,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub volume: VolumeConfig,
    #[serde(default)]
    pub cameras: BTreeMap<String, Camera>,
    #[serde(default)]
    pub observations: Vec<ObservationSpec>,
    /// Directory holding `albedo.pfm`, `normal.pfm`, `depth.pfm` for the
    /// re-rendering term. Falls back to the ground-truth observations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surface: Option<String>,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl SceneConfig {
    pub fn new(volume: VolumeConfig) -> Self {
        Self {
            volume,
            cameras: BTreeMap::new(),
            observations: Vec::new(),
            surface: None,
            weights: LossWeights::default(),
            optimizer: OptimizerConfig::default(),
            seed: 0,
            base_dir: PathBuf::new(),
        }
    }

    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: SceneConfig = serde_json::from_str(text)?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        Self::from_json(&text, &base).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Fails if the text would not load back, e.g. when a non-finite value
    /// would be written as `null`.
    pub fn to_json(&self) -> Result<String> {
        let text = serde_json::to_string_pretty(self)?;
        Self::from_json(&text, &self.base_dir)
            .map_err(|e| Error::Config(format!("config would not load back: {e}")))?;
        Ok(text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn set_base_dir(&mut self, dir: &Path) {
        self.base_dir = dir.to_path_buf();
    }

    /// `p` relative to the config file (absolute paths pass through).
    pub fn resolve(&self, p: &str) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn validate(&self) -> Result<()> {
        let v = &self.volume;
        if v.dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("volume.dims must be positive".into()));
        }
        if (0..3).any(|a| !(v.bounds.extent[a] > 0.0)) {
            return Err(Error::Config("volume.bounds.extent must be positive".into()));
        }
        if !(0.0..=1.0).contains(&v.init_alpha) || !(v.init_color >= 0.0) {
            return Err(Error::Config("init_alpha must lie in [0,1] and init_color be nonnegative".into()));
        }
        self.weights.validate()?;
        for o in &self.observations {
            if let ObservationSpec::Perspective { camera, .. } = o {
                if !self.cameras.contains_key(camera) {
                    return Err(Error::Config(format!("observation names unknown camera `{camera}`")));
                }
            }
        }
        Ok(())
    }

    /// The starting volume: the `initial` file if given, otherwise a uniform
    /// volume with isotropic lobes.
    pub fn initial_volume(&self) -> Result<VsgVolume> {
        let v = &self.volume;
        if let Some(p) = &v.initial {
            let vol = load_vsg1(&self.resolve(p))?;
            if vol.dims() != v.dims {
                return Err(Error::Shape(format!(
                    "initial volume is {:?} but config says {:?}",
                    vol.dims(),
                    v.dims
                )));
            }
            return Ok(vol);
        }
        let mut vol = VsgVolume::empty(v.dims, v.bounds)?;
        let sg = SphericalGaussian::isotropic(Rgb::repeat(v.init_color));
        for i in 0..vol.len() {
            vol.set(i, v.init_alpha, &sg);
        }
        Ok(vol)
    }

    pub fn surface_buffers(&self) -> Result<Option<SurfaceBuffers>> {
        self.surface.as_ref().map(|s| load_surface(&self.resolve(s))).transpose()
    }
}

fn rotation(m: &[[f64; 3]; 3]) -> Result<Rotation3<f64>> {
    let m = Matrix3::from_fn(|r, c| m[r][c]);
    let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
    if ortho > 1e-6 || (m.determinant() - 1.0).abs() > 1e-6 {
        return Err(Error::Config("panorama rotation is not a proper rotation".into()));
    }
    Ok(Rotation3::from_matrix_unchecked(m))
}

fn load_mask(path: &Path) -> Result<MaskImage> {
    let is_png = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        Ok(load_png(path)?.map(|p| p.max() > 0.5))
    } else {
        Ok(load_pfm(path)?.into_scalar()?.map(|v| *v > 0.5))
    }
}

/// Reads every image listed in the config's observation manifest.
pub fn load_observations(cfg: &SceneConfig) -> Result<Vec<Observation>> {
    let with_path = |p: &str, r: Result<Observation>| {
        r.map_err(|e| Error::Config(format!("{}: {e}", cfg.resolve(p).display())))
    };
    cfg.observations
        .iter()
        .map(|o| match o {
            ObservationSpec::Panorama { image, center, rotation: r } => with_path(
                image,
                (|| {
                    Ok(Observation::Panorama {
                        center: Vec3::from(*center),
                        orientation: r.as_ref().map(rotation).transpose()?.unwrap_or_else(Rotation3::identity),
                        image: load_rgb(&cfg.resolve(image))?,
                    })
                })(),
            ),
            ObservationSpec::Perspective { image, camera, depth } => with_path(
                image,
                (|| {
                    let camera = cfg.cameras.get(camera).cloned().ok_or_else(|| {
                        Error::Config(format!("unknown camera `{camera}`"))
                    })?;
                    Ok(Observation::Perspective {
                        camera,
                        image: load_rgb(&cfg.resolve(image))?,
                        depth: depth.as_ref().map(|d| load_scalar(&cfg.resolve(d))).transpose()?,
                    })
                })(),
            ),
            ObservationSpec::AlbedoGt { image, mask } => with_path(
                image,
                (|| {
                    Ok(Observation::AlbedoGt {
                        image: load_rgb(&cfg.resolve(image))?,
                        mask: mask.as_ref().map(|m| load_mask(&cfg.resolve(m))).transpose()?,
                    })
                })(),
            ),
            ObservationSpec::NormalGt { image } => with_path(
                image,
                load_rgb(&cfg.resolve(image)).map(|image| Observation::NormalGt { image }),
            ),
            ObservationSpec::DepthGt { image } => with_path(
                image,
                load_scalar(&cfg.resolve(image)).map(|image| Observation::DepthGt { image }),
            ),
        })
        .collect()
}

//! `vsg` command-line tool.
//!
//! Exit status is 0 on success, 1 for bad input (missing files, parse or
//! shape errors) and 2 for numerical failures (non-finite values, failed
//! gradient check). `VSG_THREADS` sets the worker thread count.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Rotation3;

use vsg_core::camera::Camera;
use vsg_core::composite::{MarchConfig, Sampling};
use vsg_core::grad::grad_check;
use vsg_core::image::{RenderedImage, RgbImage};
use vsg_core::io::{
    load_observations, load_rgb, load_surface, load_vsg1, save_pfm, save_rgb, save_surface, save_vsg1, ObservationSpec,
    PfmImage, SceneConfig, VolumeConfig,
};
use vsg_core::math::{Rgb, Vec3};
use vsg_core::optim::fit_with_surface;
use vsg_core::scene::{generate_observations, grad_check_objective, preset, voxelize, Preset};
use vsg_core::shading::{insert_sphere, render_panorama, render_perspective_from_volume, shade_lambertian, Material, Sphere};
use vsg_core::{Error, Interp, Observation, ShadingOptions, VsgVolume};

#[derive(Parser)]
#[command(name = "vsg", version, about = "Volumetric spherical Gaussian lighting tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Equirectangular environment map at a 3D point.
    RenderPano(RenderPano),
    /// Perspective color image and z-depth of a volume.
    RenderView(RenderView),
    /// Lambertian re-render of surface buffers lit by a volume.
    Rerender(Rerender),
    /// Composite a virtual sphere into an image.
    Insert(Insert),
    /// Fit a volume to the observations of a scene config.
    Fit(Fit),
    /// Write an analytic preset scene with its observations.
    GenScene(GenScene),
    /// Compare analytic gradients with finite differences.
    GradCheck(GradCheck),
}

#[derive(Args, Clone, Copy)]
struct MarchArgs {
    /// Samples per ray; 0 takes one sample per voxel crossed.
    #[arg(long, default_value_t = 128)]
    samples: usize,
    #[arg(long, value_enum, default_value_t = InterpArg::Trilinear)]
    interp: InterpArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum InterpArg {
    Nearest,
    Trilinear,
}

impl MarchArgs {
    fn config(&self) -> MarchConfig {
        MarchConfig {
            sampling: if self.samples == 0 {
                Sampling::VoxelCrossings
            } else {
                Sampling::Uniform(self.samples)
            },
            interp: match self.interp {
                InterpArg::Nearest => Interp::Nearest,
                InterpArg::Trilinear => Interp::Trilinear,
            },
        }
    }
}

#[derive(Args)]
struct RenderPano {
    #[arg(long)]
    volume: PathBuf,
    /// Panorama center as `x,y,z`.
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
    pos: Vec3,
    /// Write unclipped radiance (requires a .pfm output).
    #[arg(long)]
    hdr: bool,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 128)]
    height: usize,
    /// Output image; defaults to pano.pfm with --hdr and pano.png otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    march: MarchArgs,
}

#[derive(Args)]
struct RenderView {
    #[arg(long)]
    volume: PathBuf,
    /// Camera JSON.
    #[arg(long)]
    camera: PathBuf,
    #[arg(long, default_value = "view.png")]
    out: PathBuf,
    #[arg(long, default_value = "depth.pfm")]
    depth_out: PathBuf,
    #[command(flatten)]
    march: MarchArgs,
}

#[derive(Args)]
struct Rerender {
    #[arg(long)]
    volume: PathBuf,
    /// Directory with albedo.pfm, normal.pfm and depth.pfm.
    #[arg(long)]
    surf: PathBuf,
    /// Camera JSON; defaults to camera.json in the surface directory.
    #[arg(long)]
    camera: Option<PathBuf>,
    #[arg(long = "K", default_value_t = 50)]
    k: usize,
    #[arg(long)]
    share_neighbors: bool,
    /// Observed image; when given the error image `I - Ĩ` is written too.
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long, default_value = "rerender.png")]
    out: PathBuf,
    #[arg(long, default_value = "rerender_error.pfm")]
    error_out: PathBuf,
    #[command(flatten)]
    march: MarchArgs,
}

#[derive(Args)]
struct Insert {
    #[arg(long)]
    volume: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    surf: PathBuf,
    /// Camera JSON; defaults to camera.json in the surface directory.
    #[arg(long)]
    camera: Option<PathBuf>,
    /// Sphere as `cx,cy,cz,r`.
    #[arg(long, allow_hyphen_values = true)]
    sphere: String,
    /// `mirror`, `diffuse:a` or `diffuse:r,g,b`.
    #[arg(long, default_value = "diffuse:0.8")]
    material: String,
    #[arg(long = "K", default_value_t = 50)]
    k: usize,
    #[arg(long, default_value = "insert.png")]
    out: PathBuf,
    #[command(flatten)]
    march: MarchArgs,
}

#[derive(Args)]
struct Fit {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "fitted.vsg")]
    out: PathBuf,
    /// Loss history CSV; defaults to the output path with a .csv extension.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda_rerender: Option<f64>,
}

#[derive(Args)]
struct GenScene {
    #[arg(long)]
    preset: Preset,
    #[arg(long)]
    out: PathBuf,
    /// Grid size of the voxelized reference volume.
    #[arg(long, default_value_t = 32)]
    dims: usize,
    /// Grid size written into the scene config for fitting.
    #[arg(long, default_value_t = 16)]
    fit_dims: usize,
    #[arg(long, default_value_t = 64)]
    pano_width: usize,
    #[arg(long, default_value_t = 32)]
    pano_height: usize,
    /// Write unclipped observations (PFM) instead of clipped PNGs.
    #[arg(long)]
    hdr: bool,
}

#[derive(Args)]
struct GradCheck {
    #[arg(long, default_value_t = 1000)]
    probes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "box-lamp")]
    preset: Preset,
    #[arg(long, default_value_t = 16)]
    dims: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

/// Failure that maps to exit status 2.
#[derive(Debug)]
struct Numerical(String);

impl std::fmt::Display for Numerical {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Numerical {}

fn parse_floats(s: &str, n: usize, what: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| anyhow!("{what} `{s}` must be {n} comma-separated numbers"))?;
    if v.len() != n || v.iter().any(|x| !x.is_finite()) {
        bail!("{what} `{s}` must be {n} comma-separated finite numbers");
    }
    Ok(v)
}

fn parse_vec3(s: &str) -> std::result::Result<Vec3, String> {
    parse_floats(s, 3, "position")
        .map(|v| Vec3::new(v[0], v[1], v[2]))
        .map_err(|e| e.to_string())
}

fn parse_material(s: &str) -> Result<Material> {
    if s == "mirror" {
        return Ok(Material::Mirror);
    }
    let Some(a) = s.strip_prefix("diffuse:") else {
        bail!("material `{s}` must be `mirror` or `diffuse:<albedo>`");
    };
    let albedo = match parse_floats(a, 1, "albedo") {
        Ok(v) => Rgb::repeat(v[0]),
        Err(_) => {
            let v = parse_floats(a, 3, "albedo")?;
            Rgb::new(v[0], v[1], v[2])
        }
    };
    if albedo.iter().any(|c| !(0.0..=1.0).contains(c)) {
        bail!("albedo must lie in [0, 1]");
    }
    Ok(Material::Diffuse(albedo))
}

fn read_volume(path: &Path) -> Result<VsgVolume> {
    load_vsg1(path).with_context(|| format!("reading volume {}", path.display()))
}

fn read_camera(path: &Path) -> Result<Camera> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading camera {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing camera {}", path.display()))
}

fn surface_camera(camera: &Option<PathBuf>, surf: &Path) -> Result<Camera> {
    read_camera(&camera.clone().unwrap_or_else(|| surf.join("camera.json")))
}

fn check_finite(img: &RgbImage, what: &str) -> Result<()> {
    if let Some(i) = img.pixels().iter().position(|p| p.iter().any(|c| !c.is_finite())) {
        return Err(Numerical(format!("{what} has a non-finite value at pixel {i}")).into());
    }
    Ok(())
}

fn write_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    save_rgb(path, img).with_context(|| format!("writing {}", path.display()))
}

fn render_pano(a: RenderPano) -> Result<()> {
    let vol = read_volume(&a.volume)?;
    if a.width == 0 || a.height == 0 {
        bail!("panorama size must be positive");
    }
    let out = a
        .out
        .unwrap_or_else(|| PathBuf::from(if a.hdr { "pano.pfm" } else { "pano.png" }));
    if a.hdr && out.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        bail!("--hdr output must be a .pfm file, got {}", out.display());
    }
    let img = render_panorama(&a.pos, &Rotation3::identity(), &vol, (a.width, a.height), !a.hdr, &a.march.config());
    check_finite(&img.pixels, "panorama")?;
    write_rgb(&out, &img.pixels)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn render_view(a: RenderView) -> Result<()> {
    let vol = read_volume(&a.volume)?;
    let camera = read_camera(&a.camera)?;
    let (img, depth) = render_perspective_from_volume(&camera, &vol, &a.march.config());
    check_finite(&img.pixels, "view")?;
    write_rgb(&a.out, &img.pixels)?;
    save_pfm(&a.depth_out, &PfmImage::Gray(depth)).with_context(|| format!("writing {}", a.depth_out.display()))?;
    println!("wrote {} and {}", a.out.display(), a.depth_out.display());
    Ok(())
}

fn shading_options(k: usize, share_neighbors: bool, march: MarchConfig) -> Result<ShadingOptions> {
    if k == 0 {
        bail!("--K must be at least 1");
    }
    Ok(ShadingOptions {
        k,
        share_neighbors,
        march,
        ..ShadingOptions::default()
    })
}

fn rerender(a: Rerender) -> Result<()> {
    let vol = read_volume(&a.volume)?;
    let surf = load_surface(&a.surf).with_context(|| format!("reading surface {}", a.surf.display()))?;
    let camera = surface_camera(&a.camera, &a.surf)?;
    let opts = shading_options(a.k, a.share_neighbors, a.march.config())?;
    let r = shade_lambertian(&surf, &camera, &vol, &opts)?;
    check_finite(&r.ldr.pixels, "re-render")?;
    write_rgb(&a.out, &r.ldr.pixels)?;
    println!("wrote {}", a.out.display());
    if let Some(p) = &a.image {
        let observed = load_rgb(p).with_context(|| format!("reading image {}", p.display()))?;
        if !observed.same_dims(&r.ldr.pixels) {
            bail!(Error::Shape(format!(
                "image {} is {:?} but the surface buffers are {:?}",
                p.display(),
                observed.dims(),
                r.ldr.pixels.dims()
            )));
        }
        let err = RgbImage::from_fn(observed.width(), observed.height(), |x, y| {
            observed.get(x, y) - r.ldr.pixels.get(x, y)
        });
        save_pfm(&a.error_out, &PfmImage::Rgb(err)).with_context(|| format!("writing {}", a.error_out.display()))?;
        println!("wrote {}", a.error_out.display());
    }
    Ok(())
}

fn insert(a: Insert) -> Result<()> {
    let vol = read_volume(&a.volume)?;
    let image = load_rgb(&a.image).with_context(|| format!("reading image {}", a.image.display()))?;
    let surf = load_surface(&a.surf).with_context(|| format!("reading surface {}", a.surf.display()))?;
    let camera = surface_camera(&a.camera, &a.surf)?;
    let s = parse_floats(&a.sphere, 4, "sphere")?;
    if s[3] < 0.0 {
        bail!("sphere radius must be nonnegative");
    }
    let sphere = Sphere {
        center: Vec3::new(s[0], s[1], s[2]),
        radius: s[3],
        material: parse_material(&a.material)?,
    };
    let opts = shading_options(a.k, false, a.march.config())?;
    let out = insert_sphere(&RenderedImage::ldr(image), &camera, &surf, &vol, &sphere, &opts)?;
    check_finite(&out.pixels, "composite")?;
    write_rgb(&a.out, &out.pixels)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn fit(a: Fit) -> Result<()> {
    let mut cfg = SceneConfig::load(&a.config)?;
    if let Some(n) = a.iterations {
        cfg.optimizer.iterations = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(lr) = a.lr {
        cfg.optimizer.adam.lr = lr;
    }
    if let Some(l) = a.lambda_rerender {
        cfg.weights.lambda_rerender = l;
    }
    cfg.weights.validate()?;
    let observations = load_observations(&cfg)?;
    let init = cfg.initial_volume()?;
    let surface = match cfg.surface_buffers()? {
        Some(s) => Some(s),
        None => vsg_core::optim::surface_from_observations(&observations),
    };
    let fit_cfg = cfg.optimizer.fit_config(cfg.seed);
    let result = fit_with_surface(&init, surface, &observations, &cfg.weights, &fit_cfg)?;
    save_vsg1(&a.out, &result.volume).with_context(|| format!("writing {}", a.out.display()))?;
    let history = a.history.unwrap_or_else(|| a.out.with_extension("csv"));
    let f = File::create(&history).with_context(|| format!("writing {}", history.display()))?;
    result.write_history_csv(BufWriter::new(f))?;
    let meta = a.out.with_extension("json");
    let metadata = serde_json::json!({
        "seed": cfg.seed,
        "weights": cfg.weights,
        "optimizer": cfg.optimizer,
        "best_iteration": result.best.iteration,
        "best_total": result.best.terms.total,
    });
    std::fs::write(&meta, serde_json::to_string_pretty(&metadata)? + "\n")
        .with_context(|| format!("writing {}", meta.display()))?;
    println!(
        "best total loss {:.6e} at iteration {}; wrote {}, {} and {}",
        result.best.terms.total,
        result.best.iteration,
        a.out.display(),
        history.display(),
        meta.display()
    );
    Ok(())
}

fn gen_scene(a: GenScene) -> Result<()> {
    if a.dims < 2 || a.fit_dims < 1 {
        bail!("--dims must be at least 2 and --fit-dims at least 1");
    }
    let ps = preset(a.preset);
    let scene = &ps.scene;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let dir = &a.out;
    let ext = if a.hdr { "pfm" } else { "png" };
    std::fs::write(dir.join("analytic.json"), serde_json::to_string_pretty(scene)? + "\n")?;
    std::fs::write(dir.join("camera.json"), serde_json::to_string_pretty(&scene.camera)? + "\n")?;
    save_vsg1(&dir.join("truth.vsg"), &voxelize(scene, [a.dims; 3])?)?;

    let observations = generate_observations(scene, &ps.poses, (a.pano_width, a.pano_height), !a.hdr)?;
    let mut cfg = SceneConfig::new(VolumeConfig {
        dims: [a.fit_dims; 3],
        bounds: scene.bounds,
        initial: None,
        init_alpha: 0.1,
        init_color: 0.5,
    });
    cfg.cameras.insert("main".into(), scene.camera);
    let mut pano = 0;
    for o in &observations {
        match o {
            Observation::Panorama { center, image, .. } => {
                let name = format!("pano_{pano}.{ext}");
                write_rgb(&dir.join(&name), image)?;
                cfg.observations.push(ObservationSpec::Panorama {
                    image: name,
                    center: [center.x, center.y, center.z],
                    rotation: None,
                });
                pano += 1;
            }
            Observation::Perspective { image, depth, .. } => {
                let name = format!("view.{ext}");
                write_rgb(&dir.join(&name), image)?;
                let depth_name = depth
                    .as_ref()
                    .map(|d| -> Result<String> {
                        save_pfm(&dir.join("view_depth.pfm"), &PfmImage::Gray(d.clone()))?;
                        Ok("view_depth.pfm".into())
                    })
                    .transpose()?;
                cfg.observations.push(ObservationSpec::Perspective {
                    image: name,
                    camera: "main".into(),
                    depth: depth_name,
                });
            }
            Observation::AlbedoGt { .. } => cfg.observations.push(ObservationSpec::AlbedoGt {
                image: "surface/albedo.pfm".into(),
                mask: None,
            }),
            Observation::NormalGt { .. } => cfg.observations.push(ObservationSpec::NormalGt {
                image: "surface/normal.pfm".into(),
            }),
            Observation::DepthGt { .. } => cfg.observations.push(ObservationSpec::DepthGt {
                image: "surface/depth.pfm".into(),
            }),
        }
    }
    let surface = vsg_core::optim::surface_from_observations(&observations)
        .ok_or_else(|| anyhow!("preset produced no surface ground truth"))?;
    save_surface(&dir.join("surface"), &surface)?;
    std::fs::write(
        dir.join("surface").join("camera.json"),
        serde_json::to_string_pretty(&scene.camera)? + "\n",
    )?;
    cfg.surface = Some("surface".into());
    cfg.save(&dir.join("scene.json"))?;
    println!("wrote scene {} with {} observations to {}", a.preset_name(), cfg.observations.len(), dir.display());
    Ok(())
}

impl GenScene {
    fn preset_name(&self) -> &'static str {
        match self.preset {
            Preset::BoxLamp => "box-lamp",
            Preset::TwoEmitters => "two-emitters",
            Preset::Slab => "slab",
        }
    }
}

fn run_grad_check(a: GradCheck) -> Result<()> {
    if a.probes == 0 {
        bail!("--probes must be at least 1");
    }
    if a.dims < 2 {
        bail!("--dims must be at least 2");
    }
    let mut obj = grad_check_objective(a.preset, [a.dims; 3], a.seed)?;
    let report = grad_check(&mut obj, a.probes, a.seed);
    print!("{report}");
    if !report.passes(a.tol) {
        return Err(Numerical(format!(
            "gradient check failed: max relative error {:.3e} exceeds {:.1e}",
            report.max_rel_error, a.tol
        ))
        .into());
    }
    println!("ok (tolerance {:.1e})", a.tol);
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err.chain().any(|e| {
        e.downcast_ref::<Numerical>().is_some() || e.downcast_ref::<Error>().is_some_and(Error::is_numerical)
    });
    if numerical {
        2
    } else {
        1
    }
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("VSG_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| anyhow!("VSG_THREADS must be a positive integer, got `{v}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = init_threads().and_then(|_| match cli.command {
        Command::RenderPano(a) => render_pano(a),
        Command::RenderView(a) => render_view(a),
        Command::Rerender(a) => rerender(a),
        Command::Insert(a) => insert(a),
        Command::Fit(a) => fit(a),
        Command::GenScene(a) => gen_scene(a),
        Command::GradCheck(a) => run_grad_check(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

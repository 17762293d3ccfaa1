//! The four CLI stages. Each reads its inputs from and writes its artifacts to
//! the configured working directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::config::{
    parse_scene_descriptor, scene_descriptor, EnhancerKind, ProjectionSource, ProviderKind, RunConfig,
};
use super::io::{load_depth, load_normal_png, load_png, save_depth, save_normal_png, save_png};
use super::scene::SyntheticScene;
use crate::coarse::{run_coarse, GuidanceSetup, ReferenceBundle, TrainingLog, ViewSchedule};
use crate::error::{Error, Result};
use crate::extract::{marching_cubes, marching_cubes_solid, occupied_quantile, poisson_sample, regularize_mesh, PoissonConfig};
use crate::field::{render_view, Aabb, CameraPose, Checkpoint, RenderSettings, ShadingMode, VoxelField};
use crate::guidance::{AnalyticOracleProvider, GuidanceProvider};
use crate::ply::{PlyTable, PlyType};
use crate::raster::{psnr, Image};
use crate::refine::{
    optimize_refine, select_mask, splat_render, DeferredRenderer, FeatureCloud, IdentityEnhancer, ImageEnhancer,
    OracleEnhancer, OracleSegmenter, RefineLog, RefineTarget, Segmenter, SplatPlan, RENDERER_SECTION,
};
use crate::texproj::{build_textured_cloud, novel_view_order, TexturedPointCloud, ViewImage, ViewImageSet};

/// Artifact file names inside the working directory.
pub mod files {
    pub const REFERENCE_RGB: &str = "reference.png";
    pub const REFERENCE_MASK: &str = "reference_mask.png";
    pub const REFERENCE_DEPTH: &str = "reference_depth.citd";
    pub const REFERENCE_NORMAL: &str = "reference_normal.png";
    pub const SCENE: &str = "scene.cfg";
    pub const FIELD: &str = "field.ckpt";
    pub const COARSE_LOG: &str = "coarse_log.tsv";
    pub const COARSE_METRICS: &str = "coarse_metrics.txt";
    pub const MESH: &str = "mesh.obj";
    pub const SURFACE: &str = "surface.ply";
    pub const TEXTURED: &str = "textured.ply";
    pub const REFINED: &str = "refined.ply";
    pub const REFINED_CKPT: &str = "refined.ckpt";
    pub const REFINE_LOG: &str = "refine_log.tsv";
    pub const REFINE_METRICS: &str = "refine_metrics.txt";
    pub const EXPORT: &str = "export.ply";
    pub const TURNTABLE_FRAMES: usize = 8;

    pub fn turntable(k: usize) -> String {
        format!("turntable_{k:02}.png")
    }
}

/// Named scalar results of a stage, in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metrics(pub Vec<(String, f64)>);

impl Metrics {
    fn push(&mut self, key: &str, v: f64) {
        self.0.push((key.to_string(), v));
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.0.iter().find(|(k, _)| k == key).map(|e| e.1)
    }

    pub fn to_text(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k} = {v:.6}\n")).collect()
    }
}

fn path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.workdir.join(name)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)))
    }
}

/// Renders the synthetic scene from the reference camera and writes the
/// reference images plus a scene descriptor.
pub fn run_synth(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.workdir).map_err(|e| Error::io(&cfg.workdir, e))?;
    let camera = cfg.camera.pose()?;
    let view = cfg.scene.render(&camera)?;
    save_png(&path(cfg, files::REFERENCE_RGB), &view.rgb)?;
    save_png(&path(cfg, files::REFERENCE_MASK), &view.mask)?;
    save_depth(&path(cfg, files::REFERENCE_DEPTH), &view.depth)?;
    save_normal_png(&path(cfg, files::REFERENCE_NORMAL), &view.normal)?;
    write(&path(cfg, files::SCENE), scene_descriptor(&cfg.scene))?;
    log::info!("wrote reference views of a {} to {}", cfg.scene.shape, cfg.workdir.display());
    Ok(())
}

/// The synthetic scene behind the reference images, when one was recorded.
fn load_scene(cfg: &RunConfig) -> Result<Option<SyntheticScene>> {
    let p = path(cfg, files::SCENE);
    if !p.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    parse_scene_descriptor(&text).map(Some)
}

fn require_scene(cfg: &RunConfig, what: &str) -> Result<SyntheticScene> {
    load_scene(cfg)?.ok_or_else(|| {
        Error::io(
            path(cfg, files::SCENE),
            std::io::Error::new(std::io::ErrorKind::NotFound, format!("the {what} needs a scene descriptor")),
        )
    })
}

fn load_reference(cfg: &RunConfig) -> Result<ReferenceBundle> {
    let image = load_png(&path(cfg, files::REFERENCE_RGB))?;
    let mask = load_png(&path(cfg, files::REFERENCE_MASK))?.channel(0).map(|v| if v > 0.5 { 1.0 } else { 0.0 });
    let depth = load_depth(&path(cfg, files::REFERENCE_DEPTH))?;
    let normal = load_normal_png(&path(cfg, files::REFERENCE_NORMAL), &mask)?;
    let n = cfg.camera.resolution;
    image.check_dims(n, n, "reference image")?;
    if image.channels() != 3 {
        return Err(Error::InvalidInput("reference image must be rgb".into()));
    }
    ReferenceBundle::new(image, mask, depth, normal)
}

fn initial_field(cfg: &RunConfig) -> Result<VoxelField> {
    let f = &cfg.field;
    let (r, d, a) = (f.init_radius, f.init_density, f.init_albedo);
    VoxelField::from_fn(
        [f.resolution; 3],
        Aabb::cube(f.half_extent)?,
        |p| if p.norm() < r { d } else { 0.0 },
        |_| [a; 3],
    )
}

fn eval_settings(cfg: &RunConfig) -> RenderSettings {
    RenderSettings {
        samples_per_ray: cfg.coarse.render.samples_per_ray.max(128),
        seed: cfg.seed,
        normal_buffer: false,
        deterministic: true,
        ..cfg.coarse.render.clone()
    }
}

/// Held-out cameras between the projection views.
fn eval_cameras(cfg: &RunConfig, reference: &CameraPose) -> Vec<CameraPose> {
    let step = 360.0 / cfg.texproj.views as f64;
    (0..cfg.texproj.views)
        .map(|k| reference.with_azimuth(reference.azimuth + (cfg.refine.eval_offset_deg + step * k as f64).to_radians()))
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn field_psnr(field: &VoxelField, cameras: &[CameraPose], truth: &dyn Fn(&CameraPose) -> Result<Image>, rs: &RenderSettings) -> Result<f64> {
    let scores = cameras
        .iter()
        .map(|c| psnr(&render_view(field, c, ShadingMode::Albedo, rs)?.rgb, &truth(c)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&scores))
}

fn coarse_log_tsv(log: &TrainingLog) -> String {
    format!("step\tloss_ref\tloss_depth\tgrad_norm_sds\tazimuth_deg\tmode\n{}", log.to_tsv())
}

/// Optimizes the voxel field against the reference images and writes the
/// checkpoint, the per-step log and metrics.
pub fn run_coarse_cmd(cfg: &RunConfig) -> Result<Metrics> {
    let bundle = load_reference(cfg)?;
    let ref_cam = cfg.camera.pose()?;
    let schedule = cfg.guidance.schedule()?;
    let scene = load_scene(cfg)?;
    let provider: Option<Box<dyn GuidanceProvider>> = match cfg.guidance.provider {
        ProviderKind::Zero => None,
        ProviderKind::Oracle => {
            let scene = require_scene(cfg, "oracle guidance provider")?;
            Some(Box::new(AnalyticOracleProvider::new(Arc::new(scene), schedule.clone())))
        }
    };
    let mut coarse = cfg.coarse.clone();
    coarse.seed = cfg.seed;
    coarse.render.deterministic = cfg.deterministic;
    let v = &cfg.views;
    let views = ViewSchedule {
        range_start: v.range_start_deg.to_radians(),
        ramp_fraction: v.ramp_fraction,
        elevation_min: ref_cam.elevation - v.elevation_range_deg.to_radians(),
        elevation_max: ref_cam.elevation + v.elevation_range_deg.to_radians(),
        ..ViewSchedule::new(ref_cam, cfg.coarse_steps)
    };
    let guidance = GuidanceSetup {
        provider: provider.as_deref(),
        schedule: &schedule,
        prompt: &cfg.prompt,
    };
    let (field, log) = run_coarse(initial_field(cfg)?, &bundle, &views, guidance, &coarse)?;
    Checkpoint::new(field.clone()).save(&path(cfg, files::FIELD))?;
    write(&path(cfg, files::COARSE_LOG), coarse_log_tsv(&log))?;

    let mut metrics = Metrics::default();
    let rs = eval_settings(cfg);
    let reference = bundle.image.clone();
    metrics.push("reference_psnr", field_psnr(&field, &[ref_cam], &|_| Ok(reference.clone()), &rs)?);
    if let Some(scene) = scene {
        let cams = eval_cameras(cfg, &ref_cam);
        metrics.push("novel_psnr", field_psnr(&field, &cams, &|c| Ok(scene.render(c)?.rgb), &rs)?);
    }
    if let Some(last) = log.window_means(100, &coarse.weights).last() {
        metrics.push("final_window_loss", *last);
    }
    write(&path(cfg, files::COARSE_METRICS), metrics.to_text())?;
    Ok(metrics)
}

fn splat_psnr(cloud: &FeatureCloud, renderer: &DeferredRenderer, targets: &[RefineTarget], rho: f64) -> Result<f64> {
    let scores = targets
        .iter()
        .map(|t| {
            let plan = SplatPlan::build(&cloud.cloud, &t.camera, rho)?;
            psnr(&splat_render(cloud, &plan, renderer)?.rgb, &t.image)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&scores))
}

fn refine_log_tsv(log: &RefineLog) -> String {
    let mut out = String::from("step\tloss\tobjective\n");
    let mut objective = log.objective.iter().peekable();
    for (step, loss) in log.step_losses.iter().enumerate() {
        let obj = match objective.peek() {
            Some(&&(s, v)) if s == step => {
                objective.next();
                format!("{v:.6}")
            }
            _ => "nan".to_string(),
        };
        let _ = writeln!(out, "{step}\t{loss:.6}\t{obj}");
    }
    for (s, v) in objective {
        let _ = writeln!(out, "{s}\tnan\t{v:.6}");
    }
    out
}

/// Extracts the surface, paints it from the reference and novel views, fits the
/// point features and deferred renderer, and writes every refine artifact.
pub fn run_refine_cmd(cfg: &RunConfig) -> Result<Metrics> {
    let field_path = path(cfg, files::FIELD);
    require_file(&field_path)?;
    let field = Checkpoint::load(&field_path)?.field;
    let ref_cam = cfg.camera.pose()?;
    let reference = load_reference(cfg)?;
    let scene = load_scene(cfg)?;

    let iso = match cfg.extract.iso {
        Some(v) => v,
        None => occupied_quantile(&field, cfg.extract.iso_quantile).ok_or_else(|| Error::InvalidInput("coarse field holds no density".into()))?,
    };
    let raw = if cfg.extract.fill_cavities {
        marching_cubes_solid(&field, iso)?
    } else {
        marching_cubes(&field, iso)?
    };
    let mesh = regularize_mesh(&raw, cfg.extract.smooth_iterations, cfg.extract.smooth_lambda)?;
    mesh.save_obj(&path(cfg, files::MESH))?;
    let surface = poisson_sample(
        &mesh,
        cfg.extract.spacing,
        &PoissonConfig {
            max_consecutive_rejections: cfg.extract.max_rejections,
            seed: cfg.seed,
        },
    )?;
    surface.save_ply(&path(cfg, files::SURFACE))?;
    let spacing = surface.target_spacing;
    let mut cloud = TexturedPointCloud::with_params(
        surface.positions(),
        cfg.texproj.splat_factor * spacing,
        cfg.texproj.depth_factor * spacing,
    )?
    .with_normals(surface.normals(&mesh))?;

    let (enhancer, segmenter): (Box<dyn ImageEnhancer>, Option<Box<dyn Segmenter>>) = match cfg.refine.enhancer {
        EnhancerKind::Identity => (Box::new(IdentityEnhancer), None),
        EnhancerKind::Oracle => {
            let scene = Arc::new(require_scene(cfg, "oracle enhancer")?);
            (
                Box::new(OracleEnhancer::new(scene.clone())),
                Some(Box::new(OracleSegmenter::new(scene, cfg.refine.mask_score))),
            )
        }
    };
    let rs = eval_settings(cfg);
    let step = 360.0 / cfg.texproj.views as f64;
    let novel: Vec<CameraPose> = (1..cfg.texproj.views)
        .map(|k| ref_cam.with_azimuth(ref_cam.azimuth + (step * k as f64).to_radians()))
        .collect();
    let mut projected = Vec::with_capacity(novel.len());
    let mut targets = Vec::with_capacity(novel.len());
    for &cam in &novel {
        let render = render_view(&field, &cam, ShadingMode::Albedo, &rs)?;
        let nerf_mask = render.mask.map(|m| if m > 0.5 { 1.0 } else { 0.0 });
        let pseudo = enhancer.enhance(&render.rgb, &cam, cfg.refine.strength)?;
        let mask = match &segmenter {
            Some(s) => select_mask(&nerf_mask, &s.segment(&pseudo, &cam)?, cfg.refine.mask_threshold)?,
            None => nerf_mask,
        };
        let image = match cfg.texproj.source {
            ProjectionSource::Render => render.rgb,
            ProjectionSource::Pseudo => pseudo.clone(),
        };
        projected.push(ViewImage { camera: cam, image, mask });
        targets.push(RefineTarget { camera: cam, image: pseudo });
    }
    let mut views = vec![ViewImage {
        camera: ref_cam,
        image: reference.image.clone(),
        mask: reference.mask.clone(),
    }];
    for i in novel_view_order(&ref_cam, &novel) {
        views.push(projected[i].clone());
    }
    let report = build_textured_cloud(&mut cloud, &ViewImageSet::new(views)?)?;
    cloud.save_ply(&path(cfg, files::TEXTURED))?;

    let fill = cfg.refine.fill;
    let features = FeatureCloud::from_textured(cloud, [fill; 3]);
    let renderer = DeferredRenderer::new(cfg.seed, cfg.coarse.render.background);
    let ref_target = RefineTarget {
        camera: ref_cam,
        image: reference.image.clone(),
    };
    let rho = cfg.refine.optim.rho;
    let truth_targets = match &scene {
        Some(s) => Some(
            eval_cameras(cfg, &ref_cam)
                .into_iter()
                .map(|camera| Ok(RefineTarget { camera, image: s.render(&camera)?.rgb }))
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };

    let mut metrics = Metrics::default();
    metrics.push("points", features.len() as f64);
    metrics.push("uncolored_points", report.uncolored as f64);
    metrics.push("iso", iso);
    if let Some(t) = &truth_targets {
        let cams: Vec<CameraPose> = t.iter().map(|t| t.camera).collect();
        let s = scene.expect("scene present with targets");
        metrics.push("coarse_novel_psnr", field_psnr(&field, &cams, &|c| Ok(s.render(c)?.rgb), &rs)?);
        metrics.push("novel_psnr_before", splat_psnr(&features, &renderer, t, rho)?);
    }
    metrics.push("reference_psnr_before", splat_psnr(&features, &renderer, std::slice::from_ref(&ref_target), rho)?);

    let (refined, renderer, log) = optimize_refine(features, renderer, &ref_target, &targets, &cfg.refine.optim)?;

    if let Some(t) = &truth_targets {
        metrics.push("novel_psnr_after", splat_psnr(&refined, &renderer, t, rho)?);
    }
    metrics.push("reference_psnr_after", splat_psnr(&refined, &renderer, std::slice::from_ref(&ref_target), rho)?);

    refined.save_ply(&path(cfg, files::REFINED))?;
    let mut ckpt = Checkpoint::new(field);
    ckpt.set_section(RENDERER_SECTION, renderer.to_bytes());
    ckpt.save(&path(cfg, files::REFINED_CKPT))?;
    for k in 0..files::TURNTABLE_FRAMES {
        let cam = ref_cam.with_azimuth(ref_cam.azimuth + (45.0 * k as f64).to_radians());
        let plan = SplatPlan::build(&refined.cloud, &cam, rho)?;
        save_png(&path(cfg, &files::turntable(k)), &splat_render(&refined, &plan, &renderer)?.rgb)?;
    }
    write(&path(cfg, files::REFINE_LOG), refine_log_tsv(&log))?;
    write(&path(cfg, files::REFINE_METRICS), metrics.to_text())?;
    Ok(metrics)
}

/// Writes the refined cloud as a plain colored PLY (position plus 8-bit rgb
/// from the color features).
pub fn run_export(cfg: &RunConfig) -> Result<()> {
    let src = path(cfg, files::REFINED);
    require_file(&src)?;
    let table = PlyTable::load(&src)?;
    let cols: Vec<usize> = ["x", "y", "z", "f0", "f1", "f2"]
        .iter()
        .map(|n| table.require(n))
        .collect::<Result<_>>()?;
    let mut props: Vec<(String, PlyType)> = ["x", "y", "z"].iter().map(|n| (n.to_string(), PlyType::Float)).collect();
    props.extend(["red", "green", "blue"].iter().map(|n| (n.to_string(), PlyType::UChar)));
    let mut out = PlyTable::new(props);
    out.rows = table
        .rows
        .iter()
        .map(|r| {
            let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round();
            vec![r[cols[0]], r[cols[1]], r[cols[2]], q(r[cols[3]]), q(r[cols[4]]), q(r[cols[5]])]
        })
        .collect();
    out.save(&path(cfg, files::EXPORT))
}

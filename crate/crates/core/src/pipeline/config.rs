//! Flat `section.key = value` run configuration. Every key is optional;
//! unknown keys and out-of-range values are rejected at load time.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::scene::{ShapeKind, SyntheticScene};
use crate::coarse::{CoarseConfig, CoarseWeights, OptimizerConfig, OptimizerKind};
use crate::error::{Error, Result};
use crate::field::CameraPose;
use crate::guidance::{PromptSpec, TimestepSchedule, Weighting};
use crate::refine::RefineConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderKind {
    Oracle,
    /// No guidance: both score-distillation terms vanish.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnhancerKind {
    Oracle,
    Identity,
}

/// Images painted onto the point cloud for novel views.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionSource {
    /// Coarse field renders.
    Render,
    /// Enhanced pseudo images.
    Pseudo,
}

macro_rules! keyword_enum {
    ($t:ty, $what:literal, $($name:literal => $v:expr),+) => {
        impl FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($name => Ok($v),)+
                    other => Err(format!(concat!("unknown ", $what, " `{}`"), other)),
                }
            }
        }
        impl Display for $t {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                $(if *self == $v { return f.write_str($name); })+
                unreachable!()
            }
        }
    };
}

keyword_enum!(ProviderKind, "provider", "oracle" => ProviderKind::Oracle, "zero" => ProviderKind::Zero);
keyword_enum!(EnhancerKind, "enhancer", "oracle" => EnhancerKind::Oracle, "identity" => EnhancerKind::Identity);
keyword_enum!(ProjectionSource, "projection source", "render" => ProjectionSource::Render, "pseudo" => ProjectionSource::Pseudo);

#[derive(Debug, Clone, PartialEq)]
pub struct CameraConfig {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub radius: f64,
    pub fov_deg: f64,
    /// Square image side in pixels.
    pub resolution: usize,
}

impl CameraConfig {
    pub fn pose(&self) -> Result<CameraPose> {
        CameraPose::new(
            self.azimuth_deg.to_radians(),
            self.elevation_deg.to_radians(),
            self.radius,
            self.fov_deg.to_radians(),
            self.resolution,
            self.resolution,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldConfig {
    pub resolution: usize,
    /// The grid spans `[-half_extent, half_extent]^3`.
    pub half_extent: f64,
    /// Activated density inside the initial ball; zero outside.
    pub init_density: f64,
    pub init_radius: f64,
    pub init_albedo: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewConfig {
    pub range_start_deg: f64,
    pub ramp_fraction: f64,
    /// Novel-view elevations span the reference elevation plus or minus this.
    pub elevation_range_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceConfig {
    pub provider: ProviderKind,
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub weighting: Weighting,
}

impl GuidanceConfig {
    pub fn schedule(&self) -> Result<TimestepSchedule> {
        TimestepSchedule::linear(self.timesteps, self.beta_start, self.beta_end, self.weighting)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractConfig {
    /// `None` picks the `iso_quantile` quantile of activated densities above 1e-3.
    pub iso: Option<f64>,
    pub iso_quantile: f64,
    /// Treat enclosed low-density pockets as solid before extraction.
    pub fill_cavities: bool,
    pub smooth_iterations: usize,
    pub smooth_lambda: f64,
    pub spacing: f64,
    pub max_rejections: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TexprojConfig {
    /// Projection views including the reference, evenly spaced in azimuth.
    pub views: usize,
    pub splat_factor: f64,
    pub depth_factor: f64,
    pub source: ProjectionSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineStageConfig {
    pub optim: RefineConfig,
    pub enhancer: EnhancerKind,
    pub strength: f64,
    pub mask_threshold: f64,
    /// Score the oracle segmenter attaches to its masks.
    pub mask_score: f64,
    /// Initial color of points no view reached.
    pub fill: f64,
    /// Held-out evaluation views sit this far in azimuth from the projection views.
    pub eval_offset_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Directory holding every stage's inputs and outputs.
    pub workdir: PathBuf,
    pub seed: u64,
    pub deterministic: bool,
    pub scene: SyntheticScene,
    pub camera: CameraConfig,
    pub field: FieldConfig,
    pub coarse_steps: usize,
    pub coarse: CoarseConfig,
    pub views: ViewConfig,
    pub guidance: GuidanceConfig,
    pub prompt: PromptSpec,
    pub extract: ExtractConfig,
    pub texproj: TexprojConfig,
    pub refine: RefineStageConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut coarse = CoarseConfig::default();
        coarse.optimizer = OptimizerConfig {
            kind: OptimizerKind::adam(),
            lr_density: 0.1,
            lr_albedo: 0.05,
            decay: 0.999,
        };
        Self {
            workdir: PathBuf::from("."),
            seed: 0,
            deterministic: false,
            scene: SyntheticScene::default(),
            camera: CameraConfig {
                azimuth_deg: 0.0,
                elevation_deg: 10.0,
                radius: 2.5,
                fov_deg: 35.0,
                resolution: 128,
            },
            field: FieldConfig {
                resolution: 64,
                half_extent: 0.8,
                init_density: 1.0,
                init_radius: 0.55,
                init_albedo: 0.5,
            },
            coarse_steps: 2000,
            coarse,
            views: ViewConfig {
                range_start_deg: 30.0,
                ramp_fraction: 0.5,
                elevation_range_deg: 15.0,
            },
            guidance: GuidanceConfig {
                provider: ProviderKind::Oracle,
                timesteps: 1000,
                beta_start: 1e-4,
                beta_end: 2e-2,
                weighting: Weighting::SigmaSquared,
            },
            prompt: PromptSpec::with_default_identifier("ball", "a textured ball").expect("valid default prompt"),
            extract: ExtractConfig {
                iso: None,
                iso_quantile: 0.25,
                fill_cavities: true,
                smooth_iterations: 5,
                smooth_lambda: 0.5,
                spacing: 0.014,
                max_rejections: 3000,
            },
            texproj: TexprojConfig {
                views: 8,
                splat_factor: 1.5,
                depth_factor: 2.0,
                source: ProjectionSource::Render,
            },
            refine: RefineStageConfig {
                optim: RefineConfig::default(),
                enhancer: EnhancerKind::Oracle,
                strength: 0.8,
                mask_threshold: 0.85,
                mask_score: 0.9,
                fill: 0.5,
                eval_offset_deg: 22.5,
            },
        }
    }
}

/// Parsed `key = value` lines; tracks which keys were read.
struct Entries {
    values: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::config(format!("line {}", n + 1), "expected `section.key = value`"));
            };
            let (k, v) = (k.trim(), v.trim());
            if k.split('.').count() != 2 || k.split('.').any(str::is_empty) {
                return Err(Error::config(k, "keys take the form `section.key`"));
            }
            if values.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::config(k, "duplicate key"));
            }
        }
        Ok(Self {
            values,
            used: RefCell::new(BTreeSet::new()),
        })
    }

    fn get<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.used.borrow_mut().insert(key.to_string());
        match self.values.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| Error::config(key, format!("cannot parse `{v}`: {e}"))),
        }
    }

    fn string(&self, key: &str, default: &str) -> String {
        self.used.borrow_mut().insert(key.to_string());
        self.values.get(key).cloned().unwrap_or_else(|| default.to_string())
    }

    fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        match self.values.keys().find(|k| !used.contains(*k)) {
            Some(k) => Err(Error::config(k, "unknown key")),
            None => Ok(()),
        }
    }
}

fn require(key: &str, ok: bool, what: &str, v: impl Display) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be {what}, got {v}")))
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    require(key, v.is_finite() && v > 0.0, "positive", v)
}

fn non_negative(key: &str, v: f64) -> Result<()> {
    require(key, v.is_finite() && v >= 0.0, ">= 0", v)
}

fn unit(key: &str, v: f64) -> Result<()> {
    require(key, (0.0..=1.0).contains(&v), "in [0, 1]", v)
}

fn at_least(key: &str, v: usize, min: usize) -> Result<()> {
    require(key, v >= min, &format!("at least {min}"), v)
}

fn read_scene(e: &Entries, d: &SyntheticScene) -> Result<SyntheticScene> {
    let scene = SyntheticScene {
        shape: e.get::<ShapeKind>("scene.shape", d.shape)?,
        radius: e.get("scene.radius", d.radius)?,
        box_half: e.get("scene.box_half", d.box_half)?,
        box_offset: e.get("scene.box_offset", d.box_offset)?,
        texture_frequency: e.get("scene.texture_frequency", d.texture_frequency)?,
    };
    scene.validate()?;
    Ok(scene)
}

impl RunConfig {
    /// Parses config text. A relative `paths.workdir` is resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let e = Entries::parse(text)?;
        let d = RunConfig::default();

        let workdir = PathBuf::from(e.string("paths.workdir", "."));
        let workdir = if workdir.is_absolute() { workdir } else { base.join(workdir) };

        let scene = read_scene(&e, &d.scene)?;

        let c = &d.camera;
        let camera = CameraConfig {
            azimuth_deg: e.get("camera.azimuth_deg", c.azimuth_deg)?,
            elevation_deg: e.get("camera.elevation_deg", c.elevation_deg)?,
            radius: e.get("camera.radius", c.radius)?,
            fov_deg: e.get("camera.fov_deg", c.fov_deg)?,
            resolution: e.get("camera.resolution", c.resolution)?,
        };
        require("camera.azimuth_deg", camera.azimuth_deg.is_finite(), "finite", camera.azimuth_deg)?;
        require(
            "camera.elevation_deg",
            camera.elevation_deg.abs() < 89.0,
            "inside (-89, 89)",
            camera.elevation_deg,
        )?;
        positive("camera.radius", camera.radius)?;
        require(
            "camera.fov_deg",
            camera.fov_deg > 0.0 && camera.fov_deg < 170.0,
            "in (0, 170)",
            camera.fov_deg,
        )?;
        at_least("camera.resolution", camera.resolution, 8)?;

        let f = &d.field;
        let field = FieldConfig {
            resolution: e.get("field.resolution", f.resolution)?,
            half_extent: e.get("field.half_extent", f.half_extent)?,
            init_density: e.get("field.init_density", f.init_density)?,
            init_radius: e.get("field.init_radius", f.init_radius)?,
            init_albedo: e.get("field.init_albedo", f.init_albedo)?,
        };
        at_least("field.resolution", field.resolution, 2)?;
        positive("field.half_extent", field.half_extent)?;
        non_negative("field.init_density", field.init_density)?;
        non_negative("field.init_radius", field.init_radius)?;
        require(
            "field.init_albedo",
            field.init_albedo > 0.0 && field.init_albedo < 1.0,
            "in (0, 1)",
            field.init_albedo,
        )?;
        require(
            "camera.radius",
            camera.radius > field.half_extent * 3f64.sqrt(),
            "outside the field's bounding box",
            camera.radius,
        )?;

        let mut coarse = d.coarse.clone();
        let r = &mut coarse.render;
        r.samples_per_ray = e.get("render.samples", r.samples_per_ray)?;
        r.transmittance_cutoff = e.get("render.cutoff", r.transmittance_cutoff)?;
        let bg: f64 = e.get("render.background", r.background[0])?;
        r.background = [bg; 3];
        at_least("render.samples", r.samples_per_ray, 1)?;
        require(
            "render.cutoff",
            (0.0..1.0).contains(&r.transmittance_cutoff),
            "in [0, 1)",
            r.transmittance_cutoff,
        )?;
        unit("render.background", bg)?;

        let coarse_steps = e.get("coarse.steps", d.coarse_steps)?;
        at_least("coarse.steps", coarse_steps, 1)?;
        let o = &mut coarse.optimizer;
        let kind: String = e.string("coarse.optimizer", o.kind.name());
        let momentum: f64 = e.get("coarse.momentum", 0.9)?;
        unit("coarse.momentum", momentum)?;
        o.kind = match kind.as_str() {
            "adam" => OptimizerKind::adam(),
            "sgd" => OptimizerKind::Sgd { momentum },
            other => return Err(Error::config("coarse.optimizer", format!("unknown optimizer `{other}`"))),
        };
        o.lr_density = e.get("coarse.lr_density", o.lr_density)?;
        o.lr_albedo = e.get("coarse.lr_albedo", o.lr_albedo)?;
        o.decay = e.get("coarse.lr_decay", o.decay)?;
        non_negative("coarse.lr_density", o.lr_density)?;
        non_negative("coarse.lr_albedo", o.lr_albedo)?;
        require("coarse.lr_decay", o.decay > 0.0 && o.decay <= 1.0, "in (0, 1]", o.decay)?;
        coarse.normal_probability = e.get("coarse.normal_probability", coarse.normal_probability)?;
        unit("coarse.normal_probability", coarse.normal_probability)?;

        let v = &d.views;
        let views = ViewConfig {
            range_start_deg: e.get("coarse.view_range_start_deg", v.range_start_deg)?,
            ramp_fraction: e.get("coarse.view_ramp_fraction", v.ramp_fraction)?,
            elevation_range_deg: e.get("coarse.elevation_range_deg", v.elevation_range_deg)?,
        };
        require(
            "coarse.view_range_start_deg",
            (0.0..=360.0).contains(&views.range_start_deg),
            "in [0, 360]",
            views.range_start_deg,
        )?;
        require(
            "coarse.view_ramp_fraction",
            views.ramp_fraction > 0.0 && views.ramp_fraction <= 1.0,
            "in (0, 1]",
            views.ramp_fraction,
        )?;
        require(
            "coarse.elevation_range_deg",
            views.elevation_range_deg >= 0.0 && views.elevation_range_deg.abs() + camera.elevation_deg.abs() < 89.0,
            "non-negative and keep elevations inside (-89, 89)",
            views.elevation_range_deg,
        )?;

        let w = CoarseWeights {
            reference: e.get("loss.reference", coarse.weights.reference)?,
            depth: e.get("loss.depth", coarse.weights.depth)?,
            ss2d: e.get("guidance.lambda_ss2d", coarse.weights.ss2d)?,
            ss3d: e.get("guidance.lambda_ss3d", coarse.weights.ss3d)?,
        };
        non_negative("loss.reference", w.reference)?;
        non_negative("loss.depth", w.depth)?;
        non_negative("guidance.lambda_ss2d", w.ss2d)?;
        non_negative("guidance.lambda_ss3d", w.ss3d)?;
        coarse.weights = w;

        let g = &d.guidance;
        let guidance = GuidanceConfig {
            provider: e.get("guidance.provider", g.provider)?,
            timesteps: e.get("guidance.timesteps", g.timesteps)?,
            beta_start: e.get("guidance.beta_start", g.beta_start)?,
            beta_end: e.get("guidance.beta_end", g.beta_end)?,
            weighting: match e.string("guidance.weighting", "sigma2").as_str() {
                "sigma2" => Weighting::SigmaSquared,
                "unit" => Weighting::Unit,
                other => return Err(Error::config("guidance.weighting", format!("unknown weighting `{other}`"))),
            },
        };
        at_least("guidance.timesteps", guidance.timesteps, 2)?;
        require(
            "guidance.beta_start",
            guidance.beta_start > 0.0 && guidance.beta_start <= guidance.beta_end,
            "positive and at most guidance.beta_end",
            guidance.beta_start,
        )?;
        require("guidance.beta_end", guidance.beta_end < 1.0, "below 1", guidance.beta_end)?;
        coarse.t_min = e.get("guidance.t_min", coarse.t_min.min(guidance.timesteps - 1))?;
        coarse.t_max = e.get("guidance.t_max", coarse.t_max.min(guidance.timesteps - 1))?;
        require(
            "guidance.t_max",
            coarse.t_min <= coarse.t_max && coarse.t_max < guidance.timesteps,
            "at least guidance.t_min and below guidance.timesteps",
            coarse.t_max,
        )?;

        let prompt = PromptSpec::new(
            e.string("prompt.identifier", d.prompt.identifier()),
            e.string("prompt.class_name", d.prompt.class_name()),
            e.string("prompt.caption", d.prompt.caption()),
        )
        .map_err(|err| Error::config("prompt.identifier", err.to_string()))?;

        let x = &d.extract;
        let iso = match e.string("extract.iso", "auto").as_str() {
            "auto" => None,
            s => Some(
                s.parse::<f64>()
                    .map_err(|err| Error::config("extract.iso", format!("cannot parse `{s}`: {err}")))?,
            ),
        };
        if let Some(v) = iso {
            positive("extract.iso", v)?;
        }
        let extract = ExtractConfig {
            iso,
            iso_quantile: e.get("extract.iso_quantile", x.iso_quantile)?,
            fill_cavities: e.get("extract.fill_cavities", x.fill_cavities)?,
            smooth_iterations: e.get("extract.smooth_iterations", x.smooth_iterations)?,
            smooth_lambda: e.get("extract.smooth_lambda", x.smooth_lambda)?,
            spacing: e.get("extract.spacing", x.spacing)?,
            max_rejections: e.get("extract.max_rejections", x.max_rejections)?,
        };
        unit("extract.iso_quantile", extract.iso_quantile)?;
        unit("extract.smooth_lambda", extract.smooth_lambda)?;
        positive("extract.spacing", extract.spacing)?;
        at_least("extract.max_rejections", extract.max_rejections, 1)?;

        let t = &d.texproj;
        let texproj = TexprojConfig {
            views: e.get("texproj.views", t.views)?,
            splat_factor: e.get("texproj.splat_factor", t.splat_factor)?,
            depth_factor: e.get("texproj.depth_factor", t.depth_factor)?,
            source: e.get("texproj.source", t.source)?,
        };
        at_least("texproj.views", texproj.views, 1)?;
        positive("texproj.splat_factor", texproj.splat_factor)?;
        positive("texproj.depth_factor", texproj.depth_factor)?;

        let r = &d.refine;
        let optim = RefineConfig {
            steps: e.get("refine.steps", r.optim.steps)?,
            lr_features: e.get("refine.lr_features", r.optim.lr_features)?,
            lr_renderer: e.get("refine.lr_renderer", r.optim.lr_renderer)?,
            rho: e.get("refine.rho", r.optim.rho)?,
            eval_every: e.get("refine.eval_every", r.optim.eval_every)?,
        };
        non_negative("refine.lr_features", optim.lr_features)?;
        non_negative("refine.lr_renderer", optim.lr_renderer)?;
        positive("refine.rho", optim.rho)?;
        at_least("refine.eval_every", optim.eval_every, 1)?;
        let refine = RefineStageConfig {
            optim,
            enhancer: e.get("refine.enhancer", r.enhancer)?,
            strength: e.get("refine.strength", r.strength)?,
            mask_threshold: e.get("refine.mask_threshold", r.mask_threshold)?,
            mask_score: e.get("refine.mask_score", r.mask_score)?,
            fill: e.get("refine.fill", r.fill)?,
            eval_offset_deg: e.get("refine.eval_offset_deg", r.eval_offset_deg)?,
        };
        unit("refine.strength", refine.strength)?;
        unit("refine.mask_threshold", refine.mask_threshold)?;
        require("refine.mask_score", refine.mask_score.is_finite(), "finite", refine.mask_score)?;
        unit("refine.fill", refine.fill)?;
        require(
            "refine.eval_offset_deg",
            refine.eval_offset_deg.is_finite(),
            "finite",
            refine.eval_offset_deg,
        )?;

        e.finish()?;
        Ok(Self {
            workdir,
            seed: d.seed,
            deterministic: d.deterministic,
            scene,
            camera,
            field,
            coarse_steps,
            coarse,
            views,
            guidance,
            prompt,
            extract,
            texproj,
            refine,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }
}

/// Scene descriptor written next to the reference images.
pub fn scene_descriptor(scene: &SyntheticScene) -> String {
    format!(
        "scene.shape = {}\nscene.radius = {}\nscene.box_half = {}\nscene.box_offset = {}\nscene.texture_frequency = {}\n",
        scene.shape, scene.radius, scene.box_half, scene.box_offset, scene.texture_frequency
    )
}

pub fn parse_scene_descriptor(text: &str) -> Result<SyntheticScene> {
    let e = Entries::parse(text)?;
    let scene = read_scene(&e, &SyntheticScene::default())?;
    e.finish()?;
    Ok(scene)
}

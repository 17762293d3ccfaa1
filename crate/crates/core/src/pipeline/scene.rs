use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::field::{CameraPose, ShadingMode};
use crate::guidance::TargetRenderer;
use crate::math::Vec3;
use crate::raster::Image;
use crate::refine::TargetMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Sphere,
    Box,
    Union,
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Box => "box",
            ShapeKind::Union => "union",
        })
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(ShapeKind::Sphere),
            "box" => Ok(ShapeKind::Box),
            "union" => Ok(ShapeKind::Union),
            other => Err(Error::InvalidInput(format!("unknown shape `{other}`"))),
        }
    }
}

/// Analytic solid centered at the origin. A union places the box to the
/// side of the sphere along +x by `box_offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticScene {
    pub shape: ShapeKind,
    pub radius: f64,
    pub box_half: f64,
    pub box_offset: f64,
    /// Spatial frequency of the procedural albedo.
    pub texture_frequency: f64,
}

impl Default for SyntheticScene {
    fn default() -> Self {
        Self {
            shape: ShapeKind::Sphere,
            radius: 0.5,
            box_half: 0.3,
            box_offset: 0.45,
            texture_frequency: 3.0,
        }
    }
}

/// Exact buffers of one view. Background pixels have rgb = 1, mask = 0,
/// depth = 0 and a zero normal.
#[derive(Debug, Clone)]
pub struct SceneView {
    pub rgb: Image,
    pub mask: Image,
    /// Distance along the pixel ray.
    pub depth: Image,
    pub normal: Image,
}

#[derive(Debug, Clone, Copy)]
struct Hit {
    t: f64,
    normal: Vec3,
}

fn hit_sphere(o: Vec3, d: Vec3, c: Vec3, r: f64) -> Option<Hit> {
    let oc = o - c;
    let b = oc.dot(d);
    let disc = b * b - (oc.norm_squared() - r * r);
    if disc < 0.0 {
        return None;
    }
    let t = -b - disc.sqrt();
    (t > 0.0).then(|| Hit {
        t,
        normal: (o + d * t - c) / r,
    })
}

fn hit_box(o: Vec3, d: Vec3, c: Vec3, half: f64) -> Option<Hit> {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut axis = 0;
    let mut sign = 1.0;
    for a in 0..3 {
        let (lo, hi) = (c[a] - half, c[a] + half);
        if d[a].abs() < 1e-15 {
            if o[a] < lo || o[a] > hi {
                return None;
            }
            continue;
        }
        let (ta, tb) = ((lo - o[a]) / d[a], (hi - o[a]) / d[a]);
        let (near, far, s) = if ta < tb { (ta, tb, -1.0) } else { (tb, ta, 1.0) };
        if near > t0 {
            t0 = near;
            axis = a;
            sign = s;
        }
        t1 = t1.min(far);
    }
    if t0 > t1 || t0 <= 0.0 {
        return None;
    }
    let mut n = [0.0; 3];
    n[axis] = sign;
    Some(Hit {
        t: t0,
        normal: Vec3::from_array(n),
    })
}

impl SyntheticScene {
    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(key, format!("must be positive, got {v}")))
            }
        };
        positive("scene.radius", self.radius)?;
        positive("scene.box_half", self.box_half)?;
        positive("scene.texture_frequency", self.texture_frequency)?;
        if !self.box_offset.is_finite() {
            return Err(Error::config("scene.box_offset", "must be finite"));
        }
        Ok(())
    }

    fn box_center(&self) -> Vec3 {
        match self.shape {
            ShapeKind::Union => Vec3::new(self.box_offset, 0.0, 0.0),
            _ => Vec3::ZERO,
        }
    }

    fn intersect(&self, o: Vec3, d: Vec3) -> Option<Hit> {
        let s = || hit_sphere(o, d, Vec3::ZERO, self.radius);
        let b = || hit_box(o, d, self.box_center(), self.box_half);
        match self.shape {
            ShapeKind::Sphere => s(),
            ShapeKind::Box => b(),
            ShapeKind::Union => match (s(), b()) {
                (Some(x), Some(y)) => Some(if x.t <= y.t { x } else { y }),
                (x, y) => x.or(y),
            },
        }
    }

    /// Whether `p` lies inside the solid.
    pub fn contains(&self, p: Vec3) -> bool {
        let in_sphere = p.norm() <= self.radius;
        let q = p - self.box_center();
        let in_box = q.x.abs().max(q.y.abs()).max(q.z.abs()) <= self.box_half;
        match self.shape {
            ShapeKind::Sphere => in_sphere,
            ShapeKind::Box => in_box,
            ShapeKind::Union => in_sphere || in_box,
        }
    }

    /// Half-width of a cube centered at the origin that holds the solid.
    pub fn extent(&self) -> f64 {
        match self.shape {
            ShapeKind::Sphere => self.radius,
            ShapeKind::Box => self.box_half,
            ShapeKind::Union => self.radius.max(self.box_offset.abs() + self.box_half).max(self.box_half),
        }
    }

    pub fn albedo(&self, p: Vec3) -> [f64; 3] {
        let f = self.texture_frequency;
        [
            0.55 + 0.3 * (f * p.x + 0.5).sin(),
            0.5 + 0.3 * (f * p.y).cos(),
            0.45 + 0.3 * (f * p.z - 0.7).sin(),
        ]
    }

    pub fn render(&self, camera: &CameraPose) -> Result<SceneView> {
        camera.validate()?;
        let basis = camera.basis();
        let (w, h) = (camera.width, camera.height);
        let mut view = SceneView {
            rgb: Image::filled(w, h, 3, 1.0),
            mask: Image::new(w, h, 1),
            depth: Image::new(w, h, 1),
            normal: Image::new(w, h, 3),
        };
        for y in 0..h {
            for x in 0..w {
                let ray = camera.pixel_ray(&basis, x, y);
                if let Some(hit) = self.intersect(ray.origin, ray.dir) {
                    let p = ray.origin + ray.dir * hit.t;
                    view.rgb.pixel_mut(x, y).copy_from_slice(&self.albedo(p));
                    view.mask.set(x, y, 0, 1.0);
                    view.depth.set(x, y, 0, hit.t);
                    view.normal.pixel_mut(x, y).copy_from_slice(&hit.normal.to_array());
                }
            }
        }
        Ok(view)
    }

    /// Normal-shaded view: `(n + 1) / 2` on a white background.
    pub fn render_normals(&self, camera: &CameraPose) -> Result<Image> {
        let v = self.render(camera)?;
        let mut out = Image::filled(camera.width, camera.height, 3, 1.0);
        for y in 0..camera.height {
            for x in 0..camera.width {
                if v.mask.get(x, y, 0) > 0.5 {
                    for c in 0..3 {
                        out.set(x, y, c, 0.5 * (v.normal.get(x, y, c) + 1.0));
                    }
                }
            }
        }
        Ok(out)
    }
}

impl TargetRenderer for SyntheticScene {
    fn render_target(&self, camera: &CameraPose, mode: ShadingMode) -> Result<Image> {
        match mode {
            ShadingMode::Albedo => Ok(self.render(camera)?.rgb),
            ShadingMode::Normal => self.render_normals(camera),
        }
    }
}

impl TargetMask for SyntheticScene {
    fn render_mask(&self, camera: &CameraPose) -> Result<Image> {
        Ok(self.render(camera)?.mask)
    }
}

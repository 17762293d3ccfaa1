//! Emission-absorption volume rendering of a [`VoxelField`] and its exact
//! reverse-mode gradient.
//!
//! Each ray is cut into `samples_per_ray` equal bins between the box entry and
//! exit points with one jittered sample per bin. With `alpha_i = 1 - exp(-sigma_i * delta)`
//! and transmittance `T_i = prod_{j<i} (1 - alpha_j)`, a ray produces
//!
//! ```text
//! rgb   = sum_i T_i alpha_i c_i + T_N * background
//! mask  = 1 - T_N
//! depth = sum_i T_i alpha_i t_i / max(mask, 1e-6)
//! ```
//!
//! The jitter comes from a per-pixel RNG stream keyed on `(seed, pixel)`, so a
//! forward call and a backward call with the same settings see the same samples.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::camera::{CameraBasis, CameraPose};
use super::grid::{sigmoid, softplus, Trilinear, VoxelField};
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::raster::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShadingMode {
    Albedo,
    Normal,
}

impl ShadingMode {
    pub fn token(self) -> &'static str {
        match self {
            ShadingMode::Albedo => "albedo",
            ShadingMode::Normal => "normal",
        }
    }
}

impl fmt::Display for ShadingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for ShadingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "albedo" => Ok(ShadingMode::Albedo),
            "normal" => Ok(ShadingMode::Normal),
            other => Err(Error::InvalidInput(format!("unknown shading mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderSettings {
    pub samples_per_ray: usize,
    pub seed: u64,
    pub background: [f64; 3],
    /// Rays stop marching once transmittance drops below this; 0 disables.
    pub transmittance_cutoff: f64,
    /// Fill [`RenderedView::normal`] in albedo mode too (normal mode always does).
    pub normal_buffer: bool,
    /// Accumulate gradients in a fixed order regardless of thread count.
    pub deterministic: bool,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            samples_per_ray: 128,
            seed: 0,
            background: [1.0; 3],
            transmittance_cutoff: 0.0,
            normal_buffer: true,
            deterministic: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RenderedView {
    pub rgb: Image,
    pub depth: Image,
    pub mask: Image,
    pub normal: Image,
}

/// Gradient with respect to field parameters. The renderer produces it in
/// activated space; [`FieldGrad::to_raw`] chains through the activations.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrad {
    pub density: Vec<f64>,
    pub albedo: Vec<f64>,
}

impl FieldGrad {
    pub fn zeros(voxels: usize) -> Self {
        Self {
            density: vec![0.0; voxels],
            albedo: vec![0.0; 3 * voxels],
        }
    }

    pub fn add_assign(&mut self, other: &FieldGrad) {
        for (a, b) in self.density.iter_mut().zip(&other.density) {
            *a += b;
        }
        for (a, b) in self.albedo.iter_mut().zip(&other.albedo) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.density.iter_mut().for_each(|v| *v *= s);
        self.albedo.iter_mut().for_each(|v| *v *= s);
    }

    pub fn norm(&self) -> f64 {
        self.density
            .iter()
            .chain(&self.albedo)
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Chain rule through softplus (density) and sigmoid (albedo).
    pub fn to_raw(mut self, field: &VoxelField) -> FieldGrad {
        for (g, &x) in self.density.iter_mut().zip(field.density_raw()) {
            *g *= sigmoid(x);
        }
        for (g, &x) in self.albedo.iter_mut().zip(field.albedo_raw()) {
            let s = sigmoid(x);
            *g *= s * (1.0 - s);
        }
        self
    }
}

/// Upstream gradients for one backward call; absent buffers count as zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct ViewUpstream<'a> {
    pub rgb: Option<&'a Image>,
    pub depth: Option<&'a Image>,
    pub mask: Option<&'a Image>,
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    t: f64,
    p: Vec3,
    alpha: f64,
    trans: f64,
    color: [f64; 3],
    normal: Vec3,
    grad_norm: f64,
    stencil: Trilinear,
}

struct RayResult {
    rgb: [f64; 3],
    mask: f64,
    depth: f64,
    normal: Vec3,
}

/// A field with activations evaluated once, shared by forward and backward passes.
pub struct FieldRenderer<'a> {
    field: &'a VoxelField,
    // activated (sigma, r, g, b) per voxel
    voxels: Vec<[f64; 4]>,
}

impl<'a> FieldRenderer<'a> {
    pub fn new(field: &'a VoxelField) -> Self {
        let d = field.density_raw();
        let a = field.albedo_raw();
        let voxels = (0..field.voxel_count())
            .map(|v| {
                [
                    softplus(d[v]),
                    sigmoid(a[3 * v]),
                    sigmoid(a[3 * v + 1]),
                    sigmoid(a[3 * v + 2]),
                ]
            })
            .collect();
        Self { field, voxels }
    }

    pub fn field(&self) -> &VoxelField {
        self.field
    }

    #[inline]
    fn density(&self, tl: &Trilinear) -> f64 {
        tl.index
            .iter()
            .zip(&tl.weight)
            .map(|(&v, &w)| w * self.voxels[v][0])
            .sum()
    }

    #[inline]
    fn albedo(&self, tl: &Trilinear) -> [f64; 3] {
        let mut c = [0.0; 3];
        for (&v, &w) in tl.index.iter().zip(&tl.weight) {
            let vx = &self.voxels[v];
            c[0] += w * vx[1];
            c[1] += w * vx[2];
            c[2] += w * vx[3];
        }
        c
    }

    /// Stencil at `p` offset by one voxel along `axis` in direction `sign`.
    /// Away from the faces this is `tl` with every index shifted by one stride.
    #[inline]
    fn neighbor(&self, tl: &Trilinear, p: Vec3, h: Vec3, axis: usize, sign: f64) -> Option<Trilinear> {
        let res = self.field.resolution();
        let stride = match axis {
            0 => 1,
            1 => res[0],
            _ => res[0] * res[1],
        };
        let i0 = (tl.index[0] / stride) % res[axis];
        if i0 >= 1 && i0 + 3 <= res[axis] {
            let mut out = *tl;
            for v in out.index.iter_mut() {
                *v = if sign > 0.0 { *v + stride } else { *v - stride };
            }
            return Some(out);
        }
        let mut off = Vec3::ZERO;
        match axis {
            0 => off.x = sign * h.x,
            1 => off.y = sign * h.y,
            _ => off.z = sign * h.z,
        }
        self.field.locate(p + off)
    }

    /// Unnormalized density gradient by one-voxel central differences.
    #[inline]
    fn density_gradient(&self, tl: &Trilinear, p: Vec3, h: Vec3) -> Vec3 {
        let mut g = [0.0; 3];
        for (a, ga) in g.iter_mut().enumerate() {
            let plus = self.neighbor(tl, p, h, a, 1.0).map_or(0.0, |t| self.density(&t));
            let minus = self.neighbor(tl, p, h, a, -1.0).map_or(0.0, |t| self.density(&t));
            *ga = (plus - minus) / (2.0 * h[a]);
        }
        Vec3::new(g[0], g[1], g[2])
    }

    /// Marches one ray and fills `buf`. Returns final transmittance and bin width.
    fn march(
        &self,
        camera: &CameraPose,
        basis: &CameraBasis,
        x: usize,
        y: usize,
        mode: ShadingMode,
        settings: &RenderSettings,
        want_normals: bool,
        buf: &mut Vec<Sample>,
    ) -> (f64, f64) {
        buf.clear();
        let ray = camera.pixel_ray(basis, x, y);
        let Some((t0, t1)) = self.field.bbox().intersect(ray.origin, ray.dir) else {
            return (1.0, 0.0);
        };
        let n = settings.samples_per_ray.max(1);
        let delta = (t1 - t0) / n as f64;
        if delta <= 0.0 {
            return (1.0, 0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        rng.set_stream((y * camera.width + x) as u64);
        let h = self.field.voxel_size();
        let normals = want_normals || mode == ShadingMode::Normal;
        let mut trans = 1.0;
        for i in 0..n {
            let u: f64 = rng.random();
            let t = t0 + (i as f64 + u) * delta;
            let p = ray.origin + ray.dir * t;
            let Some(stencil) = self.field.locate(p) else {
                continue;
            };
            let sigma = self.density(&stencil);
            let alpha = 1.0 - (-sigma * delta).exp();
            let (normal, grad_norm) = if normals {
                let g = self.density_gradient(&stencil, p, h);
                let gn = g.norm();
                if gn < 1e-8 {
                    (Vec3::ZERO, gn)
                } else {
                    (-g / gn, gn)
                }
            } else {
                (Vec3::ZERO, 0.0)
            };
            let color = match mode {
                ShadingMode::Albedo => self.albedo(&stencil),
                ShadingMode::Normal => [
                    0.5 * (normal.x + 1.0),
                    0.5 * (normal.y + 1.0),
                    0.5 * (normal.z + 1.0),
                ],
            };
            buf.push(Sample {
                t,
                p,
                alpha,
                trans,
                color,
                normal,
                grad_norm,
                stencil,
            });
            trans *= 1.0 - alpha;
            if trans < settings.transmittance_cutoff {
                break;
            }
        }
        (trans, delta)
    }

    fn composite(buf: &[Sample], trans_final: f64, bg: &[f64; 3]) -> RayResult {
        let mut rgb = [0.0; 3];
        let mut depth_sum = 0.0;
        let mut nsum = Vec3::ZERO;
        for s in buf {
            let w = s.trans * s.alpha;
            for c in 0..3 {
                rgb[c] += w * s.color[c];
            }
            depth_sum += w * s.t;
            nsum += s.normal * w;
        }
        for c in 0..3 {
            rgb[c] += trans_final * bg[c];
        }
        let mask = 1.0 - trans_final;
        let normal = if mask > 1e-6 && nsum.norm() > 1e-12 {
            nsum.normalized()
        } else {
            Vec3::ZERO
        };
        RayResult {
            rgb,
            mask,
            depth: depth_sum / mask.max(1e-6),
            normal,
        }
    }

    pub fn render(
        &self,
        camera: &CameraPose,
        mode: ShadingMode,
        settings: &RenderSettings,
    ) -> Result<RenderedView> {
        camera.validate()?;
        let (w, h) = (camera.width, camera.height);
        let basis = camera.basis();
        let rows: Vec<Vec<RayResult>> = (0..h)
            .into_par_iter()
            .map_init(Vec::new, |buf, y| {
                (0..w)
                    .map(|x| {
                        let (tf, _) = self.march(
                            camera,
                            &basis,
                            x,
                            y,
                            mode,
                            settings,
                            settings.normal_buffer,
                            buf,
                        );
                        Self::composite(buf, tf, &settings.background)
                    })
                    .collect()
            })
            .collect();
        let mut rgb = Image::new(w, h, 3);
        let mut depth = Image::new(w, h, 1);
        let mut mask = Image::new(w, h, 1);
        let mut normal = Image::new(w, h, 3);
        for (y, row) in rows.iter().enumerate() {
            for (x, r) in row.iter().enumerate() {
                rgb.pixel_mut(x, y).copy_from_slice(&r.rgb);
                depth.set(x, y, 0, r.depth);
                mask.set(x, y, 0, r.mask);
                normal.pixel_mut(x, y).copy_from_slice(&r.normal.to_array());
            }
        }
        Ok(RenderedView {
            rgb,
            depth,
            mask,
            normal,
        })
    }

    /// Reverse-mode gradient of `<upstream, render(...)>` in activated space.
    pub fn backward(
        &self,
        camera: &CameraPose,
        mode: ShadingMode,
        settings: &RenderSettings,
        upstream: ViewUpstream<'_>,
    ) -> Result<FieldGrad> {
        camera.validate()?;
        let (w, h) = (camera.width, camera.height);
        if let Some(g) = upstream.rgb {
            g.check_dims(w, h, "render_backward rgb upstream")?;
            if g.channels() != 3 {
                return Err(Error::dimension("render_backward rgb channels", 3, g.channels()));
            }
        }
        for (name, g) in [("depth", upstream.depth), ("mask", upstream.mask)] {
            if let Some(g) = g {
                g.check_dims(w, h, "render_backward upstream")?;
                if g.channels() != 1 {
                    return Err(Error::dimension(
                        if name == "depth" {
                            "render_backward depth channels"
                        } else {
                            "render_backward mask channels"
                        },
                        1,
                        g.channels(),
                    ));
                }
            }
        }
        let basis = camera.basis();
        let voxels = self.field.voxel_count();
        let bands = rayon::current_num_threads().max(1).min(h);
        if settings.deterministic || bands == 1 {
            let mut grad = FieldGrad::zeros(voxels);
            let mut buf = Vec::new();
            for y in 0..h {
                for x in 0..w {
                    self.backward_ray(camera, &basis, x, y, mode, settings, &upstream, &mut buf, &mut grad);
                }
            }
            return Ok(grad);
        }
        let rows_per_band = h.div_ceil(bands);
        let partial: Vec<FieldGrad> = (0..bands)
            .into_par_iter()
            .map(|b| {
                let mut grad = FieldGrad::zeros(voxels);
                let mut buf = Vec::new();
                for y in b * rows_per_band..((b + 1) * rows_per_band).min(h) {
                    for x in 0..w {
                        self.backward_ray(camera, &basis, x, y, mode, settings, &upstream, &mut buf, &mut grad);
                    }
                }
                grad
            })
            .collect();
        let mut it = partial.into_iter();
        let mut grad = it.next().unwrap_or_else(|| FieldGrad::zeros(voxels));
        for g in it {
            grad.add_assign(&g);
        }
        Ok(grad)
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_ray(
        &self,
        camera: &CameraPose,
        basis: &CameraBasis,
        x: usize,
        y: usize,
        mode: ShadingMode,
        settings: &RenderSettings,
        upstream: &ViewUpstream<'_>,
        buf: &mut Vec<Sample>,
        grad: &mut FieldGrad,
    ) {
        let g_rgb = upstream
            .rgb
            .map_or([0.0; 3], |g| [g.get(x, y, 0), g.get(x, y, 1), g.get(x, y, 2)]);
        let g_depth = upstream.depth.map_or(0.0, |g| g.get(x, y, 0));
        let g_mask = upstream.mask.map_or(0.0, |g| g.get(x, y, 0));
        if g_rgb == [0.0; 3] && g_depth == 0.0 && g_mask == 0.0 {
            return;
        }
        let (trans_final, delta) = self.march(camera, basis, x, y, mode, settings, false, buf);
        if buf.is_empty() {
            return;
        }
        let mask = 1.0 - trans_final;
        let mask_c = mask.max(1e-6);
        let depth_sum: f64 = buf.iter().map(|s| s.trans * s.alpha * s.t).sum();
        // depth = S / max(mask, eps): the mask branch only carries gradient above eps
        let g_mask_eff = if mask > 1e-6 {
            g_mask - g_depth * depth_sum / (mask * mask)
        } else {
            g_mask
        };
        let q_bg: f64 = (0..3).map(|c| g_rgb[c] * settings.background[c]).sum();
        let h = self.field.voxel_size();

        // d out / d sigma_k = delta * (T_{k+1} q_k - sum_{i>k} w_i q_i - T_N q_bg)
        let mut suffix = 0.0;
        for s in buf.iter().rev() {
            let q = g_rgb[0] * s.color[0]
                + g_rgb[1] * s.color[1]
                + g_rgb[2] * s.color[2]
                + g_mask_eff
                + g_depth * s.t / mask_c;
            let w = s.trans * s.alpha;
            let trans_next = s.trans * (1.0 - s.alpha);
            let d_sigma = delta * (trans_next * q - suffix - trans_final * q_bg);
            suffix += w * q;
            for (&v, &tw) in s.stencil.index.iter().zip(&s.stencil.weight) {
                grad.density[v] += tw * d_sigma;
            }
            if g_rgb == [0.0; 3] || w == 0.0 {
                continue;
            }
            let d_color = [w * g_rgb[0], w * g_rgb[1], w * g_rgb[2]];
            match mode {
                ShadingMode::Albedo => {
                    for (&v, &tw) in s.stencil.index.iter().zip(&s.stencil.weight) {
                        for c in 0..3 {
                            grad.albedo[3 * v + c] += tw * d_color[c];
                        }
                    }
                }
                ShadingMode::Normal => {
                    if s.grad_norm < 1e-8 {
                        continue;
                    }
                    // color = (n + 1) / 2 with n = -g / |g|
                    let dn = Vec3::new(0.5 * d_color[0], 0.5 * d_color[1], 0.5 * d_color[2]);
                    let n = s.normal;
                    let dg = -(dn - n * n.dot(dn)) / s.grad_norm;
                    for a in 0..3 {
                        let coef = dg[a] / (2.0 * h[a]);
                        for sign in [1.0, -1.0] {
                            if let Some(tl) = self.neighbor(&s.stencil, s.p, h, a, sign) {
                                for (&v, &tw) in tl.index.iter().zip(&tl.weight) {
                                    grad.density[v] += sign * tw * coef;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn render_view(
    field: &VoxelField,
    camera: &CameraPose,
    mode: ShadingMode,
    settings: &RenderSettings,
) -> Result<RenderedView> {
    FieldRenderer::new(field).render(camera, mode, settings)
}

/// Gradient of `<upstream, rgb>` with respect to the raw (pre-activation)
/// field parameters.
pub fn render_backward(
    field: &VoxelField,
    camera: &CameraPose,
    mode: ShadingMode,
    settings: &RenderSettings,
    upstream: &Image,
) -> Result<FieldGrad> {
    let g = FieldRenderer::new(field).backward(
        camera,
        mode,
        settings,
        ViewUpstream {
            rgb: Some(upstream),
            ..Default::default()
        },
    )?;
    Ok(g.to_raw(field))
}

use std::path::Path;

use rayon::prelude::*;

use super::renderer::{DeferredRenderer, RendererTape, FEATURES};
use crate::error::{Error, Result};
use crate::field::CameraPose;
use crate::ply::{PlyTable, PlyType};
use crate::raster::Image;
use crate::texproj::{depth_buffer, footprints, visibility, TexturedPointCloud};

/// A textured cloud with a learnable feature vector per point.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCloud {
    pub cloud: TexturedPointCloud,
    features: Vec<f64>,
}

impl FeatureCloud {
    /// Channels 0..3 start at the point color (`fill` if uncolored), channel 3
    /// (coverage) at 1 and the rest at 0.
    pub fn from_textured(cloud: TexturedPointCloud, fill: [f64; 3]) -> Self {
        let mut features = vec![0.0; cloud.len() * FEATURES];
        for (i, f) in features.chunks_mut(FEATURES).enumerate() {
            let rgb = cloud.color(i).map_or(fill, |c| c.rgb);
            f[..3].copy_from_slice(&rgb);
            f[3] = 1.0;
        }
        Self { cloud, features }
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }

    /// Point-major, [`FEATURES`] values per point.
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut [f64] {
        &mut self.features
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * FEATURES..(i + 1) * FEATURES]
    }

    /// Points colored by the reference view keep their color channels fixed.
    pub fn is_frozen(&self, i: usize) -> bool {
        self.cloud.color(i).is_some_and(|c| c.view == 0)
    }

    /// Texture-projection columns followed by `f0`..`f7` float features.
    pub fn to_ply(&self) -> PlyTable {
        let mut t = self.cloud.to_ply();
        for k in 0..FEATURES {
            t.properties.push((format!("f{k}"), PlyType::Float));
        }
        for (row, f) in t.rows.iter_mut().zip(self.features.chunks(FEATURES)) {
            row.extend_from_slice(f);
        }
        t
    }

    pub fn from_ply(table: &PlyTable, splat_radius: f64, depth_epsilon: f64) -> Result<Self> {
        let cloud = TexturedPointCloud::from_ply(table, splat_radius, depth_epsilon)?;
        let cols: Vec<usize> = (0..FEATURES)
            .map(|k| table.require(&format!("f{k}")))
            .collect::<Result<_>>()?;
        let features = table
            .rows
            .iter()
            .flat_map(|r| cols.iter().map(|&c| r[c]))
            .collect();
        Ok(Self { cloud, features })
    }

    pub fn save_ply(&self, path: &Path) -> Result<()> {
        self.to_ply().save(path)
    }
}

/// Per-pixel normalized Gaussian weights of the points that reach each pixel
/// from one camera. Depends only on geometry, so it can be reused while
/// features change.
#[derive(Debug, Clone)]
pub struct SplatPlan {
    width: usize,
    height: usize,
    offsets: Vec<usize>,
    entries: Vec<(usize, f64)>,
}

impl SplatPlan {
    /// Each visible point spreads `exp(-d^2 / (2 rho^2))` over pixels within
    /// `3 rho` whose front surface lies within the cloud's depth tolerance of
    /// the point. Weights are normalized per pixel.
    pub fn build(cloud: &TexturedPointCloud, camera: &CameraPose, rho: f64) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(Error::InvalidInput(format!("splat footprint must be positive, got {rho}")));
        }
        camera.validate()?;
        let (w, h) = (camera.width, camera.height);
        let fps = footprints(cloud, camera);
        let vis = visibility(cloud, camera, &fps, cloud.depth_epsilon);
        let zbuf = depth_buffer(cloud, camera, &fps);
        let reach = 3.0 * rho;
        let mut triples: Vec<(usize, usize, f64)> = Vec::new();
        for (i, fp) in fps.iter().enumerate() {
            let Some(fp) = (*fp).filter(|_| vis[i]) else { continue };
            let x0 = (fp.px - reach - 0.5).ceil().max(0.0) as usize;
            let y0 = (fp.py - reach - 0.5).ceil().max(0.0) as usize;
            let x1 = ((fp.px + reach - 0.5).floor()).min(w as f64 - 1.0);
            let y1 = ((fp.py + reach - 0.5).floor()).min(h as f64 - 1.0);
            if x1 < 0.0 || y1 < 0.0 {
                continue;
            }
            for y in y0..=y1 as usize {
                for x in x0..=x1 as usize {
                    let (dx, dy) = (x as f64 + 0.5 - fp.px, y as f64 + 0.5 - fp.py);
                    let d2 = dx * dx + dy * dy;
                    let z = zbuf[y * w + x];
                    if d2 <= reach * reach && z.is_finite() && fp.depth <= z + cloud.depth_epsilon {
                        triples.push((y * w + x, i, (-d2 / (2.0 * rho * rho)).exp()));
                    }
                }
            }
        }
        triples.sort_unstable_by_key(|&(pix, i, _)| (pix, i));
        let mut offsets = vec![0; w * h + 1];
        for &(pix, _, _) in &triples {
            offsets[pix + 1] += 1;
        }
        for k in 1..offsets.len() {
            offsets[k] += offsets[k - 1];
        }
        let mut entries: Vec<(usize, f64)> = triples.into_iter().map(|(_, i, wt)| (i, wt)).collect();
        for p in 0..w * h {
            let e = &mut entries[offsets[p]..offsets[p + 1]];
            let total: f64 = e.iter().map(|x| x.1).sum();
            for x in e.iter_mut() {
                x.1 /= total;
            }
        }
        Ok(Self {
            width: w,
            height: h,
            offsets,
            entries,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Points and weights contributing to pixel `(x, y)`.
    pub fn pixel(&self, x: usize, y: usize) -> &[(usize, f64)] {
        let p = y * self.width + x;
        &self.entries[self.offsets[p]..self.offsets[p + 1]]
    }

    /// Single-channel image of 1 where any point contributes.
    pub fn coverage(&self) -> Image {
        let mut m = Image::new(self.width, self.height, 1);
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.pixel(x, y).is_empty() {
                    m.set(x, y, 0, 1.0);
                }
            }
        }
        m
    }

    /// Weighted feature image; uncovered pixels are zero.
    pub fn splat(&self, features: &[f64]) -> Image {
        let (w, h) = (self.width, self.height);
        let mut data = vec![0.0; w * h * FEATURES];
        data.par_chunks_mut(w * FEATURES).enumerate().for_each(|(y, row)| {
            for x in 0..w {
                let out = &mut row[x * FEATURES..(x + 1) * FEATURES];
                for &(i, wt) in self.pixel(x, y) {
                    for (o, f) in out.iter_mut().zip(&features[i * FEATURES..(i + 1) * FEATURES]) {
                        *o += wt * f;
                    }
                }
            }
        });
        Image::from_vec(w, h, FEATURES, data).expect("plan dimensions")
    }

    /// Adds the gradient of `<d_image, splat(features)>` into `grad`.
    pub fn splat_backward(&self, d_image: &Image, grad: &mut [f64]) {
        for y in 0..self.height {
            for x in 0..self.width {
                let d = d_image.pixel(x, y);
                for &(i, wt) in self.pixel(x, y) {
                    for (g, dv) in grad[i * FEATURES..(i + 1) * FEATURES].iter_mut().zip(d) {
                        *g += wt * dv;
                    }
                }
            }
        }
    }
}

/// Output of [`splat_render`] with what [`splat_render_backward`] needs.
pub struct SplatRender {
    pub rgb: Image,
    pub features: Image,
    tape: RendererTape,
}

pub fn splat_render(cloud: &FeatureCloud, plan: &SplatPlan, renderer: &DeferredRenderer) -> Result<SplatRender> {
    let features = plan.splat(cloud.features());
    let (rgb, tape) = renderer.forward(&features)?;
    Ok(SplatRender { rgb, features, tape })
}

/// Gradients of `<d_rgb, rgb>` for per-point features and renderer parameters.
pub fn splat_render_backward(
    cloud: &FeatureCloud,
    plan: &SplatPlan,
    renderer: &DeferredRenderer,
    render: &SplatRender,
    d_rgb: &Image,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (d_feat_img, d_params) = renderer.backward(&render.tape, d_rgb)?;
    let mut d_feat = vec![0.0; cloud.features().len()];
    plan.splat_backward(&d_feat_img, &mut d_feat);
    Ok((d_feat, d_params))
}

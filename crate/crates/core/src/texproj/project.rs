use super::cloud::{TexturedPointCloud, ViewImageSet};
use super::splat::{rasterize_splat, splat_footprint, Footprint};
use crate::coarse::angle_diff;
use crate::error::{Error, Result};
use crate::field::{CameraBasis, CameraPose};
use crate::raster::Image;

pub(crate) fn footprints(cloud: &TexturedPointCloud, camera: &CameraPose) -> Vec<Option<Footprint>> {
    let basis = camera.basis();
    cloud
        .positions()
        .iter()
        .map(|&p| splat_footprint(camera, &basis, p, cloud.splat_radius))
        .collect()
}

/// Nearest splat depth per pixel.
pub(crate) fn depth_buffer(cloud: &TexturedPointCloud, camera: &CameraPose, fps: &[Option<Footprint>]) -> Vec<f64> {
    let w = camera.width;
    let basis = camera.basis();
    let mut zbuf = vec![f64::INFINITY; w * camera.height];
    for (i, fp) in fps.iter().enumerate() {
        let Some(fp) = fp else { continue };
        let p = cloud.positions()[i];
        rasterize_splat(camera, &basis, fp, p, cloud.normal(i), cloud.splat_radius, |x, y, depth, _| {
            let z = &mut zbuf[y * w + x];
            if depth < *z {
                *z = depth;
            }
        });
    }
    zbuf
}

/// Per-pixel lists of splats covering each pixel center, with the depth at
/// which each splat meets the pixel-center ray.
struct SplatLists {
    offsets: Vec<usize>,
    entries: Vec<(usize, f64)>,
}

impl SplatLists {
    fn build(cloud: &TexturedPointCloud, camera: &CameraPose, fps: &[Option<Footprint>]) -> Self {
        let w = camera.width;
        let basis = camera.basis();
        let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
        for (i, fp) in fps.iter().enumerate() {
            let Some(fp) = fp else { continue };
            let p = cloud.positions()[i];
            rasterize_splat(camera, &basis, fp, p, cloud.normal(i), cloud.splat_radius, |x, y, depth, _| {
                pairs.push((y * w + x, i, depth))
            });
        }
        pairs.sort_unstable_by_key(|&(pix, i, _)| (pix, i));
        let mut offsets = vec![0; w * camera.height + 1];
        for &(pix, _, _) in &pairs {
            offsets[pix + 1] += 1;
        }
        for k in 1..offsets.len() {
            offsets[k] += offsets[k - 1];
        }
        Self {
            offsets,
            entries: pairs.into_iter().map(|(_, i, d)| (i, d)).collect(),
        }
    }

    fn at(&self, pixel: usize) -> &[(usize, f64)] {
        &self.entries[self.offsets[pixel]..self.offsets[pixel + 1]]
    }
}

/// Depth at which the ray through `(px, py)` meets splat `j`, if it does.
fn splat_depth_on_ray(
    cloud: &TexturedPointCloud,
    camera: &CameraPose,
    basis: &CameraBasis,
    fp: &Footprint,
    j: usize,
    px: f64,
    py: f64,
) -> Option<f64> {
    let p = cloud.positions()[j];
    match cloud.normal(j) {
        None => {
            let (dx, dy) = (px - fp.px, py - fp.py);
            (dx * dx + dy * dy <= fp.radius * fp.radius).then_some(fp.depth)
        }
        Some(n) => {
            let ray = camera.ray(basis, px, py);
            let denom = n.dot(ray.dir);
            if denom.abs() < 1e-9 {
                return None;
            }
            let t = n.dot(p - ray.origin) / denom;
            let hit = ray.origin + ray.dir * t;
            (t > 0.0 && (hit - p).norm_squared() <= cloud.splat_radius * cloud.splat_radius)
                .then(|| t * ray.dir.dot(basis.forward))
        }
    }
}

/// A point is visible when no splat covering its pixel meets the point's own
/// camera ray more than `depth_epsilon` in front of it. Splats are tested along
/// the exact sub-pixel ray, so surfaces seen edge-on at silhouettes resolve.
pub(crate) fn visibility(
    cloud: &TexturedPointCloud,
    camera: &CameraPose,
    fps: &[Option<Footprint>],
    depth_epsilon: f64,
) -> Vec<bool> {
    let lists = SplatLists::build(cloud, camera, fps);
    let basis = camera.basis();
    fps.iter()
        .enumerate()
        .map(|(i, fp)| {
            let Some(fp) = fp else { return false };
            let Some((x, y)) = fp.center_pixel(camera.width, camera.height) else {
                return false;
            };
            lists.at(y * camera.width + x).iter().all(|&(j, _)| {
                j == i
                    || fps[j].as_ref().and_then(|fj| {
                        splat_depth_on_ray(cloud, camera, &basis, fj, j, fp.px, fp.py)
                    })
                    .is_none_or(|d| fp.depth <= d + depth_epsilon)
            })
        })
        .collect()
}

/// Z-buffer visibility: every point is splatted into the buffer and counts as
/// visible when its depth is within `depth_epsilon` of the nearest splat at its
/// projected position.
pub fn visible_points(cloud: &TexturedPointCloud, camera: &CameraPose, depth_epsilon: f64) -> Result<Vec<bool>> {
    if !(depth_epsilon > 0.0) {
        return Err(Error::InvalidInput(format!("depth epsilon must be positive, got {depth_epsilon}")));
    }
    camera.validate()?;
    Ok(visibility(cloud, camera, &footprints(cloud, camera), depth_epsilon))
}

/// Pixels whose front-most surface is an already-colored point visible from
/// `camera`.
pub fn reproject_mask(cloud: &TexturedPointCloud, camera: &CameraPose) -> Result<Image> {
    camera.validate()?;
    let fps = footprints(cloud, camera);
    let vis = visibility(cloud, camera, &fps, cloud.depth_epsilon);
    let lists = SplatLists::build(cloud, camera, &fps);
    let mut mask = Image::new(camera.width, camera.height, 1);
    for y in 0..camera.height {
        for x in 0..camera.width {
            let entries = lists.at(y * camera.width + x);
            let front = entries.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
            let covered = entries
                .iter()
                .any(|&(i, d)| vis[i] && cloud.color(i).is_some() && d <= front + cloud.depth_epsilon);
            if covered {
                mask.set(x, y, 0, 1.0);
            }
        }
    }
    Ok(mask)
}

/// Colors every uncolored point that is visible and lands inside
/// `allowed_mask`, sampling `image` bilinearly. Returns the number of points colored.
pub fn project_view(
    cloud: &mut TexturedPointCloud,
    camera: &CameraPose,
    image: &Image,
    allowed_mask: &Image,
    view: usize,
) -> Result<usize> {
    camera.validate()?;
    image.check_dims(camera.width, camera.height, "project_view image")?;
    allowed_mask.check_dims(camera.width, camera.height, "project_view mask")?;
    let fps = footprints(cloud, camera);
    let vis = visibility(cloud, camera, &fps, cloud.depth_epsilon);
    let mut colored = 0;
    let mut rgb = [0.0; 3];
    for (i, fp) in fps.iter().enumerate() {
        let Some(fp) = fp else { continue };
        if !vis[i] || cloud.color(i).is_some() {
            continue;
        }
        let Some((x, y)) = fp.center_pixel(camera.width, camera.height) else {
            continue;
        };
        if allowed_mask.get(x, y, 0) <= 0.5 {
            continue;
        }
        image.sample_bilinear(fp.px, fp.py, &mut rgb);
        if cloud.claim(i, rgb, view) {
            colored += 1;
        }
    }
    Ok(colored)
}

/// Outcome of [`build_textured_cloud`].
#[derive(Debug, Clone, PartialEq)]
pub struct BuildReport {
    /// Points newly colored by each view, in view order.
    pub colored_per_view: Vec<usize>,
    pub uncolored: usize,
}

/// Indices of `cameras` sorted by increasing absolute azimuth offset from the
/// reference. Ties keep their input order.
pub fn novel_view_order(reference: &CameraPose, cameras: &[CameraPose]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..cameras.len()).collect();
    idx.sort_by(|&a, &b| {
        let da = angle_diff(cameras[a].azimuth, reference.azimuth).abs();
        let db = angle_diff(cameras[b].azimuth, reference.azimuth).abs();
        da.total_cmp(&db)
    });
    idx
}

/// Reference view first, then each novel view restricted to its mask minus the
/// reprojection of everything colored before it.
pub fn build_textured_cloud(cloud: &mut TexturedPointCloud, views: &ViewImageSet) -> Result<BuildReport> {
    let mut colored_per_view = Vec::with_capacity(views.len());
    let reference = views.reference();
    colored_per_view.push(project_view(cloud, &reference.camera, &reference.image, &reference.mask, 0)?);
    for (i, v) in views.views().iter().enumerate().skip(1) {
        let covered = reproject_mask(cloud, &v.camera)?;
        let allowed = v.mask.zip_map(&covered, |m, c| if m > 0.5 && c <= 0.5 { 1.0 } else { 0.0 })?;
        colored_per_view.push(project_view(cloud, &v.camera, &v.image, &allowed, i)?);
    }
    let uncolored = cloud.len() - cloud.colored_count();
    if uncolored > 0 {
        log::info!("{uncolored} point(s) not covered by any view");
    }
    Ok(BuildReport {
        colored_per_view,
        uncolored,
    })
}

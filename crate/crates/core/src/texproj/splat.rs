use crate::field::{CameraBasis, CameraPose};
use crate::math::Vec3;

/// Screen-space disk covered by a world-space splat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub px: f64,
    pub py: f64,
    pub depth: f64,
    /// Disk radius in pixels.
    pub radius: f64,
}

impl Footprint {
    /// Pixel containing the splat center, if inside the frame.
    pub fn center_pixel(&self, width: usize, height: usize) -> Option<(usize, usize)> {
        if self.px < 0.0 || self.py < 0.0 {
            return None;
        }
        let (x, y) = (self.px.floor() as usize, self.py.floor() as usize);
        (x < width && y < height).then_some((x, y))
    }

    /// Calls `f(x, y, d2)` for each in-frame pixel whose center lies within the
    /// disk, `d2` being the squared pixel distance to the splat center. The
    /// center pixel is always included.
    pub fn for_each_pixel(&self, width: usize, height: usize, mut f: impl FnMut(usize, usize, f64)) {
        let r = self.radius;
        let x0 = (self.px - r - 0.5).floor().max(0.0) as usize;
        let y0 = (self.py - r - 0.5).floor().max(0.0) as usize;
        let x1 = ((self.px + r - 0.5).ceil().max(-1.0) as isize).min(width as isize - 1);
        let y1 = ((self.py + r - 0.5).ceil().max(-1.0) as isize).min(height as isize - 1);
        let center = self.center_pixel(width, height);
        for y in y0 as isize..=y1 {
            for x in x0 as isize..=x1 {
                let (xu, yu) = (x as usize, y as usize);
                let dx = x as f64 + 0.5 - self.px;
                let dy = y as f64 + 0.5 - self.py;
                let d2 = dx * dx + dy * dy;
                if d2 <= r * r || center == Some((xu, yu)) {
                    f(xu, yu, d2);
                }
            }
        }
    }
}

/// Projects a splat of world radius `radius` centered at `p`.
pub fn splat_footprint(camera: &CameraPose, basis: &CameraBasis, p: Vec3, radius: f64) -> Option<Footprint> {
    let proj = camera.project(basis, p)?;
    Some(Footprint {
        px: proj.px,
        py: proj.py,
        depth: proj.depth,
        radius: radius * basis.focal / proj.depth,
    })
}

/// Rasterizes a splat, calling `f(x, y, depth, d2)` per covered pixel. With a
/// normal the splat is a disk in the tangent plane and each pixel gets the
/// depth of its ray's hit on that disk; without one it is a screen-facing disk
/// at constant depth. The center pixel always receives the point's own depth.
pub fn rasterize_splat(
    camera: &CameraPose,
    basis: &CameraBasis,
    fp: &Footprint,
    p: Vec3,
    normal: Option<Vec3>,
    radius: f64,
    mut f: impl FnMut(usize, usize, f64, f64),
) {
    let (w, h) = (camera.width, camera.height);
    let center = fp.center_pixel(w, h);
    let Some(n) = normal else {
        fp.for_each_pixel(w, h, |x, y, d2| f(x, y, fp.depth, d2));
        return;
    };
    let r2 = radius * radius;
    fp.for_each_pixel(w, h, |x, y, d2| {
        if center == Some((x, y)) {
            f(x, y, fp.depth, d2);
            return;
        }
        let ray = camera.pixel_ray(basis, x, y);
        let denom = n.dot(ray.dir);
        if denom.abs() < 1e-9 {
            return;
        }
        let t = n.dot(p - ray.origin) / denom;
        if t <= 0.0 {
            return;
        }
        let hit = ray.origin + ray.dir * t;
        if (hit - p).norm_squared() <= r2 {
            f(x, y, t * ray.dir.dot(basis.forward), d2);
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_pixels_within_radius() {
        let fp = Footprint {
            px: 5.5,
            py: 5.5,
            depth: 1.0,
            radius: 1.5,
        };
        let mut hits = Vec::new();
        fp.for_each_pixel(10, 10, |x, y, d2| {
            assert!(d2 <= 2.25);
            hits.push((x, y));
        });
        // center plus 4-neighbors plus diagonals (d2 = 2)
        assert_eq!(hits.len(), 9);
    }

    #[test]
    fn tiny_disk_still_covers_center() {
        let fp = Footprint {
            px: 2.1,
            py: 3.9,
            depth: 1.0,
            radius: 0.01,
        };
        let mut hits = Vec::new();
        fp.for_each_pixel(4, 4, |x, y, _| hits.push((x, y)));
        assert_eq!(hits, vec![(2, 3)]);
    }

    #[test]
    fn clipped_at_frame_edges() {
        let fp = Footprint {
            px: -0.5,
            py: 0.2,
            depth: 1.0,
            radius: 2.0,
        };
        let mut hits = Vec::new();
        fp.for_each_pixel(4, 4, |x, y, _| hits.push((x, y)));
        assert!(hits.iter().all(|&(x, y)| x < 4 && y < 4));
        assert!(hits.contains(&(0, 0)));
    }

    #[test]
    fn oriented_splat_depth_follows_tangent_plane() {
        let cam = CameraPose::new(0.0, 0.0, 3.0, 0.5, 64, 64).unwrap();
        let basis = cam.basis();
        let p = Vec3::new(0.0, 0.0, 0.0);
        // plane tilted 45 degrees about the vertical axis
        let n = Vec3::new(1.0, 0.0, 1.0).normalized();
        let fp = splat_footprint(&cam, &basis, p, 0.2).unwrap();
        let mut left = None;
        let mut right = None;
        rasterize_splat(&cam, &basis, &fp, p, Some(n), 0.2, |x, y, depth, _| {
            if y == 32 && x == 29 {
                left = Some(depth);
            }
            if y == 32 && x == 35 {
                right = Some(depth);
            }
        });
        // the plane is z = -x, so the +x half (right of frame) recedes
        let (l, r) = (left.unwrap(), right.unwrap());
        assert!(l < 3.0 && r > 3.0, "{l} {r}");
        let flat = {
            let mut d = Vec::new();
            rasterize_splat(&cam, &basis, &fp, p, None, 0.2, |_, _, depth, _| d.push(depth));
            d
        };
        assert!(flat.iter().all(|&d| (d - 3.0).abs() < 1e-12));
    }
}

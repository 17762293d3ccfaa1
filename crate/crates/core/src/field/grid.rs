use crate::error::{Error, Result};
use crate::math::Vec3;

/// Axis-aligned box in world units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        let b = Self { min, max };
        b.validate()?;
        Ok(b)
    }

    pub fn cube(half: f64) -> Result<Self> {
        Self::new(Vec3::splat(-half), Vec3::splat(half))
    }

    pub fn validate(&self) -> Result<()> {
        let e = self.max - self.min;
        if !(self.min.is_finite() && self.max.is_finite()) || e.x <= 0.0 || e.y <= 0.0 || e.z <= 0.0
        {
            return Err(Error::InvalidInput(format!(
                "bounding box must have positive extent, got min={:?} max={:?}",
                self.min, self.max
            )));
        }
        Ok(())
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn contains(&self, p: Vec3) -> bool {
        p.x >= self.min.x
            && p.y >= self.min.y
            && p.z >= self.min.z
            && p.x <= self.max.x
            && p.y <= self.max.y
            && p.z <= self.max.z
    }

    /// Slab test. Returns the parametric entry/exit distances clipped to t >= 0.
    pub fn intersect(&self, origin: Vec3, dir: Vec3) -> Option<(f64, f64)> {
        let mut t0 = 0.0_f64;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            let o = origin[a];
            let d = dir[a];
            let (lo, hi) = (self.min[a], self.max[a]);
            if d.abs() < 1e-15 {
                if o < lo || o > hi {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d;
            let mut ta = (lo - o) * inv;
            let mut tb = (hi - o) * inv;
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`]; non-positive targets clamp to a very negative value.
pub fn softplus_inverse(y: f64) -> f64 {
    if y <= 0.0 {
        return -60.0;
    }
    if y > 30.0 {
        y
    } else {
        y + (-(-y).exp()).ln_1p()
    }
}

pub fn sigmoid_inverse(y: f64) -> f64 {
    let y = y.clamp(1e-12, 1.0 - 1e-12);
    (y / (1.0 - y)).ln()
}

/// Eight grid corners and weights for one trilinear lookup.
#[derive(Debug, Clone, Copy)]
pub struct Trilinear {
    pub index: [usize; 8],
    pub weight: [f64; 8],
}

/// Optimizable density + albedo grid. Values are stored pre-activation:
/// density goes through softplus, albedo through sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelField {
    resolution: [usize; 3],
    bbox: Aabb,
    density_raw: Vec<f64>,
    albedo_raw: Vec<f64>,
}

impl VoxelField {
    pub fn new(resolution: [usize; 3], bbox: Aabb, density_raw: f64, albedo_raw: f64) -> Result<Self> {
        bbox.validate()?;
        if resolution.iter().any(|&n| n == 0) {
            return Err(Error::InvalidInput(format!(
                "field resolution must be >= 1 on every axis, got {resolution:?}"
            )));
        }
        let n = resolution[0] * resolution[1] * resolution[2];
        Ok(Self {
            resolution,
            bbox,
            density_raw: vec![density_raw; n],
            albedo_raw: vec![albedo_raw; 3 * n],
        })
    }

    pub fn from_raw(
        resolution: [usize; 3],
        bbox: Aabb,
        density_raw: Vec<f64>,
        albedo_raw: Vec<f64>,
    ) -> Result<Self> {
        let mut f = Self::new(resolution, bbox, 0.0, 0.0)?;
        if density_raw.len() != f.voxel_count() {
            return Err(Error::dimension(
                "VoxelField density",
                f.voxel_count(),
                density_raw.len(),
            ));
        }
        if albedo_raw.len() != 3 * f.voxel_count() {
            return Err(Error::dimension(
                "VoxelField albedo",
                3 * f.voxel_count(),
                albedo_raw.len(),
            ));
        }
        f.density_raw = density_raw;
        f.albedo_raw = albedo_raw;
        Ok(f)
    }

    /// Builds a field whose activated values match the given closures at voxel centers.
    pub fn from_fn(
        resolution: [usize; 3],
        bbox: Aabb,
        density: impl Fn(Vec3) -> f64,
        albedo: impl Fn(Vec3) -> [f64; 3],
    ) -> Result<Self> {
        let mut f = Self::new(resolution, bbox, 0.0, 0.0)?;
        for k in 0..resolution[2] {
            for j in 0..resolution[1] {
                for i in 0..resolution[0] {
                    let p = f.voxel_center(i, j, k);
                    let v = f.voxel_index(i, j, k);
                    f.density_raw[v] = softplus_inverse(density(p));
                    let a = albedo(p);
                    for c in 0..3 {
                        f.albedo_raw[3 * v + c] = sigmoid_inverse(a[c]);
                    }
                }
            }
        }
        Ok(f)
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }

    pub fn bbox(&self) -> Aabb {
        self.bbox
    }

    pub fn voxel_count(&self) -> usize {
        self.resolution[0] * self.resolution[1] * self.resolution[2]
    }

    pub fn voxel_size(&self) -> Vec3 {
        let e = self.bbox.extent();
        Vec3::new(
            e.x / self.resolution[0] as f64,
            e.y / self.resolution[1] as f64,
            e.z / self.resolution[2] as f64,
        )
    }

    #[inline]
    pub fn voxel_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.resolution[0] * (j + self.resolution[1] * k)
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let s = self.voxel_size();
        self.bbox.min
            + Vec3::new(
                (i as f64 + 0.5) * s.x,
                (j as f64 + 0.5) * s.y,
                (k as f64 + 0.5) * s.z,
            )
    }

    pub fn density_raw(&self) -> &[f64] {
        &self.density_raw
    }

    pub fn density_raw_mut(&mut self) -> &mut [f64] {
        &mut self.density_raw
    }

    pub fn albedo_raw(&self) -> &[f64] {
        &self.albedo_raw
    }

    pub fn albedo_raw_mut(&mut self) -> &mut [f64] {
        &mut self.albedo_raw
    }

    pub fn set_density(&mut self, i: usize, j: usize, k: usize, sigma: f64) {
        let v = self.voxel_index(i, j, k);
        self.density_raw[v] = softplus_inverse(sigma);
    }

    pub fn set_albedo(&mut self, i: usize, j: usize, k: usize, rgb: [f64; 3]) {
        let v = self.voxel_index(i, j, k);
        for c in 0..3 {
            self.albedo_raw[3 * v + c] = sigmoid_inverse(rgb[c]);
        }
    }

    pub fn density_at_voxel(&self, v: usize) -> f64 {
        softplus(self.density_raw[v])
    }

    pub fn activated_density(&self) -> Vec<f64> {
        self.density_raw.iter().map(|&x| softplus(x)).collect()
    }

    /// Trilinear stencil for `p`, or `None` outside the box. Coordinates are
    /// clamped to the outermost voxel centers so the field is constant in the
    /// half-voxel shell along the box faces.
    #[inline]
    pub fn locate(&self, p: Vec3) -> Option<Trilinear> {
        if !self.bbox.contains(p) {
            return None;
        }
        let s = self.voxel_size();
        let rel = p - self.bbox.min;
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        let mut step = [0usize; 3];
        for a in 0..3 {
            let n = self.resolution[a];
            let u = (rel[a] / s[a] - 0.5).clamp(0.0, (n - 1) as f64);
            // u is non-negative, so truncation is floor
            let i0 = (u as usize).min(n.saturating_sub(2));
            base[a] = i0;
            frac[a] = if n > 1 { u - i0 as f64 } else { 0.0 };
            step[a] = usize::from(n > 1);
        }
        let nx = self.resolution[0];
        let nxy = nx * self.resolution[1];
        let b = base[0] + nx * base[1] + nxy * base[2];
        let dx = step[0];
        let dy = nx * step[1];
        let dz = nxy * step[2];
        let (fx, fy, fz) = (frac[0], frac[1], frac[2]);
        let (gx, gy, gz) = (1.0 - fx, 1.0 - fy, 1.0 - fz);
        Some(Trilinear {
            index: [
                b,
                b + dx,
                b + dy,
                b + dx + dy,
                b + dz,
                b + dx + dz,
                b + dy + dz,
                b + dx + dy + dz,
            ],
            weight: [
                gx * gy * gz,
                fx * gy * gz,
                gx * fy * gz,
                fx * fy * gz,
                gx * gy * fz,
                fx * gy * fz,
                gx * fy * fz,
                fx * fy * fz,
            ],
        })
    }

    /// Trilinearly interpolated activated (density, albedo); zero outside the box.
    pub fn sample_field(&self, p: Vec3) -> (f64, [f64; 3]) {
        let Some(tl) = self.locate(p) else {
            return (0.0, [0.0; 3]);
        };
        let mut d = 0.0;
        let mut a = [0.0; 3];
        for (&v, &w) in tl.index.iter().zip(&tl.weight) {
            d += w * softplus(self.density_raw[v]);
            for c in 0..3 {
                a[c] += w * sigmoid(self.albedo_raw[3 * v + c]);
            }
        }
        (d, a)
    }

    /// Outward surface normal `-grad(density)/|grad(density)|` by central
    /// differences with a one-voxel step; zero where the gradient vanishes.
    pub fn field_normal(&self, p: Vec3) -> Vec3 {
        let h = self.voxel_size();
        let d = |q: Vec3| self.sample_field(q).0;
        let g = Vec3::new(
            (d(p + Vec3::new(h.x, 0.0, 0.0)) - d(p - Vec3::new(h.x, 0.0, 0.0))) / (2.0 * h.x),
            (d(p + Vec3::new(0.0, h.y, 0.0)) - d(p - Vec3::new(0.0, h.y, 0.0))) / (2.0 * h.y),
            (d(p + Vec3::new(0.0, 0.0, h.z)) - d(p - Vec3::new(0.0, 0.0, h.z))) / (2.0 * h.z),
        );
        let n = g.norm();
        if n < 1e-8 {
            Vec3::ZERO
        } else {
            -g / n
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_field(res: usize) -> VoxelField {
        VoxelField::new([res; 3], Aabb::cube(1.0).unwrap(), -60.0, 0.0).unwrap()
    }

    #[test]
    fn activations_round_trip() {
        for y in [1e-6, 0.3, 2.0, 15.0, 45.0] {
            assert!((softplus(softplus_inverse(y)) - y).abs() < 1e-9 * y.max(1.0));
        }
        for y in [0.01, 0.5, 0.93] {
            assert!((sigmoid(sigmoid_inverse(y)) - y).abs() < 1e-12);
        }
    }

    #[test]
    fn voxel_center_query_returns_stored_value() {
        let mut f = unit_field(4);
        f.set_density(1, 2, 3, 2.5);
        f.set_albedo(1, 2, 3, [0.2, 0.4, 0.6]);
        let (d, a) = f.sample_field(f.voxel_center(1, 2, 3));
        assert!((d - 2.5).abs() < 1e-9);
        for (x, y) in a.iter().zip([0.2, 0.4, 0.6]) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn midpoint_query_interpolates_linearly() {
        let mut f = unit_field(4);
        f.set_density(1, 1, 1, 2.0);
        f.set_density(2, 1, 1, 4.0);
        let p = (f.voxel_center(1, 1, 1) + f.voxel_center(2, 1, 1)) * 0.5;
        assert!((f.sample_field(p).0 - 3.0).abs() < 1e-9);
    }

    #[test]
    fn outside_query_is_zero() {
        let mut f = unit_field(4);
        f.albedo_raw_mut().iter_mut().for_each(|v| *v = 3.0);
        f.density_raw_mut().iter_mut().for_each(|v| *v = 3.0);
        assert_eq!(f.sample_field(Vec3::new(1.5, 0.0, 0.0)), (0.0, [0.0; 3]));
    }

    #[test]
    fn linear_ramp_normal_points_down_gradient() {
        let f = VoxelField::from_fn([8; 3], Aabb::cube(1.0).unwrap(), |p| p.x + 2.0, |_| [0.5; 3])
            .unwrap();
        let n = f.field_normal(Vec3::new(0.1, -0.2, 0.3));
        assert!((n - Vec3::new(-1.0, 0.0, 0.0)).norm() < 1e-9, "{n:?}");
    }

    #[test]
    fn uniform_density_has_zero_normal() {
        let f = VoxelField::new([8; 3], Aabb::cube(1.0).unwrap(), 1.0, 0.0).unwrap();
        assert_eq!(f.field_normal(Vec3::new(0.1, 0.2, -0.1)), Vec3::ZERO);
    }

    #[test]
    fn spherical_bump_normal_is_radial() {
        // Independent check: a Gaussian bump sampled on the grid; on the falling
        // flank the density gradient points inward, so the normal is +x.
        let f = VoxelField::from_fn(
            [48; 3],
            Aabb::cube(1.0).unwrap(),
            |p| 10.0 * (-p.norm_squared() / (2.0 * 0.3 * 0.3)).exp(),
            |_| [0.5; 3],
        )
        .unwrap();
        let n = f.field_normal(Vec3::new(0.4, 0.0, 0.0));
        assert!((n - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-3, "{n:?}");
    }

    #[test]
    fn single_voxel_axis_is_constant() {
        let mut f = VoxelField::new([1, 1, 1], Aabb::cube(1.0).unwrap(), 0.0, 0.0).unwrap();
        f.set_density(0, 0, 0, 3.0);
        assert!((f.sample_field(Vec3::new(0.7, -0.9, 0.2)).0 - 3.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_bbox_rejected() {
        assert!(Aabb::new(Vec3::ZERO, Vec3::new(1.0, 0.0, 1.0)).is_err());
    }
}

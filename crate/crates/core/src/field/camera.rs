//! Orbit cameras: right-handed, y-up, always looking at a target point.

use crate::error::{Error, Result};
use crate::math::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    /// Radians; 0 places the camera on +z, increasing towards +x.
    pub azimuth: f64,
    /// Radians above the horizontal plane.
    pub elevation: f64,
    pub radius: f64,
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
    /// Look-at point, normally the field's bbox center.
    pub target: Vec3,
}

#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

/// A world point mapped into the image: continuous pixel coordinates
/// (pixel centers at integer + 0.5) and camera-space depth along the view axis.
#[derive(Debug, Clone, Copy)]
pub struct Projection {
    pub px: f64,
    pub py: f64,
    pub depth: f64,
}

impl Projection {
    pub fn pixel(&self, width: usize, height: usize) -> Option<(usize, usize)> {
        if self.px < 0.0 || self.py < 0.0 {
            return None;
        }
        let (x, y) = (self.px.floor() as usize, self.py.floor() as usize);
        (x < width && y < height).then_some((x, y))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CameraBasis {
    pub eye: Vec3,
    pub forward: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    pub focal: f64,
}

impl CameraPose {
    pub fn new(
        azimuth: f64,
        elevation: f64,
        radius: f64,
        fov_y: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let c = Self {
            azimuth,
            elevation,
            radius,
            fov_y,
            width,
            height,
            target: Vec3::ZERO,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_target(mut self, target: Vec3) -> Self {
        self.target = target;
        self
    }

    pub fn with_azimuth(mut self, azimuth: f64) -> Self {
        self.azimuth = azimuth;
        self
    }

    pub fn with_elevation(mut self, elevation: f64) -> Self {
        self.elevation = elevation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "camera radius must be > 0, got {}",
                self.radius
            )));
        }
        if !(self.fov_y > 0.0 && self.fov_y < std::f64::consts::PI) {
            return Err(Error::InvalidInput(format!(
                "camera fov_y must lie in (0, pi), got {}",
                self.fov_y
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput(format!(
                "camera image must be at least 1x1, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.azimuth.is_finite() && self.elevation.is_finite()) {
            return Err(Error::InvalidInput("camera angles must be finite".into()));
        }
        Ok(())
    }

    pub fn eye(&self) -> Vec3 {
        let (se, ce) = self.elevation.sin_cos();
        let (sa, ca) = self.azimuth.sin_cos();
        self.target + Vec3::new(ce * sa, se, ce * ca) * self.radius
    }

    pub fn focal_px(&self) -> f64 {
        0.5 * self.height as f64 / (0.5 * self.fov_y).tan()
    }

    pub fn basis(&self) -> CameraBasis {
        let eye = self.eye();
        let forward = (self.target - eye).normalized();
        let mut right = forward.cross(Vec3::new(0.0, 1.0, 0.0));
        if right.norm() < 1e-9 {
            // Looking straight up or down: fall back to the azimuth tangent.
            right = Vec3::new(self.azimuth.cos(), 0.0, -self.azimuth.sin());
        }
        let right = right.normalized();
        let up = right.cross(forward);
        CameraBasis {
            eye,
            forward,
            right,
            up,
            focal: self.focal_px(),
        }
    }

    /// Unit-direction ray through continuous pixel coordinates.
    pub fn ray(&self, basis: &CameraBasis, px: f64, py: f64) -> Ray {
        let x = (px - 0.5 * self.width as f64) / basis.focal;
        let y = (0.5 * self.height as f64 - py) / basis.focal;
        Ray {
            origin: basis.eye,
            dir: (basis.forward + basis.right * x + basis.up * y).normalized(),
        }
    }

    pub fn pixel_ray(&self, basis: &CameraBasis, x: usize, y: usize) -> Ray {
        self.ray(basis, x as f64 + 0.5, y as f64 + 0.5)
    }

    pub fn project(&self, basis: &CameraBasis, p: Vec3) -> Option<Projection> {
        let d = p - basis.eye;
        let z = d.dot(basis.forward);
        if z <= 1e-9 {
            return None;
        }
        Some(Projection {
            px: 0.5 * self.width as f64 + basis.focal * d.dot(basis.right) / z,
            py: 0.5 * self.height as f64 - basis.focal * d.dot(basis.up) / z,
            depth: z,
        })
    }

    /// Unit vector from the target towards the camera.
    pub fn view_direction(&self) -> Vec3 {
        (self.eye() - self.target).normalized()
    }
}

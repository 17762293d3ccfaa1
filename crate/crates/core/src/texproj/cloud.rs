use std::path::Path;

use crate::error::{Error, Result};
use crate::field::CameraPose;
use crate::math::Vec3;
use crate::ply::{xyz_properties, PlyTable, PlyType};
use crate::raster::Image;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointColor {
    pub rgb: [f64; 3],
    /// Index of the view that colored the point; 0 is the reference.
    pub view: usize,
}

/// Surface points with write-once colors.
#[derive(Debug, Clone, PartialEq)]
pub struct TexturedPointCloud {
    positions: Vec<Vec3>,
    colors: Vec<Option<PointColor>>,
    normals: Option<Vec<Vec3>>,
    pub splat_radius: f64,
    pub depth_epsilon: f64,
    writes: usize,
}

impl TexturedPointCloud {
    /// Splat radius and depth tolerance default to 1.5 and 2 times `spacing`.
    pub fn new(positions: Vec<Vec3>, spacing: f64) -> Result<Self> {
        Self::with_params(positions, 1.5 * spacing, 2.0 * spacing)
    }

    pub fn with_params(positions: Vec<Vec3>, splat_radius: f64, depth_epsilon: f64) -> Result<Self> {
        if !(splat_radius > 0.0 && depth_epsilon > 0.0) {
            return Err(Error::InvalidInput(format!(
                "splat radius and depth epsilon must be positive, got {splat_radius} and {depth_epsilon}"
            )));
        }
        if positions.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput("point positions must be finite".into()));
        }
        let n = positions.len();
        Ok(Self {
            positions,
            colors: vec![None; n],
            normals: None,
            splat_radius,
            depth_epsilon,
            writes: 0,
        })
    }

    /// Attaches unit surface normals, turning splats into tangent-plane disks.
    pub fn with_normals(mut self, normals: Vec<Vec3>) -> Result<Self> {
        if normals.len() != self.positions.len() {
            return Err(Error::dimension("point normals", self.positions.len(), normals.len()));
        }
        self.normals = Some(normals.into_iter().map(|n| n.normalized()).collect());
        Ok(self)
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn normal(&self, i: usize) -> Option<Vec3> {
        self.normals.as_ref().map(|n| n[i]).filter(|n| n.norm_squared() > 0.0)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn colors(&self) -> &[Option<PointColor>] {
        &self.colors
    }

    pub fn color(&self, i: usize) -> Option<PointColor> {
        self.colors[i]
    }

    /// Colors point `i` unless it already has a color; returns whether it wrote.
    pub fn claim(&mut self, i: usize, rgb: [f64; 3], view: usize) -> bool {
        if self.colors[i].is_some() {
            return false;
        }
        self.colors[i] = Some(PointColor { rgb, view });
        self.writes += 1;
        true
    }

    /// Total number of successful color writes.
    pub fn writes(&self) -> usize {
        self.writes
    }

    pub fn colored_count(&self) -> usize {
        self.colors.iter().filter(|c| c.is_some()).count()
    }

    /// Source view per point, -1 for uncolored.
    pub fn source_views(&self) -> Vec<i32> {
        self.colors
            .iter()
            .map(|c| c.map_or(-1, |c| c.view as i32))
            .collect()
    }

    pub fn to_ply(&self) -> PlyTable {
        let mut props = xyz_properties();
        for n in ["red", "green", "blue"] {
            props.push((n.to_string(), PlyType::UChar));
        }
        props.push(("source_view".to_string(), PlyType::Int));
        let mut t = PlyTable::new(props);
        t.rows = self
            .positions
            .iter()
            .zip(&self.colors)
            .map(|(p, c)| {
                let (rgb, view) = c.map_or(([0.0; 3], -1.0), |c| (c.rgb, c.view as f64));
                let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round();
                vec![p.x, p.y, p.z, q(rgb[0]), q(rgb[1]), q(rgb[2]), view]
            })
            .collect();
        t
    }

    /// Rebuilds a cloud from [`TexturedPointCloud::to_ply`] output; colors come
    /// back quantized to 8 bits.
    pub fn from_ply(table: &PlyTable, splat_radius: f64, depth_epsilon: f64) -> Result<Self> {
        let cols: Vec<usize> = ["x", "y", "z", "red", "green", "blue", "source_view"]
            .iter()
            .map(|n| table.require(n))
            .collect::<Result<_>>()?;
        let positions = table
            .rows
            .iter()
            .map(|r| Vec3::new(r[cols[0]], r[cols[1]], r[cols[2]]))
            .collect();
        let mut cloud = Self::with_params(positions, splat_radius, depth_epsilon)?;
        for (i, r) in table.rows.iter().enumerate() {
            let view = r[cols[6]];
            if view >= 0.0 {
                let rgb = [r[cols[3]] / 255.0, r[cols[4]] / 255.0, r[cols[5]] / 255.0];
                cloud.claim(i, rgb, view as usize);
            }
        }
        Ok(cloud)
    }

    pub fn save_ply(&self, path: &Path) -> Result<()> {
        self.to_ply().save(path)
    }
}

#[derive(Debug, Clone)]
pub struct ViewImage {
    pub camera: CameraPose,
    pub image: Image,
    pub mask: Image,
}

/// Views to project, reference first.
#[derive(Debug, Clone)]
pub struct ViewImageSet {
    views: Vec<ViewImage>,
}

impl ViewImageSet {
    pub fn new(views: Vec<ViewImage>) -> Result<Self> {
        let first = views
            .first()
            .ok_or_else(|| Error::InvalidInput("view set needs a reference view".into()))?;
        let (w, h) = (first.image.width(), first.image.height());
        for v in &views {
            v.camera.validate()?;
            v.image.check_dims(w, h, "view set image")?;
            v.mask.check_dims(w, h, "view set mask")?;
            v.image.check_dims(v.camera.width, v.camera.height, "view set camera")?;
            if v.image.channels() != 3 || v.mask.channels() != 1 {
                return Err(Error::InvalidInput("view images must be rgb with single-channel masks".into()));
            }
        }
        Ok(Self { views })
    }

    pub fn views(&self) -> &[ViewImage] {
        &self.views
    }

    pub fn reference(&self) -> &ViewImage {
        &self.views[0]
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }
}

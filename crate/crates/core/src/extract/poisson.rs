use std::collections::HashMap;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mesh::Mesh;
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::ply::{xyz_properties, PlyTable};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub position: Vec3,
    pub face: usize,
    pub bary: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceCloud {
    pub points: Vec<SurfacePoint>,
    pub target_spacing: f64,
    /// Set when the spacing exceeded the mesh extent and a single point was returned.
    pub single_point: bool,
}

impl SurfaceCloud {
    pub fn positions(&self) -> Vec<Vec3> {
        self.points.iter().map(|p| p.position).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Normals interpolated from `mesh`'s vertex normals at each sample,
    /// falling back to the face normal where they cancel.
    pub fn normals(&self, mesh: &Mesh) -> Vec<Vec3> {
        let vn = mesh.vertex_normals();
        self.points
            .iter()
            .map(|p| {
                let [a, b, c] = mesh.faces[p.face];
                let n = vn[a] * p.bary[0] + vn[b] * p.bary[1] + vn[c] * p.bary[2];
                if n.norm_squared() > 1e-12 {
                    n.normalized()
                } else {
                    mesh.face_cross(p.face).normalized()
                }
            })
            .collect()
    }

    pub fn to_ply(&self) -> PlyTable {
        let mut t = PlyTable::new(xyz_properties());
        t.rows = self
            .points
            .iter()
            .map(|p| vec![p.position.x, p.position.y, p.position.z])
            .collect();
        t
    }

    pub fn save_ply(&self, path: &Path) -> Result<()> {
        self.to_ply().save(path)
    }
}

/// Reads the `x, y, z` columns of a PLY vertex table.
pub fn read_positions(table: &PlyTable) -> Result<Vec<Vec3>> {
    let (x, y, z) = (table.require("x")?, table.require("y")?, table.require("z")?);
    Ok(table.rows.iter().map(|r| Vec3::new(r[x], r[y], r[z])).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonConfig {
    /// Sampling stops after this many rejected darts in a row.
    pub max_consecutive_rejections: usize,
    pub seed: u64,
}

impl Default for PoissonConfig {
    fn default() -> Self {
        Self {
            max_consecutive_rejections: 3000,
            seed: 0,
        }
    }
}

type Cell = (i64, i64, i64);

fn cell_of(p: Vec3, size: f64) -> Cell {
    (
        (p.x / size).floor() as i64,
        (p.y / size).floor() as i64,
        (p.z / size).floor() as i64,
    )
}

/// Dart-throwing Poisson-disk sampling of a triangle mesh: area-weighted face
/// choice, uniform barycentric position, and rejection of any dart closer than
/// `spacing` to an accepted point.
pub fn poisson_sample(mesh: &Mesh, spacing: f64, config: &PoissonConfig) -> Result<SurfaceCloud> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::InvalidInput(format!("spacing must be positive, got {spacing}")));
    }
    mesh.validate()?;
    let areas: Vec<f64> = (0..mesh.faces.len()).map(|f| mesh.face_area(f)).collect();
    if mesh.is_empty() || areas.iter().all(|&a| a <= 0.0) {
        return Err(Error::InvalidInput("cannot sample an empty mesh".into()));
    }
    let chooser = WeightedIndex::new(&areas)
        .map_err(|e| Error::InvalidInput(format!("face areas unusable for sampling: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let draw = |rng: &mut ChaCha8Rng| {
        let face = chooser.sample(rng);
        let s = rng.random::<f64>().sqrt();
        let r2 = rng.random::<f64>();
        let bary = [1.0 - s, s * (1.0 - r2), s * r2];
        SurfacePoint {
            position: mesh.face_point(face, bary),
            face,
            bary,
        }
    };

    let (lo, hi) = mesh.bounds().expect("non-empty mesh has vertices");
    if spacing > (hi - lo).norm() {
        log::warn!("spacing {spacing} exceeds the mesh extent; returning a single point");
        return Ok(SurfaceCloud {
            points: vec![draw(&mut rng)],
            target_spacing: spacing,
            single_point: true,
        });
    }

    let mut points: Vec<SurfacePoint> = Vec::new();
    let mut grid: HashMap<Cell, Vec<usize>> = HashMap::new();
    let spacing2 = spacing * spacing;
    let mut rejections = 0;
    while rejections < config.max_consecutive_rejections {
        let cand = draw(&mut rng);
        let c = cell_of(cand.position, spacing);
        let mut ok = true;
        'search: for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(list) = grid.get(&(c.0 + dx, c.1 + dy, c.2 + dz)) {
                        if list
                            .iter()
                            .any(|&i| (points[i].position - cand.position).norm_squared() < spacing2)
                        {
                            ok = false;
                            break 'search;
                        }
                    }
                }
            }
        }
        if ok {
            grid.entry(c).or_default().push(points.len());
            points.push(cand);
            rejections = 0;
        } else {
            rejections += 1;
        }
    }
    Ok(SurfaceCloud {
        points,
        target_spacing: spacing,
        single_point: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn unit_square() -> Mesh {
        Mesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(1.0, 1.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    fn min_distance(c: &SurfaceCloud) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..c.points.len() {
            for j in i + 1..c.points.len() {
                best = best.min(c.points[i].position.distance(c.points[j].position));
            }
        }
        best
    }

    #[test]
    fn unit_square_packing_band_and_invariants() {
        let mesh = unit_square();
        for seed in 0..100 {
            let c = poisson_sample(&mesh, 0.1, &PoissonConfig { seed, ..Default::default() }).unwrap();
            assert!((55..=110).contains(&c.len()), "seed {seed}: {}", c.len());
            assert!(min_distance(&c) >= 0.1 * 0.999);
            for p in &c.points {
                assert!(p.bary.iter().all(|&b| b >= 0.0));
                assert!((p.bary.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(p.position.distance(mesh.face_point(p.face, p.bary)) < 1e-15);
            }
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let mesh = unit_square();
        let cfg = PoissonConfig { seed: 7, ..Default::default() };
        assert_eq!(poisson_sample(&mesh, 0.05, &cfg).unwrap(), poisson_sample(&mesh, 0.05, &cfg).unwrap());
    }

    #[test]
    fn oversized_spacing_yields_flagged_single_point() {
        let c = poisson_sample(&unit_square(), 5.0, &PoissonConfig::default()).unwrap();
        assert_eq!(c.len(), 1);
        assert!(c.single_point);
    }

    #[test]
    fn bad_inputs() {
        assert!(poisson_sample(&unit_square(), 0.0, &PoissonConfig::default()).is_err());
        assert!(poisson_sample(&Mesh::default(), 0.1, &PoissonConfig::default()).is_err());
    }

    #[test]
    fn ply_round_trip() {
        let c = poisson_sample(&unit_square(), 0.2, &PoissonConfig::default()).unwrap();
        let bytes = c.to_ply().to_bytes().unwrap();
        let table = PlyTable::from_bytes(&bytes).unwrap();
        let pos = read_positions(&table).unwrap();
        assert_eq!(pos.len(), c.len());
        assert!(pos.iter().zip(&c.points).all(|(a, b)| a.distance(b.position) < 1e-6));
        assert_eq!(table.to_bytes().unwrap(), bytes);
    }
}

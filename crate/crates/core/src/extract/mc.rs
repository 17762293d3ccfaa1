use std::collections::{HashMap, VecDeque};

use super::mesh::Mesh;
use super::tables::TRIANGLES;
use crate::error::{Error, Result};
use crate::field::VoxelField;
use crate::math::Vec3;

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Scalar samples on a regular lattice: value `(i, j, k)` sits at
/// `origin + (i, j, k) * spacing`, x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    pub dims: [usize; 3],
    pub origin: Vec3,
    pub spacing: Vec3,
    pub values: Vec<f64>,
}

impl ScalarGrid {
    pub fn new(dims: [usize; 3], origin: Vec3, spacing: Vec3, values: Vec<f64>) -> Result<Self> {
        let n = dims[0] * dims[1] * dims[2];
        if values.len() != n {
            return Err(Error::dimension("scalar grid samples", n, values.len()));
        }
        Ok(Self {
            dims,
            origin,
            spacing,
            values,
        })
    }

    /// Activated density sampled at voxel centers.
    pub fn from_density(field: &VoxelField) -> Self {
        let res = field.resolution();
        let size = field.voxel_size();
        Self {
            dims: res,
            origin: field.voxel_center(0, 0, 0),
            spacing: size,
            values: field.activated_density(),
        }
    }

    fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[i + self.dims[0] * (j + self.dims[1] * k)]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Raises every below-`iso` cell that cannot reach the grid boundary
    /// through face-adjacent below-`iso` cells to the grid maximum, removing
    /// enclosed cavities. Returns the number of cells filled.
    pub fn fill_cavities(&mut self, iso: f64) -> usize {
        let [nx, ny, nz] = self.dims;
        let idx = |i: usize, j: usize, k: usize| i + nx * (j + ny * k);
        let mut open = vec![false; self.values.len()];
        let mut queue = VecDeque::new();
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let on_face = i == 0 || j == 0 || k == 0 || i + 1 == nx || j + 1 == ny || k + 1 == nz;
                    let v = idx(i, j, k);
                    if on_face && self.values[v] < iso {
                        open[v] = true;
                        queue.push_back([i, j, k]);
                    }
                }
            }
        }
        while let Some([i, j, k]) = queue.pop_front() {
            let mut visit = |a: usize, b: usize, c: usize| {
                let v = idx(a, b, c);
                if !open[v] && self.values[v] < iso {
                    open[v] = true;
                    queue.push_back([a, b, c]);
                }
            };
            if i > 0 {
                visit(i - 1, j, k);
            }
            if i + 1 < nx {
                visit(i + 1, j, k);
            }
            if j > 0 {
                visit(i, j - 1, k);
            }
            if j + 1 < ny {
                visit(i, j + 1, k);
            }
            if k > 0 {
                visit(i, j, k - 1);
            }
            if k + 1 < nz {
                visit(i, j, k + 1);
            }
        }
        let top = self.max();
        let mut filled = 0;
        for (v, o) in self.values.iter_mut().zip(&open) {
            if !o && *v < iso {
                *v = top;
                filled += 1;
            }
        }
        filled
    }
}

/// Extracts the `iso` level set of a scalar grid. Samples outside the grid read
/// as `outside`, so surfaces touching the boundary still close. Values above
/// `iso` count as inside; triangles face toward decreasing values.
pub fn marching_cubes_grid(grid: &ScalarGrid, iso: f64, outside: f64) -> Mesh {
    let [nx, ny, nz] = grid.dims;
    // padded lattice index p maps to grid index p - 1
    let sample = |p: [usize; 3]| -> f64 {
        if p[0] == 0 || p[1] == 0 || p[2] == 0 || p[0] > nx || p[1] > ny || p[2] > nz {
            outside
        } else {
            grid.value(p[0] - 1, p[1] - 1, p[2] - 1)
        }
    };
    let position = |p: [usize; 3]| -> Vec3 {
        Vec3::new(
            grid.origin.x + (p[0] as f64 - 1.0) * grid.spacing.x,
            grid.origin.y + (p[1] as f64 - 1.0) * grid.spacing.y,
            grid.origin.z + (p[2] as f64 - 1.0) * grid.spacing.z,
        )
    };

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut edge_vertex: HashMap<([usize; 3], usize), usize> = HashMap::new();
    let mut vals = [0.0; 8];
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                let mut case = 0usize;
                for (c, off) in CORNERS.iter().enumerate() {
                    vals[c] = sample([i + off[0], j + off[1], k + off[2]]);
                    if vals[c] < iso {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let row = &TRIANGLES[case];
                let mut ids = [0usize; 3];
                for tri in row.chunks(3).take_while(|t| t[0] >= 0) {
                    for (slot, &e) in ids.iter_mut().zip(tri) {
                        let [a, b] = EDGES[e as usize];
                        let pa = [i + CORNERS[a][0], j + CORNERS[a][1], k + CORNERS[a][2]];
                        let pb = [i + CORNERS[b][0], j + CORNERS[b][1], k + CORNERS[b][2]];
                        let (lo, hi, vlo, vhi) = if pa <= pb {
                            (pa, pb, vals[a], vals[b])
                        } else {
                            (pb, pa, vals[b], vals[a])
                        };
                        let axis = (0..3).find(|&d| lo[d] != hi[d]).unwrap_or(0);
                        *slot = *edge_vertex.entry((lo, axis)).or_insert_with(|| {
                            let t = ((iso - vlo) / (vhi - vlo)).clamp(0.0, 1.0);
                            let p0 = position(lo);
                            vertices.push(p0 + (position(hi) - p0) * t);
                            vertices.len() - 1
                        });
                    }
                    if ids[0] != ids[1] && ids[1] != ids[2] && ids[0] != ids[2] {
                        faces.push(ids);
                    }
                }
            }
        }
    }
    let mut mesh = Mesh { vertices, faces };
    if mesh.signed_volume() < 0.0 {
        mesh.flip_faces();
    }
    mesh
}

/// Default iso level: median of activated densities above 1e-3.
pub fn default_iso(field: &VoxelField) -> Option<f64> {
    occupied_quantile(field, 0.5)
}

/// The `q` quantile (nearest rank) of activated densities above 1e-3, or
/// `None` when no voxel is occupied or `q` lies outside [0, 1].
pub fn occupied_quantile(field: &VoxelField, q: f64) -> Option<f64> {
    if !(0.0..=1.0).contains(&q) {
        return None;
    }
    let mut v: Vec<f64> = field.activated_density().into_iter().filter(|&d| d > 1e-3).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let k = ((q * v.len() as f64) as usize).min(v.len() - 1);
    Some(v[k])
}

/// Iso-surface of the activated density. An empty mesh signals that no voxel
/// crosses `iso`.
pub fn marching_cubes(field: &VoxelField, iso: f64) -> Result<Mesh> {
    extract(ScalarGrid::from_density(field), iso)
}

/// Like [`marching_cubes`], but enclosed low-density pockets are treated as
/// solid, so only the outer surface is extracted.
pub fn marching_cubes_solid(field: &VoxelField, iso: f64) -> Result<Mesh> {
    check_iso(iso)?;
    let mut grid = ScalarGrid::from_density(field);
    let filled = grid.fill_cavities(iso);
    if filled > 0 {
        log::info!("filled {filled} enclosed voxel(s) below iso {iso}");
    }
    extract(grid, iso)
}

fn check_iso(iso: f64) -> Result<()> {
    if !(iso > 0.0 && iso.is_finite()) {
        return Err(Error::InvalidInput(format!("iso level must be positive, got {iso}")));
    }
    Ok(())
}

fn extract(grid: ScalarGrid, iso: f64) -> Result<Mesh> {
    check_iso(iso)?;
    if grid.max() <= iso {
        log::warn!("density never reaches iso level {iso}; no surface extracted");
        return Ok(Mesh::default());
    }
    let mesh = marching_cubes_grid(&grid, iso, 0.0);
    if mesh.is_empty() {
        log::warn!("no voxel crosses iso level {iso}");
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Aabb;

    pub(crate) fn sphere_field(res: usize, r0: f64) -> VoxelField {
        VoxelField::from_fn([res; 3], Aabb::cube(1.0).unwrap(), |p| (r0 - p.norm()).max(0.0) + 1e-4, |_| [0.5; 3])
            .unwrap()
    }

    #[test]
    fn sphere_vertices_lie_near_radius() {
        let r0 = 0.6;
        let grid = {
            let res = 24;
            let h = 2.0 / res as f64;
            let mut values = Vec::new();
            for k in 0..res {
                for j in 0..res {
                    for i in 0..res {
                        let p = Vec3::new(-1.0 + (i as f64 + 0.5) * h, -1.0 + (j as f64 + 0.5) * h, -1.0 + (k as f64 + 0.5) * h);
                        values.push(r0 - p.norm());
                    }
                }
            }
            ScalarGrid::new([res; 3], Vec3::splat(-1.0 + 0.5 * h), Vec3::splat(h), values).unwrap()
        };
        let mesh = marching_cubes_grid(&grid, 0.0, -1.0);
        let diag = grid.spacing.norm();
        assert!(!mesh.is_empty());
        for v in &mesh.vertices {
            assert!((v.norm() - r0).abs() <= diag, "{}", v.norm());
        }
        assert_eq!(mesh.euler_characteristic(), 2);
        assert!(mesh.is_closed_manifold());
        let vol = mesh.signed_volume();
        let exact = 4.0 / 3.0 * std::f64::consts::PI * r0.powi(3);
        assert!((vol - exact).abs() / exact < 0.03, "{vol} vs {exact}");
    }

    #[test]
    fn outward_normals() {
        let mesh = marching_cubes(&sphere_field(16, 0.55), 0.05).unwrap();
        let centroid_dot: f64 = (0..mesh.faces.len())
            .map(|f| {
                let [a, b, c] = mesh.faces[f];
                let center = (mesh.vertices[a] + mesh.vertices[b] + mesh.vertices[c]) / 3.0;
                mesh.face_cross(f).dot(center).signum()
            })
            .sum();
        assert_eq!(centroid_dot as usize, mesh.faces.len());
    }

    #[test]
    fn surface_touching_boundary_closes() {
        let f = VoxelField::from_fn([6; 3], Aabb::cube(1.0).unwrap(), |_| 2.0, |_| [0.5; 3]).unwrap();
        let mut g = f.clone();
        g.set_density(0, 0, 0, 0.1);
        let mesh = marching_cubes(&g, 1.0).unwrap();
        assert!(mesh.is_closed_manifold());
        assert_eq!(mesh.euler_characteristic(), 2);
    }

    #[test]
    fn occupied_quantile_bounds() {
        let f = VoxelField::from_fn([4, 1, 1], Aabb::cube(1.0).unwrap(), |p| if p.x < 0.0 { 0.0 } else { 1.0 + p.x }, |_| [0.5; 3]).unwrap();
        let q0 = occupied_quantile(&f, 0.0).unwrap();
        let q1 = occupied_quantile(&f, 1.0).unwrap();
        assert!((q0 - 1.25).abs() < 1e-6 && (q1 - 1.75).abs() < 1e-6, "{q0} {q1}");
        assert_eq!(occupied_quantile(&f, 0.5), default_iso(&f));
        assert!(occupied_quantile(&f, 1.5).is_none());
    }

    #[test]
    fn solid_extraction_drops_enclosed_cavity() {
        // shell between radii 0.3 and 0.6 around an empty core
        let f = VoxelField::from_fn(
            [20; 3],
            Aabb::cube(1.0).unwrap(),
            |p| if (0.3..0.6).contains(&p.norm()) { 2.0 } else { 1e-4 },
            |_| [0.5; 3],
        )
        .unwrap();
        let hollow = marching_cubes(&f, 1.0).unwrap();
        assert_eq!(hollow.euler_characteristic(), 4);
        let solid = marching_cubes_solid(&f, 1.0).unwrap();
        assert_eq!(solid.euler_characteristic(), 2);
        assert!(solid.is_closed_manifold());
        assert!(solid.vertices.iter().all(|v| v.norm() > 0.45));
        assert!(solid.signed_volume() > hollow.signed_volume());
    }

    #[test]
    fn cavity_fill_keeps_open_pockets() {
        // a dent open to the boundary is not a cavity
        let mut g = ScalarGrid::new([5; 3], Vec3::ZERO, Vec3::splat(1.0), vec![2.0; 125]).unwrap();
        for i in 0..3 {
            g.values[i + 5 * (2 + 5 * 2)] = 0.0;
        }
        g.values[2 + 5 * (1 + 5 * 1)] = 0.0;
        assert_eq!(g.fill_cavities(1.0), 1);
        assert_eq!(g.values[2 + 5 * (1 + 5 * 1)], 2.0);
        assert_eq!(g.values[2 + 5 * (2 + 5 * 2)], 0.0);
    }

    #[test]
    fn empty_field_gives_empty_mesh() {
        let f = VoxelField::new([4; 3], Aabb::cube(1.0).unwrap(), -80.0, 0.0).unwrap();
        assert!(marching_cubes(&f, 0.5).unwrap().is_empty());
        let g = sphere_field(8, 0.5);
        assert!(marching_cubes(&g, 0.0).is_err());
        assert!(marching_cubes(&g, 10.0).unwrap().is_empty());
        assert!(marching_cubes(&g, -1.0).is_err());
    }

    #[test]
    fn default_iso_is_median_of_occupied() {
        let mut f = VoxelField::new([2, 1, 1], Aabb::cube(1.0).unwrap(), -80.0, 0.0).unwrap();
        f.set_density(0, 0, 0, 0.5);
        assert!((default_iso(&f).unwrap() - 0.5).abs() < 1e-9);
        let e = VoxelField::new([2, 1, 1], Aabb::cube(1.0).unwrap(), -80.0, 0.0).unwrap();
        assert!(default_iso(&e).is_none());
    }
}

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::Vec3;

/// Indexed triangle mesh with counter-clockwise, outward-facing triangles.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let m = Self { vertices, faces };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(f) = self.faces.iter().find(|f| f.iter().any(|&i| i >= self.vertices.len())) {
            return Err(Error::InvalidInput(format!(
                "face {f:?} references a vertex beyond {}",
                self.vertices.len()
            )));
        }
        if self.vertices.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("mesh has non-finite vertices".into()));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    fn corners(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Unnormalized face normal (twice the area vector).
    pub fn face_cross(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.corners(f);
        (b - a).cross(c - a)
    }

    /// Area-weighted unit vertex normals; zero for vertices with no faces.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut n = vec![Vec3::ZERO; self.vertices.len()];
        for (f, face) in self.faces.iter().enumerate() {
            let c = self.face_cross(f);
            for &v in face {
                n[v] += c;
            }
        }
        n.into_iter().map(Vec3::normalized).collect()
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_cross(f).norm()
    }

    pub fn face_point(&self, f: usize, bary: [f64; 3]) -> Vec3 {
        let [a, b, c] = self.corners(f);
        a * bary[0] + b * bary[1] + c * bary[2]
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Volume enclosed by a closed mesh; positive for outward orientation.
    pub fn signed_volume(&self) -> f64 {
        (0..self.faces.len())
            .map(|f| {
                let [a, b, c] = self.corners(f);
                a.dot(b.cross(c)) / 6.0
            })
            .sum()
    }

    pub fn flip_faces(&mut self) {
        for f in &mut self.faces {
            f.swap(1, 2);
        }
    }

    /// Axis-aligned bounding box, or `None` for a mesh without vertices.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(
            self.vertices
                .iter()
                .fold((first, first), |(lo, hi), &v| (lo.min(v), hi.max(v))),
        )
    }

    /// Occurrence count of each undirected edge.
    pub fn edge_counts(&self) -> HashMap<(usize, usize), usize> {
        let mut edges = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        edges
    }

    /// `V - E + F` counting only vertices referenced by faces.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        self.faces.iter().flatten().for_each(|&i| used[i] = true);
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - self.edge_counts().len() as i64 + self.faces.len() as i64
    }

    /// Every edge is shared by exactly two faces.
    pub fn is_closed_manifold(&self) -> bool {
        !self.faces.is_empty() && self.edge_counts().values().all(|&c| c == 2)
    }

    pub fn to_obj(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
        }
        for f in &self.faces {
            let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        out
    }

    /// Parses `v` and triangular `f` records; other records are ignored.
    pub fn from_obj(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::format("obj", format!("line {line}: {msg}"));
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("v") => {
                    let c: Vec<f64> = parts
                        .take(3)
                        .map(|s| s.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad(n + 1, "bad vertex coordinate"))?;
                    if c.len() != 3 {
                        return Err(bad(n + 1, "vertex needs three coordinates"));
                    }
                    vertices.push(Vec3::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let idx: Vec<usize> = parts
                        .map(|s| s.split('/').next().unwrap_or("").parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad(n + 1, "bad face index"))?;
                    if idx.len() != 3 || idx.contains(&0) {
                        return Err(bad(n + 1, "faces must be triangles with 1-based indices"));
                    }
                    faces.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
                }
                _ => {}
            }
        }
        Mesh::new(vertices, faces)
    }

    pub fn save_obj(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_obj()).map_err(|e| Error::io(path, e))
    }

    pub fn load_obj(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_obj(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tetrahedron() -> Mesh {
        let v = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ];
        Mesh::new(v, vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]]).unwrap()
    }

    #[test]
    fn tetrahedron_topology_and_volume() {
        let t = tetrahedron();
        assert_eq!(t.euler_characteristic(), 2);
        assert!(t.is_closed_manifold());
        assert!((t.signed_volume() - 1.0 / 6.0).abs() < 1e-15);
        let mut f = t.clone();
        f.flip_faces();
        assert!((f.signed_volume() + 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn obj_round_trip_is_byte_identical() {
        let mut t = tetrahedron();
        t.vertices[1] = Vec3::new(0.1 + 0.2, -1e-7, 3.0);
        let text = t.to_obj();
        assert!(text.starts_with("v 0 0 0\n"));
        let back = Mesh::from_obj(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_obj(), text);
    }

    #[test]
    fn obj_rejects_bad_indices() {
        assert!(Mesh::from_obj("v 0 0 0\nf 1 2 3\n").is_err());
        assert!(Mesh::from_obj("v 0 0 0\nf 0 1 1\n").is_err());
        assert!(Mesh::from_obj("v 0 zero 0\n").is_err());
    }
}

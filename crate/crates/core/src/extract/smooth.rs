use super::mesh::Mesh;
use crate::error::{Error, Result};
use crate::math::Vec3;

/// Uniform Laplacian smoothing `v += lambda * (mean(neighbors) - v)` followed by
/// removal of zero-area faces. Vertices on open boundaries stay fixed.
pub fn regularize_mesh(mesh: &Mesh, iterations: usize, lambda: f64) -> Result<Mesh> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!(
            "smoothing factor must lie in [0, 1], got {lambda}"
        )));
    }
    mesh.validate()?;
    let mut out = mesh.clone();
    if iterations == 0 {
        return Ok(out);
    }
    let n = mesh.vertices.len();
    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut pinned = vec![false; n];
    for (&(a, b), &count) in &mesh.edge_counts() {
        neighbors[a].push(b);
        neighbors[b].push(a);
        if count == 1 {
            pinned[a] = true;
            pinned[b] = true;
        }
    }
    for list in &mut neighbors {
        list.sort_unstable();
        list.dedup();
    }
    let mut next = out.vertices.clone();
    for _ in 0..iterations {
        for v in 0..n {
            let nb = &neighbors[v];
            if pinned[v] || nb.is_empty() {
                next[v] = out.vertices[v];
                continue;
            }
            let mean = nb.iter().fold(Vec3::ZERO, |acc, &u| acc + out.vertices[u]) / nb.len() as f64;
            next[v] = out.vertices[v] + (mean - out.vertices[v]) * lambda;
        }
        std::mem::swap(&mut out.vertices, &mut next);
    }
    let before = out.faces.len();
    let verts = &out.vertices;
    out.faces.retain(|&[a, b, c]| {
        a != b && b != c && a != c && (verts[b] - verts[a]).cross(verts[c] - verts[a]).norm() > 1e-15
    });
    if out.faces.len() != before {
        log::info!("removed {} degenerate face(s) after smoothing", before - out.faces.len());
    }
    Ok(out)
}

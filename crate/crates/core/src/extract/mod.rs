//! Surface extraction: density field to mesh to Poisson-disk surface cloud.

mod mc;
mod mesh;
mod poisson;
mod smooth;
mod tables;

pub use mc::{default_iso, marching_cubes, marching_cubes_grid, marching_cubes_solid, occupied_quantile, ScalarGrid};
pub use mesh::Mesh;
pub use poisson::{poisson_sample, read_positions, PoissonConfig, SurfaceCloud, SurfacePoint};
pub use smooth::regularize_mesh;

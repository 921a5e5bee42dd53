//! Self-contained numerical kernels shared by every other module.

pub mod eigen;
pub mod matrix;
pub mod poly;
pub mod rng;
pub mod sphere;

pub use eigen::{sym_eig, sym_eigenvalues, EigenDecomposition, Tridiagonal};
pub use matrix::{axpy, dot, norm, normalize, Matrix, SymMatrix};
pub use poly::{real_poly_roots, Poly};
pub use rng::{gaussian_matrix, Seed};
pub use sphere::{circle_direction, circle_points, sphere_direction, sphere_grid, sphere_triangulation};

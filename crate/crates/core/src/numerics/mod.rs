//! Dense linear algebra and random sampling shared by every other module.

pub mod linalg;
pub mod matrix;
pub mod rng;
pub mod sampling;

pub use linalg::{cholesky, determinant, spectral_radius, sym_eigenvalues};
pub use matrix::Matrix;
pub use rng::Rng;
pub use sampling::{sample_dirichlet, sample_gaussian_vec, sample_orthogonal};

//! Geometry of the three modalities: the fractional-coordinate torus, SO(3)
//! orientations, and lattice matrices.

mod lattice;
mod so3;
mod torus;

pub use lattice::{lattice_params, params_to_lattice, standardize_lattice, Lattice, LatticeParams};
pub use so3::{
    axis_angle_to_spherical, geodesic_distance_so3, hat, log_at, rot_x, rot_y, rot_z, so3_exp,
    so3_geodesic, so3_log, so3_log_matrix, AxisAngle, Rotation,
};
pub(crate) use so3::exp_coefficients;
pub use torus::{min_image_scalar, torus_displacement, wrap, wrap_scalar, FracPoint};

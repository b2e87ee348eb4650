//! Special functions and generic optimization primitives.

pub mod newton;
pub mod optimize;
pub mod quadrature;
pub mod special;

pub use newton::{maximize_concave_2d, Ascent2, AscentOutcome, AscentSettings, Local2};
pub use optimize::{find_root, golden_section, maximize_nd, minimize_scalar, NdOptimum, OptimizerSettings, ScalarOptimum};
pub use quadrature::{gauss_hermite_normal, gauss_legendre, Rule};
pub use special::{erf, erfc, erfcinv, erfinv, norm_cdf, norm_pdf};

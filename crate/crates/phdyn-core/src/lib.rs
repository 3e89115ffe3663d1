//! Numerical laboratory for partially hyperbolic diffeomorphisms on tori:
//! construction of the map families, finite-time invariant splittings,
//! central Lyapunov and non-uniform-expansion statistics, averaged
//! pushforward and empirical measures, and basin cartography.

pub mod basins;
pub mod ergodic;
pub mod error;
pub mod linalg;
pub mod measures;
pub mod splitting;
pub mod system;
pub mod systems;
pub mod torus;

pub use error::{PhdynError, Result};
pub use linalg::{min_conorm, operator_norm, Mat};
pub use system::{newton_inverse, DynSystem, SplitDims};
pub use torus::{BoxDomain, Domain, TangentVector, TorusPoint};

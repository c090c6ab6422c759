//! Certified upper bounds on maximal Lyapunov exponents of polynomial ODE
//! systems.
//!
//! The library compiles the Lyapunov-exponent bounding problem over the
//! augmented (state, tangent-direction) space into a block semidefinite
//! program, solves it with an in-house interior-point method, and verifies
//! the resulting sum-of-squares certificate a posteriori. A separate
//! trajectory suite locates unstable periodic orbits by close returns and
//! shooting, and measures their leading Lyapunov exponents by numerical
//! integration, so that lower bounds (measured exponents) can be checked
//! against upper bounds (certificates).
//!
//! Module map:
//! - [`poly`]: sparse multivariate polynomial arithmetic.
//! - [`dynamics`]: tangent-augmented dynamics and the constraint polynomial.
//! - [`symmetry`]: finite sign-symmetry groups and character classes.
//! - [`sos`]: SOS program assembly, SDP compilation, certificate checking.
//! - [`sdp`]: block SDP solver and SDPA sparse file format.
//! - [`trajectory`]: integrators, close-return scans, shooting, LE
//!   measurement.
//! - [`problem`]: problem files, presets, and the bound/orbit pipelines.

pub mod dynamics;
pub mod error;
pub mod poly;
pub mod problem;
pub mod sdp;
pub mod sos;
pub mod symmetry;
pub mod trajectory;

pub use error::{Error, Result};
pub use poly::{Monomial, Polynomial};
pub use dynamics::{TangentSystem, VectorField};
pub use symmetry::SignSymmetryGroup;

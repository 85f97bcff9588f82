//! Simulation and classification of piecewise smooth (Filippov) vector fields
//! on the quotient-square models of the two-torus and the two-sphere.
//!
//! The unit square `[0,1]²` is identified into either manifold; the switching
//! set is the circle `y = 1/2` (plus `y = 0 ~ 1` on the torus). The crate
//! provides:
//!
//! * [`manifold`]: canonical representatives, the quotient metric, poles.
//! * [`field`]: piecewise fields, Lie derivatives, region labels on Σ,
//!   tangencies, pseudo-equilibria and the parity checks on them.
//! * [`flow`]: event-driven Filippov integration (crossing, sliding, folds,
//!   poles, wraps) with a branch policy for non-unique forward motion.
//! * [`maps`]: first-return and half-return maps, displacement roots, `p*`.
//! * [`classify`]: global verdicts, equidistribution, minimal bands, chaos
//!   diagnostics and the sphere decomposition.
//! * [`scenarios`]: named, parameterized systems.

pub mod classify;
pub mod error;
pub mod exact;
pub mod field;
pub mod flow;
pub mod manifold;
pub mod maps;
mod ode;
pub mod quasi;
pub mod roots;
pub mod scenarios;

pub use error::{Error, Result};
pub use field::{PiecewiseField, SigmaId, SmoothField};
pub use flow::{integrate, BranchPolicy, Direction, IntegrationOptions, Trajectory};
pub use manifold::{wrap, ManifoldModel, QuotientPoint};

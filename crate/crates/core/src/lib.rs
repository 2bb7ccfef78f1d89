//! Simulation and verification toolkit for random compositions of
//! Liverani–Saussol–Vaienti intermittent maps.
//!
//! Layers, bottom up:
//!
//! - [`maps`]: the deterministic maps `T_a` and their left-branch inverse.
//! - [`driver`]: Bernoulli itineraries standing in for the noise coordinate,
//!   the skew-product step, cylinder enumeration.
//! - [`quenched`]: backward orbits `x_n(w)`, `c_n(w)`, concentration sums.
//! - [`induced`]: first return to `(1/2, 1] x [0, 1]` and its tail.
//! - [`density`]: Ulam discretization of the annealed transfer operator,
//!   invariant density, stationary sampling, correlations.
//! - [`limits`]: Birkhoff sums and their normal / stable limits.
//! - [`infinite`]: the piecewise affine model for `1 <= alpha < beta`.

pub mod density;
pub mod driver;
pub mod error;
pub mod induced;
pub mod infinite;
pub mod limits;
pub mod maps;
pub mod observable;
pub mod parallel;
pub mod quenched;
pub mod stats;

pub use driver::{ModelParams, SkewState, Symbol, SymbolStream, SymbolString};
pub use error::{Error, Result};
pub use maps::MapParams;
pub use observable::Observable;
pub use stats::{Estimate, SampleBatch};

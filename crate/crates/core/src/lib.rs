//! Joint D2D collaboration and task offloading for edge computing.
//!
//! Users of a large mobile population share load with graph neighbours using
//! the power of two choices (Po2): a task that is not offloaded polls one random
//! neighbour and joins the shorter of the two queues. Whatever is offloaded goes
//! to an edge server that charges a price.
//!
//! The crate is organised around the pieces of that system:
//!
//! - [`graph`]: degree profiles, configuration-model graphs and the dynamic
//!   (Poisson-regenerated) graph model.
//! - [`meanfield`]: the degree-class ODE for queue-length tails, its drift,
//!   an RK4 integrator, the stationary-point solver and the structural checks
//!   (monotonicity in degree, tail bounds, aggregate recursion, Lipschitz
//!   constant, dominance, Lyapunov distance).
//! - [`simulator`]: an event-driven N-user Po2 simulation on static or dynamic
//!   graphs, plus the M/M/1 baseline.
//! - [`offload`]: the users' side of the pricing game: task delay, fairness
//!   gap, feasible region and the threshold offloading rule.
//! - [`pricing`]: the server's virtual-queue controller and baseline policies.
//! - [`harness`]: configuration-driven experiments writing CSV/JSON artifacts.
//!
//! See the `examples/` directory of this crate for one runnable program per
//! capability.

pub mod error;
pub mod graph;
pub mod harness;
pub mod meanfield;
pub mod offload;
pub mod pricing;
pub mod simulator;

pub use error::{Error, Result};
pub use graph::{DegreeProfile, DynamicGraphModel, Graph};
pub use meanfield::{MeanField, MeanFieldState, StationaryPoint};
pub use offload::{FeasibleRegion, SystemParams};
pub use pricing::{Policy, SlotTrace};
pub use simulator::{GraphMode, SimConfig, SimSnapshot};

/// Seedable generator used for every stochastic operation in the crate.
pub type SimRng = rand_chacha::ChaCha8Rng;

/// Creates the crate's generator from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> SimRng {
    use rand::SeedableRng;
    SimRng::seed_from_u64(seed)
}

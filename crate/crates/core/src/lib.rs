pub mod datastore;
pub mod diffusion;
pub mod error;
pub mod harness;
pub mod interp;
pub mod mppi;
pub mod reachability;
pub mod seeds;
pub mod subgoal_planner;
pub mod world2d;

pub use error::{Error, Result};

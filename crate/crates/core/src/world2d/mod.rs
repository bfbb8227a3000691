//! Deterministic planar environments with SDF obstacles.

mod env;
mod geom;
mod sdf;

pub use env::{ChainState, Control, EnvConfig, EnvKind, EnvSpec, PENETRATION_TOL};
pub use geom::{ObjectState, Vec2};
pub use sdf::{rasterize, scene_distance, SdfGrid, Shape};

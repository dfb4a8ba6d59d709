//! Asynchronous nested navigation control at desk scale.
//!
//! A slow "base" policy runs far from the robot and sends guidance over a
//! high-latency link; a fast local adapter refines that stale guidance
//! against the freshest scan before a PD loop turns waypoints into wheel
//! commands. The crate contains the whole loop: planar geometry, a
//! deterministic 2D world, an analytic expert, small neural networks with
//! their own gradient tape, a two-stage imitation trainer, a virtual-clock
//! asynchronous runtime, and an evaluation harness.

#![forbid(unsafe_code)]

pub mod eval;
pub mod geom;
pub mod nn;
pub mod pd;
pub mod planner;
pub mod runtime;
pub mod scenario;
pub mod train;
pub mod util;
pub mod world;

pub use geom::{ActionChunk, OdomDelta, Pose2};

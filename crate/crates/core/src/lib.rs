//! Simulation and verification harness for randomized scattering of
//! oblivious, anonymous robots in the semi-synchronous model.
//!
//! * [`geometry`]: Voronoi cells as open half-plane intersections, sampling
//!   inside a cell.
//! * [`world`]: configurations, local frames, views, multiplicities.
//! * [`scheduler`]: activation policies and a bounded-gap fairness audit.
//! * [`protocols`]: scatter, its self-stabilizing compositions with pattern
//!   formation and gathering, two-robot gathering, deterministic stubs.
//! * [`engine`]: the execution loop, traces and replay.
//! * [`analysis`]: closure checks, separation/decay estimators, the
//!   impossibility harness and gathering campaigns.

pub mod analysis;
pub mod engine;
pub mod geometry;
pub mod protocols;
pub mod rng;
pub mod scheduler;
pub mod world;

pub use engine::{replay, run, Scenario, StopRule, Trace};
pub use geometry::Point;
pub use protocols::ProtocolSpec;
pub use scheduler::SchedulerKind;
pub use world::{Capabilities, Configuration};

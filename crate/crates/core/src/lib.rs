//! Distributed model predictive control for UAV swarms that stays collision
//! free under arbitrary message loss.
//!
//! The crate is organised bottom-up:
//!
//! * [`nominal`] – triple-integrator reference trajectories.
//! * [`qp`] – dense QP solver and the per-UAV trajectory optimization with
//!   buffered Voronoi cell constraints.
//! * [`tracker`] – information trackers holding the trajectory candidates a
//!   compute unit (CU) believes each UAV may be following.
//! * [`trigger`] – distributed priority-based event trigger.
//! * [`deadlock`] – deadlock detection and the intermediate-target planner.
//! * [`cu_agent`] / [`uav_agent`] – the per-node protocol state machines.
//! * [`netsim`] – lossy many-to-all round abstraction with jamming.
//! * [`harness`] – scenarios, the simulation runner, oracles and metrics.

pub mod cu_agent;
pub mod deadlock;
pub mod error;
pub mod harness;
pub mod netsim;
pub mod nominal;
pub mod qp;
pub mod tracker;
pub mod trigger;
pub mod uav_agent;

pub use error::{Error, Result};
pub use nominal::{InputSequence, NominalState, ReferenceTrajectory, TrajectoryMetadata, Vec3};

/// Identifier of a UAV (index into the swarm, `0..N`).
pub type UavId = usize;
/// Identifier of a compute unit (index `0..M`).
pub type CuId = usize;
/// Round counter. Signed so the initial hover trajectory can start at round `-1`.
pub type Round = i64;

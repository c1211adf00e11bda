//! Run record: everything the oracles and metrics need, serializable so two
//! runs can be compared byte for byte.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cu_agent::CuState;
use crate::netsim::RoundStats;
use crate::qp::SolveStatus;
use crate::tracker::{BankDigest, UpdateOutcome};
use crate::{CuId, ReferenceTrajectory, Round, TrajectoryMetadata, UavId, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub scenario: String,
    pub n_uavs: usize,
    pub n_cus: usize,
    pub seed: u64,
    pub round_period: f64,
    pub t_c: f64,
    pub d_hat_min: f64,
    /// Diagonal of the downwash scaling.
    pub theta: Vec3,
    pub delta_d_min: f64,
    pub target_tolerance: f64,
    pub n_phases: usize,
    pub rounds: Vec<RoundRecord>,
    /// Every trajectory some UAV followed, as first adopted.
    pub registry: Vec<RegisteredTrajectory>,
    pub fatal: Option<Fatal>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegisteredTrajectory {
    pub uav: UavId,
    pub trajectory: ReferenceTrajectory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fatal {
    pub round: Round,
    pub message: String,
    /// Bank of every CU at the start of the failing round.
    pub banks: Vec<BankDigest>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: Round,
    pub phase: usize,
    pub targets: Vec<Vec3>,
    pub uavs: Vec<UavRecord>,
    pub cus: Vec<CuRecord>,
    pub net: RoundStats,
    /// Smallest scaled distance between actual positions on the fine grid.
    pub min_actual_distance: f64,
    /// Failures of the per-plan separation oracle.
    pub plan_violations: Vec<String>,
    pub events: Vec<Event>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UavRecord {
    pub followed: TrajectoryMetadata,
    pub digest: u64,
    /// Reference positions on the `T_c` grid within the round.
    pub reference: Vec<Vec3>,
    /// Actual positions on the same grid.
    pub actual: Vec<Vec3>,
    /// Reference speed at the start of the round.
    pub speed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CuRecord {
    pub state: CuState,
    /// The bank used for planning (flags cleared in the ablation).
    pub bank: BankDigest,
    pub update: Option<UpdateOutcome>,
    pub aet: Option<Vec<UavId>>,
    pub plan: Option<PlanRecord>,
    pub deadlock: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub uav: UavId,
    pub status: SolveStatus,
    pub fallback: bool,
    pub shifted_verified: bool,
    pub metadata: TrajectoryMetadata,
    pub max_slack: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub round: Round,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    /// The CU stopped planning to recover lost information.
    MlrEntered { cu: CuId, state: CuState },
    MlrLeft { cu: CuId },
    Deprecated {
        cu: CuId,
        ambiguous: bool,
        missing_cu_messages: bool,
    },
    SolverFallback { cu: CuId, uav: UavId, status: SolveStatus },
    DeadlockDetected { cu: CuId },
    IntermediateTarget { cu: CuId, uav: UavId, target: Option<Vec3> },
    PhaseAdvanced { phase: usize },
    Fatal { message: String },
}

impl Trace {
    pub fn to_json(&self) -> crate::Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    pub fn events(&self) -> impl Iterator<Item = &Event> {
        self.rounds.iter().flat_map(|r| r.events.iter())
    }

    pub fn registry_index(&self) -> BTreeMap<(UavId, TrajectoryMetadata), &ReferenceTrajectory> {
        self.registry
            .iter()
            .map(|r| ((r.uav, r.trajectory.metadata), &r.trajectory))
            .collect()
    }

    /// Scaled distance between two points under this trace's downwash model.
    pub fn scaled_distance(&self, a: &Vec3, b: &Vec3) -> f64 {
        (a - b).component_div(&self.theta).norm()
    }
}

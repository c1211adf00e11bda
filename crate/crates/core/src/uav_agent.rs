//! UAV side of the protocol: trajectory adoption, status messages, replies to
//! trajectory requests, and the bounded tracking-error model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cu_agent::{CuMessage, CuPayload};
use crate::{CuId, ReferenceTrajectory, Round, TrajectoryMetadata, UavId, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UavMessage {
    pub sender: UavId,
    /// Metadata of the trajectory the UAV is following.
    pub metadata: TrajectoryMetadata,
    pub target: Vec3,
    /// Measured position, for logging only.
    pub measured_position: Option<Vec3>,
}

/// A UAV's current trajectory, sent in the slot of the CU that asked for it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReply {
    pub uav: UavId,
    pub requesting_cu: CuId,
    pub trajectory: ReferenceTrajectory,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UavAgent {
    pub id: UavId,
    pub current: ReferenceTrajectory,
    pub target: Vec3,
    /// CUs whose trajectory request arrived last round, ascending.
    pub pending_replies: Vec<CuId>,
}

impl UavAgent {
    pub fn new(id: UavId, initial: ReferenceTrajectory, target: Vec3) -> Self {
        Self {
            id,
            current: initial,
            target,
            pending_replies: Vec::new(),
        }
    }

    /// Start of round `round`: adopt a trajectory computed for this UAV in
    /// the previous round (lowest sending CU wins if several arrived),
    /// otherwise keep following the shifted old one. Returns the metadata of
    /// an adopted trajectory.
    pub fn on_round_start(
        &mut self,
        round: Round,
        received: &[&CuMessage],
    ) -> Option<TrajectoryMetadata> {
        let mut adopted: Option<(CuId, &ReferenceTrajectory)> = None;
        self.pending_replies.clear();
        for msg in received {
            match &msg.payload {
                CuPayload::Trajectory { uav, trajectory } if *uav == self.id => {
                    if adopted.is_none_or(|(cu, _)| msg.sender < cu) {
                        adopted = Some((msg.sender, trajectory));
                    }
                }
                CuPayload::Request { uav, requesting_cu } if *uav == self.id => {
                    self.pending_replies.push(*requesting_cu);
                }
                _ => {}
            }
        }
        self.pending_replies.sort_unstable();
        self.pending_replies.dedup();
        let out = adopted.map(|(_, t)| {
            self.current = t.advanced_to(round - 1);
            t.metadata
        });
        if out.is_none() {
            self.current = self.current.advanced_to(round - 1);
        }
        out
    }

    /// Status message plus one reply per pending request.
    pub fn emit(&mut self, measured: Option<Vec3>) -> (UavMessage, Vec<TrajectoryReply>) {
        let msg = UavMessage {
            sender: self.id,
            metadata: self.current.metadata,
            target: self.target,
            measured_position: measured,
        };
        let replies = std::mem::take(&mut self.pending_replies)
            .into_iter()
            .map(|cu| TrajectoryReply {
                uav: self.id,
                requesting_cu: cu,
                trajectory: self.current.clone(),
            })
            .collect();
        (msg, replies)
    }

    pub fn reference_position(&self, t: f64) -> Vec3 {
        self.current.position_at(t)
    }
}

const WAVES: usize = 3;

/// Deterministic bounded tracking error: a per-UAV sum of seeded sinusoids,
/// scaled so its norm never exceeds `delta_d_min`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingModel {
    pub delta_d_min: f64,
    /// Per UAV and axis: (amplitude, angular frequency, phase) per wave.
    waves: Vec<[[(f64, f64, f64); WAVES]; 3]>,
}

impl TrackingModel {
    pub fn new(delta_d_min: f64, n_uavs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7472_6163_6b69_6e67);
        let waves = (0..n_uavs)
            .map(|_| {
                std::array::from_fn(|_| {
                    let mut amps: [f64; WAVES] = std::array::from_fn(|_| rng.random_range(0.1..1.0));
                    let total: f64 = amps.iter().sum();
                    amps.iter_mut().for_each(|a| *a /= total);
                    std::array::from_fn(|w| {
                        (
                            amps[w],
                            rng.random_range(0.5..6.0),
                            rng.random_range(0.0..std::f64::consts::TAU),
                        )
                    })
                })
            })
            .collect();
        Self { delta_d_min, waves }
    }

    pub fn disturbance(&self, uav: UavId, t: f64) -> Vec3 {
        if self.delta_d_min == 0.0 {
            return Vec3::zeros();
        }
        let axes = &self.waves[uav];
        // each axis lies in [-1, 1]; dividing by sqrt(3) bounds the norm by 1
        let raw = Vec3::from_fn(|a, _| {
            axes[a]
                .iter()
                .map(|(amp, w, ph)| amp * (w * t + ph).sin())
                .sum::<f64>()
        }) / 3f64.sqrt();
        let d = raw * self.delta_d_min;
        let n = d.norm();
        if n > self.delta_d_min {
            d * (self.delta_d_min / n)
        } else {
            d
        }
    }

    pub fn actual_position(&self, agent: &UavAgent, t: f64) -> Vec3 {
        agent.reference_position(t) + self.disturbance(agent.id, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trigger::PriorityVector;

    fn hover() -> ReferenceTrajectory {
        ReferenceTrajectory::hover(Vec3::new(0.0, 0.0, 1.0), -1, 15, 0.2, 1)
    }

    fn cu_msg(sender: CuId, payload: CuPayload) -> CuMessage {
        CuMessage {
            sender,
            payload,
            priorities: PriorityVector(vec![1, 1]),
            planner: Vec::new(),
        }
    }

    fn planned(cu: CuId) -> ReferenceTrajectory {
        let mut t = hover().advanced_to(0);
        t.inputs.jerks[0] = Vec3::new(0.5, 0.0, 0.0);
        t.inputs.jerks[1] = Vec3::new(-0.5, 0.0, 0.0);
        t.metadata = TrajectoryMetadata::computed_by(0, cu);
        t
    }

    #[test]
    fn adopts_own_trajectory() {
        let mut a = UavAgent::new(0, hover(), Vec3::zeros());
        let m = cu_msg(1, CuPayload::Trajectory { uav: 0, trajectory: planned(1) });
        let got = a.on_round_start(1, &[&m]);
        assert_eq!(got, Some(TrajectoryMetadata::computed_by(0, 1)));
        assert_eq!(a.current.metadata.cu_id, 2);
        assert_eq!(a.current.start_round, 0);
    }

    #[test]
    fn shifts_without_trajectory_and_ignores_others() {
        let mut a = UavAgent::new(0, hover(), Vec3::zeros());
        let m = cu_msg(1, CuPayload::Trajectory { uav: 1, trajectory: planned(1) });
        assert_eq!(a.on_round_start(1, &[&m]), None);
        assert_eq!(a.current.metadata, TrajectoryMetadata::INITIAL);
        assert_eq!(a.current.start_round, 0);
        a.on_round_start(2, &[]);
        assert_eq!(a.current.start_round, 1);
    }

    #[test]
    fn lowest_sender_wins() {
        let mut a = UavAgent::new(0, hover(), Vec3::zeros());
        let m2 = cu_msg(2, CuPayload::Trajectory { uav: 0, trajectory: planned(2) });
        let m0 = cu_msg(0, CuPayload::Trajectory { uav: 0, trajectory: planned(0) });
        a.on_round_start(1, &[&m2, &m0]);
        assert_eq!(a.current.metadata.cu_id, 1);
    }

    #[test]
    fn replies_per_request() {
        let mut a = UavAgent::new(3, hover(), Vec3::zeros());
        let (_, none) = a.emit(None);
        assert!(none.is_empty());
        let r2 = cu_msg(2, CuPayload::Request { uav: 3, requesting_cu: 2 });
        let r0 = cu_msg(0, CuPayload::Request { uav: 3, requesting_cu: 0 });
        a.on_round_start(1, &[&r2, &r0]);
        let (msg, replies) = a.emit(None);
        assert_eq!(msg.metadata, a.current.metadata);
        assert_eq!(replies.iter().map(|r| r.requesting_cu).collect::<Vec<_>>(), vec![0, 2]);
        assert!(replies.iter().all(|r| r.trajectory == a.current));
        assert!(a.emit(None).1.is_empty());
    }

    #[test]
    fn tracking_error_is_bounded() {
        let m = TrackingModel::new(0.05, 4, 9);
        for uav in 0..4 {
            for k in 0..2000 {
                let d = m.disturbance(uav, k as f64 * 0.013);
                assert!(d.norm() <= 0.05 + 1e-15);
            }
        }
        let zero = TrackingModel::new(0.0, 1, 9);
        let a = UavAgent::new(0, hover(), Vec3::zeros());
        assert_eq!(zero.actual_position(&a, 0.7), a.reference_position(0.7));
        assert_eq!(TrackingModel::new(0.05, 4, 9), m);
    }
}

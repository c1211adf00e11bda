//! Post-hoc oracles over a finished trace.

use serde::{Deserialize, Serialize};

use crate::harness::trace::Trace;
use crate::{Round, UavId, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionViolation {
    pub round: Round,
    pub time: f64,
    pub uavs: (UavId, UavId),
    pub distance: f64,
}

/// Slack granted to solver round-off in the discrete collision check.
pub const COLLISION_SLACK: f64 = 1e-9;

/// Scaled distances between the followed reference trajectories at every
/// `k T + h T_c`, re-sampled from the trajectory registry.
pub fn check_discrete_collisions(trace: &Trace, theta: &Vec3, d_hat_min: f64, t_c: f64) -> Vec<CollisionViolation> {
    let registry = trace.registry_index();
    let per_round = (trace.round_period / t_c).round() as usize;
    let mut out = Vec::new();
    for rec in trace.rounds.iter().filter(|r| !r.uavs.is_empty()) {
        let trajs: Vec<_> = rec
            .uavs
            .iter()
            .enumerate()
            .map(|(i, u)| registry[&(i, u.followed)])
            .collect();
        let first = if rec.round == 0 { 0 } else { 1 };
        for h in first..=per_round {
            let t = rec.round as f64 * trace.round_period + h as f64 * t_c;
            let pos: Vec<Vec3> = trajs.iter().map(|tr| tr.position_at(t)).collect();
            for i in 0..pos.len() {
                for j in i + 1..pos.len() {
                    let d = (pos[j] - pos[i]).component_div(theta).norm();
                    if d < d_hat_min - COLLISION_SLACK {
                        out.push(CollisionViolation {
                            round: rec.round,
                            time: t,
                            uavs: (i, j),
                            distance: d,
                        });
                    }
                }
            }
        }
    }
    out
}

/// Smallest scaled distance between followed references over the run.
pub fn min_reference_distance(trace: &Trace) -> f64 {
    let registry = trace.registry_index();
    let per_round = (trace.round_period / trace.t_c).round() as usize;
    let mut best = f64::INFINITY;
    for rec in trace.rounds.iter().filter(|r| !r.uavs.is_empty()) {
        for h in 0..per_round {
            let t = rec.round as f64 * trace.round_period + h as f64 * trace.t_c;
            let pos: Vec<Vec3> = rec
                .uavs
                .iter()
                .enumerate()
                .map(|(i, u)| registry[&(i, u.followed)].position_at(t))
                .collect();
            for i in 0..pos.len() {
                for j in i + 1..pos.len() {
                    best = best.min(trace.scaled_distance(&pos[i], &pos[j]));
                }
            }
        }
    }
    best
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    /// A non-deprecated tracker misses the trajectory its UAV follows.
    pub lemma1: Vec<String>,
    /// Two CUs hold different candidates in non-deprecated trackers.
    pub lemma2: Vec<String>,
    /// Rounds that neither solved nor fell back to a verified candidate.
    pub feasibility: Vec<String>,
    /// New plans closer than the safety distance to a known candidate.
    pub separation: Vec<String>,
}

impl OracleReport {
    pub fn is_clean(&self) -> bool {
        self.lemma1.is_empty() && self.lemma2.is_empty() && self.feasibility.is_empty() && self.separation.is_empty()
    }
}

pub fn check_theorem_oracles(trace: &Trace) -> OracleReport {
    let mut report = OracleReport::default();
    if let Some(f) = &trace.fatal {
        report.feasibility.push(format!("round {}: {}", f.round, f.message));
    }
    for rec in trace.rounds.iter().filter(|r| !r.uavs.is_empty()) {
        let k = rec.round;
        for (w, cu) in rec.cus.iter().enumerate() {
            for (i, tracker) in cu.bank.trackers.iter().enumerate() {
                let truth = (rec.uavs[i].followed, rec.uavs[i].digest);
                if !tracker.deprecated && !tracker.candidates.contains(&truth) {
                    report.lemma1.push(format!(
                        "round {k}: CU {w} tracker for UAV {i} lacks followed trajectory {}",
                        truth.0
                    ));
                }
            }
            if let Some(p) = &cu.plan {
                if p.fallback && !p.shifted_verified {
                    report
                        .feasibility
                        .push(format!("round {k}: CU {w} used an unverified fallback for UAV {}", p.uav));
                }
            }
        }
        for a in 0..rec.cus.len() {
            for b in a + 1..rec.cus.len() {
                let (ba, bb) = (&rec.cus[a].bank, &rec.cus[b].bank);
                for (i, (ta, tb)) in ba.trackers.iter().zip(&bb.trackers).enumerate() {
                    if !ta.deprecated && !tb.deprecated && ta.candidates != tb.candidates {
                        report
                            .lemma2
                            .push(format!("round {k}: CUs {a} and {b} disagree on UAV {i}"));
                    }
                }
            }
        }
        report.separation.extend(rec.plan_violations.iter().map(|v| format!("round {k}: {v}")));
    }
    report
}

/// Rounds whose smallest actual scaled distance falls below
/// `d_hat_min - 2 delta_d_min - margin`.
pub fn check_physical_distances(trace: &Trace, margin: f64) -> Vec<(Round, f64)> {
    let bound = trace.d_hat_min - 2.0 * trace.delta_d_min - margin;
    trace
        .rounds
        .iter()
        .filter(|r| r.min_actual_distance < bound)
        .map(|r| (r.round, r.min_actual_distance))
        .collect()
}

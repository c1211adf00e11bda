//! Deadlock detection, right-hand soft-constraint weighting and the
//! intermediate-target planner.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::qp::StateBox;
use crate::tracker::TrackerBank;
use crate::{NominalState, UavId, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeadlockConfig {
    pub velocity_threshold: f64,
    pub target_tolerance: f64,
    pub make_room_radius: f64,
    pub push_distance: f64,
    pub noise_scale: f64,
    /// Rounds after which an unreached intermediate target is dropped.
    pub max_hold_rounds: i64,
    /// Consecutive rounds the stall condition must hold before it counts as
    /// a deadlock. A swarm that has just been given new targets is also at
    /// rest, but starts moving as soon as its UAVs are replanned.
    pub persistence_rounds: i64,
}

impl Default for DeadlockConfig {
    fn default() -> Self {
        Self {
            velocity_threshold: 0.05,
            target_tolerance: 0.05,
            make_room_radius: 1.0,
            push_distance: 0.5,
            noise_scale: 0.1,
            max_hold_rounds: 30,
            persistence_rounds: 10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntermediateTarget {
    pub uav: UavId,
    pub position: Vec3,
    pub active: bool,
}

/// Reference state of every UAV one round ahead, from each tracker's first
/// candidate.
pub fn reference_states(bank: &TrackerBank) -> Vec<NominalState> {
    bank.trackers()
        .iter()
        .map(|t| {
            let c = t.first();
            c.sample(c.round_period())
        })
        .collect()
}

/// All UAVs are (nearly) at rest while at least one is away from its target.
pub fn detect(bank: &TrackerBank, targets: &[Vec3], cfg: &DeadlockConfig) -> bool {
    detect_states(&reference_states(bank), targets, cfg)
}

pub fn detect_states(states: &[NominalState], targets: &[Vec3], cfg: &DeadlockConfig) -> bool {
    let slow = states
        .iter()
        .all(|s| s.velocity.norm() < cfg.velocity_threshold);
    let away = states
        .iter()
        .zip(targets)
        .any(|(s, t)| (s.position - t).norm() > cfg.target_tolerance);
    slow && away
}

/// Whether UAV `i` should make room for UAV `j`.
pub fn should_make_room(
    i: UavId,
    j: UavId,
    states: &[NominalState],
    targets: &[Vec3],
    d_hat_min: f64,
    cfg: &DeadlockConfig,
) -> bool {
    let pi = states[i].position;
    let pj = states[j].position;
    if (pj - pi).norm() > cfg.make_room_radius {
        return false;
    }
    let di = (targets[i] - pi).norm();
    let dj = (targets[j] - pj).norm();
    if dj < di {
        return false;
    }
    let toward = states[i].velocity.dot(&(pj - pi)) > 0.0;
    toward || between(&pi, &pj, &targets[j], d_hat_min)
}

/// `p` projects onto the segment `[a, b]` within `lateral` of it.
fn between(p: &Vec3, a: &Vec3, b: &Vec3, lateral: f64) -> bool {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return false;
    }
    let s = (p - a).dot(&ab) / len2;
    if !(0.0..=1.0).contains(&s) {
        return false;
    }
    (a + ab * s - p).norm() <= lateral
}

/// Intermediate target for UAV `i`, if it should make room for someone:
/// pushed away from the closest such UAV, plus uniform noise, clamped to
/// the flight box.
pub fn make_room<R: Rng>(
    i: UavId,
    states: &[NominalState],
    targets: &[Vec3],
    d_hat_min: f64,
    bounds: &StateBox,
    cfg: &DeadlockConfig,
    rng: &mut R,
) -> Option<IntermediateTarget> {
    let pi = states[i].position;
    let closest = (0..states.len())
        .filter(|&j| j != i && should_make_room(i, j, states, targets, d_hat_min, cfg))
        .min_by(|&a, &b| {
            let da = (states[a].position - pi).norm();
            let db = (states[b].position - pi).norm();
            da.total_cmp(&db).then(a.cmp(&b))
        })?;
    let away = pi - states[closest].position;
    let dir = if away.norm() > 1e-12 {
        away.normalize()
    } else {
        Vec3::x()
    };
    let noise = Vec3::from_fn(|_, _| rng.random_range(-1.0..=1.0) * cfg.noise_scale);
    let raw = pi + dir * cfg.push_distance + noise;
    let position = raw.zip_zip_map(&bounds.position_min, &bounds.position_max, |v, lo, hi| {
        v.clamp(lo, hi)
    });
    Some(IntermediateTarget {
        uav: i,
        position,
        active: true,
    })
}

/// Weight of the soft variable for neighbour `j` of UAV `i`: boosted when
/// `j` lies to the right of `i`'s heading (z up).
pub fn right_side_weight(
    i: UavId,
    j: UavId,
    states: &[NominalState],
    base: f64,
    right: f64,
    velocity_eps: f64,
) -> f64 {
    let v = states[i].velocity;
    if v.xy().norm() <= velocity_eps {
        return base;
    }
    let rel = states[j].position - states[i].position;
    let cross_z = v.x * rel.y - v.y * rel.x;
    if cross_z < 0.0 {
        right
    } else {
        base
    }
}

/// Per-CU record of intermediate targets, including those announced by
/// other CUs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlannerTable {
    /// Active intermediate target and the round it was set, per UAV.
    entries: Vec<Option<(Vec3, i64)>>,
}

impl PlannerTable {
    pub fn new(n: usize) -> Self {
        Self {
            entries: vec![None; n],
        }
    }

    pub fn get(&self, uav: UavId) -> Option<Vec3> {
        self.entries[uav].map(|(p, _)| p)
    }

    pub fn since(&self, uav: UavId) -> Option<i64> {
        self.entries[uav].map(|(_, k)| k)
    }

    pub fn set(&mut self, uav: UavId, target: Option<Vec3>, round: i64) {
        self.entries[uav] = target.map(|p| (p, round));
    }

    /// Apply an announcement from another CU.
    pub fn apply(&mut self, uav: UavId, target: Option<Vec3>, since: i64) {
        self.entries[uav] = target.map(|p| (p, since));
    }

    /// The target UAV `uav` should be planned towards.
    pub fn effective_target(&self, uav: UavId, true_target: &Vec3) -> Vec3 {
        self.get(uav).unwrap_or(*true_target)
    }

    pub fn any_active(&self) -> bool {
        self.entries.iter().any(|e| e.is_some())
    }
}

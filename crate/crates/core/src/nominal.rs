//! Third-order integrator nominal model and piecewise-constant-jerk
//! reference trajectories.
//!
//! A [`ReferenceTrajectory`] with `start_round = k` is the plan computed in
//! round `k`. Its `initial_state` is the state at absolute time `(k + 1) T`,
//! one round period after the computation started, and its jerk steps cover
//! `[(k + 1) T, (k + 1) T + H T]`. After the horizon the state is held.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::Round;

pub type Vec3 = nalgebra::Vector3<f64>;

/// Relative tolerance used to snap sample times onto the jerk grid.
const GRID_SNAP: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NominalState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
}

impl NominalState {
    pub fn hover(position: Vec3) -> Self {
        Self {
            position,
            velocity: Vec3::zeros(),
            acceleration: Vec3::zeros(),
        }
    }

    /// Exact triple-integrator update under constant jerk for `dt` seconds.
    pub fn propagate(&self, jerk: &Vec3, dt: f64) -> Self {
        debug_assert!(dt >= 0.0);
        let dt2 = dt * dt;
        let dt3 = dt2 * dt;
        Self {
            position: self.position
                + self.velocity * dt
                + self.acceleration * (dt2 / 2.0)
                + jerk * (dt3 / 6.0),
            velocity: self.velocity + self.acceleration * dt + jerk * (dt2 / 2.0),
            acceleration: self.acceleration + jerk * dt,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.acceleration.iter().all(|v| v.is_finite())
    }
}

/// `propagate` as a free function.
pub fn propagate(state: &NominalState, jerk: &Vec3, dt: f64) -> NominalState {
    state.propagate(jerk, dt)
}

/// True iff the state is an equilibrium of the triple integrator under zero
/// jerk, i.e. velocity and acceleration are exactly zero.
pub fn terminal_rest(state: &NominalState) -> bool {
    state.velocity == Vec3::zeros() && state.acceleration == Vec3::zeros()
}

/// [`terminal_rest`] up to an absolute tolerance on every component.
pub fn terminal_rest_within(state: &NominalState, tol: f64) -> bool {
    state.velocity.amax() <= tol && state.acceleration.amax() <= tol
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputSequence {
    pub jerks: Vec<Vec3>,
    pub sampling_time: f64,
}

impl InputSequence {
    pub fn zeros(steps: usize, sampling_time: f64) -> Self {
        Self {
            jerks: vec![Vec3::zeros(); steps],
            sampling_time,
        }
    }

    pub fn len(&self) -> usize {
        self.jerks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jerks.is_empty()
    }
}

/// Identifies a trajectory within a run: the round it was computed in and the
/// CU that computed it. `cu_id == 0` marks the initial hover trajectory; CU
/// `w` stamps its plans with `cu_id = w + 1`.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct TrajectoryMetadata {
    pub calc_round: Round,
    pub cu_id: u32,
}

impl TrajectoryMetadata {
    pub const INITIAL: Self = Self {
        calc_round: 0,
        cu_id: 0,
    };

    pub fn computed_by(round: Round, cu: crate::CuId) -> Self {
        Self {
            calc_round: round,
            cu_id: cu as u32 + 1,
        }
    }
}

impl fmt::Display for TrajectoryMetadata {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(k={}, cu={})", self.calc_round, self.cu_id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    pub start_round: Round,
    pub initial_state: NominalState,
    pub inputs: InputSequence,
    /// Number of jerk steps per round period (`T / T_s`).
    pub steps_per_round: usize,
    pub metadata: TrajectoryMetadata,
}

impl ReferenceTrajectory {
    /// Constant hover at `position`, tagged with the initial metadata.
    pub fn hover(
        position: Vec3,
        start_round: Round,
        steps: usize,
        sampling_time: f64,
        steps_per_round: usize,
    ) -> Self {
        Self {
            start_round,
            initial_state: NominalState::hover(position),
            inputs: InputSequence::zeros(steps, sampling_time),
            steps_per_round,
            metadata: TrajectoryMetadata::INITIAL,
        }
    }

    pub fn sampling_time(&self) -> f64 {
        self.inputs.sampling_time
    }

    pub fn round_period(&self) -> f64 {
        self.steps_per_round as f64 * self.inputs.sampling_time
    }

    /// Absolute time of `initial_state`.
    pub fn origin_time(&self) -> f64 {
        (self.start_round + 1) as f64 * self.round_period()
    }

    /// Length of the jerk schedule in seconds.
    pub fn horizon(&self) -> f64 {
        self.inputs.len() as f64 * self.inputs.sampling_time
    }

    /// State after `step` full jerk steps; steps past the horizon return the
    /// terminal state.
    pub fn sample_step(&self, step: usize) -> NominalState {
        let ts = self.inputs.sampling_time;
        self.inputs.jerks[..step.min(self.inputs.len())]
            .iter()
            .fold(self.initial_state, |s, u| s.propagate(u, ts))
    }

    pub fn terminal_state(&self) -> NominalState {
        self.sample_step(self.inputs.len())
    }

    /// State at local time `tau >= 0` measured from `initial_state`.
    pub fn sample(&self, tau: f64) -> NominalState {
        let ts = self.inputs.sampling_time;
        let tau = tau.max(0.0);
        let scaled = tau / ts;
        let nearest = scaled.round();
        let (full, rem) = if (scaled - nearest).abs() <= GRID_SNAP * scaled.max(1.0) {
            (nearest as usize, 0.0)
        } else {
            let full = scaled.floor() as usize;
            (full, tau - full as f64 * ts)
        };
        if full >= self.inputs.len() {
            return self.terminal_state();
        }
        let state = self.sample_step(full);
        if rem > 0.0 {
            state.propagate(&self.inputs.jerks[full], rem)
        } else {
            state
        }
    }

    /// State at absolute time `t`. Times before the origin clamp to it.
    pub fn sample_at(&self, t: f64) -> NominalState {
        self.sample(t - self.origin_time())
    }

    pub fn position_at(&self, t: f64) -> Vec3 {
        self.sample_at(t).position
    }

    /// The same trajectory expressed one round later: the first `T / T_s`
    /// steps are consumed and zero jerk is appended.
    pub fn shift(&self) -> Self {
        let spr = self.steps_per_round.min(self.inputs.len());
        let initial_state = self.sample_step(spr);
        let mut jerks = self.inputs.jerks[spr..].to_vec();
        jerks.resize(self.inputs.len(), Vec3::zeros());
        Self {
            start_round: self.start_round + 1,
            initial_state,
            inputs: InputSequence {
                jerks,
                sampling_time: self.inputs.sampling_time,
            },
            steps_per_round: self.steps_per_round,
            metadata: self.metadata,
        }
    }

    /// Shift until `start_round == round`. Rounds in the past are a no-op.
    pub fn advanced_to(&self, round: Round) -> Self {
        let mut t = self.clone();
        while t.start_round < round {
            t = t.shift();
        }
        t
    }

    /// Stable 64-bit fingerprint of the trajectory content (FNV-1a over the
    /// bit patterns), used to compare tracker contents across CUs.
    pub fn digest(&self) -> u64 {
        let mut h = Fnv::new();
        h.write_i64(self.start_round);
        h.write_i64(self.metadata.calc_round);
        h.write_u64(self.metadata.cu_id as u64);
        h.write_u64(self.steps_per_round as u64);
        h.write_f64(self.inputs.sampling_time);
        let s = &self.initial_state;
        for v in [&s.position, &s.velocity, &s.acceleration] {
            v.iter().for_each(|x| h.write_f64(*x));
        }
        for u in &self.inputs.jerks {
            u.iter().for_each(|x| h.write_f64(*x));
        }
        h.finish()
    }
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn write_u64(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    fn write_i64(&mut self, v: i64) {
        self.write_u64(v as u64);
    }

    fn write_f64(&mut self, v: f64) {
        self.write_u64(v.to_bits());
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state(p: [f64; 3], v: [f64; 3], a: [f64; 3]) -> NominalState {
        NominalState {
            position: Vec3::from(p),
            velocity: Vec3::from(v),
            acceleration: Vec3::from(a),
        }
    }

    fn traj(jerks: Vec<Vec3>, spr: usize) -> ReferenceTrajectory {
        ReferenceTrajectory {
            start_round: 3,
            initial_state: state([0.1, -0.2, 1.0], [0.3, 0.0, -0.1], [0.0, 0.2, 0.0]),
            inputs: InputSequence {
                jerks,
                sampling_time: 0.1,
            },
            steps_per_round: spr,
            metadata: TrajectoryMetadata {
                calc_round: 3,
                cu_id: 1,
            },
        }
    }

    #[test]
    fn propagate_closed_form() {
        let s = NominalState::hover(Vec3::zeros());
        let out = s.propagate(&Vec3::new(6.0, 0.0, 0.0), 1.0);
        assert_eq!(out.position, Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(out.velocity, Vec3::new(3.0, 0.0, 0.0));
        assert_eq!(out.acceleration, Vec3::new(6.0, 0.0, 0.0));

        let s = state([1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0; 3]);
        let out = s.propagate(&Vec3::zeros(), 0.5);
        assert_eq!(out.position.x, 2.0);
        assert_eq!(out.velocity.x, 2.0);
        assert_eq!(out.acceleration.x, 0.0);
    }

    #[test]
    fn hover_is_constant() {
        let t = ReferenceTrajectory::hover(Vec3::new(0.0, 0.0, 1.0), -1, 15, 0.2, 1);
        for tau in [0.0, 0.13, 1.0, 2.99, 3.0, 50.0] {
            let s = t.sample(tau);
            assert_eq!(s.position, Vec3::new(0.0, 0.0, 1.0));
            assert!(terminal_rest(&s));
        }
        let shifted = t.shift();
        assert_eq!(shifted.start_round, 0);
        assert_eq!(shifted.initial_state, t.initial_state);
        assert_eq!(shifted.inputs, t.inputs);
    }

    #[test]
    fn grid_sample_matches_repeated_propagate() {
        let jerks: Vec<Vec3> = (0..6)
            .map(|i| Vec3::new(i as f64, -(i as f64) * 0.5, 0.25))
            .collect();
        let t = traj(jerks.clone(), 2);
        let mut s = t.initial_state;
        for (k, u) in jerks.iter().enumerate() {
            assert_eq!(t.sample(k as f64 * 0.1), s);
            s = s.propagate(u, 0.1);
        }
        assert_eq!(t.terminal_state(), s);
    }

    #[test]
    fn beyond_horizon_holds_terminal() {
        let jerks = vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0)];
        let t = traj(jerks, 1);
        assert_eq!(t.sample(t.horizon() + 10.0), t.sample(t.horizon()));
    }

    #[test]
    fn shift_drops_leading_steps() {
        let u: Vec<Vec3> = (0..4).map(|i| Vec3::repeat(i as f64 + 1.0)).collect();
        let t = traj(u.clone(), 2);
        let s = t.shift();
        assert_eq!(s.inputs.jerks, vec![u[2], u[3], Vec3::zeros(), Vec3::zeros()]);
        assert_eq!(s.start_round, t.start_round + 1);
        assert_eq!(s.metadata, t.metadata);
        assert_eq!(s.advanced_to(t.start_round), s);
        assert_eq!(t.advanced_to(t.start_round + 2), s.shift());
    }

    #[test]
    fn terminal_rest_is_exact() {
        let mut s = NominalState::hover(Vec3::new(3.0, 1.0, 2.0));
        assert!(terminal_rest(&s));
        s.velocity.x = 1e-12;
        assert!(!terminal_rest(&s));
        assert!(terminal_rest_within(&s, 1e-9));
    }

    #[test]
    fn digest_tracks_content() {
        let t = traj(vec![Vec3::zeros(); 4], 2);
        let mut u = t.clone();
        assert_eq!(t.digest(), u.digest());
        u.inputs.jerks[3].z = 1e-300;
        assert_ne!(t.digest(), u.digest());
    }

    fn vec3() -> impl Strategy<Value = Vec3> {
        (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn propagate_semigroup(p in vec3(), v in vec3(), a in vec3(), u in vec3(),
                               dt1 in 0.0..0.5f64, dt2 in 0.0..0.5f64) {
            let s = NominalState { position: p, velocity: v, acceleration: a };
            let two = s.propagate(&u, dt1).propagate(&u, dt2);
            let one = s.propagate(&u, dt1 + dt2);
            prop_assert!((two.position - one.position).amax() < 1e-12);
            prop_assert!((two.velocity - one.velocity).amax() < 1e-12);
            prop_assert!((two.acceleration - one.acceleration).amax() < 1e-12);
        }

        #[test]
        fn shift_consistency(jerks in proptest::collection::vec(vec3(), 12), spr in 1usize..4,
                             frac in 0.0..1.0f64) {
            let t = traj(jerks, spr);
            let s = t.shift();
            let period = t.round_period();
            let retained = t.horizon() - period;
            // dense sweep plus one random point
            for i in 0..=60 {
                let tau = retained * i as f64 / 60.0;
                let d = (s.sample(tau).position - t.sample(tau + period).position).amax();
                prop_assert!(d < 1e-12, "tau {} diff {}", tau, d);
            }
            let tau = retained * frac;
            let a = s.sample(tau);
            let b = t.sample(tau + period);
            prop_assert!((a.velocity - b.velocity).amax() < 1e-12);
            prop_assert!((a.acceleration - b.acceleration).amax() < 1e-12);
            // absolute-time view is unchanged by shifting
            let abs = s.origin_time() + tau;
            prop_assert!((s.position_at(abs) - t.position_at(abs)).amax() < 1e-12);
        }
    }
}

use nalgebra::{DMatrix, DVector, Matrix3};
use serde::{Deserialize, Serialize};

use super::solver::QuadraticProgram;
use crate::nominal::terminal_rest_within;
use crate::tracker::TrackerBank;
use crate::{
    Error, InputSequence, NominalState, ReferenceTrajectory, Result, Round, TrajectoryMetadata,
    UavId, Vec3,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StateBox {
    pub position_min: Vec3,
    pub position_max: Vec3,
    /// Symmetric per-axis bound on |velocity|.
    pub velocity_max: Vec3,
    /// Symmetric per-axis bound on |acceleration|.
    pub acceleration_max: Vec3,
}

impl Default for StateBox {
    fn default() -> Self {
        Self {
            position_min: Vec3::new(-1.7, -1.7, 0.0),
            position_max: Vec3::new(1.7, 1.7, 2.6),
            velocity_max: Vec3::repeat(1.0),
            acceleration_max: Vec3::repeat(2.0),
        }
    }
}

impl StateBox {
    pub fn contains(&self, s: &NominalState, tol: f64) -> bool {
        (0..3).all(|a| {
            s.position[a] >= self.position_min[a] - tol
                && s.position[a] <= self.position_max[a] + tol
                && s.velocity[a].abs() <= self.velocity_max[a] + tol
                && s.acceleration[a].abs() <= self.acceleration_max[a] + tol
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizationConfig {
    /// Round period `T`.
    pub round_period: f64,
    /// Prediction horizon `H` in rounds.
    pub horizon_rounds: usize,
    pub h_s: usize,
    pub t_s: f64,
    pub h_b: usize,
    pub t_b: f64,
    pub h_c: usize,
    pub t_c: f64,
    pub h_o: usize,
    pub t_o: f64,
    /// Diagonal of `Q` for position, velocity and acceleration error.
    pub state_weight: [f64; 3],
    /// `R`, a multiple of the identity on jerk.
    pub input_weight: f64,
    pub d_hat_min: f64,
    /// Diagonal of the downwash scaling `Θ`.
    pub theta: Vec3,
    /// Symmetric per-axis jerk bound.
    pub jerk_max: Vec3,
    pub state_box: StateBox,
    pub soft_weight_base: f64,
    pub soft_weight_right: f64,
    /// Upper bound on each soft variable.
    pub soft_max: f64,
    pub solver_tol: f64,
    pub max_iter: usize,
}

impl Default for OptimizationConfig {
    fn default() -> Self {
        Self {
            round_period: 0.2,
            horizon_rounds: 15,
            h_s: 15,
            t_s: 0.2,
            h_b: 15,
            t_b: 0.2,
            h_c: 15,
            t_c: 0.2,
            h_o: 15,
            t_o: 0.2,
            state_weight: [1.0, 0.0, 0.0],
            input_weight: 1e-2,
            d_hat_min: 0.25,
            theta: Vec3::new(1.0, 1.0, 2.0),
            jerk_max: Vec3::repeat(5.0),
            state_box: StateBox::default(),
            soft_weight_base: 1.0,
            soft_weight_right: 10.0,
            soft_max: 0.1,
            solver_tol: 1e-10,
            max_iter: 4000,
        }
    }
}

fn integer_ratio(a: f64, b: f64) -> Option<usize> {
    let r = a / b;
    let n = r.round();
    ((r - n).abs() < 1e-9 && n >= 1.0).then_some(n as usize)
}

impl OptimizationConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        let times = [self.round_period, self.t_s, self.t_b, self.t_c, self.t_o];
        if times.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return fail("sampling times must be positive");
        }
        for (name, t) in [("T_s", self.t_s), ("T_b", self.t_b), ("T_c", self.t_c)] {
            if integer_ratio(self.round_period, t).is_none() {
                return Err(Error::Config(format!("T must be an integer multiple of {name}")));
            }
        }
        let span = self.horizon_rounds as f64 * self.round_period;
        if self.horizon_rounds == 0 || (self.h_s as f64 * self.t_s - span).abs() > 1e-9 {
            return fail("h_s * T_s must equal H * T");
        }
        if (self.h_c as f64 * self.t_c - span).abs() > 1e-9 {
            return fail("h_c * T_c must equal H * T");
        }
        if self.h_b == 0 || self.h_c == 0 || self.h_o == 0 {
            return fail("horizons must be positive");
        }
        if !(self.d_hat_min > 0.0) {
            return fail("d_hat_min must be positive");
        }
        if self.theta.iter().any(|t| !(*t > 0.0)) {
            return fail("theta entries must be positive");
        }
        if self.state_weight.iter().any(|w| !(*w >= 0.0)) || !(self.input_weight > 0.0) {
            return fail("Q must be nonnegative and R positive");
        }
        if self.jerk_max.iter().any(|j| !(*j >= 0.0)) {
            return fail("jerk bounds must be nonnegative");
        }
        let b = &self.state_box;
        if (0..3).any(|a| {
            !(b.position_min[a] <= b.position_max[a])
                || !(b.velocity_max[a] >= 0.0)
                || !(b.acceleration_max[a] >= 0.0)
        }) {
            return fail("state box is empty");
        }
        if !(self.soft_weight_base >= 0.0 && self.soft_weight_right >= 0.0 && self.soft_max >= 0.0)
        {
            return fail("soft constraint parameters must be nonnegative");
        }
        if !(self.solver_tol > 0.0) || self.max_iter == 0 {
            return fail("solver tolerance and iteration cap must be positive");
        }
        Ok(())
    }

    pub fn steps_per_round(&self) -> usize {
        integer_ratio(self.round_period, self.t_s).unwrap_or(1)
    }

    /// Hover trajectory at `position` for the round before `start_round + 1`.
    pub fn hover(&self, position: Vec3, start_round: Round) -> ReferenceTrajectory {
        ReferenceTrajectory::hover(
            position,
            start_round,
            self.h_s,
            self.t_s,
            self.steps_per_round(),
        )
    }

    pub fn theta_inv(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&self.theta.map(|t| 1.0 / t))
    }

    /// `‖Θ⁻¹ (b − a)‖`.
    pub fn scaled_distance(&self, a: &Vec3, b: &Vec3) -> f64 {
        (self.theta_inv() * (b - a)).norm()
    }
}

/// One separating-plane constraint on UAV `i`'s planned position at local
/// time `time_index · T_c` of the new plan:
/// `normal' Θ⁻¹ (other_position − p) ≥ rhs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BvcHalfspace {
    pub normal: Vec3,
    pub rhs: f64,
    pub time_index: usize,
    pub other_uav: UavId,
    /// The other UAV is not replanned this round, so the full buffer applies.
    pub relaxed: bool,
    /// Reference position of the other UAV's candidate.
    pub other_position: Vec3,
    /// `‖n‖`, the scaled separation of the two reference positions.
    pub separation: f64,
}

impl BvcHalfspace {
    /// Row `g` and bound `c` such that the constraint reads `g' p ≤ c`.
    pub fn as_row(&self, theta_inv: &Matrix3<f64>) -> (Vec3, f64) {
        let g = theta_inv * self.normal;
        (g, g.dot(&self.other_position) - self.rhs)
    }

    /// Constraint slack at planned position `p` (negative when violated).
    pub fn margin(&self, theta_inv: &Matrix3<f64>, p: &Vec3) -> f64 {
        self.normal.dot(&(theta_inv * (self.other_position - p))) - self.rhs
    }
}

/// Separating planes between UAV `uav` (following `own`) and every candidate of
/// `other_uav`. Both are sampled at absolute time `(k + 1) T + h T_c` for
/// `h = 1..h_c`, where `k = own.start_round + 1` is the planning round.
pub fn build_bvc(
    uav: UavId,
    own: &ReferenceTrajectory,
    other_uav: UavId,
    other_candidates: &[ReferenceTrajectory],
    other_in_aet: bool,
    config: &OptimizationConfig,
) -> Result<Vec<BvcHalfspace>> {
    if other_candidates.is_empty() {
        return Err(Error::Precondition(format!(
            "UAV {other_uav} has no trajectory candidates"
        )));
    }
    let theta_inv = config.theta_inv();
    let t0 = (own.start_round + 2) as f64 * config.round_period;
    let mut out = Vec::with_capacity(other_candidates.len() * config.h_c);
    for cand in other_candidates {
        for h in 1..=config.h_c {
            let t = t0 + h as f64 * config.t_c;
            let p_own = own.position_at(t);
            let p_other = cand.position_at(t);
            let n = theta_inv * (p_other - p_own);
            let norm = n.norm();
            if norm < 1e-9 {
                return Err(Error::DegenerateNormal {
                    uav,
                    other: other_uav,
                });
            }
            let rhs = if other_in_aet {
                0.5 * (config.d_hat_min + norm)
            } else {
                config.d_hat_min
            };
            out.push(BvcHalfspace {
                normal: n / norm,
                rhs,
                time_index: h,
                other_uav,
                relaxed: !other_in_aet,
                other_position: p_other,
                separation: norm,
            });
        }
    }
    Ok(out)
}

/// Coefficients of jerk step `kappa` in acceleration, velocity and position
/// at local time `tau`.
fn jerk_influence(tau: f64, kappa: usize, ts: f64) -> [f64; 3] {
    let start = kappa as f64 * ts;
    let s = (tau - start).clamp(0.0, ts);
    let after = (tau - start - s).max(0.0);
    [
        s,
        s * s / 2.0 + s * after,
        s * s * s / 6.0 + s * s / 2.0 * after + s * after * after / 2.0,
    ]
}

/// Affine map from the jerk schedule to the state at local time `tau`:
/// `x(tau) = drift + Σ_κ coeff[κ] u_κ` per axis.
struct Affine {
    drift: NominalState,
    /// `[acc, vel, pos]` per step.
    coeff: Vec<[f64; 3]>,
}

impl Affine {
    fn at(x0: &NominalState, tau: f64, steps: usize, ts: f64) -> Self {
        let tau = snap(tau, ts);
        Self {
            drift: x0.propagate(&Vec3::zeros(), tau),
            coeff: (0..steps).map(|k| jerk_influence(tau, k, ts)).collect(),
        }
    }
}

fn snap(tau: f64, ts: f64) -> f64 {
    let r = (tau / ts).round() * ts;
    if (tau - r).abs() <= 1e-9 * ts {
        r
    } else {
        tau
    }
}

const POS: usize = 2;
const VEL: usize = 1;
const ACC: usize = 0;

/// The condensed program for one UAV in one round, with what is needed to
/// turn a solution back into a trajectory.
#[derive(Clone, Debug)]
pub struct PlanningProblem {
    pub uav: UavId,
    pub round: Round,
    pub qp: QuadraticProgram,
    pub initial_state: NominalState,
    pub target: NominalState,
    pub halfspaces: Vec<BvcHalfspace>,
    /// Index of the soft variable for each halfspace (soft variant only).
    pub slack_index: Vec<Option<usize>>,
    steps: usize,
    sampling_time: f64,
    steps_per_round: usize,
}

impl PlanningProblem {
    pub fn n_jerk_vars(&self) -> usize {
        3 * self.steps
    }

    /// Trajectory starting at round `self.round` from the jerk part of `x`.
    pub fn trajectory_from(&self, x: &DVector<f64>, metadata: TrajectoryMetadata) -> ReferenceTrajectory {
        let jerks = (0..self.steps)
            .map(|k| Vec3::new(x[3 * k], x[3 * k + 1], x[3 * k + 2]))
            .collect();
        ReferenceTrajectory {
            start_round: self.round,
            initial_state: self.initial_state,
            inputs: InputSequence {
                jerks,
                sampling_time: self.sampling_time,
            },
            steps_per_round: self.steps_per_round,
            metadata,
        }
    }

    /// Values of the soft variables in `x`.
    pub fn slacks<'a>(&'a self, x: &'a DVector<f64>) -> impl Iterator<Item = f64> + 'a {
        (self.n_jerk_vars()..x.len()).map(move |i| x[i])
    }
}

/// Build the condensed QP for `uav` in round `k = bank.round()`.
///
/// Decision vector: jerks `u_κ` (x, y, z interleaved) for `κ < h_s`, then one
/// soft variable per neighbour when `soft_weights` is given (indexed by UAV id).
pub fn build_problem(
    uav: UavId,
    bank: &TrackerBank,
    aet: &[UavId],
    target: &NominalState,
    config: &OptimizationConfig,
    soft_weights: Option<&[f64]>,
) -> Result<PlanningProblem> {
    let own_tracker = bank.tracker(uav);
    if !own_tracker.is_singleton() {
        return Err(Error::Precondition(format!(
            "UAV {uav} tracker holds {} candidates",
            own_tracker.candidates().len()
        )));
    }
    if bank.any_deprecated() {
        return Err(Error::Precondition("planning on a deprecated bank".into()));
    }
    if let Some(w) = soft_weights {
        if w.len() != bank.len() {
            return Err(Error::Precondition("one soft weight per UAV required".into()));
        }
    }
    let own = own_tracker.first();
    let k = bank.round();
    let ts = config.t_s;
    let steps = config.h_s;
    let spr = config.steps_per_round();
    let x0 = own.sample(config.round_period);

    let mut halfspaces = Vec::new();
    let mut neighbours = Vec::new();
    for j in (0..bank.len()).filter(|&j| j != uav) {
        let in_aet = aet.contains(&j);
        let hs = build_bvc(uav, own, j, bank.tracker(j).candidates(), in_aet, config)?;
        neighbours.push(j);
        halfspaces.extend(hs);
    }

    let n_soft = if soft_weights.is_some() {
        neighbours.len()
    } else {
        0
    };
    let nu = 3 * steps;
    let n = nu + n_soft;
    let mut p = DMatrix::<f64>::zeros(n, n);
    let mut q = DVector::<f64>::zeros(n);

    // tracking cost
    let weights = config.state_weight;
    for kappa in 1..=config.h_o {
        let tau = kappa as f64 * config.t_o;
        let aff = Affine::at(&x0, tau, steps, ts);
        let drift = [
            aff.drift.acceleration - target.acceleration,
            aff.drift.velocity - target.velocity,
            aff.drift.position - target.position,
        ];
        let w = [weights[2], weights[1], weights[0]];
        for order in 0..3 {
            if w[order] == 0.0 {
                continue;
            }
            for a in 0..3 {
                for (k1, c1) in aff.coeff.iter().enumerate() {
                    if c1[order] == 0.0 {
                        continue;
                    }
                    q[3 * k1 + a] += 2.0 * w[order] * drift[order][a] * c1[order];
                    for (k2, c2) in aff.coeff.iter().enumerate() {
                        p[(3 * k1 + a, 3 * k2 + a)] += 2.0 * w[order] * c1[order] * c2[order];
                    }
                }
            }
        }
    }
    // input cost on the jerk applied at each cost time
    for kappa in 0..=config.h_o {
        let step = ((kappa as f64 * config.t_o) / ts + 1e-9).floor() as usize;
        if step < steps {
            for a in 0..3 {
                p[(3 * step + a, 3 * step + a)] += 2.0 * config.input_weight;
            }
        }
    }
    // soft variables: w (ε_max − ε)²
    if let Some(w) = soft_weights {
        for (s, &j) in neighbours.iter().enumerate() {
            p[(nu + s, nu + s)] += 2.0 * w[j];
            q[nu + s] -= 2.0 * w[j] * config.soft_max;
        }
    }

    // bounds
    let mut lower = DVector::zeros(n);
    let mut upper = DVector::zeros(n);
    for k in 0..steps {
        for a in 0..3 {
            lower[3 * k + a] = -config.jerk_max[a];
            upper[3 * k + a] = config.jerk_max[a];
        }
    }
    for s in 0..n_soft {
        lower[nu + s] = 0.0;
        upper[nu + s] = config.soft_max;
    }

    // terminal rest
    let terminal = Affine::at(&x0, steps as f64 * ts, steps, ts);
    let mut eq = DMatrix::zeros(6, n);
    let mut eq_rhs = DVector::zeros(6);
    for a in 0..3 {
        for (order, row, drift) in [
            (VEL, a, terminal.drift.velocity[a]),
            (ACC, 3 + a, terminal.drift.acceleration[a]),
        ] {
            for (k, c) in terminal.coeff.iter().enumerate() {
                eq[(row, 3 * k + a)] = c[order];
            }
            eq_rhs[row] = -drift;
        }
    }

    // inequalities: state box, then separating planes
    let sb = &config.state_box;
    let n_rows = config.h_b * 18 + halfspaces.len();
    let mut ineq = DMatrix::zeros(n_rows, n);
    let mut ineq_rhs = DVector::zeros(n_rows);
    let mut row = 0;
    for kappa in 1..=config.h_b {
        let aff = Affine::at(&x0, kappa as f64 * config.t_b, steps, ts);
        for a in 0..3 {
            let limits = [
                (POS, aff.drift.position[a], sb.position_min[a], sb.position_max[a]),
                (VEL, aff.drift.velocity[a], -sb.velocity_max[a], sb.velocity_max[a]),
                (ACC, aff.drift.acceleration[a], -sb.acceleration_max[a], sb.acceleration_max[a]),
            ];
            for (order, drift, lo, hi) in limits {
                for (k, c) in aff.coeff.iter().enumerate() {
                    ineq[(row, 3 * k + a)] = c[order];
                    ineq[(row + 1, 3 * k + a)] = -c[order];
                }
                ineq_rhs[row] = hi - drift;
                ineq_rhs[row + 1] = drift - lo;
                row += 2;
            }
        }
    }
    let theta_inv = config.theta_inv();
    let mut slack_index = Vec::with_capacity(halfspaces.len());
    for hs in &halfspaces {
        let aff = Affine::at(&x0, hs.time_index as f64 * config.t_c, steps, ts);
        let (g, c) = hs.as_row(&theta_inv);
        for (k, coeff) in aff.coeff.iter().enumerate() {
            for a in 0..3 {
                ineq[(row, 3 * k + a)] = g[a] * coeff[POS];
            }
        }
        ineq_rhs[row] = c - g.dot(&aff.drift.position);
        let slot = (n_soft > 0).then(|| {
            nu + neighbours
                .iter()
                .position(|&j| j == hs.other_uav)
                .expect("halfspace neighbour is listed")
        });
        if let Some(s) = slot {
            ineq[(row, s)] = 1.0;
        }
        slack_index.push(slot);
        row += 1;
    }

    let qp = QuadraticProgram::new(p, q)
        .with_equalities(eq, eq_rhs)
        .with_inequalities(ineq, ineq_rhs)
        .with_bounds(lower, upper);
    Ok(PlanningProblem {
        uav,
        round: k,
        qp,
        initial_state: x0,
        target: *target,
        halfspaces,
        slack_index,
        steps,
        sampling_time: ts,
        steps_per_round: spr,
    })
}

/// Whether `traj` satisfies the hard constraints of `problem` within `tol`:
/// initial condition, jerk box, state box, terminal rest and every
/// separating plane with zero slack. Evaluated by sampling the trajectory,
/// independently of the condensed matrices.
pub fn verify_candidate(
    traj: &ReferenceTrajectory,
    problem: &PlanningProblem,
    config: &OptimizationConfig,
    tol: f64,
) -> bool {
    if traj.start_round != problem.round || traj.inputs.len() != config.h_s {
        return false;
    }
    let x0 = &problem.initial_state;
    let s0 = &traj.initial_state;
    if (s0.position - x0.position).amax() > tol
        || (s0.velocity - x0.velocity).amax() > tol
        || (s0.acceleration - x0.acceleration).amax() > tol
    {
        return false;
    }
    let jerk_ok = traj
        .inputs
        .jerks
        .iter()
        .all(|u| (0..3).all(|a| u[a].abs() <= config.jerk_max[a] + tol));
    if !jerk_ok {
        return false;
    }
    let box_ok = (1..=config.h_b)
        .all(|k| config.state_box.contains(&traj.sample(k as f64 * config.t_b), tol));
    if !box_ok {
        return false;
    }
    if !terminal_rest_within(&traj.terminal_state(), tol) {
        return false;
    }
    let theta_inv = config.theta_inv();
    problem.halfspaces.iter().all(|hs| {
        let p = traj.sample(hs.time_index as f64 * config.t_c).position;
        hs.margin(&theta_inv, &p) >= -tol
    })
}

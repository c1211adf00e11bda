//! Compute-unit state machine: tracker update, trigger, planning and the
//! message-loss recovery states.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::deadlock::{self, DeadlockConfig, PlannerTable};
use crate::qp::{self, OptimizationConfig, SolveStatus, SolverSettings};
use crate::tracker::{TrackerBank, TrackerInputs, UpdateOutcome};
use crate::trigger::{self, PriorityInputs, PriorityVector, Selection, TriggerKind};
use crate::uav_agent::{TrajectoryReply, UavMessage};
use crate::{
    CuId, Error, NominalState, ReferenceTrajectory, Result, Round, TrajectoryMetadata, UavId, Vec3,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CuState {
    RunDmpc,
    Wait,
    RequestTrajectory,
    WaitForUpdate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CuPayload {
    Trajectory {
        uav: UavId,
        trajectory: ReferenceTrajectory,
    },
    Request {
        uav: UavId,
        requesting_cu: CuId,
    },
    Empty,
}

/// Intermediate-target announcement for one UAV owned by the sending CU.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerEntry {
    pub uav: UavId,
    pub target: Option<Vec3>,
    pub since: Round,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CuMessage {
    pub sender: CuId,
    pub payload: CuPayload,
    pub priorities: PriorityVector,
    /// Planner state for the UAVs this CU owns (empty when the planner is off).
    pub planner: Vec<PlannerEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CuConfig {
    pub n_uavs: usize,
    pub n_cus: usize,
    pub trigger: TriggerKind,
    pub optimization: OptimizationConfig,
    pub deadlock: DeadlockConfig,
    pub soft_constraints: bool,
    pub planner: bool,
    /// Ablation: ignore deprecation and always plan.
    pub disable_mlr: bool,
    pub seed: u64,
}

impl Default for CuConfig {
    fn default() -> Self {
        Self {
            n_uavs: 1,
            n_cus: 1,
            trigger: TriggerKind::Ht,
            optimization: OptimizationConfig::default(),
            deadlock: DeadlockConfig::default(),
            soft_constraints: true,
            planner: true,
            disable_mlr: false,
            seed: 0,
        }
    }
}

/// What a CU heard in the previous communication phase.
#[derive(Clone, Debug, Default)]
pub struct CuInbox<'a> {
    pub uav_messages: Vec<&'a UavMessage>,
    pub cu_messages: Vec<&'a CuMessage>,
    pub replies: Vec<&'a TrajectoryReply>,
}

impl CuInbox<'_> {
    /// CU slots from which anything arrived.
    pub fn cu_slots(&self) -> usize {
        let mut slots: Vec<CuId> = self
            .cu_messages
            .iter()
            .map(|m| m.sender)
            .chain(self.replies.iter().map(|r| r.requesting_cu))
            .collect();
        slots.sort_unstable();
        slots.dedup();
        slots.len()
    }
}

/// A planning attempt in one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComputeRecord {
    pub uav: UavId,
    pub status: SolveStatus,
    /// The solver failed and the verified shifted candidate was sent instead.
    pub fallback: bool,
    /// Whether the shifted candidate satisfies this round's constraints.
    pub shifted_verified: bool,
    pub aet: Vec<UavId>,
    pub target: Vec3,
    pub max_slack: f64,
    pub trajectory: ReferenceTrajectory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CuReport {
    pub cu: CuId,
    pub round: Round,
    pub state: CuState,
    pub update: Option<UpdateOutcome>,
    pub selection: Option<Selection>,
    pub compute: Option<ComputeRecord>,
    pub deadlock: bool,
    pub planner_changes: Vec<PlannerEntry>,
}

/// Tolerance used when accepting a solver output or the fallback candidate.
pub const VERIFY_TOL: f64 = 5e-10;

pub struct CuAgent {
    pub id: CuId,
    config: CuConfig,
    bank: TrackerBank,
    state: CuState,
    targets: Vec<Vec3>,
    last_calc: Vec<Round>,
    planner: PlannerTable,
    /// Consecutive planning rounds in which the swarm looked stalled.
    stalled_rounds: i64,
    rng: ChaCha8Rng,
}

impl CuAgent {
    /// A CU that knows the initial trajectory and target of every UAV.
    pub fn new(
        id: CuId,
        config: CuConfig,
        initial: Vec<ReferenceTrajectory>,
        targets: Vec<Vec3>,
    ) -> Result<Self> {
        config.optimization.validate()?;
        if initial.len() != config.n_uavs || targets.len() != config.n_uavs {
            return Err(Error::Config("one initial trajectory and target per UAV".into()));
        }
        if config.n_cus == 0 || config.n_cus > config.n_uavs || id >= config.n_cus {
            return Err(Error::Config(format!(
                "CU {id} invalid for {} CUs and {} UAVs",
                config.n_cus, config.n_uavs
            )));
        }
        let n = config.n_uavs;
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ (0x6375_0000 + id as u64));
        Ok(Self {
            id,
            bank: TrackerBank::from_known(0, initial),
            state: CuState::RunDmpc,
            targets,
            last_calc: vec![-1; n],
            planner: PlannerTable::new(n),
            stalled_rounds: 0,
            rng,
            config,
        })
    }

    pub fn bank(&self) -> &TrackerBank {
        &self.bank
    }

    /// The bank planning actually uses (flags cleared in the ablation).
    pub fn effective_bank(&self) -> TrackerBank {
        if self.config.disable_mlr {
            self.bank.assume_up_to_date()
        } else {
            self.bank.clone()
        }
    }

    pub fn state(&self) -> CuState {
        self.state
    }

    pub fn config(&self) -> &CuConfig {
        &self.config
    }

    pub fn planner_table(&self) -> &PlannerTable {
        &self.planner
    }

    fn owns(&self, uav: UavId) -> bool {
        uav % self.config.n_cus == self.id
    }

    /// One round: consume what arrived last round and produce this round's
    /// message (`None` when silent).
    pub fn step(&mut self, round: Round, inbox: &CuInbox<'_>) -> Result<(Option<CuMessage>, CuReport)> {
        let mut report = CuReport {
            cu: self.id,
            round,
            state: self.state,
            update: None,
            selection: None,
            compute: None,
            deadlock: false,
            planner_changes: Vec::new(),
        };

        let previous = self.state;
        if round > 0 {
            self.absorb(inbox);
            let tracker_inputs = TrackerInputs {
                uav_reports: inbox.uav_messages.iter().map(|m| (m.sender, m.metadata)).collect(),
                replies: inbox.replies.iter().map(|r| (r.uav, &r.trajectory)).collect(),
                new_trajectories: inbox
                    .cu_messages
                    .iter()
                    .filter_map(|m| match &m.payload {
                        CuPayload::Trajectory { uav, trajectory } => Some((*uav, trajectory)),
                        _ => None,
                    })
                    .collect(),
                cu_slots_received: inbox.cu_slots(),
            };
            report.update = Some(self.bank.update(&tracker_inputs, self.config.n_cus)?);
        }

        let up_to_date = self.bank.all_up_to_date();
        self.state = if self.config.disable_mlr {
            CuState::RunDmpc
        } else {
            match previous {
                // the slot is lent to the requested UAV this round
                CuState::RequestTrajectory => CuState::WaitForUpdate,
                _ if up_to_date => CuState::RunDmpc,
                CuState::RunDmpc => CuState::Wait,
                _ => CuState::RequestTrajectory,
            }
        };
        report.state = self.state;

        let message = match self.state {
            CuState::RunDmpc => Some(self.run_dmpc(round, inbox, &mut report)?),
            CuState::Wait => Some(self.message(round, CuPayload::Empty, &[], &[])),
            CuState::RequestTrajectory => {
                let uav = self
                    .bank
                    .first_deprecated()
                    .expect("request state implies a deprecated tracker");
                Some(self.message(
                    round,
                    CuPayload::Request {
                        uav,
                        requesting_cu: self.id,
                    },
                    &[],
                    &[],
                ))
            }
            CuState::WaitForUpdate => None,
        };
        Ok((message, report))
    }

    /// Bookkeeping from received messages that does not touch the trackers.
    fn absorb(&mut self, inbox: &CuInbox<'_>) {
        for m in &inbox.uav_messages {
            self.targets[m.sender] = m.target;
        }
        for m in &inbox.cu_messages {
            if let CuPayload::Trajectory { uav, trajectory } = &m.payload {
                self.last_calc[*uav] = self.last_calc[*uav].max(trajectory.metadata.calc_round);
            }
            for e in &m.planner {
                if !self.owns(e.uav) {
                    self.planner.apply(e.uav, e.target, e.since);
                }
            }
        }
    }

    fn run_dmpc(
        &mut self,
        round: Round,
        inbox: &CuInbox<'_>,
        report: &mut CuReport,
    ) -> Result<CuMessage> {
        let bank = self.effective_bank();
        let states = deadlock::reference_states(&bank);
        if deadlock::detect_states(&states, &self.targets, &self.config.deadlock) {
            self.stalled_rounds += 1;
        } else {
            self.stalled_rounds = 0;
        }
        let cfg = &self.config;
        let deadlocked_now = self.stalled_rounds >= cfg.deadlock.persistence_rounds;
        report.deadlock = deadlocked_now;

        let consensus = if round == 0 {
            Some(self.initial_priorities(&bank))
        } else {
            let received: Vec<&PriorityVector> =
                inbox.cu_messages.iter().map(|m| &m.priorities).collect();
            if received.is_empty() {
                None
            } else {
                Some(trigger::consensus(&received)?)
            }
        };

        let mut computed = Vec::new();
        let mut payload = CuPayload::Empty;
        if let Some(j) = consensus {
            let sel = trigger::select(&j, cfg.n_cus, round, self.id)?;
            let uav = sel.own_uav;
            if j.get(uav) > 0 && bank.tracker(uav).is_singleton() {
                let record = self.plan(round, &bank, &states, &sel)?;
                self.last_calc[uav] = round;
                computed.push(uav);
                payload = CuPayload::Trajectory {
                    uav,
                    trajectory: record.trajectory.clone(),
                };
                report.compute = Some(record);
            }
            report.selection = Some(sel);
        }

        let changes = if self.config.planner {
            self.update_planner(round, &states, deadlocked_now)
        } else {
            Vec::new()
        };
        report.planner_changes = changes;

        let deadlocked: Vec<UavId> = if deadlocked_now {
            (0..self.config.n_uavs)
                .filter(|&i| {
                    (states[i].position - self.targets[i]).norm() > self.config.deadlock.target_tolerance
                        && self.planner.get(i).is_none()
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(self.message(round, payload, &computed, &deadlocked))
    }

    fn initial_priorities(&self, bank: &TrackerBank) -> PriorityVector {
        trigger::compute_priorities_unchecked(
            self.config.trigger,
            bank,
            0,
            &PriorityInputs {
                targets: &self.targets,
                last_calc: &self.last_calc,
                just_recomputed: &[],
                deadlocked: &[],
            },
        )
    }

    fn plan(
        &self,
        round: Round,
        bank: &TrackerBank,
        states: &[NominalState],
        sel: &Selection,
    ) -> Result<ComputeRecord> {
        let cfg = &self.config;
        let opt = &cfg.optimization;
        let uav = sel.own_uav;
        let target_pos = self.planner.effective_target(uav, &self.targets[uav]);
        let target = NominalState::hover(target_pos);
        let weights: Option<Vec<f64>> = cfg.soft_constraints.then(|| {
            (0..cfg.n_uavs)
                .map(|j| {
                    deadlock::right_side_weight(
                        uav,
                        j,
                        states,
                        opt.soft_weight_base,
                        opt.soft_weight_right,
                        1e-3,
                    )
                })
                .collect()
        });
        let problem = qp::build_problem(uav, bank, &sel.aet, &target, opt, weights.as_deref())?;
        let sol = qp::solve_with(
            &problem.qp,
            &SolverSettings {
                tol: opt.solver_tol,
                max_iter: opt.max_iter,
            },
        );
        let metadata = TrajectoryMetadata::computed_by(round, self.id);
        let shifted = {
            let mut s = bank.tracker(uav).first().shift();
            s.metadata = metadata;
            s
        };
        let shifted_verified = qp::verify_candidate(&shifted, &problem, opt, VERIFY_TOL);

        let solved = (sol.status == SolveStatus::Optimal)
            .then(|| problem.trajectory_from(&sol.x, metadata))
            .filter(|t| qp::verify_candidate(t, &problem, opt, VERIFY_TOL));
        let max_slack = if solved.is_some() {
            problem.slacks(&sol.x).fold(0.0, f64::max)
        } else {
            0.0
        };
        let (trajectory, fallback) = match solved {
            Some(t) => (t, false),
            None if shifted_verified => (shifted, true),
            None => {
                return Err(Error::Infeasible {
                    round,
                    cu: self.id,
                    uav,
                    status: sol.status.to_string(),
                })
            }
        };
        Ok(ComputeRecord {
            uav,
            status: sol.status,
            fallback,
            shifted_verified,
            aet: sel.aet.clone(),
            target: target_pos,
            max_slack,
            trajectory,
        })
    }

    /// Re-evaluate intermediate targets of the UAVs this CU owns.
    fn update_planner(
        &mut self,
        round: Round,
        states: &[NominalState],
        deadlocked: bool,
    ) -> Vec<PlannerEntry> {
        let cfg = &self.config;
        let dl = &cfg.deadlock;
        let mut changes = Vec::new();
        for i in (0..cfg.n_uavs).filter(|&i| i % cfg.n_cus == self.id) {
            match (self.planner.get(i), self.planner.since(i)) {
                (Some(goal), Some(since)) => {
                    let reached = (states[i].position - goal).norm() <= dl.target_tolerance;
                    if reached || round - since > dl.max_hold_rounds {
                        self.planner.set(i, None, round);
                        changes.push(PlannerEntry {
                            uav: i,
                            target: None,
                            since: round,
                        });
                    }
                }
                _ if deadlocked => {
                    if let Some(it) = deadlock::make_room(
                        i,
                        states,
                        &self.targets,
                        cfg.optimization.d_hat_min,
                        &cfg.optimization.state_box,
                        dl,
                        &mut self.rng,
                    ) {
                        self.planner.set(i, Some(it.position), round);
                        changes.push(PlannerEntry {
                            uav: i,
                            target: Some(it.position),
                            since: round,
                        });
                    }
                }
                _ => {}
            }
        }
        changes
    }

    fn message(
        &self,
        round: Round,
        payload: CuPayload,
        just_recomputed: &[UavId],
        deadlocked: &[UavId],
    ) -> CuMessage {
        let bank = self.effective_bank();
        let priorities = trigger::compute_priorities_unchecked(
            self.config.trigger,
            &bank,
            round,
            &PriorityInputs {
                targets: &self.targets,
                last_calc: &self.last_calc,
                just_recomputed,
                deadlocked,
            },
        );
        let planner = if self.config.planner {
            (0..self.config.n_uavs)
                .filter(|&i| self.owns(i))
                .map(|i| PlannerEntry {
                    uav: i,
                    target: self.planner.get(i),
                    since: self.planner.since(i).unwrap_or(round),
                })
                .collect()
        } else {
            Vec::new()
        };
        CuMessage {
            sender: self.id,
            payload,
            priorities,
            planner,
        }
    }
}

//! Round loop: UAVs adopt trajectories, CUs compute, everybody transmits,
//! the network delivers. The omniscient oracle data goes into the trace.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::cu_agent::{CuAgent, CuConfig, CuInbox, CuMessage, CuReport, CuState};
use crate::harness::scenario::Scenario;
use crate::harness::trace::{
    CuRecord, Event, EventKind, Fatal, PlanRecord, RegisteredTrajectory, RoundRecord, Trace, UavRecord,
};
use crate::netsim::{Envelope, LossModel, Network, Payload, RoundSchedule};
use crate::tracker::TrackerBank;
use crate::uav_agent::{TrackingModel, TrajectoryReply, UavAgent, UavMessage};
use crate::{Error, ReferenceTrajectory, Result, Round, TrajectoryMetadata, UavId, Vec3};

/// Sub-steps per `T_c` interval for the physical-distance check.
pub const FINE_GRID: usize = 10;

/// What one node decoded from the previous communication phase.
#[derive(Default)]
struct Received {
    uav: Vec<UavMessage>,
    cu: Vec<CuMessage>,
    replies: Vec<TrajectoryReply>,
}

impl Received {
    fn decode(envelopes: &[Envelope]) -> Result<Self> {
        let mut out = Self::default();
        for env in envelopes {
            match Payload::decode(&env.payload)? {
                Payload::Uav(m) => out.uav.push(m),
                Payload::Cu(m) => out.cu.push(m),
                Payload::Reply(r) => out.replies.push(r),
            }
        }
        Ok(out)
    }

    fn inbox(&self) -> CuInbox<'_> {
        CuInbox {
            uav_messages: self.uav.iter().collect(),
            cu_messages: self.cu.iter().collect(),
            replies: self.replies.iter().collect(),
        }
    }
}

/// Run a scenario to completion. Configuration problems are errors; a
/// protocol failure during the run ends it early and is recorded in
/// [`Trace::fatal`].
pub fn run(scenario: &Scenario) -> Result<Trace> {
    scenario.validate()?;
    let s = scenario;
    let opt = &s.optimization;
    let n = s.n_uavs;
    let m = s.n_cus;
    let period = opt.round_period;
    let per_round = (period / opt.t_c).round() as usize;

    let initial: Vec<ReferenceTrajectory> = s.geometry.initial.iter().map(|p| opt.hover(*p, -1)).collect();
    let mut phase = 0;
    let mut targets = s.geometry.phases[0].clone();
    let mut uavs: Vec<UavAgent> = (0..n)
        .map(|i| UavAgent::new(i, initial[i].clone(), targets[i]))
        .collect();
    let cu_config = CuConfig {
        n_uavs: n,
        n_cus: m,
        trigger: s.trigger,
        optimization: opt.clone(),
        deadlock: s.deadlock.clone(),
        soft_constraints: s.soft_constraints,
        planner: s.planner,
        disable_mlr: s.disable_mlr,
        seed: s.seed,
    };
    let mut cus: Vec<CuAgent> = (0..m)
        .map(|w| CuAgent::new(w, cu_config.clone(), initial.clone(), targets.clone()))
        .collect::<Result<_>>()?;
    let schedule = RoundSchedule::new(n, m);
    let mut network = Network::new(
        schedule.clone(),
        LossModel {
            loss_prob: s.loss_prob,
            jams: s.jams.clone(),
            seed: s.seed,
        },
    )?;
    let tracking = TrackingModel::new(s.delta_d_min, n, s.seed);

    let mut trace = Trace {
        scenario: s.name.clone(),
        n_uavs: n,
        n_cus: m,
        seed: s.seed,
        round_period: period,
        t_c: opt.t_c,
        d_hat_min: opt.d_hat_min,
        theta: opt.theta,
        delta_d_min: s.delta_d_min,
        target_tolerance: s.deadlock.target_tolerance,
        n_phases: s.geometry.phases.len(),
        rounds: Vec::new(),
        registry: Vec::new(),
        fatal: None,
    };
    let mut registered: BTreeMap<(UavId, TrajectoryMetadata), ()> = BTreeMap::new();
    let mut received: Vec<Received> = (0..schedule.n_nodes()).map(|_| Received::default()).collect();
    let mut prev_states: Vec<CuState> = vec![CuState::RunDmpc; m];
    let mut prev_deadlock = vec![false; m];

    for k in 0..s.rounds {
        let mut events = Vec::new();

        for (i, uav) in uavs.iter_mut().enumerate() {
            let msgs: Vec<&CuMessage> = received[schedule.uav_slot(i)].cu.iter().collect();
            uav.on_round_start(k, &msgs);
            if registered.insert((i, uav.current.metadata), ()).is_none() {
                trace.registry.push(RegisteredTrajectory {
                    uav: i,
                    trajectory: uav.current.clone(),
                });
            }
        }

        let t0 = k as f64 * period;
        let settled = uavs.iter().zip(&targets).all(|(u, t)| {
            let st = u.current.sample_at(t0);
            (st.position - t).norm() <= s.deadlock.target_tolerance
                && st.velocity.norm() < s.deadlock.velocity_threshold
        });
        if settled && phase + 1 < s.geometry.phases.len() {
            phase += 1;
            targets = s.geometry.phases[phase].clone();
            for (u, t) in uavs.iter_mut().zip(&targets) {
                u.target = *t;
            }
            events.push(EventKind::PhaseAdvanced { phase });
        }

        let inboxes: Vec<CuInbox<'_>> = (0..m).map(|w| received[schedule.cu_node(w)].inbox()).collect();
        let step = |(cu, inbox): (&mut CuAgent, &CuInbox<'_>)| cu.step(k, inbox);
        let results: Vec<Result<(Option<CuMessage>, CuReport)>> = if s.parallel {
            cus.par_iter_mut().zip(inboxes.par_iter()).map(step).collect()
        } else {
            cus.iter_mut().zip(inboxes.iter()).map(step).collect()
        };
        drop(inboxes);

        let mut outputs = Vec::with_capacity(m);
        for r in results {
            match r {
                Ok(x) => outputs.push(x),
                Err(e) => {
                    let message = e.to_string();
                    trace.fatal = Some(Fatal {
                        round: k,
                        message: message.clone(),
                        banks: trace
                            .rounds
                            .last()
                            .map(|r| r.cus.iter().map(|c| c.bank.clone()).collect())
                            .unwrap_or_default(),
                    });
                    let mut record = empty_record(k, phase, &targets);
                    record.events.push(Event {
                        round: k,
                        kind: EventKind::Fatal { message },
                    });
                    trace.rounds.push(record);
                    return Ok(trace);
                }
            }
        }

        let mut cu_records = Vec::with_capacity(m);
        for (w, (_, report)) in outputs.iter().enumerate() {
            collect_events(w, report, prev_states[w], prev_deadlock[w], &mut events);
            prev_states[w] = report.state;
            prev_deadlock[w] = report.deadlock;
            cu_records.push(CuRecord {
                state: report.state,
                bank: cus[w].effective_bank().digest(),
                update: report.update,
                aet: report.selection.as_ref().map(|s| s.aet.clone()),
                plan: report.compute.as_ref().map(|c| PlanRecord {
                    uav: c.uav,
                    status: c.status,
                    fallback: c.fallback,
                    shifted_verified: c.shifted_verified,
                    metadata: c.trajectory.metadata,
                    max_slack: c.max_slack,
                }),
                deadlock: report.deadlock,
            });
        }
        let plan_violations = plan_oracle(&cus, &outputs, opt.d_hat_min, &opt.theta, opt.h_c, opt.t_c);

        let mut uav_records = Vec::with_capacity(n);
        for uav in &uavs {
            let grid = |f: &dyn Fn(f64) -> Vec3| -> Vec<Vec3> {
                (0..per_round).map(|h| f(t0 + h as f64 * opt.t_c)).collect()
            };
            uav_records.push(UavRecord {
                followed: uav.current.metadata,
                digest: uav.current.digest(),
                reference: grid(&|t| uav.reference_position(t)),
                actual: grid(&|t| tracking.actual_position(uav, t)),
                speed: uav.current.sample_at(t0).velocity.norm(),
            });
        }
        let min_actual_distance = (0..per_round * FINE_GRID)
            .map(|q| {
                let t = t0 + q as f64 * opt.t_c / FINE_GRID as f64;
                let pos: Vec<Vec3> = uavs.iter().map(|u| tracking.actual_position(u, t)).collect();
                min_pairwise(&pos, &opt.theta)
            })
            .fold(f64::INFINITY, f64::min);

        let mut tx = Vec::new();
        for (i, uav) in uavs.iter_mut().enumerate() {
            let measured = tracking.actual_position(uav, t0);
            let (msg, replies) = uav.emit(Some(measured));
            tx.push(Envelope {
                slot: schedule.uav_slot(i),
                sender: schedule.uav_slot(i),
                payload: Payload::Uav(msg).encode()?,
            });
            for r in replies {
                tx.push(Envelope {
                    slot: schedule.cu_slot(r.requesting_cu),
                    sender: schedule.uav_slot(i),
                    payload: Payload::Reply(r).encode()?,
                });
            }
        }
        for (w, (msg, _)) in outputs.into_iter().enumerate() {
            if let Some(msg) = msg {
                tx.push(Envelope {
                    slot: schedule.cu_slot(w),
                    sender: schedule.cu_node(w),
                    payload: Payload::Cu(msg).encode()?,
                });
            }
        }
        let (rx, net) = match network.run_round(k, tx) {
            Ok(x) => x,
            Err(e @ Error::SlotConflict { .. }) => {
                trace.fatal = Some(Fatal {
                    round: k,
                    message: e.to_string(),
                    banks: cu_records.iter().map(|c| c.bank.clone()).collect(),
                });
                return Ok(trace);
            }
            Err(e) => return Err(e),
        };
        received = rx.iter().map(|env| Received::decode(env)).collect::<Result<_>>()?;

        trace.rounds.push(RoundRecord {
            round: k,
            phase,
            targets: targets.clone(),
            uavs: uav_records,
            cus: cu_records,
            net,
            min_actual_distance,
            plan_violations,
            events: events.into_iter().map(|kind| Event { round: k, kind }).collect(),
        });
    }
    Ok(trace)
}

fn empty_record(round: Round, phase: usize, targets: &[Vec3]) -> RoundRecord {
    RoundRecord {
        round,
        phase,
        targets: targets.to_vec(),
        uavs: Vec::new(),
        cus: Vec::new(),
        net: Default::default(),
        min_actual_distance: f64::INFINITY,
        plan_violations: Vec::new(),
        events: Vec::new(),
    }
}

fn collect_events(w: usize, report: &CuReport, prev: CuState, prev_deadlock: bool, out: &mut Vec<EventKind>) {
    if let Some(u) = report.update {
        if u.deprecated_all() {
            out.push(EventKind::Deprecated {
                cu: w,
                ambiguous: u.ambiguous,
                missing_cu_messages: u.missing_cu_messages,
            });
        }
    }
    match (prev, report.state) {
        (CuState::RunDmpc, s) if s != CuState::RunDmpc => out.push(EventKind::MlrEntered { cu: w, state: s }),
        (p, CuState::RunDmpc) if p != CuState::RunDmpc => out.push(EventKind::MlrLeft { cu: w }),
        _ => {}
    }
    if let Some(c) = &report.compute {
        if c.fallback {
            out.push(EventKind::SolverFallback {
                cu: w,
                uav: c.uav,
                status: c.status,
            });
        }
    }
    if report.deadlock && !prev_deadlock {
        out.push(EventKind::DeadlockDetected { cu: w });
    }
    for e in &report.planner_changes {
        out.push(EventKind::IntermediateTarget {
            cu: w,
            uav: e.uav,
            target: e.target,
        });
    }
}

fn min_pairwise(pos: &[Vec3], theta: &Vec3) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in pos.iter().enumerate() {
        for b in &pos[i + 1..] {
            best = best.min((a - b).component_div(theta).norm());
        }
    }
    best
}

/// Every plan made this round must keep `d_hat_min` at the constraint
/// sample times from all candidates the planning CU held for the other
/// UAVs, and from the other plans of the same round.
fn plan_oracle(
    cus: &[CuAgent],
    outputs: &[(Option<CuMessage>, CuReport)],
    d_hat: f64,
    theta: &Vec3,
    h_c: usize,
    t_c: f64,
) -> Vec<String> {
    let plans: Vec<(usize, &ReferenceTrajectory, UavId)> = outputs
        .iter()
        .enumerate()
        .filter_map(|(w, (_, r))| r.compute.as_ref().map(|c| (w, &c.trajectory, c.uav)))
        .collect();
    let mut out = Vec::new();
    for &(w, traj, i) in &plans {
        let bank: TrackerBank = cus[w].effective_bank();
        let t0 = traj.origin_time();
        for j in (0..bank.len()).filter(|&j| j != i) {
            let others = bank
                .tracker(j)
                .candidates()
                .iter()
                .chain(plans.iter().filter(|p| p.2 == j).map(|p| p.1));
            for other in others {
                for h in 1..=h_c {
                    let t = t0 + h as f64 * t_c;
                    let d = (traj.position_at(t) - other.position_at(t)).component_div(theta).norm();
                    if d < d_hat - 1e-9 {
                        out.push(format!(
                            "CU {w} plan for UAV {i} comes within {d:.6} of UAV {j} candidate {} at t={t:.3}",
                            other.metadata
                        ));
                    }
                }
            }
        }
    }
    out
}

//! Round-based many-to-all broadcast with per-receiver loss and receive
//! jamming. Every node owns one slot per round: UAV slots `0..N` come
//! first, then CU slots `N..N+M`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cu_agent::CuMessage;
use crate::uav_agent::{TrajectoryReply, UavMessage};
use crate::{Error, Result, Round};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundSchedule {
    pub round_period: f64,
    pub t_calc: f64,
    pub t_com: f64,
    pub n_uavs: usize,
    pub n_cus: usize,
}

impl RoundSchedule {
    pub fn new(n_uavs: usize, n_cus: usize) -> Self {
        Self {
            round_period: 0.2,
            t_calc: 0.105,
            t_com: 0.095,
            n_uavs,
            n_cus,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if (self.t_calc + self.t_com - self.round_period).abs() > 1e-9 {
            return Err(Error::Config("T must equal T_calc + T_com".into()));
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.n_uavs + self.n_cus
    }

    pub fn uav_slot(&self, uav: usize) -> usize {
        uav
    }

    pub fn cu_slot(&self, cu: usize) -> usize {
        self.n_uavs + cu
    }

    /// Node index of a CU (UAVs are nodes `0..N`).
    pub fn cu_node(&self, cu: usize) -> usize {
        self.n_uavs + cu
    }
}

/// Receivers in `nodes` hear nothing from others in rounds `[start, end)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JamWindow {
    pub start: Round,
    pub end: Round,
    pub nodes: Vec<usize>,
}

impl JamWindow {
    pub fn jams(&self, round: Round, node: usize) -> bool {
        round >= self.start && round < self.end && self.nodes.contains(&node)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossModel {
    pub loss_prob: f64,
    pub jams: Vec<JamWindow>,
    pub seed: u64,
}

impl LossModel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err(Error::Config("loss probability must lie in [0, 1]".into()));
        }
        if self.jams.iter().any(|j| j.end < j.start) {
            return Err(Error::Config("jam window ends before it starts".into()));
        }
        Ok(())
    }

    pub fn jammed(&self, round: Round, node: usize) -> bool {
        self.jams.iter().any(|j| j.jams(round, node))
    }
}

/// Anything that can occupy a slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    Uav(UavMessage),
    Cu(CuMessage),
    Reply(TrajectoryReply),
}

impl Payload {
    pub fn encode(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub slot: usize,
    /// Node index of the sender.
    pub sender: usize,
    pub payload: Vec<u8>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundStats {
    pub sent: usize,
    pub delivered: usize,
    pub lost: usize,
    pub jammed: usize,
}

pub struct Network {
    schedule: RoundSchedule,
    loss: LossModel,
    rng: ChaCha8Rng,
}

impl Network {
    pub fn new(schedule: RoundSchedule, loss: LossModel) -> Result<Self> {
        loss.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(loss.seed);
        Ok(Self {
            schedule,
            loss,
            rng,
        })
    }

    pub fn schedule(&self) -> &RoundSchedule {
        &self.schedule
    }

    pub fn loss(&self) -> &LossModel {
        &self.loss
    }

    /// Deliver one round. Returns, per node, the envelopes it received in
    /// slot order. One loss draw is consumed per (slot, receiver) pair every
    /// round, whether or not the slot is occupied, so the pattern does not
    /// depend on traffic.
    pub fn run_round(
        &mut self,
        round: Round,
        tx: Vec<Envelope>,
    ) -> Result<(Vec<Vec<Envelope>>, RoundStats)> {
        let n_nodes = self.schedule.n_nodes();
        let mut slots: Vec<Option<Envelope>> = vec![None; n_nodes];
        for env in tx {
            if env.slot >= n_nodes || env.sender >= n_nodes {
                return Err(Error::Precondition(format!(
                    "envelope for slot {} from node {} outside the schedule",
                    env.slot, env.sender
                )));
            }
            let slot = env.slot;
            if slots[slot].replace(env).is_some() {
                return Err(Error::SlotConflict { round, slot });
            }
        }
        let jammed: Vec<bool> = (0..n_nodes).map(|r| self.loss.jammed(round, r)).collect();
        let mut rx = vec![Vec::new(); n_nodes];
        let mut stats = RoundStats::default();
        for slot in slots.iter() {
            for (r, inbox) in rx.iter_mut().enumerate() {
                let draw: f64 = self.rng.random();
                let Some(env) = slot else { continue };
                if r == env.sender {
                    inbox.push(env.clone());
                    continue;
                }
                stats.sent += 1;
                if jammed[r] {
                    stats.jammed += 1;
                } else if draw < self.loss.loss_prob {
                    stats.lost += 1;
                } else {
                    stats.delivered += 1;
                    inbox.push(env.clone());
                }
            }
        }
        Ok((rx, stats))
    }
}

/// Parse a node name: a bare index, `uN` for UAV `N`, or `cN` for CU `N`.
pub fn parse_node(s: &str, n_uavs: usize) -> Result<usize> {
    let s = s.trim();
    let bad = || Error::Config(format!("bad node '{s}'"));
    if let Some(rest) = s.strip_prefix('u') {
        rest.parse::<usize>().map_err(|_| bad())
    } else if let Some(rest) = s.strip_prefix('c') {
        rest.parse::<usize>().map(|c| n_uavs + c).map_err(|_| bad())
    } else {
        s.parse::<usize>().map_err(|_| bad())
    }
}

/// Parse `start:end:node,node,...`.
pub fn parse_jam(s: &str, n_uavs: usize) -> Result<JamWindow> {
    let parts: Vec<&str> = s.splitn(3, ':').collect();
    let bad = || Error::Config(format!("bad jam window '{s}', expected start:end:nodes"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let start = parts[0].trim().parse().map_err(|_| bad())?;
    let end = parts[1].trim().parse().map_err(|_| bad())?;
    let nodes = parts[2]
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| parse_node(p, n_uavs))
        .collect::<Result<Vec<_>>>()?;
    Ok(JamWindow { start, end, nodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{TrajectoryMetadata, Vec3};

    fn env(slot: usize) -> Envelope {
        Envelope {
            slot,
            sender: slot,
            payload: vec![slot as u8],
        }
    }

    fn all(n: usize) -> Vec<Envelope> {
        (0..n).map(env).collect()
    }

    fn net(p: f64, jams: Vec<JamWindow>) -> Network {
        Network::new(
            RoundSchedule::new(3, 2),
            LossModel {
                loss_prob: p,
                jams,
                seed: 11,
            },
        )
        .unwrap()
    }

    #[test]
    fn lossless_broadcast_reaches_everyone() {
        let mut n = net(0.0, vec![]);
        let (rx, stats) = n.run_round(0, all(5)).unwrap();
        assert!(rx.iter().all(|r| r.len() == 5));
        assert!(rx.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(stats.delivered, 20);
    }

    #[test]
    fn total_loss_keeps_own_envelope() {
        let mut n = net(1.0, vec![]);
        let (rx, _) = n.run_round(0, all(5)).unwrap();
        for (i, r) in rx.iter().enumerate() {
            assert_eq!(r.len(), 1);
            assert_eq!(r[0].sender, i);
        }
    }

    #[test]
    fn jammed_receiver_hears_nothing() {
        let jam = JamWindow {
            start: 10,
            end: 20,
            nodes: vec![4],
        };
        let mut n = net(0.0, vec![jam]);
        for k in 0..25 {
            let (rx, _) = n.run_round(k, all(5)).unwrap();
            let expect = if (10..20).contains(&k) { 1 } else { 5 };
            assert_eq!(rx[4].len(), expect, "round {k}");
            assert!(rx[..4].iter().all(|r| r.len() == 5));
        }
    }

    #[test]
    fn slot_conflict_is_an_error() {
        let mut n = net(0.0, vec![]);
        let mut tx = all(5);
        tx.push(Envelope {
            slot: 4,
            sender: 1,
            payload: vec![],
        });
        assert!(matches!(n.run_round(3, tx), Err(Error::SlotConflict { round: 3, slot: 4 })));
    }

    #[test]
    fn delivery_pattern_is_seeded_and_traffic_independent() {
        let pattern = |traffic: bool| {
            let mut n = net(0.3, vec![]);
            let mut out = Vec::new();
            for k in 0..20 {
                let tx = if traffic || k % 2 == 0 { all(5) } else { vec![] };
                let (rx, _) = n.run_round(k, tx).unwrap();
                if k % 2 == 0 {
                    out.push(rx);
                }
            }
            out
        };
        assert_eq!(pattern(true), pattern(true));
        assert_eq!(pattern(true), pattern(false));
    }

    #[test]
    fn loss_rate_is_roughly_p() {
        let mut n = net(0.3, vec![]);
        let mut lost = 0;
        let mut sent = 0;
        for k in 0..400 {
            let (_, s) = n.run_round(k, all(5)).unwrap();
            lost += s.lost;
            sent += s.sent;
        }
        let rate = lost as f64 / sent as f64;
        assert!((rate - 0.3).abs() < 0.03, "{rate}");
    }

    #[test]
    fn payload_round_trip() {
        let p = Payload::Uav(UavMessage {
            sender: 2,
            metadata: TrajectoryMetadata::computed_by(5, 1),
            target: Vec3::new(0.1, -1.0 / 3.0, 1.0e-17),
            measured_position: Some(Vec3::new(std::f64::consts::PI, 2.0, -0.0)),
        });
        let bytes = p.encode().unwrap();
        assert_eq!(Payload::decode(&bytes).unwrap(), p);
    }

    #[test]
    fn node_and_jam_parsing() {
        assert_eq!(parse_node("u3", 8).unwrap(), 3);
        assert_eq!(parse_node("c1", 8).unwrap(), 9);
        assert_eq!(parse_node("7", 8).unwrap(), 7);
        assert!(parse_node("x1", 8).is_err());
        let j = parse_jam("5:15:c0,c1,c2", 8).unwrap();
        assert_eq!(j, JamWindow { start: 5, end: 15, nodes: vec![8, 9, 10] });
        assert!(parse_jam("5:15", 8).is_err());
    }
}

//! Distributed event trigger: priorities, their 8-bit quantization, the
//! max consensus with zero override, and the selection of which UAVs are
//! replanned this round.

use serde::{Deserialize, Serialize};
use std::str::FromStr;

use crate::tracker::TrackerBank;
use crate::{CuId, Error, Result, Round, UavId, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriggerKind {
    /// Round robin: rounds since the last recalculation.
    Rr,
    /// Distance of the reference to the target.
    Dt,
    /// Product of both.
    Ht,
}

impl FromStr for TriggerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rr" => Ok(Self::Rr),
            "dt" => Ok(Self::Dt),
            "ht" => Ok(Self::Ht),
            other => Err(Error::Config(format!("unknown trigger '{other}'"))),
        }
    }
}

impl std::fmt::Display for TriggerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Rr => "rr",
            Self::Dt => "dt",
            Self::Ht => "ht",
        })
    }
}

/// Quantization steps per unit of distance (m) or distance × rounds.
pub const QUANT_SCALE: f64 = 10.0;

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PriorityVector(pub Vec<u8>);

impl PriorityVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, uav: UavId) -> u8 {
        self.0[uav]
    }
}

pub fn quantize_count(raw: i64) -> u8 {
    raw.clamp(0, 255) as u8
}

/// Scale, round and clamp a continuous priority; nonzero inputs never map to 0.
pub fn quantize_scaled(raw: f64) -> u8 {
    if !(raw > 0.0) {
        return 0;
    }
    (raw * QUANT_SCALE).round().clamp(1.0, 255.0) as u8
}

/// Inputs to [`compute_priorities`] beyond the tracker bank.
#[derive(Clone, Debug)]
pub struct PriorityInputs<'a> {
    pub targets: &'a [Vec3],
    /// Last round in which each UAV's trajectory was calculated.
    pub last_calc: &'a [Round],
    pub just_recomputed: &'a [UavId],
    pub deadlocked: &'a [UavId],
}

pub fn compute_priorities(
    kind: TriggerKind,
    bank: &TrackerBank,
    round: Round,
    inputs: &PriorityInputs<'_>,
) -> Result<PriorityVector> {
    if bank.any_deprecated() {
        return Err(Error::Precondition("priorities need an up-to-date bank".into()));
    }
    Ok(compute_priorities_unchecked(kind, bank, round, inputs))
}

/// Same as [`compute_priorities`] without the up-to-date requirement; the
/// first candidate of each tracker stands in for the UAV.
pub fn compute_priorities_unchecked(
    kind: TriggerKind,
    bank: &TrackerBank,
    round: Round,
    inputs: &PriorityInputs<'_>,
) -> PriorityVector {
    let mut out: Vec<u8> = (0..bank.len())
        .map(|i| {
            let rounds = round - inputs.last_calc[i];
            let first = bank.tracker(i).first();
            let dist = || {
                let p = first.sample(first.round_period()).position;
                (inputs.targets[i] - p).norm()
            };
            match kind {
                TriggerKind::Rr => quantize_count(rounds),
                TriggerKind::Dt => quantize_scaled(dist()),
                TriggerKind::Ht => quantize_scaled(dist() * rounds.max(0) as f64),
            }
        })
        .collect();
    for &i in inputs.deadlocked {
        out[i] = 1;
    }
    // a UAV with a fresh, still unconfirmed trajectory must never be selected
    for &i in inputs.just_recomputed {
        out[i] = 0;
    }
    PriorityVector(out)
}

/// Element-wise maximum, except that any zero contribution wins.
pub fn consensus(received: &[&PriorityVector]) -> Result<PriorityVector> {
    let first = received
        .first()
        .ok_or_else(|| Error::Precondition("consensus over no priority vectors".into()))?;
    let n = first.len();
    if received.iter().any(|v| v.len() != n) {
        return Err(Error::Precondition("priority vectors differ in length".into()));
    }
    Ok(PriorityVector(
        (0..n)
            .map(|i| {
                let vals = received.iter().map(|v| v.0[i]);
                if vals.clone().any(|x| x == 0) {
                    0
                } else {
                    vals.max().unwrap_or(0)
                }
            })
            .collect(),
    ))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub own_uav: UavId,
    /// The `M` highest priorities, ties broken by ascending id.
    pub aet: Vec<UavId>,
}

pub fn select(priorities: &PriorityVector, m: usize, round: Round, cu: CuId) -> Result<Selection> {
    let n = priorities.len();
    if m == 0 || n < m {
        return Err(Error::Precondition(format!("cannot select {m} of {n} UAVs")));
    }
    let mut order: Vec<UavId> = (0..n).collect();
    order.sort_by(|&a, &b| priorities.0[b].cmp(&priorities.0[a]).then(a.cmp(&b)));
    order.truncate(m);
    let slot = (round + cu as Round).rem_euclid(m as Round) as usize;
    Ok(Selection {
        own_uav: order[slot],
        aet: order,
    })
}

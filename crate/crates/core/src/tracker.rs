//! Information trackers: the candidate trajectories a CU considers possible
//! for every UAV, and the per-round update that deprecates them when a
//! critical message was lost.

use serde::{Deserialize, Serialize};

use crate::{Error, ReferenceTrajectory, Result, Round, TrajectoryMetadata, UavId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InformationTracker {
    /// Sorted by metadata (oldest calculation first), no duplicates.
    candidates: Vec<ReferenceTrajectory>,
    deprecated: bool,
}

impl InformationTracker {
    pub fn singleton(traj: ReferenceTrajectory) -> Self {
        Self {
            candidates: vec![traj],
            deprecated: false,
        }
    }

    pub fn candidates(&self) -> &[ReferenceTrajectory] {
        &self.candidates
    }

    /// The candidate used for priorities and deadlock checks.
    pub fn first(&self) -> &ReferenceTrajectory {
        &self.candidates[0]
    }

    pub fn is_singleton(&self) -> bool {
        self.candidates.len() == 1
    }

    pub fn is_deprecated(&self) -> bool {
        self.deprecated
    }

    pub fn is_up_to_date(&self) -> bool {
        !self.deprecated
    }

    pub fn contains(&self, metadata: &TrajectoryMetadata) -> bool {
        self.find(metadata).is_some()
    }

    pub fn find(&self, metadata: &TrajectoryMetadata) -> Option<&ReferenceTrajectory> {
        self.candidates.iter().find(|c| c.metadata == *metadata)
    }

    fn insert(&mut self, traj: ReferenceTrajectory) {
        match self
            .candidates
            .binary_search_by(|c| c.metadata.cmp(&traj.metadata))
        {
            Ok(_) => {}
            Err(pos) => self.candidates.insert(pos, traj),
        }
    }

    fn replace(&mut self, traj: ReferenceTrajectory) {
        self.candidates.clear();
        self.candidates.push(traj);
        self.deprecated = false;
    }

    /// Keep only the candidate with `metadata`. Returns false when none matches.
    fn retain_only(&mut self, metadata: &TrajectoryMetadata) -> bool {
        match self.candidates.iter().position(|c| c.metadata == *metadata) {
            Some(pos) => {
                let keep = self.candidates.swap_remove(pos);
                self.replace(keep);
                true
            }
            None => false,
        }
    }
}

/// One CU's trackers for the whole swarm. At bank round `k` every candidate
/// has `start_round == k - 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackerBank {
    round: Round,
    trackers: Vec<InformationTracker>,
}

/// Everything the CU heard in the previous communication phase that the
/// tracker update consumes.
#[derive(Clone, Debug, Default)]
pub struct TrackerInputs<'a> {
    /// Metadata reported by each UAV whose status message arrived.
    pub uav_reports: Vec<(UavId, TrajectoryMetadata)>,
    /// Full trajectories a UAV sent in a donated CU slot.
    pub replies: Vec<(UavId, &'a ReferenceTrajectory)>,
    /// Newly computed trajectories from CU trajectory messages.
    pub new_trajectories: Vec<(UavId, &'a ReferenceTrajectory)>,
    /// Number of CU slots from which anything arrived (replies included).
    pub cu_slots_received: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateOutcome {
    /// Some UAV kept more than one candidate because its status was lost.
    pub ambiguous: bool,
    /// Fewer than `M` CU slots were heard.
    pub missing_cu_messages: bool,
}

impl UpdateOutcome {
    pub fn deprecated_all(&self) -> bool {
        self.ambiguous || self.missing_cu_messages
    }
}

impl TrackerBank {
    /// Bank at `round` holding one known trajectory per UAV, all up-to-date.
    pub fn from_known(round: Round, trajectories: Vec<ReferenceTrajectory>) -> Self {
        let trackers = trajectories
            .into_iter()
            .map(|t| InformationTracker::singleton(t.advanced_to(round - 1)))
            .collect();
        Self { round, trackers }
    }

    pub fn round(&self) -> Round {
        self.round
    }

    pub fn len(&self) -> usize {
        self.trackers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trackers.is_empty()
    }

    pub fn tracker(&self, uav: UavId) -> &InformationTracker {
        &self.trackers[uav]
    }

    pub fn trackers(&self) -> &[InformationTracker] {
        &self.trackers
    }

    pub fn all_up_to_date(&self) -> bool {
        self.trackers.iter().all(|t| t.is_up_to_date())
    }

    pub fn any_deprecated(&self) -> bool {
        !self.all_up_to_date()
    }

    /// Lowest-id UAV with a deprecated tracker.
    pub fn first_deprecated(&self) -> Option<UavId> {
        self.trackers.iter().position(|t| t.deprecated)
    }

    pub fn set_all_deprecated(&mut self) {
        self.trackers.iter_mut().for_each(|t| t.deprecated = true);
    }

    /// Copy with every deprecation flag cleared (the ablation without MLR).
    pub fn assume_up_to_date(&self) -> Self {
        let mut out = self.clone();
        out.trackers.iter_mut().for_each(|t| t.deprecated = false);
        out
    }

    /// Advance every candidate by one round.
    pub fn shift_all(&mut self) {
        self.round += 1;
        let origin = self.round - 1;
        for t in &mut self.trackers {
            for c in &mut t.candidates {
                *c = c.advanced_to(origin);
            }
        }
    }

    /// Replace UAV `uav`'s tracker by the single trajectory it reported itself.
    pub fn ingest_full_trajectory(&mut self, uav: UavId, traj: &ReferenceTrajectory) {
        let t = traj.advanced_to(self.round - 1);
        self.trackers[uav].replace(t);
    }

    /// Algorithm step for a new round: shift, match reported metadata,
    /// take replies, deprecate on ambiguity or missing CU messages, then
    /// append newly computed trajectories.
    pub fn update(&mut self, inputs: &TrackerInputs<'_>, m_total: usize) -> Result<UpdateOutcome> {
        self.shift_all();

        for (uav, metadata) in &inputs.uav_reports {
            let tracker = &mut self.trackers[*uav];
            if !tracker.retain_only(metadata) && !tracker.deprecated {
                return Err(Error::UnknownMetadata {
                    uav: *uav,
                    metadata: metadata.to_string(),
                });
            }
        }

        for (uav, traj) in &inputs.replies {
            self.ingest_full_trajectory(*uav, traj);
        }

        let outcome = UpdateOutcome {
            // deprecated trackers are already distrusted; counting them would
            // undo every reply ingested this round
            ambiguous: self
                .trackers
                .iter()
                .any(|t| !t.deprecated && t.candidates.len() > 1),
            missing_cu_messages: inputs.cu_slots_received < m_total,
        };
        if outcome.deprecated_all() {
            self.set_all_deprecated();
        }

        for (uav, traj) in &inputs.new_trajectories {
            let t = traj.advanced_to(self.round - 1);
            self.trackers[*uav].insert(t);
        }
        Ok(outcome)
    }

    /// Compact fingerprint of the bank for traces and cross-bank comparisons.
    pub fn digest(&self) -> BankDigest {
        BankDigest {
            round: self.round,
            trackers: self
                .trackers
                .iter()
                .map(|t| TrackerDigest {
                    deprecated: t.deprecated,
                    candidates: t
                        .candidates
                        .iter()
                        .map(|c| (c.metadata, c.digest()))
                        .collect(),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackerDigest {
    pub deprecated: bool,
    pub candidates: Vec<(TrajectoryMetadata, u64)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankDigest {
    pub round: Round,
    pub trackers: Vec<TrackerDigest>,
}

impl BankDigest {
    pub fn all_up_to_date(&self) -> bool {
        self.trackers.iter().all(|t| !t.deprecated)
    }

    /// Candidate sets only (flags ignored), for comparing two banks.
    pub fn same_candidates(&self, other: &BankDigest) -> bool {
        self.round == other.round
            && self.trackers.len() == other.trackers.len()
            && self
                .trackers
                .iter()
                .zip(&other.trackers)
                .all(|(a, b)| a.candidates == b.candidates)
    }
}

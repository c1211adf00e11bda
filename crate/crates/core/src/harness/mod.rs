//! Scenarios, the simulation loop, oracles, metrics and export.

pub mod checks;
pub mod export;
pub mod margin;
pub mod metrics;
pub mod runner;
pub mod scenario;
pub mod trace;

pub use checks::{
    check_discrete_collisions, check_physical_distances, check_theorem_oracles, min_reference_distance,
    CollisionViolation, OracleReport,
};
pub use margin::{estimate_continuous_margin, MarginEstimate, MarginModel};
pub use metrics::{all_at_rest, metrics, Metrics};
pub use runner::run;
pub use scenario::{Geometry, Scenario, ScenarioFile};
pub use trace::{Event, EventKind, Trace};

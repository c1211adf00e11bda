use crate::{CuId, Round, UavId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("buffered Voronoi normal between UAV {uav} and UAV {other} is degenerate (reference positions coincide)")]
    DegenerateNormal { uav: UavId, other: UavId },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("UAV {uav} reported metadata {metadata} that matches no candidate in a non-deprecated tracker")]
    UnknownMetadata { uav: UavId, metadata: String },

    #[error("two envelopes claim slot {slot} in round {round}")]
    SlotConflict { round: Round, slot: usize },

    #[error("round {round}: CU {cu} could neither solve the QP for UAV {uav} ({status}) nor verify the shifted candidate")]
    Infeasible {
        round: Round,
        cu: CuId,
        uav: UavId,
        status: String,
    },

    #[error("wire format: {0}")]
    Wire(#[from] serde_json::Error),

    #[error("scenario: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

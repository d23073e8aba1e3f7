use thiserror::Error;

use crate::lattice::VertexId;

/// Errors raised by the simulator, the oracles and the analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("vertex ({row}, {col}) is not eligible for an elementary motion", row = .0.row, col = .0.col)]
    NotEligible(VertexId),

    #[error("no eligible vertex remains on the surface")]
    SurfaceExhausted,

    #[error("slot {slot} out of range for a register of {n_slots} slots")]
    SlotOutOfRange { slot: usize, n_slots: usize },

    #[error("slot collision: both gate slots are {0}")]
    SlotCollision(usize),

    #[error("register of {0} slots exceeds the supported maximum")]
    TooManySlots(usize),

    #[error("field configuration has {got} bits, expected {expected}")]
    ConfigLength { expected: usize, got: usize },

    #[error("superposition requires two distinct configurations")]
    IdenticalConfigs,

    #[error("outcome has probability {0:e}, below the realisable threshold")]
    ZeroProbability(f64),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("labelling is not a natural labelling: {0}")]
    NotNatural(String),

    #[error("stem of {0} vertices exceeds the enumeration limit")]
    StemTooLarge(usize),

    #[error("branch tracking requires theta in {{0, pi/2}}, got {0}")]
    BranchTheta(f64),

    #[error("renormalised field is undefined for epsilon = 0")]
    ZeroEpsilon,

    #[error("invalid data: {0}")]
    Data(String),
}

pub type Result<T> = std::result::Result<T, Error>;

//! Exact finite-state computation for additive functionals of stationary
//! Markov chains: partial-sum variances, bridge conditional expectations,
//! absolute-regularity and maximal-correlation coefficients, block-martingale
//! decompositions, and seeded distributional experiments that check the
//! normalized sums against their limiting laws.
//!
//! The crate is organized around a [`moments::Model`]: a validated kernel,
//! its stationary law, and a centered observable. Every analysis is a pure
//! function of a model plus scalar parameters, so results are reproducible
//! bit for bit, including the Monte Carlo experiments, whose randomness is
//! derived from counter-based streams.

// Numeric sweeps here index several arrays with one loop variable; the
// iterator-chain form clippy suggests reads worse for stencil code.
#![allow(clippy::needless_range_loop)]

pub mod blocks;
pub mod bridge;
pub mod gallery;
pub mod kernel;
pub mod linalg;
pub mod mixing;
pub mod moments;
pub mod montecarlo;

pub use blocks::{BlockDecomposition, BlocksError, OrthogonalityOutcome};
pub use bridge::{BridgeError, BridgeTable};
pub use gallery::{GalleryError, GalleryModel, GallerySpec};
pub use kernel::{ErgodicityReport, Kernel, KernelError, PowerCache, StationaryLaw};
pub use mixing::{MixingError, MixingProfile, QuantileFunction};
pub use moments::{Model, MomentsError, SigmaSeries, VarianceProfile};
pub use montecarlo::{
    Centering, ExperimentReport, ExperimentRun, GoodnessOfFit, McError, ReferenceLaw, SeedSpec,
};

use thiserror::Error;

/// Formats a float with 17 significant digits, enough to round-trip binary64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Coarse classification used to map failures onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Rejected input or an operation undefined for the given chain.
    Validation,
    /// A hard computational budget was exceeded.
    Budget,
    /// An internal invariant failed; indicates an implementation bug.
    Internal,
}

/// Any error the library can produce.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Moments(#[from] MomentsError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error(transparent)]
    Mixing(#[from] MixingError),
    #[error(transparent)]
    Blocks(#[from] BlocksError),
    #[error(transparent)]
    MonteCarlo(#[from] McError),
    #[error(transparent)]
    Gallery(#[from] GalleryError),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Kernel(e) => match e {
                KernelError::NoConvergence { .. } => ErrorKind::Budget,
                _ => ErrorKind::Validation,
            },
            Error::Moments(e) => moments_kind(e),
            Error::Bridge(e) => bridge_kind(e),
            Error::Mixing(e) => match e {
                MixingError::SingularPi { .. } => ErrorKind::Validation,
                MixingError::InequalityViolated { .. } => ErrorKind::Internal,
            },
            Error::Blocks(e) => match e {
                BlocksError::BlockTooLong { .. } => ErrorKind::Validation,
                BlocksError::UnreachablePair { .. } => ErrorKind::Validation,
                BlocksError::ExactModeBudgetExceeded { .. } => ErrorKind::Budget,
                BlocksError::IdentityViolated { .. } => ErrorKind::Internal,
                BlocksError::Bridge(inner) => bridge_kind(inner),
                BlocksError::MonteCarlo(inner) => mc_kind(inner),
            },
            Error::MonteCarlo(e) => mc_kind(e),
            Error::Gallery(e) => match e {
                GalleryError::StateSpaceTooLarge { .. } => ErrorKind::Budget,
                GalleryError::Kernel(KernelError::NoConvergence { .. }) => ErrorKind::Budget,
                GalleryError::Kernel(_) => ErrorKind::Validation,
                GalleryError::Moments(inner) => moments_kind(inner),
                _ => ErrorKind::Validation,
            },
        }
    }
}

fn moments_kind(e: &MomentsError) -> ErrorKind {
    match e {
        MomentsError::Kernel(KernelError::NoConvergence { .. }) => ErrorKind::Budget,
        _ => ErrorKind::Validation,
    }
}

fn bridge_kind(e: &BridgeError) -> ErrorKind {
    match e {
        BridgeError::NegativeVariance { .. } => ErrorKind::Internal,
        _ => ErrorKind::Validation,
    }
}

fn mc_kind(e: &McError) -> ErrorKind {
    match e {
        McError::DpBudgetExceeded { .. } => ErrorKind::Budget,
        McError::UnreachableEndpoint { .. } => ErrorKind::Internal,
        McError::Bridge(inner) => bridge_kind(inner),
        McError::Moments(inner) => moments_kind(inner),
        _ => ErrorKind::Validation,
    }
}

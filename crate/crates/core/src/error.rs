//! Error type shared by every module of the crate.

use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Treatment arm, used in error reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    Control,
    Treatment,
}

impl core::fmt::Display for Arm {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Arm::Control => f.write_str("z=0"),
            Arm::Treatment => f.write_str("z=1"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("stratum `{stratum}` has no units in arm {arm}")]
    EmptyArm { stratum: String, arm: Arm },

    #[error("unit {index}: `{field}` must be 0 or 1, got {value}")]
    NonBinary {
        index: usize,
        field: &'static str,
        value: i64,
    },

    #[error("unit {index}: `{field}` is not finite")]
    NonFinite { index: usize, field: &'static str },

    #[error("sample has {0} units, at least 4 are required")]
    SampleTooSmall(usize),

    #[error("unknown stratum index {0}")]
    UnknownStratum(usize),

    #[error("assignment has length {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("estimated compliance is zero")]
    ZeroCompliance,

    #[error("every stratum was dropped")]
    AllStrataDropped,

    #[error("stratum {stratum} has {n} units, the first-stage F test needs at least 3")]
    TooSmall { stratum: usize, n: usize },

    #[error("fewer than two units in arm {arm}{}", stratum_suffix(*.stratum))]
    TooFewUnits { arm: Arm, stratum: Option<usize> },

    #[error("stratum {stratum} has zero estimated ITT variance but nonzero compliance")]
    DegenerateVariance { stratum: usize },

    #[error("no compliers in arm {0}")]
    NoCompliersInArm(Arm),

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("unit {index} is a defier (d0=1, d1=0)")]
    Defier { index: usize },

    #[error("unit {index} violates the exclusion restriction (d0 = d1 but y0 != y1)")]
    ExclusionViolation { index: usize },

    #[error("p * N = {p} * {n} is not an integer")]
    NonIntegralArm { n: usize, p: f64 },

    #[error("population has no compliers")]
    NoCompliers,

    #[error("table has always-takers; a one-sided (no always-taker) table is required")]
    TwoSidedInput,

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("compliance probability {probability} in stratum {stratum} is outside (0, 1]")]
    InfeasibleCompliance { stratum: usize, probability: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

fn stratum_suffix(stratum: Option<usize>) -> String {
    match stratum {
        Some(g) => alloc::format!(" of stratum {g}"),
        None => String::new(),
    }
}

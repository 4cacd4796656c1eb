use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("no treated clusters")]
    NoTreated,
    #[error("no untreated clusters")]
    NoUntreated,
    #[error("cluster {id} has no observations")]
    EmptyCluster { id: String },
    #[error("cluster {id}: covariate dimension {found} differs from {expected}")]
    RaggedCovariates {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("estimate vector has {len} entries but layout expects {expected}")]
    LayoutMismatch { len: usize, expected: usize },
    #[error("estimate {index} is not finite")]
    NonFinite { index: usize },
    #[error("assignment is not a set of {q1} distinct indices below {q}")]
    InvalidAssignment { q1: usize, q: usize },
    #[error("two-sample variance needs at least two clusters per group (q1 = {q1}, q0 = {q0})")]
    GroupTooSmall { q1: usize, q0: usize },
    #[error("two-sample variance of the placebo split is zero")]
    DegenerateVariance,
    #[error("{count} assignments exceed the enumeration cap of {cap}; use subsampling")]
    TooManyAssignments { count: u128, cap: u64 },
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("number of draws must be positive")]
    ZeroDraws,
    #[error("empty statistic set")]
    EmptyStatistics,
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("observation without a pre/post period flag")]
    MissingPeriodFlag,
    #[error("perfect separation: the moment condition has no zero")]
    Separation,
    #[error("Newton iteration did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("dependence window h = {h} needs at least h + 1 observations, got {m}")]
    HOutOfRange { h: usize, m: usize },
    #[error("invalid design: {0}")]
    InvalidDesign(&'static str),
    #[error("cluster {id}: {source}")]
    ClusterFit {
        id: String,
        #[source]
        source: Box<Error>,
    },
}

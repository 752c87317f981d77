//! Error type shared by all solver modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point {point:?} lies outside the overlap of charts {from} and {to}")]
    OutOfOverlap {
        from: usize,
        to: usize,
        point: Vec<f64>,
    },

    #[error("degenerate cover: bump sum {sum:.3e} below threshold at chart {chart}, index {index:?}")]
    DegenerateCover {
        chart: usize,
        index: Vec<usize>,
        sum: f64,
    },

    #[error("atlas has no localization system (cover check failed at construction)")]
    MissingLocalization,

    #[error("singular metric: det g = {det:.3e} at chart {chart}, index {index:?}")]
    SingularMetric {
        chart: usize,
        index: Vec<usize>,
        det: f64,
    },

    #[error("unsupported tensor rank ({sigma},{tau}) for this operation")]
    UnsupportedRank { sigma: usize, tau: usize },

    #[error("invalid Hoelder exponent s = {0}; supported range is 0 <= s < 3")]
    InvalidExponent(f64),

    #[error("offset list invalid: {0}")]
    InvalidOffsets(String),

    #[error(
        "positivity violation: value {value:.6e} <= bound {bound:.6e} at chart {chart}, index {index:?}"
    )]
    PositivityViolation {
        chart: usize,
        index: Vec<usize>,
        value: f64,
        bound: f64,
    },

    #[error("series radius violation: |(u-u0)/u0| reaches {ratio:.6e} >= 1")]
    RadiusViolation { ratio: f64 },

    #[error("parameter out of range: |mu| = {norm:.6e} exceeds the family radius r = {max:.6e}")]
    ParameterOutOfRange { norm: f64, max: f64 },

    #[error("fixed-point inversion of the truncated translation did not converge in {0} iterations")]
    NonConvergence(usize),

    #[error("anchor lies {dist:.3e} from the chart boundary; at least {min:.3e} is required")]
    AnchorTooCloseToBoundary { dist: f64, min: f64 },

    #[error("time ball B(t0, 3*eps0) = [{lo:.3e}, {hi:.3e}] leaves the trace interior [{t_min:.3e}, {t_max:.3e}]")]
    IntervalViolation {
        lo: f64,
        hi: f64,
        t_min: f64,
        t_max: f64,
    },

    #[error("trace does not cover the resampled time {t:.6e} (window [{t_min:.6e}, {t_max:.6e}])")]
    TraceCoverage { t: f64, t_min: f64, t_max: f64 },

    #[error("time step failed after {rejections} rejections at t = {t:.6e}: {diagnostic}")]
    StepFailure {
        t: f64,
        rejections: usize,
        diagnostic: String,
    },

    #[error("snapshot format error: {0}")]
    SnapshotFormat(String),
}

pub type Result<T> = std::result::Result<T, Error>;

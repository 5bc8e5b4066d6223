use crate::Vec3;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Mollification radius does not fit inside the enclosure margin.
    #[error("mollification radius {eps} exceeds enclosure margin {margin}")]
    EpsExceedsMargin { eps: f64, margin: f64 },

    /// Two successive quadrature refinements disagreed.
    #[error("quadrature did not converge: {coarse} vs {fine} (relative gap {gap:e})")]
    QuadratureNotConverged { coarse: f64, fine: f64, gap: f64 },

    /// A trajectory left the enclosing ball by more than the drift allowance.
    #[error("trajectory escaped the enclosure at r = {time}: position {position:?}, overshoot {overshoot:e} > allowance {allowance:e}")]
    Escape {
        time: f64,
        position: [f64; 3],
        overshoot: f64,
        allowance: f64,
    },

    /// Same as [`Error::Escape`], tagged with the index of the offending input point.
    #[error("point #{index}: {source}")]
    AtPoint {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("CFL condition violated: dt {dt:e} > {limit:e}")]
    Cfl { dt: f64, limit: f64 },
}

impl Error {
    pub(crate) fn escape(time: f64, x: &Vec3, overshoot: f64, allowance: f64) -> Self {
        Error::Escape {
            time,
            position: [x.x, x.y, x.z],
            overshoot,
            allowance,
        }
    }

    pub(crate) fn at_point(index: usize, err: Error) -> Self {
        Error::AtPoint {
            index,
            source: Box::new(err),
        }
    }
}

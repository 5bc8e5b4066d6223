//! Numerical laboratory for flows of rough (Sobolev) velocity fields on
//! bounded domains.
//!
//! The crate builds regularized flow maps by mollifying a velocity field and
//! integrating trajectories, then checks quantitative identities of the
//! resulting flows: group and semigroup laws, compressibility bounds,
//! transport-equation norm evolution, commutator decay, and the transport
//! theorem for co-moving volumes in both its image and preimage forms.

pub mod error;
pub mod fields;
pub mod flow;
pub mod geometry;
pub mod numerics;
pub mod reynolds;
pub mod transport;

/// Points and vectors in three dimensions.
pub type Vec3 = nalgebra::Vector3<f64>;

pub use error::{Error, Result};
pub use fields::{
    div_l1_linf, eval_zero_extended, mollifier_normalizer, mollify, DivergenceBudget, FieldKind,
    MollifiedField, Mollifier, ScenarioInfo, VectorField, VelocityField, SCENARIOS,
};
pub use flow::{DefectStats, FlowEvaluator, TrajectoryRecord};
pub use geometry::{
    estimate_measure, estimate_measure_on, sample_uniform, Domain, Enclosure, MeasurableSet,
    MeasureEstimate,
};
pub use reynolds::{
    change_of_variables_check, image_jacobian_measures, measure_image, measure_image_jacobian,
    measure_preimage, preimage_measures, rtt_density_residual, rtt_limit_study,
    rtt_measure_residual, DensityFunction, IdentityTag, MollificationLadder, ReynoldsReport,
    Sampler,
};
pub use transport::{
    commutator_field, l2_identity_residual, rho_convergence_study, solve_eulerian,
    solve_lagrangian, GridFunction, GridSpec, InitialDatum, Provenance, Regularization,
    SpaceTimeBump, TimeWindow, TransportSolution,
};

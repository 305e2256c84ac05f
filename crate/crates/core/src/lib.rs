//! Hard-constraint enforcement for flow-based generative samplers.
//!
//! Every reverse-time sampling step is filtered through a minimum-norm
//! quadratic program built from a *constricting* control barrier function:
//! a time-varying relaxation of the safe set that starts loose enough to
//! contain the initial noise sample and tightens to the target set at the
//! end of sampling. The crate is organised bottom-up:
//!
//! * [`barriers`]: safe-set functions `h(x)` with analytic gradients.
//! * [`constriction`]: the relaxation schedule `ε(t)` and `h̃ = h + ε`.
//! * [`oracles`]: training-free drift fields (exact Gaussian-mixture scores),
//!   noise schedules and the Lorenz ground-truth generator.
//! * [`shield`]: constraint assembly, the min-norm QP, the guided sampler and
//!   the projection baseline.
//! * [`analysis`]: Girsanov KL estimation, tube auditing, energy profiles.

pub mod analysis;
pub mod barriers;
pub mod constriction;
pub mod oracles;
pub mod shield;

pub use analysis::{
    energy_profile, invariance_audit, kl_girsanov_estimate, kl_or_energy, smoothness_violations, AnalysisError,
    AuditReport, EnergyProfile, KlRegime, KlReport,
};
pub use barriers::{
    BallParams, Barrier, BarrierError, BarrierSpec, BoxParams, ColorRegionParams, HalfspaceParams, ImageShape,
    PhysicsResidualParams, PixelPatchParams, SmoothnessParams, SparseRow, StateVector,
};
pub use constriction::{Constriction, ConstrictionError, ScheduleKind};
pub use oracles::{
    lorenz::{lorenz_dataset, lorenz_field, LorenzParams},
    DriftField, DriftKind, DriftScaling, GaussianMixture, MarginalCoefficients, NoiseSchedule, OracleError, ScoreDrift,
    ZeroDrift,
};
pub use shield::{
    assemble_constraint, solve_min_norm, ClassK, Guidance, NoiseMode, QpInstance, QpSolution, QpStatus, Shield,
    ShieldConfig, ShieldError, SolverKind, StepLog, TrajectoryRecord,
};

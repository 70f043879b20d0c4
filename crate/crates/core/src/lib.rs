//! Control-variable estimation of structural functions in triangular
//! models with possibly discrete instruments.
//!
//! The estimation pipeline has three stages: a quantile-regression process
//! of the treatment on the instrument gives the control variable
//! (`first_stage`), a quantile-regression process of the outcome on the
//! kronecker basis gives the control regression (`second_stage`), and
//! averaging over the control distribution gives the distribution, quantile
//! and average structural functions (`structural`). `identification`
//! computes the positive-definiteness diagnostics that decide whether the
//! control regression is identified without full support, and `bootstrap`
//! adds weighted-bootstrap uniform bands.

pub mod bootstrap;
pub mod design;
pub mod error;
pub mod first_stage;
pub mod identification;
pub mod normal;
pub mod qr_solver;
pub mod second_stage;
pub mod structural;

pub use bootstrap::{run_bootstrap, BootstrapConfig, BootstrapOutcome, WeightLaw};
pub use design::{build_w, simulate, BasisSpec, Dataset, DgpSpec, GroundTruth, Term};
pub use error::{Error, Result};
pub use first_stage::{fit_first_stage, FirstStageFit, StageOptions};
pub use identification::{
    moment_matrix, triangular_profiles, Binning, ConditionalEigenProfile, Diagnostics, MomentReport,
};
pub use qr_solver::{
    check_loss, fit, fit_process, fit_with, trimmed_grid, CheckLossProblem, QuantileFit,
    QuantileProcess, SolverConfig,
};
pub use second_stage::{fit_second_stage, SecondStageFit};
pub use structural::{
    Kind, Measure, OutcomeMesh, Pipeline, PipelineConfig, Region, StructuralEstimates,
    StructuralFunctionEstimate,
};

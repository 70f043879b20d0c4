//! Bases, datasets, instrument discretizers and synthetic DGPs.

mod basis;
mod data;
mod dgp;
mod discretize;

pub use basis::{build_w, kron, BasisSpec, Term};
pub use data::{Dataset, CSV_HEADER};
pub use dgp::{
    simulate, CoefficientFn, Covariate, DgpSpec, FirstStageMap, GroundTruth, InstrumentLaw,
    Simulation, V_NODES,
};
pub use discretize::{discretize_design1, discretize_design2, empirical_quantile};

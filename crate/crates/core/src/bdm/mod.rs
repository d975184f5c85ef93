//! The Basic DREAM Model: parameters, vector field, simulation and steady
//! states.

mod light;
mod model;
mod params;
mod simulate;

pub use light::{Interpolation, LightProgram, SampledLight};

pub use model::{
    bdm_outputs, bdm_rhs, chlf_yield, rates, rcii_closed, BdmOutputs, BdmState, Rates, STATE_DIM,
};
pub use params::{BdmOverrides, BdmParameters};
pub use simulate::{
    nominal_state, sample_times, simulate, steady_state, BdmSystem, Integrator, SimulationError,
    SimulationMeta, SimulationOptions, SimulationTrace, SteadyState, SteadyStateError,
    SteadyStateOptions, BOUND_TOLERANCE,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BdmError {
    #[error("non-finite value {value} in {term}")]
    Domain { term: &'static str, value: f64 },
    #[error("singular NPQ output: FQ_max * x3 = {fq_product} >= 1")]
    SingularOutput { fq_product: f64 },
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("missing required parameter {0}")]
    MissingParameter(&'static str),
    #[error("parameter file: {0}")]
    ParameterFile(String),
}

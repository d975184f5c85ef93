//! Frequency-domain identification of chlorophyll fluorescence dynamics.
//!
//! The crate simulates the five-state Basic DREAM Model (BDM) of
//! photosystem II regulation under modulated light, estimates Best Linear
//! Approximations from random-phase multisine experiments, fits
//! second-order transfer functions and assembles a linear
//! parameter-varying (LPV) model scheduled on the DC light level.

pub mod bdm;
pub mod excitation;
pub mod io;
pub mod lpv;
pub mod solver;
pub mod spectral;
pub mod tf;

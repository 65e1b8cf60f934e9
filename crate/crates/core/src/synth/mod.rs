//! Reference data: Gaussian log-conductivity fields, finite-volume solves of
//! the linear and van Genuchten problems, sampling designs and noise.

pub mod banded;
pub mod fv;
pub mod gp;
pub mod sampling;
pub mod vg;

pub use fv::{
    fv_solve_linear, fv_solve_vangenuchten, BoundarySpec, EdgeCondition, PicardConfig, PicardReport, Tpfa,
};
pub use gp::{sample_gp_lnk, GpConfig, GpSampler};
pub use sampling::{
    add_noise, add_noise_with, latin_hypercube, random_cells, sample_measurement_locations, NoiseModel,
    SamplingScheme,
};
pub use vg::{van_genuchten_k, VanGenuchtenParams};

//! Physics-informed neural networks for learning unknown PDE coefficients
//! and constitutive relationships from sparse measurements.

pub mod autodiff;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod map;
pub mod nn;
pub mod optim;
pub mod problem;
pub mod synth;

pub use autodiff::{loss_param_gradient, NetJets, Tape, Var};
pub use error::{Error, Result};
pub use grid::{Edge, Field, Grid2D, Point};
pub use nn::batch::JetOrder;
pub use nn::{init_xavier, param_count, Jet2, MlpParams, ParamGradient};

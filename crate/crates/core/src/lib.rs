//! Schrödinger bridges for diffusions: nonparametric fixed-point estimation of
//! the Schrödinger potentials and forward-reverse estimation of bridge
//! expectations.

pub mod density;
pub mod error;
pub mod fr;
pub mod geometry;
pub mod hilbert;
pub mod kernel;
pub mod lattice;
pub mod model;
pub mod oracles;
pub mod regression;
pub mod rng;
pub mod sde;
pub mod solver;

pub use density::{Density, PolynomialDensity, PotentialSampler, UniformDensity};
pub use error::{Error, Result};
pub use fr::{
    fdd_schrodinger_estimate, fr_bandwidth_rule, fr_conditional_estimate, fr_joint_estimate,
    h_transform_simulate, Estimate, FddQuery, Potential, TimePartition,
};
pub use geometry::BoxRegion;
pub use hilbert::{hilbert_distance, l1_normalize, truncate_clamp};
pub use kernel::{Kernel, KernelShape};
pub use lattice::{Lattice, LatticeFunction};
pub use model::{Diffusion, FnModel, TransitionDensity};
pub use oracles::{closed_form_model, grid_fixed_point, GaussianModel, GridProblem, ModelKind};
pub use regression::{default_bandwidth, BoundsConfig, EstimatorMode, SampleClouds};
pub use rng::{SeedStream, StreamDomain};
pub use sde::{derive_reverse_model, simulate_forward, simulate_reverse, Path, TimeGrid};
pub use solver::{apply_c_hat, picard_solve, SchrodingerSolution, SolverConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

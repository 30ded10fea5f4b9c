//! Spectral solvers and Monte Carlo experiments for `Z^d` quantum-graph
//! lattices with random edge lengths and a δ-coupling at every vertex.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ensemble;
pub mod error;
pub mod io;
pub mod kp_bands;
pub mod lattice;
pub mod linalg;
pub mod reduction;
pub mod roots;
pub mod spectra;
pub mod special;
pub mod stats;

pub use error::{Error, Result};
pub use kp_bands::{
    admissible_negative_alpha, bands_p, delta_set, dispersion, inf_sigma, is_outside_delta,
    kp_integrated_density, sigma_union, Band, BandList, DeltaSet, SigmaUnion,
};
pub use lattice::{build_cube, Cube, Edge, Norm, Vertex};
pub use linalg::SymMatrix;
pub use reduction::{assemble_m, dirichlet_distance, LengthField, ReducedOperator};
pub use spectra::{count_below_h, fd_oracle_spectrum, spectrum_h, Eigenvalue, SpectrumOptions, SpectrumResult};
pub use ensemble::{
    ids_estimate, lifshitz_experiment, local_energy_check, sample_lengths, wegner_experiment, DistKind,
    ExperimentReport, LengthDistribution,
};

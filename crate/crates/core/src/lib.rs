//! Structure-preserving simulation of nonlocal cross-diffusion systems
//!
//! ```text
//! d_t u_i - sigma Lap u_i = div(u_i grad p_i[u]),   p_i[u] = sum_j K_ij * u_j
//! ```
//!
//! for `n` species on the periodic torus in one or two dimensions, together
//! with the local limit `p_i = sum_j a_ij u_j`.
//!
//! The implicit scheme works in entropy variables `w_i = pi_i log u_i`, so every
//! computed state is strictly positive, and the Shannon-type entropy `H_1` and the
//! Rao-type entropy `H_2` are monitored at each step.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod entropy;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod init;
pub mod io;
pub mod kernels;
pub mod nonlocal;
pub mod scheme;
pub mod spectral;

pub use error::{Error, Result};
pub use grid::{Field, FieldSet, TorusGrid};
pub use kernels::{
    InteractionMatrix, KernelFamily, KernelRaster, KernelSpec, MollifierProfile, ReversibleMeasure,
};
pub use scheme::{ModelParams, SchemeConfig, Trajectory};

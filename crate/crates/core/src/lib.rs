//! Regularized nonlocal interaction energies: mollified repulsive–attractive
//! kernels, particle blob-method flows, direct energy minimization, exact
//! 2-Wasserstein distances and a numerical study harness.

pub mod dynamics;
pub mod energy;
pub mod experiments;
pub mod interp;
pub mod kernels;
pub mod measures;
pub mod mollification;
pub mod quadrature;
pub mod radial;
pub mod rng;
pub mod special;
pub mod transport;

//! Numerical laboratory for conformal dimension of self-affine carpets and
//! Brownian graphs.
//!
//! The crate is `no_std` with `alloc`. File formats and drivers live in the
//! companion `confdim-lab` crate.
#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod geometry;
pub mod carpet;
pub mod hmeasure;
pub mod modulus;
pub mod brownian;

//! Spectral theory of the Klein-Gordon operator `A = (-c_k d^2/dx^2 + a_k)_k`
//! on a star of `n` half-lines coupled by Kirchhoff vertex conditions.
//!
//! Branch indices are zero-based throughout.

pub mod error;
pub mod evolution;
pub mod fd_oracle;
pub mod kernel;
pub mod measure;
pub mod network;
pub mod numerics;
pub mod resolvent;
pub mod transform;

pub use error::{Error, Result};

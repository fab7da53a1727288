//! Numerical inverse scattering for the two-dimensional Schrödinger equation
//! at fixed positive energy: forward Faddeev solutions, Dirichlet-to-Neumann
//! maps, scattering data and reconstruction through a ∂̄ problem.

pub mod config;
pub mod dense;
pub mod dtn;
pub mod error;
pub mod fft;
pub mod forward;
pub mod grid;
pub mod harness;
pub mod io;
pub mod krylov;
pub mod rh;
pub mod scattering;
pub mod selftest;
pub mod special;
pub mod stats;

pub use error::{Error, Result, Stage};
pub use grid::C64;

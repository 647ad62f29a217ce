pub mod error;
pub mod evolution;
pub mod fgr;
pub mod grid;
pub mod harness;
pub mod ground_state;
pub mod krylov;
pub mod linear_spectrum;
pub mod linearization;
pub mod normal_form;
pub mod ops;
pub mod pair;
pub mod potential;
pub mod reduced_ode;
pub mod resolvent;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;

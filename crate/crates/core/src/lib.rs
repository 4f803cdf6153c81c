//! Space-time mixed finite element reconstruction of solutions of
//! one-dimensional parabolic equations from observations on a subdomain
//! `q_T = omega x (0, T)`.

mod assembly;
pub mod coefficients;
pub mod csvio;
pub mod config;
pub mod diagnostics;
pub mod dual;
pub mod error;
pub mod experiment;
pub mod field;
pub mod firstorder;
pub mod forward;
pub mod grid;
pub mod linalg;
pub mod observe;
pub mod problem;
pub mod saddle;
pub mod secondorder;
pub mod weights;

pub use error::{Error, ErrorCategory, Result};

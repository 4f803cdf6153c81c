//! Sparse storage, the quasi-definite factorization and Krylov/eigen helpers.

pub mod iterative;
pub mod ldl;
pub mod sparse;

pub use iterative::{inverse_iteration, pcg, power_iteration, spd_condition_estimate, CgResult, ConditionEstimate};
pub use ldl::{LdlFactor, LdlOptions, SolveInfo};
pub use sparse::{dot, norm2, norm_inf, CsrMatrix, TripletBuilder};

//! Learning-based hybrid controllers for control-affine systems under
//! syntactically co-safe LTL specifications.

// Parameter checks use `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adp;
pub mod automaton;
pub mod cost;
pub mod export;
pub mod hybrid;
pub mod ode;
pub mod plant;
pub mod scenario;
pub mod scltl;
pub mod sysid;

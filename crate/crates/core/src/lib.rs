//! Homomorphic SVM inference on an intermittently powered
//! processing-in-memory fabric: BFV arithmetic, a bit-level grid simulator,
//! a compiler targeting it, and the energy models around them.

// Range checks are written `!(x > 0.0)` on purpose so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod bfv;
pub mod compiler;
pub mod config;
pub mod modarith;
pub mod ntt;
pub mod offload;
pub mod pim;
pub mod runtime;
pub mod svm;

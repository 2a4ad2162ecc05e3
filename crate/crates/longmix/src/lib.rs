//! Linear mixed models for long-format repeated-measures data.

pub mod classical;
pub mod dataset;
pub mod diagnostics;
pub mod explore;
#[cfg(doctest)]
pub mod guide;
pub mod linalg;
pub mod lmm;
pub mod optim;
pub mod simul;

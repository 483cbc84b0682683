//! Linear-memory optimizers with retrospective learning-law correction.

pub mod equiv;
pub mod exec;
pub mod harness;
pub mod numerics;
pub mod optim;
pub mod propagators;
pub mod tasks;

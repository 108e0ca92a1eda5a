//! Library surface of the pipeline driver, kept separate from argument
//! parsing so the orchestration is testable.

pub mod hash;
pub mod plot;
pub mod runall;

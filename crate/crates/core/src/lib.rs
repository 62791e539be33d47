pub mod action;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod io;
pub mod constraint;
pub mod linalg;
pub mod oracles;
pub mod solver;

#[cfg(test)]
mod testutil;

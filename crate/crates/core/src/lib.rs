//! Simulation and verification toolkit for Boltzmann 3/2-stable random planar maps.

pub mod estimators;
pub mod harmonic;
pub mod kernel;
pub mod maps;
pub mod oracles;
pub mod parallel;
pub mod peeling;
pub mod rational;
pub mod special;
pub mod stats;
pub mod walks;

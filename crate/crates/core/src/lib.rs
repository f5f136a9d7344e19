//! Subcritical rank-1 inhomogeneous random graphs.
//!
//! Theory (decay constants `r(c)`, `α(c)`), simulation of the graphs and
//! of the associated multi-type Poisson branching processes, and the
//! experiment harness that compares the two.

pub mod dsu;
pub mod model;
pub mod rng;
pub mod stats;
pub mod theory;
pub mod branching;
pub mod cli;
pub mod graph;
pub mod harness;
pub mod output;
pub mod percolation;

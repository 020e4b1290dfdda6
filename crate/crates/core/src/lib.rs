//! Dynamics from a single scalar power function.
//!
//! A model declares one expression `P(t, q, qd, qdd)` plus optional
//! constraint rows, and everything else is derived symbolically: the
//! equation-of-motion covector, the mass matrix, the energy function and its
//! balance law, and the accelerations or jerks an integrator needs. The
//! companion check suite certifies the structural claims numerically
//! (chart covariance, reduction identities, energy balance, homogeneity,
//! and the variational sign convention).

pub mod checks;
pub mod eom;
pub mod expr;
pub mod integrate;
pub mod linalg;
pub mod model;
pub mod modelfile;
pub mod quantize;
pub mod sample;
pub mod scenarios;

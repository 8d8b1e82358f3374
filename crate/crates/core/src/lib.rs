//! Stochastic point vortices with transport noise, the stochastic Euler
//! vorticity equation they converge to, and the modulated-energy machinery
//! used to measure the distance between the two.
//!
//! Modules follow the data flow of a coupled experiment:
//! [`noise`] drives both [`vortex_sde`] and [`euler_pde`] through one
//! [`noise::BrownianPath`]; [`modulated_energy`] compares the two states;
//! [`forms_sio`] evaluates the commutator forms that appear in the energy's
//! Itô equation; [`bounds`] holds the Osgood envelope and ε-schedules.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod coulomb;
pub mod error;
pub mod euler_pde;
pub mod forms_sio;
pub mod geometry;
pub mod modulated_energy;
pub mod noise;
pub mod numerics;
pub mod vortex_sde;

pub use error::{Error, Result};
pub use geometry::{vec2, Mat2, Vec2};

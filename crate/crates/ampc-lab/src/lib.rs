//! Desk-scale lab for adaptive model-predictive control of single-rigid-body
//! legged locomotion: online gradient identification of inertial parameters
//! with a spectral stability monitor, wrapped around a QP-based MPC and a
//! nonlinear rigid-body plant.

pub mod adapt;
pub mod ampc;
pub mod cli;
pub mod error;
pub mod gait;
pub mod linearize;
pub mod output;
pub mod qp;
pub mod regressor;
pub mod sim;
pub mod srb;

//! Multi-RIS MISO downlink toolkit: obstacle-aware RIS selection from a
//! top-view scene, a deterministic vision front end that recovers that scene
//! from a rendered frame, and joint power/phase optimisation either by a
//! learned policy trained on the negated weighted sum rate or by an
//! alternating projected-gradient baseline.

pub mod autodiff;
pub mod baseline;
pub mod dataset;
pub mod geometry;
pub mod linalg;
pub mod policy;
pub mod transmit;
pub mod vision;

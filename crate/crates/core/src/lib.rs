//! Simulation core for a dual-modal e-skin: magnetic tactile sensing through
//! a Hall-sensor array under a magnetized film, and programmable vibration
//! feedback from an eight-motor array.
//!
//! * [`skin`]: dipole-grid forward model of the film and sensors.
//! * [`interference`]: motor stray-field study against a reference press.
//! * [`sensing`]: calibration, noise, tactile windows and datasets.
//! * [`classifier`]: from-scratch CNN, baselines and exact t-SNE.
//! * [`actuation`]: PWM vibration programs for the motor array.
//! * [`weighing`]: granular discharge from a vibrating spoon and the
//!   resolution metric.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod actuation;
pub mod classifier;
pub mod interference;
pub mod par;
pub mod sensing;
pub mod skin;
pub mod weighing;

pub use skin::{FieldReading, MagneticFilm, SkinGeometry, Vec3, CHANNELS, SENSOR_COUNT};

//! Simulation and processing toolkit for sono-switched nanodroplet
//! super-localization ultrasound (AWSALM and fast-AWSALM).
//!
//! The crate is organised along the data flow of an experiment:
//!
//! * [`phantom`] builds vessel geometries and advects the droplet population.
//! * [`kinetics`] decides, per transmission, which droplets vaporize and
//!   which bubbles are destroyed.
//! * [`acoustics`] builds transmit schedules, local MI fields and renders
//!   image frames (plus a small channel-data / delay-and-sum path).
//! * [`pipeline`] is the localization chain: motion compensation, TGC,
//!   SVD clutter filtering, Wiener and low-pass filtering, PSF estimation,
//!   sub-pixel localization and Kalman/Hungarian tracking.
//! * [`maps`] accumulates super-resolved maps and computes metrics.
//! * [`experiment`] and [`scenarios`] wire everything into reproducible runs.
//!
//! Data-parallel loops go through [`par`], which is backed by rayon when the
//! `parallel` feature is enabled and falls back to plain iteration otherwise.

// NaN-rejecting range checks read more clearly as `!(x >= lo)`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acoustics;
pub mod config;
mod error;
pub mod experiment;
pub mod geometry;
pub mod kinetics;
pub mod maps;
pub mod par;
pub mod phantom;
pub mod pipeline;
pub mod rng;
pub mod scenarios;
pub mod sim;
pub mod signal;
pub mod stackio;

pub use error::{Error, Result};
pub use geometry::Point;

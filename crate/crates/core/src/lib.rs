//! Geographic bias scores for geolocated model evaluations.

pub mod divergence;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod map;
pub mod partition;
pub mod report;
pub mod roi;
pub mod spad;
pub mod sre;
pub mod ssi;

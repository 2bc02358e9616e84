//! Joint emotion, gender and age estimation from utterance-level speech
//! features with a single shared-trunk network.
//!
//! The pipeline runs [`audio`] ingest, then [`features`] extraction, then the
//! [`model`] built from [`nn`] layers. [`training`] holds the cross-validation
//! protocol and [`store`] the on-disk model format.

pub mod audio;
pub mod features;
pub mod model;
pub mod nn;
pub mod store;
pub mod training;

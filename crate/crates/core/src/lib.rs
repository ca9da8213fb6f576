//! Deterministic simulation engine for trust-weighted federated learning
//! over modality-incomplete clients.
//!
//! Clients train multi-modal neural additive models on seeded synthetic
//! data; the server aggregates per-modality parameter segments with trust
//! weights built from explanation consistency, calibration and history.

pub mod adversary;
pub mod data;
pub mod fed;
pub mod metrics;
pub mod modality;
pub mod nam;
pub mod rng;

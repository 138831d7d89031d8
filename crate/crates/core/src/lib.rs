//! Deterministic federated learning simulator.
//!
//! The crate models a server that repeatedly picks a subset of clients by
//! utility score, lets them train a shared logistic-regression model on their
//! local shards, protects each returned update with the Gaussian mechanism,
//! survives simulated client crashes through checkpoint/restore, and averages
//! the delivered models into a new global model.
//!
//! Every source of randomness is a ChaCha stream keyed by
//! `(seed, round, client, purpose)`, so a run is a pure function of its
//! inputs and seed regardless of how client work is scheduled.

pub mod data;
pub mod error;
pub mod fault;
pub mod io;
pub mod model;
pub mod orchestrator;
pub mod privacy;
pub mod rng;
pub mod selection;
pub mod stats;

pub use error::{Error, Result};

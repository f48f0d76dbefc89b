//! Dataset asynchrony in one-vs-all (OVA) classification systems.
//!
//! An OVA system trains one binary model per class. Model `M_k` uses the
//! live dataset `D_k` as positives and *copies* `D_l^k` of the other
//! classes' datasets as negatives. When models are retrained on their own
//! schedules those copies drift from the live data. This crate measures that
//! drift with a KDE log-likelihood-ratio score (α), trains OVA and softmax
//! baselines over averaged word embeddings, and runs sweeps relating α to the
//! accuracy gap between the two.

pub mod asynchrony;
pub mod cli;
pub mod density;
pub mod embedding;
pub mod error;
pub mod experiments;
pub mod models;
pub mod registry;

pub use error::{Error, Result};

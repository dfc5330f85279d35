//! Evaluation harness for automatic question generation from educational
//! videos.
//!
//! The crate covers the whole offline pipeline: corpus loading and
//! splitting ([`corpus`]), prompting generation backends ([`harness`]),
//! scoring outputs against ground truth and transcripts ([`metrics`],
//! [`score`]), structural statistics ([`textproc`]), human-rating
//! agreement ([`agreement`]) and table rendering ([`report`]).

pub mod agreement;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod harness;
pub mod http;
pub mod metrics;
pub mod par;
pub mod report;
pub mod rng;
pub mod score;
pub mod textproc;

pub use error::{Error, Result};

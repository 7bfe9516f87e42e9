//! Second-stage human-object interaction detection at desk scale.
//!
//! Detections (or a seeded synthetic stand-in for a detector) feed a graph
//! head whose node embeddings fuse appearance features with entity rows from
//! a hyperplane-translation embedding model. Training jointly minimizes the
//! margin-ranking loss of the embedding model and focal losses over pair
//! interactiveness and per-verb action scores; evaluation reports
//! full/rare/non-rare mean average precision.

pub mod error;
pub mod graphrep;
pub mod head;
pub mod hoieval;
pub mod kge;
pub mod num;
pub mod pipeline;
pub mod synthgen;

pub use error::{Error, Result};

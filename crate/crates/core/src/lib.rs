//! Topic-based assistance for composing contact-center email replies.
//!
//! The pipeline learns LDA topic views over customer/agent email pairs,
//! annotates pairs with inferred topic distributions, trains predictors for
//! the topics of a whole reply and of the next reply sentence, evaluates
//! them, and serves suggestions over HTTP.

pub mod container;
pub mod corpus;
pub mod perplexity;
pub mod pipeline;
pub mod predictor;
pub mod service;
pub mod silver;
pub mod synth;
pub mod error;
pub mod evaluation;
pub mod text;
pub mod topic_model;

pub use error::{Error, Result};

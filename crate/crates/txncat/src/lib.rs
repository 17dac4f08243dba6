//! Command line and review service for the transaction categorisation
//! pipeline.

pub mod cli;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod review;
pub mod server;

pub mod batch;
pub mod executor;
pub mod metrics;
pub mod output;
pub mod scenarios;

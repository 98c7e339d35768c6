//! Street-level bicycle accident severity modelling: ingestion, street-network
//! features, logistic risk models, calibration metrics and what-if scenarios.

pub mod geometry;
pub mod ingest;
pub mod pipeline;
pub mod evaluation;
pub mod risk_model;
pub mod scenario;
pub mod street_graph;

//! Tabular health data to linked FHIR resources and back, mock FHIR
//! servers with OAuth2-style access, a dependency-tree synthetic data
//! generator, a hospitalization-risk model pipeline and a federating
//! decision-support service.

pub mod adapter;
pub mod cdss;
pub mod demo;
pub mod fhir;
pub mod risk;
pub mod seed;
pub mod server;
pub mod synth;
pub mod table;
pub mod wrangling;

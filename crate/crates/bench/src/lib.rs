//! Shared inputs for the benchmarks in `benches/`.

use fhirsynth::fhir::Bundle;
use fhirsynth::risk::{preprocess, EncodedMatrix, FeatureSpec, PreprocessConfig};
use fhirsynth::seed;
use fhirsynth::table::Table;
use fhirsynth::wrangling::{csv_to_fhir, MappingIndex};

/// Seed 7 tables, the same source the demo uses.
pub fn table(rows: usize) -> Table {
    seed::generate(rows, 7)
}

pub fn bundles(rows: usize) -> Vec<Bundle> {
    csv_to_fhir(&table(rows), &MappingIndex::npr_norpd()).expect("seed tables convert")
}

/// The encoded design matrix and feature encoder of a seed table.
pub fn encoded(rows: usize) -> (EncodedMatrix, FeatureSpec) {
    let p = preprocess(&table(rows), &PreprocessConfig::default()).expect("seed tables preprocess");
    (p.matrix, p.spec)
}

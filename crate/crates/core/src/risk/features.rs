use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::RiskError;

/// Model inputs and the dataset column each is read from by default.
pub const FEATURES: [(&str, &str); 8] = [
    ("patientGender", "patient_gender"),
    ("patientAgeGroup", "patient_age_group"),
    ("patientCountyNumber", "patient_county_number"),
    ("arrivalMode", "hospitalization_arrival_mode"),
    ("dischargeLocation", "hospitalization_discharge_location"),
    ("diagnosisCode", "diagnosis_code"),
    ("atcTherapeuticGroup", "drug_atc"),
    ("prescriptionCategory", "prescription_category"),
];

pub const ATC_FEATURE: &str = "atcTherapeuticGroup";

/// 1 when the stay spans at least one calendar day.
pub fn derive_outcome(start: NaiveDate, end: NaiveDate) -> Result<u8, RiskError> {
    if end < start {
        return Err(RiskError::EndBeforeStart {
            row: None,
            start: start.to_string(),
            end: end.to_string(),
        });
    }
    Ok(u8::from((end - start).num_days() >= 1))
}

/// ATC therapeutic group: the first three characters of the code.
pub fn truncate_atc(code: &str) -> String {
    code.chars().take(3).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVocab {
    pub name: String,
    pub column: String,
    /// Sorted, frozen at training time.
    pub categories: Vec<String>,
    /// Training mode, used to fill a missing value.
    pub mode: String,
}

/// Frozen encoder: features sorted by name, categories sorted within each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub features: Vec<FeatureVocab>,
    pub start_column: String,
    pub end_column: String,
}

/// One record as the model sees it: feature name to raw value.
pub type FeatureRecord = BTreeMap<String, String>;

impl FeatureSpec {
    pub fn width(&self) -> usize {
        self.features.iter().map(|f| f.categories.len()).sum()
    }

    /// `(feature, category)` key of every design-matrix column.
    pub fn column_keys(&self) -> Vec<(String, String)> {
        self.features
            .iter()
            .flat_map(|f| f.categories.iter().map(move |c| (f.name.clone(), c.clone())))
            .collect()
    }

    pub fn feature(&self, name: &str) -> Option<&FeatureVocab> {
        self.features.iter().find(|f| f.name == name)
    }

    /// One-hot row for a record. A category outside the vocabulary gives an
    /// all-zero block and a warning; a missing or empty value takes the
    /// training mode. ATC codes longer than three characters are truncated.
    pub fn encode(&self, record: &FeatureRecord) -> Result<(Vec<f64>, Vec<String>), RiskError> {
        let mut x = Vec::with_capacity(self.width());
        let mut warnings = Vec::new();
        for f in &self.features {
            let raw = record
                .get(&f.name)
                .ok_or_else(|| RiskError::MissingFeature(f.name.clone()))?;
            let mut value = if raw.is_empty() { f.mode.clone() } else { raw.clone() };
            if f.name == ATC_FEATURE {
                value = truncate_atc(&value);
            }
            let hit = f.categories.iter().position(|c| *c == value);
            if hit.is_none() {
                warnings.push(format!("{}: unseen category `{value}` encoded as all zeros", f.name));
            }
            x.extend((0..f.categories.len()).map(|i| if Some(i) == hit { 1.0 } else { 0.0 }));
        }
        Ok((x, warnings))
    }

    /// Reads the model features of one table row.
    pub fn record_from_row(&self, header: &[String], row: &[String]) -> Result<FeatureRecord, RiskError> {
        self.features
            .iter()
            .map(|f| {
                let i = header
                    .iter()
                    .position(|h| *h == f.column)
                    .ok_or_else(|| RiskError::MissingColumn(f.column.clone()))?;
                Ok((f.name.clone(), row[i].clone()))
            })
            .collect()
    }
}

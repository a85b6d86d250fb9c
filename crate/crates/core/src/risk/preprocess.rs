use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use super::features::{derive_outcome, truncate_atc, FeatureSpec, FeatureVocab, ATC_FEATURE, FEATURES};
use super::RiskError;
use crate::fhir::parse_date;
use crate::table::Table;

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    /// Drop a column when more than this share of its cells is empty.
    pub missing_threshold: f64,
    /// Drop a column when its most frequent value covers more than this
    /// share of its nonempty cells.
    pub dominance_threshold: f64,
    /// Columns carrying the same information as a retained one.
    pub redundant: Vec<String>,
    /// `(feature name, source column)` for the eight model inputs.
    pub features: Vec<(String, String)>,
    pub start_column: String,
    pub end_column: String,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            missing_threshold: 0.5,
            dominance_threshold: 0.99,
            redundant: [
                "patient_county_name",
                "patient_birth_date",
                "prescription_category_code",
                "prescription_reimbursement_category_code",
                "drug_name",
                "drug_id",
                "hospitalization_institute_county_number",
            ]
            .map(String::from)
            .to_vec(),
            features: FEATURES.iter().map(|(f, c)| (f.to_string(), c.to_string())).collect(),
            start_column: "hospitalization_start_date".into(),
            end_column: "hospitalization_end_date".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropRule {
    MissingValues,
    Redundant,
    Dominant,
    OutcomeSource,
}

impl DropRule {
    pub fn code(self) -> u8 {
        match self {
            DropRule::MissingValues => 1,
            DropRule::Redundant => 2,
            DropRule::Dominant => 3,
            DropRule::OutcomeSource => 4,
        }
    }
}

impl fmt::Display for DropRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DropRule::MissingValues => "missing-values",
            DropRule::Redundant => "redundant",
            DropRule::Dominant => "dominant-category",
            DropRule::OutcomeSource => "outcome-source",
        };
        write!(f, "{s} (rule {})", self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "step", rename_all = "kebab-case")]
pub enum AuditEntry {
    Dropped {
        column: String,
        rule: DropRule,
        detail: String,
    },
    Outcome {
        positives: usize,
        negatives: usize,
    },
    Truncated {
        column: String,
        cells: usize,
    },
    Imputed {
        row: usize,
        column: String,
        value: String,
    },
    Unused {
        column: String,
    },
    Encoded {
        feature: String,
        column: String,
        categories: usize,
    },
}

impl fmt::Display for AuditEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AuditEntry::Dropped { column, rule, detail } => write!(f, "drop {column}: {rule}, {detail}"),
            AuditEntry::Outcome { positives, negatives } => {
                write!(f, "outcome: {positives} positive, {negatives} negative")
            }
            AuditEntry::Truncated { column, cells } => write!(f, "truncate {column} to 3 characters ({cells} cells)"),
            AuditEntry::Imputed { row, column, value } => write!(f, "impute row {row} {column} = `{value}` (mode)"),
            AuditEntry::Unused { column } => write!(f, "unused {column}: not a model feature"),
            AuditEntry::Encoded {
                feature,
                column,
                categories,
            } => write!(f, "encode {feature} from {column}: {categories} categories"),
        }
    }
}

/// One-hot design matrix with 0/1 labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMatrix {
    pub columns: Vec<(String, String)>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<u8>,
}

impl EncodedMatrix {
    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn subset(&self, rows: &[usize]) -> EncodedMatrix {
        EncodedMatrix {
            columns: self.columns.clone(),
            x: rows.iter().map(|&i| self.x[i].clone()).collect(),
            y: rows.iter().map(|&i| self.y[i]).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub matrix: EncodedMatrix,
    pub spec: FeatureSpec,
    pub audit: Vec<AuditEntry>,
}

/// Most frequent nonempty value; ties go to the smallest.
fn mode(cells: &[String]) -> Option<String> {
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for c in cells.iter().filter(|c| !c.is_empty()) {
        *freq.entry(c).or_default() += 1;
    }
    let best = freq.values().copied().max()?;
    freq.into_iter().find(|(_, n)| *n == best).map(|(v, _)| v.to_string())
}

pub fn preprocess(t: &Table, config: &PreprocessConfig) -> Result<Preprocessed, RiskError> {
    let n = t.n_rows();
    let mut required: BTreeMap<&str, &str> = config.features.iter().map(|(f, c)| (c.as_str(), f.as_str())).collect();
    required.insert(&config.start_column, "outcome");
    required.insert(&config.end_column, "outcome");
    for c in required.keys() {
        if t.column_index(c).is_none() {
            return Err(RiskError::MissingColumn(c.to_string()));
        }
    }
    if n == 0 {
        return Err(RiskError::SingleClass);
    }

    let mut live: Vec<(String, Vec<String>)> = t
        .header()
        .iter()
        .enumerate()
        .map(|(i, h)| (h.clone(), t.column(i).map(str::to_string).collect()))
        .collect();
    let mut audit = Vec::new();

    let mut apply = |live: &mut Vec<(String, Vec<String>)>,
                     rule: DropRule,
                     verdict: &dyn Fn(&str, &[String]) -> Option<String>|
     -> Result<(), RiskError> {
        let mut kept = Vec::with_capacity(live.len());
        for (name, cells) in live.drain(..) {
            match verdict(&name, &cells) {
                None => kept.push((name, cells)),
                Some(detail) => {
                    if let Some(feature) = required.get(name.as_str()) {
                        return Err(RiskError::FeatureDropped {
                            feature: feature.to_string(),
                            column: name,
                            rule,
                        });
                    }
                    audit.push(AuditEntry::Dropped {
                        column: name,
                        rule,
                        detail,
                    });
                }
            }
        }
        *live = kept;
        Ok(())
    };

    apply(&mut live, DropRule::MissingValues, &|_, cells| {
        let missing = cells.iter().filter(|c| c.is_empty()).count();
        let frac = missing as f64 / n as f64;
        (frac > config.missing_threshold).then(|| format!("{missing} of {n} cells empty ({:.1}%)", frac * 100.0))
    })?;
    apply(&mut live, DropRule::Redundant, &|name, _| {
        config
            .redundant
            .iter()
            .any(|r| r == name)
            .then(|| "configured as redundant".to_string())
    })?;
    apply(&mut live, DropRule::Dominant, &|_, cells| {
        let nonempty: Vec<String> = cells.iter().filter(|c| !c.is_empty()).cloned().collect();
        let top = mode(&nonempty)?;
        let count = nonempty.iter().filter(|c| **c == top).count();
        let frac = count as f64 / nonempty.len() as f64;
        (frac > config.dominance_threshold).then(|| format!("`{top}` in {:.1}% of cells", frac * 100.0))
    })?;

    let take = |live: &mut Vec<(String, Vec<String>)>, name: &str| {
        let i = live
            .iter()
            .position(|(c, _)| c == name)
            .expect("required column survived");
        live.remove(i).1
    };
    let starts = take(&mut live, &config.start_column);
    let ends = take(&mut live, &config.end_column);
    let mut y = Vec::with_capacity(n);
    for (row, (s, e)) in starts.iter().zip(&ends).enumerate() {
        let date = |v: &str, col: &str| {
            parse_date(v).map_err(|reason| RiskError::BadDate {
                row,
                column: col.to_string(),
                reason,
            })
        };
        let label =
            derive_outcome(date(s, &config.start_column)?, date(e, &config.end_column)?).map_err(|e| e.at_row(row))?;
        y.push(label);
    }
    let positives = y.iter().filter(|&&v| v == 1).count();
    for col in [&config.start_column, &config.end_column] {
        audit.push(AuditEntry::Dropped {
            column: col.clone(),
            rule: DropRule::OutcomeSource,
            detail: "used to derive the outcome".into(),
        });
    }
    audit.push(AuditEntry::Outcome {
        positives,
        negatives: n - positives,
    });
    if positives == 0 || positives == n {
        return Err(RiskError::SingleClass);
    }

    let atc_column = config
        .features
        .iter()
        .find(|(f, _)| f == ATC_FEATURE)
        .map(|(_, c)| c.clone());
    if let Some(atc) = &atc_column {
        if let Some((_, cells)) = live.iter_mut().find(|(c, _)| c == atc) {
            let mut changed = 0;
            for c in cells.iter_mut() {
                let t = truncate_atc(c);
                if t != *c {
                    *c = t;
                    changed += 1;
                }
            }
            audit.push(AuditEntry::Truncated {
                column: atc.clone(),
                cells: changed,
            });
        }
    }

    let mut modes: BTreeMap<String, String> = BTreeMap::new();
    for (name, cells) in live.iter_mut() {
        let Some(m) = mode(cells) else { continue };
        for (row, c) in cells.iter_mut().enumerate() {
            if c.is_empty() {
                *c = m.clone();
                audit.push(AuditEntry::Imputed {
                    row,
                    column: name.clone(),
                    value: m.clone(),
                });
            }
        }
        modes.insert(name.clone(), m);
    }

    let mut features: Vec<FeatureVocab> = Vec::new();
    let mut feature_cells: Vec<&Vec<String>> = Vec::new();
    let mut ordered: Vec<&(String, String)> = config.features.iter().collect();
    ordered.sort();
    for (fname, col) in ordered {
        let cells = &live.iter().find(|(c, _)| c == col).expect("feature column survived").1;
        let categories: Vec<String> = cells.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        audit.push(AuditEntry::Encoded {
            feature: fname.clone(),
            column: col.clone(),
            categories: categories.len(),
        });
        features.push(FeatureVocab {
            name: fname.clone(),
            column: col.clone(),
            categories,
            mode: modes.get(col).cloned().unwrap_or_default(),
        });
        feature_cells.push(cells);
    }
    for (name, _) in &live {
        if !config.features.iter().any(|(_, c)| c == name) {
            audit.push(AuditEntry::Unused { column: name.clone() });
        }
    }

    let spec = FeatureSpec {
        features,
        start_column: config.start_column.clone(),
        end_column: config.end_column.clone(),
    };
    let x: Vec<Vec<f64>> = (0..n)
        .map(|row| {
            let mut out = Vec::with_capacity(spec.width());
            for (f, cells) in spec.features.iter().zip(&feature_cells) {
                out.extend(f.categories.iter().map(|c| if *c == cells[row] { 1.0 } else { 0.0 }));
            }
            out
        })
        .collect();
    Ok(Preprocessed {
        matrix: EncodedMatrix {
            columns: spec.column_keys(),
            x,
            y,
        },
        spec,
        audit,
    })
}

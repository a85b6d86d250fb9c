//! Dependency-tree categorical model: a maximum mutual-information spanning
//! tree over the columns with one smoothed conditional table per column.
//! Fit once on a flat table, then draw any number of rows by ancestral
//! sampling. The file format is described in `docs/model-format.md`.

mod fit;
mod offset;
mod report;
mod sample;
mod stats;

pub use fit::{fit, SchemaHints};
pub use offset::DayOffset;
pub use report::{quality_report, ColumnQuality, EdgeQuality, QualityReport};
pub use sample::sample;
pub use stats::{entropy, mutual_information, total_variation};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::table::Table;

pub const MODEL_FORMAT: &str = "fhirsynth-synth";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("cannot fit an empty table")]
    EmptyTable,
    #[error("need at least 2 rows to fit, got {0}")]
    TooFewRows(usize),
    #[error("schema hint names unknown column `{0}`")]
    UnknownHintColumn(String),
    #[error("count column `{column}` holds non-count value `{value}`")]
    NotACount { column: String, value: String },
    #[error("header mismatch: {0}")]
    HeaderMismatch(String),
    #[error("day offset: {0}")]
    BadOffset(String),
    #[error("model file: {0}")]
    BadModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColumnKind {
    Categorical,
    /// Dates, days and years, kept as opaque categories.
    DateCategorical,
    /// Small nonnegative integers, grouped into at most 16 bins.
    Count,
}

/// One model state of a column. Categorical states carry a single value;
/// a count bin carries the observed values it covers with their counts and
/// a sampled cell is drawn from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub label: String,
    pub values: Vec<(String, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    pub states: Vec<State>,
}

impl ColumnSchema {
    /// Every value the column can emit.
    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.states
            .iter()
            .flat_map(|s| s.values.iter().map(|(v, _)| v.as_str()))
    }

    /// State index of a raw cell, if the value was seen during fit.
    pub fn state_of(&self, value: &str) -> Option<usize> {
        self.states
            .iter()
            .position(|s| s.values.iter().any(|(v, _)| v == value))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeModel {
    pub format: String,
    pub version: u32,
    pub columns: Vec<ColumnSchema>,
    pub root: usize,
    /// `parents[c]` is `None` only for the root.
    pub parents: Vec<Option<usize>>,
    /// Joint state counts: `counts[c][p][s]` is the number of training rows
    /// with parent state `p` and own state `s` (a single row for the root).
    pub counts: Vec<Vec<Vec<u64>>>,
    /// Mutual information (nats) of each column with its parent.
    pub edge_mi: Vec<Option<f64>>,
    pub rows: usize,
    pub seed: u64,
    /// Columns modelled as day distances from an anchor column.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub day_offsets: Vec<DayOffset>,
    #[serde(skip)]
    cpt_cache: Vec<Vec<Vec<f64>>>,
}

impl GenerativeModel {
    pub(crate) fn assemble(
        columns: Vec<ColumnSchema>,
        root: usize,
        parents: Vec<Option<usize>>,
        counts: Vec<Vec<Vec<u64>>>,
        edge_mi: Vec<Option<f64>>,
        rows: usize,
        seed: u64,
    ) -> GenerativeModel {
        let mut m = GenerativeModel {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            columns,
            root,
            parents,
            counts,
            edge_mi,
            rows,
            seed,
            day_offsets: Vec::new(),
            cpt_cache: Vec::new(),
        };
        m.cpt_cache = m.compute_cpts();
        m
    }

    pub fn header(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    /// `(column, anchor)` indices of the day-offset columns.
    pub(crate) fn offset_pairs(&self) -> Vec<(usize, usize)> {
        offset::resolve(&self.day_offsets, &self.header()).expect("validated model")
    }

    /// A table over this model's header, with offset columns as the model
    /// stores them.
    pub(crate) fn to_model_space<'a>(&self, t: &'a Table) -> std::borrow::Cow<'a, Table> {
        offset::to_model_space(t, &self.offset_pairs())
    }

    /// Smoothed conditional table of column `c`: `cpt(c)[p][s] =
    /// (count + 1) / (row total + states)`.
    pub fn cpt(&self, c: usize) -> &[Vec<f64>] {
        &self.cpt_cache[c]
    }

    fn compute_cpts(&self) -> Vec<Vec<Vec<f64>>> {
        self.counts
            .iter()
            .map(|rows| {
                rows.iter()
                    .map(|row| {
                        let total: u64 = row.iter().sum();
                        let denom = (total + row.len() as u64) as f64;
                        row.iter().map(|&c| (c + 1) as f64 / denom).collect()
                    })
                    .collect()
            })
            .collect()
    }

    /// Columns in root-to-leaves order; each column follows its parent.
    pub fn topological_order(&self) -> Vec<usize> {
        let n = self.columns.len();
        let mut children = vec![Vec::new(); n];
        for (c, p) in self.parents.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(c);
            }
        }
        let mut order = vec![self.root];
        let mut i = 0;
        while i < order.len() {
            order.extend(children[order[i]].iter().copied());
            i += 1;
        }
        order
    }

    /// Model marginal over the states of column `c`.
    pub fn marginal(&self, c: usize) -> Vec<f64> {
        let mut path = vec![c];
        while let Some(p) = self.parents[*path.last().unwrap()] {
            path.push(p);
        }
        let mut dist = self.cpt(self.root)[0].clone();
        for &col in path.iter().rev().skip(1) {
            let cpt = self.cpt(col);
            let mut next = vec![0.0; self.columns[col].states.len()];
            for (ps, &pp) in dist.iter().enumerate() {
                for (s, q) in cpt[ps].iter().enumerate() {
                    next[s] += pp * q;
                }
            }
            dist = next;
        }
        dist
    }

    /// Checks the structural invariants: a single root, a spanning acyclic
    /// tree, table shapes matching the state counts.
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::BadModel(m));
        if self.format != MODEL_FORMAT {
            return bad(format!("format is `{}`, expected `{MODEL_FORMAT}`", self.format));
        }
        if self.version != MODEL_VERSION {
            return bad(format!("unsupported version {}", self.version));
        }
        let n = self.columns.len();
        if n == 0 || self.parents.len() != n || self.counts.len() != n || self.edge_mi.len() != n {
            return bad("column, parent and table counts disagree".into());
        }
        if self.root >= n || self.parents[self.root].is_some() {
            return bad("root column has a parent".into());
        }
        if self
            .parents
            .iter()
            .enumerate()
            .any(|(c, p)| c != self.root && p.is_none_or(|p| p >= n))
        {
            return bad("non-root column without a valid parent".into());
        }
        if self.topological_order().len() != n {
            return bad("parent map is not a tree spanning all columns".into());
        }
        if let Err(name) = offset::resolve(&self.day_offsets, &self.header()) {
            return bad(format!("day offset names unknown column `{name}`"));
        }
        fit::check_offsets(&self.day_offsets).map_err(|e| SynthError::BadModel(e.to_string()))?;
        for (c, col) in self.columns.iter().enumerate() {
            if col.states.is_empty() || col.states.iter().any(|s| s.values.is_empty()) {
                return bad(format!("column `{}` has an empty vocabulary", col.name));
            }
            let parent_states = self.parents[c].map_or(1, |p| self.columns[p].states.len());
            let t = &self.counts[c];
            if t.len() != parent_states || t.iter().any(|r| r.len() != col.states.len()) {
                return bad(format!("table of `{}` has the wrong shape", col.name));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<GenerativeModel, SynthError> {
        let mut m: GenerativeModel = serde_json::from_str(text).map_err(|e| SynthError::BadModel(e.to_string()))?;
        m.validate()?;
        m.cpt_cache = m.compute_cpts();
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SynthError> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<GenerativeModel, SynthError> {
        GenerativeModel::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests;

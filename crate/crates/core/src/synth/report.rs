use std::collections::HashSet;
use std::fmt;

use serde::Serialize;

use super::stats::{mutual_information, total_variation};
use super::{GenerativeModel, SynthError};
use crate::table::Table;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnQuality {
    pub column: String,
    pub tv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeQuality {
    pub parent: String,
    pub child: String,
    pub mi_real: f64,
    pub mi_synth: f64,
    pub mi_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityReport {
    pub real_rows: usize,
    pub synth_rows: usize,
    pub columns: Vec<ColumnQuality>,
    pub edges: Vec<EdgeQuality>,
    pub tv_max: f64,
    pub tv_mean: f64,
    pub mi_diff_max: f64,
    pub mi_diff_mean: f64,
    /// Share of synthetic rows identical to some real row.
    pub exact_match_fraction: f64,
    /// Probability that one model draw reproduces some real row exactly.
    pub expected_match_fraction: f64,
}

impl QualityReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for QualityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rows: real {} synthetic {}", self.real_rows, self.synth_rows)?;
        writeln!(f, "tv: mean {:.4} max {:.4}", self.tv_mean, self.tv_max)?;
        writeln!(f, "mi diff: mean {:.4} max {:.4}", self.mi_diff_mean, self.mi_diff_max)?;
        writeln!(
            f,
            "exact matches: {:.4} (model expectation {:.4})",
            self.exact_match_fraction, self.expected_match_fraction
        )?;
        for c in &self.columns {
            writeln!(f, "  {:<44} tv {:.4}", c.column, c.tv)?;
        }
        Ok(())
    }
}

fn max_mean(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    (xs.clone().fold(0.0, f64::max), xs.sum::<f64>() / n as f64)
}

/// State codes of one column under the model; values the model never saw
/// share one extra code.
fn encode(model: &GenerativeModel, t: &Table, c: usize) -> (Vec<u32>, usize) {
    let col = &model.columns[c];
    let unseen = col.states.len();
    let lookup: std::collections::HashMap<&str, u32> = col
        .states
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.values.iter().map(move |(v, _)| (v.as_str(), i as u32)))
        .collect();
    let codes = t
        .rows()
        .iter()
        .map(|r| lookup.get(r[c].as_str()).copied().unwrap_or(unseen as u32))
        .collect();
    (codes, unseen + 1)
}

fn row_probability(model: &GenerativeModel, row: &[String]) -> f64 {
    let mut states = vec![0usize; row.len()];
    for (c, col) in model.columns.iter().enumerate() {
        match col.state_of(&row[c]) {
            Some(s) => states[c] = s,
            None => return 0.0,
        }
    }
    let mut p = 1.0;
    for (c, col) in model.columns.iter().enumerate() {
        let ps = model.parents[c].map_or(0, |q| states[q]);
        let st = &col.states[states[c]];
        let total: u64 = st.values.iter().map(|(_, n)| n).sum();
        let within = st.values.iter().find(|(v, _)| *v == row[c]).map_or(0, |(_, n)| *n);
        p *= model.cpt(c)[ps][states[c]] * within as f64 / total as f64;
    }
    p
}

/// Compares a real and a synthetic table: per-column TV distance over raw
/// cell values, mutual-information drift along the model's tree edges, and
/// the exact-match privacy smoke figures.
pub fn quality_report(real: &Table, synth: &Table, model: &GenerativeModel) -> Result<QualityReport, SynthError> {
    if real.header() != synth.header() {
        return Err(SynthError::HeaderMismatch("real and synthetic headers differ".into()));
    }
    if real.header() != model.header().as_slice() {
        return Err(SynthError::HeaderMismatch(
            "model was fitted on a different header".into(),
        ));
    }
    let columns: Vec<ColumnQuality> = real
        .header()
        .iter()
        .enumerate()
        .map(|(c, name)| ColumnQuality {
            column: name.clone(),
            tv: total_variation(
                real.rows().iter().map(|r| r[c].as_str()),
                synth.rows().iter().map(|r| r[c].as_str()),
            ),
        })
        .collect();

    // Edge and likelihood figures are taken where the model lives.
    let (real, synth) = (&*model.to_model_space(real), &*model.to_model_space(synth));
    let mut edges = Vec::new();
    for c in model.topological_order() {
        let Some(p) = model.parents[c] else { continue };
        let mi = |t: &Table| {
            let (a, va) = encode(model, t, p);
            let (b, vb) = encode(model, t, c);
            mutual_information(&a, &b, va, vb)
        };
        let (mi_real, mi_synth) = (mi(real), mi(synth));
        edges.push(EdgeQuality {
            parent: model.columns[p].name.clone(),
            child: model.columns[c].name.clone(),
            mi_real,
            mi_synth,
            mi_diff: (mi_real - mi_synth).abs(),
        });
    }

    let distinct_real: HashSet<&[String]> = real.rows().iter().map(Vec::as_slice).collect();
    let matches = synth
        .rows()
        .iter()
        .filter(|r| distinct_real.contains(r.as_slice()))
        .count();
    let mut distinct_sorted: Vec<&[String]> = distinct_real.into_iter().collect();
    distinct_sorted.sort();
    let expected: f64 = distinct_sorted.iter().map(|r| row_probability(model, r)).sum();

    let (tv_max, tv_mean) = max_mean(columns.iter().map(|c| c.tv));
    let (mi_diff_max, mi_diff_mean) = max_mean(edges.iter().map(|e| e.mi_diff));
    Ok(QualityReport {
        real_rows: real.n_rows(),
        synth_rows: synth.n_rows(),
        columns,
        edges,
        tv_max,
        tv_mean,
        mi_diff_max,
        mi_diff_mean,
        exact_match_fraction: if synth.n_rows() == 0 {
            0.0
        } else {
            matches as f64 / synth.n_rows() as f64
        },
        expected_match_fraction: expected.min(1.0),
    })
}

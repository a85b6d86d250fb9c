use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use super::offset::{self, DayOffset};
use super::stats::{entropy, mutual_information};
use super::{ColumnKind, ColumnSchema, GenerativeModel, State, SynthError};
use crate::fhir::parse_date;
use crate::table::Table;

const MAX_COUNT_BINS: usize = 16;

/// Per-column kind overrides. Columns without a hint are date-categorical
/// when every nonempty cell is a `YYYY-MM-DD` date and categorical otherwise;
/// count columns must be named. Day-offset columns are modelled as their
/// distance in days from an anchor date column.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SchemaHints {
    pub kinds: BTreeMap<String, ColumnKind>,
    pub day_offsets: Vec<DayOffset>,
}

impl SchemaHints {
    pub fn new() -> SchemaHints {
        SchemaHints::default()
    }

    pub fn with(mut self, column: &str, kind: ColumnKind) -> SchemaHints {
        self.kinds.insert(column.to_string(), kind);
        self
    }

    /// Models `column` as days after `anchor`.
    pub fn offset(mut self, column: &str, anchor: &str) -> SchemaHints {
        self.day_offsets.push(DayOffset {
            column: column.to_string(),
            anchor: anchor.to_string(),
        });
        self
    }

    /// Hints for the bundled hospitalization and prescription dataset.
    pub fn npr_norpd() -> SchemaHints {
        SchemaHints::new()
            .with("dispensed_packages", ColumnKind::Count)
            .with("dispensed_ddd", ColumnKind::Count)
            .with("dispense_day", ColumnKind::DateCategorical)
            .with("dispense_year", ColumnKind::DateCategorical)
            .with("patient_death_year", ColumnKind::DateCategorical)
            .with("patient_death_month", ColumnKind::DateCategorical)
            .offset("hospitalization_end_date", "hospitalization_start_date")
    }

    /// Keeps only the hints naming columns of `header`.
    pub fn restricted_to(&self, header: &[String]) -> SchemaHints {
        SchemaHints {
            kinds: self
                .kinds
                .iter()
                .filter(|(k, _)| header.contains(k))
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
            day_offsets: self
                .day_offsets
                .iter()
                .filter(|o| header.contains(&o.column) && header.contains(&o.anchor))
                .cloned()
                .collect(),
        }
    }

    fn kind_for(&self, name: &str, cells: &[&str]) -> ColumnKind {
        if let Some(k) = self.kinds.get(name) {
            return *k;
        }
        let mut nonempty = cells.iter().filter(|c| !c.is_empty()).peekable();
        if nonempty.peek().is_some() && nonempty.all(|c| parse_date(c).is_ok()) {
            ColumnKind::DateCategorical
        } else {
            ColumnKind::Categorical
        }
    }
}

fn categorical_states(cells: &[&str]) -> Vec<State> {
    let mut freq: BTreeMap<&str, u64> = BTreeMap::new();
    for c in cells {
        *freq.entry(c).or_default() += 1;
    }
    freq.into_iter()
        .map(|(v, n)| State {
            label: v.to_string(),
            values: vec![(v.to_string(), n)],
        })
        .collect()
}

fn count_states(name: &str, cells: &[&str]) -> Result<Vec<State>, SynthError> {
    let mut empty = 0u64;
    let mut freq: BTreeMap<(u64, &str), u64> = BTreeMap::new();
    for c in cells {
        if c.is_empty() {
            empty += 1;
            continue;
        }
        let n: u64 = c.parse().map_err(|_| SynthError::NotACount {
            column: name.to_string(),
            value: c.to_string(),
        })?;
        *freq.entry((n, c)).or_default() += 1;
    }
    let mut states = Vec::new();
    if empty > 0 {
        states.push(State {
            label: String::new(),
            values: vec![(String::new(), empty)],
        });
    }
    let distinct: Vec<((u64, &str), u64)> = freq.into_iter().collect();
    if distinct.len() <= MAX_COUNT_BINS {
        states.extend(distinct.into_iter().map(|((_, v), n)| State {
            label: v.to_string(),
            values: vec![(v.to_string(), n)],
        }));
        return Ok(states);
    }
    // Quantile bins: close a bin once the running count reaches the next
    // 1/16 of the nonempty total.
    let total: u64 = distinct.iter().map(|(_, n)| n).sum();
    let mut cum = 0u64;
    let mut bin: Vec<(String, u64)> = Vec::new();
    let mut bins_closed = 0u64;
    for ((_, v), n) in distinct {
        bin.push((v.to_string(), n));
        cum += n;
        if cum * MAX_COUNT_BINS as u64 >= (bins_closed + 1) * total {
            while cum * MAX_COUNT_BINS as u64 >= (bins_closed + 1) * total {
                bins_closed += 1;
            }
            states.push(count_bin(std::mem::take(&mut bin)));
        }
    }
    if !bin.is_empty() {
        states.push(count_bin(bin));
    }
    Ok(states)
}

fn count_bin(values: Vec<(String, u64)>) -> State {
    let label = match (values.first(), values.last()) {
        (Some(a), Some(b)) if values.len() > 1 => format!("{}..{}", a.0, b.0),
        (Some(a), _) => a.0.clone(),
        _ => unreachable!("bins are nonempty"),
    };
    State { label, values }
}

/// Fits the tree and its conditional tables. Fitting itself is
/// deterministic; `seed` is recorded as metadata.
pub fn fit(t: &Table, hints: &SchemaHints, seed: u64) -> Result<GenerativeModel, SynthError> {
    if t.n_rows() == 0 || t.n_cols() == 0 {
        return Err(SynthError::EmptyTable);
    }
    if t.n_rows() < 2 {
        return Err(SynthError::TooFewRows(t.n_rows()));
    }
    if let Some(c) = hints.kinds.keys().find(|k| t.column_index(k).is_none()) {
        return Err(SynthError::UnknownHintColumn(c.clone()));
    }
    let mut day_offsets = hints.day_offsets.clone();
    day_offsets.sort();
    day_offsets.dedup();
    let pairs = offset::resolve(&day_offsets, t.header()).map_err(SynthError::UnknownHintColumn)?;
    check_offsets(&day_offsets)?;
    let t: &Table = &offset::to_model_space(t, &pairs);
    let offset_cols: Vec<usize> = pairs.iter().map(|p| p.0).collect();

    let mut columns = Vec::with_capacity(t.n_cols());
    let mut coded: Vec<Vec<u32>> = Vec::with_capacity(t.n_cols());
    for (ci, name) in t.header().iter().enumerate() {
        let cells: Vec<&str> = t.rows().iter().map(|r| r[ci].as_str()).collect();
        let kind = if offset_cols.contains(&ci) {
            ColumnKind::Categorical
        } else {
            hints.kind_for(name, &cells)
        };
        let states = match kind {
            ColumnKind::Count => count_states(name, &cells)?,
            _ => categorical_states(&cells),
        };
        let lookup: HashMap<&str, u32> = states
            .iter()
            .enumerate()
            .flat_map(|(i, s)| s.values.iter().map(move |(v, _)| (v.as_str(), i as u32)))
            .collect();
        coded.push(cells.iter().map(|c| lookup[c]).collect());
        columns.push(ColumnSchema {
            name: name.clone(),
            kind,
            states,
        });
    }

    let n = columns.len();
    let sizes: Vec<usize> = columns.iter().map(|c| c.states.len()).collect();
    let entropies: Vec<f64> = (0..n)
        .map(|c| {
            let mut counts = vec![0u64; sizes[c]];
            for &s in &coded[c] {
                counts[s as usize] += 1;
            }
            entropy(&counts)
        })
        .collect();
    let root = (0..n)
        .max_by(|&a, &b| {
            entropies[a]
                .total_cmp(&entropies[b])
                .then_with(|| columns[b].name.cmp(&columns[a].name))
        })
        .expect("at least one column");

    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let mut edges: Vec<(f64, usize, usize)> = pairs
        .par_iter()
        .map(|&(i, j)| (mutual_information(&coded[i], &coded[j], sizes[i], sizes[j]), i, j))
        .collect();
    let name_pair = |i: usize, j: usize| {
        let (a, b) = (&columns[i].name, &columns[j].name);
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    };
    edges.sort_by(|x, y| {
        y.0.total_cmp(&x.0)
            .then_with(|| name_pair(x.1, x.2).cmp(&name_pair(y.1, y.2)))
    });

    let mut uf: Vec<usize> = (0..n).collect();
    fn find(uf: &mut [usize], mut x: usize) -> usize {
        while uf[x] != x {
            uf[x] = uf[uf[x]];
            x = uf[x];
        }
        x
    }
    let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(mi, i, j) in &edges {
        let (ri, rj) = (find(&mut uf, i), find(&mut uf, j));
        if ri != rj {
            uf[ri] = rj;
            adjacency[i].push((j, mi));
            adjacency[j].push((i, mi));
        }
    }

    let mut parents = vec![None; n];
    let mut edge_mi = vec![None; n];
    let mut seen = vec![false; n];
    seen[root] = true;
    let mut queue = std::collections::VecDeque::from([root]);
    while let Some(c) = queue.pop_front() {
        let mut next = adjacency[c].clone();
        next.sort_by_key(|e| e.0);
        for (child, mi) in next {
            if !seen[child] {
                seen[child] = true;
                parents[child] = Some(c);
                edge_mi[child] = Some(mi);
                queue.push_back(child);
            }
        }
    }

    let counts: Vec<Vec<Vec<u64>>> = (0..n)
        .map(|c| match parents[c] {
            None => {
                let mut row = vec![0u64; sizes[c]];
                for &s in &coded[c] {
                    row[s as usize] += 1;
                }
                vec![row]
            }
            Some(p) => {
                let mut table = vec![vec![0u64; sizes[c]]; sizes[p]];
                for (&ps, &s) in coded[p].iter().zip(&coded[c]) {
                    table[ps as usize][s as usize] += 1;
                }
                table
            }
        })
        .collect();

    debug_assert!(seen.iter().all(|&s| s));
    let mut m = GenerativeModel::assemble(columns, root, parents, counts, edge_mi, t.n_rows(), seed);
    m.day_offsets = day_offsets;
    Ok(m)
}

/// Each offset column once, never an anchor, never its own anchor.
pub(crate) fn check_offsets(offsets: &[DayOffset]) -> Result<(), SynthError> {
    for (i, o) in offsets.iter().enumerate() {
        if o.column == o.anchor || offsets.iter().any(|x| x.column == o.anchor) {
            return Err(SynthError::BadOffset(format!(
                "`{}` cannot anchor `{}`",
                o.anchor, o.column
            )));
        }
        if offsets[..i].iter().any(|x| x.column == o.column) {
            return Err(SynthError::BadOffset(format!("`{}` has two anchors", o.column)));
        }
    }
    Ok(())
}

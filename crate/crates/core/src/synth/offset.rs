//! Date columns modelled relative to another date column. The model sees
//! the day difference instead of the date, so a sampled end date never
//! precedes its start.

use std::borrow::Cow;

use chrono::Days;
use serde::{Deserialize, Serialize};

use crate::fhir::parse_date;
use crate::table::Table;

/// `column` is stored as its day offset from `anchor`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DayOffset {
    pub column: String,
    pub anchor: String,
}

/// Prefix of a cell kept verbatim because it or its anchor is not a date.
const LITERAL: char = '=';

/// Model-side value of a cell: `+3` for three days after the anchor, the
/// empty string for an empty cell, `=` and the cell otherwise.
pub(crate) fn encode_cell(anchor: &str, value: &str) -> String {
    if value.is_empty() {
        return String::new();
    }
    match (parse_date(anchor), parse_date(value)) {
        (Ok(a), Ok(v)) => format!("{:+}", (v - a).num_days()),
        _ => format!("{LITERAL}{value}"),
    }
}

/// Inverse of [`encode_cell`]. An offset drawn next to an anchor that is
/// not a date has nothing to count from and yields an empty cell.
pub(crate) fn decode_cell(anchor: &str, value: &str) -> String {
    if let Some(lit) = value.strip_prefix(LITERAL) {
        return lit.to_string();
    }
    let (Ok(a), Ok(days)) = (parse_date(anchor), value.parse::<i64>()) else {
        return String::new();
    };
    let shifted = if days >= 0 {
        a.checked_add_days(Days::new(days as u64))
    } else {
        a.checked_sub_days(Days::new(days.unsigned_abs()))
    };
    shifted.map(|d| d.to_string()).unwrap_or_default()
}

/// `(column, anchor)` index pairs of `offsets` within `header`, or the
/// first name that is missing.
pub(crate) fn resolve(offsets: &[DayOffset], header: &[String]) -> Result<Vec<(usize, usize)>, String> {
    let pos = |n: &str| header.iter().position(|h| h == n).ok_or_else(|| n.to_string());
    offsets.iter().map(|o| Ok((pos(&o.column)?, pos(&o.anchor)?))).collect()
}

/// The table as the model sees it.
pub(crate) fn to_model_space<'a>(t: &'a Table, pairs: &[(usize, usize)]) -> Cow<'a, Table> {
    if pairs.is_empty() {
        return Cow::Borrowed(t);
    }
    let rows = t
        .rows()
        .iter()
        .map(|r| {
            let mut r = r.clone();
            for &(c, a) in pairs {
                r[c] = encode_cell(&r[a], &r[c]);
            }
            r
        })
        .collect();
    Cow::Owned(Table::new(t.header().to_vec(), rows).expect("same shape"))
}

/// Turns a sampled model-space row back into table cells.
pub(crate) fn from_model_space(row: &mut [String], pairs: &[(usize, usize)]) {
    for &(c, a) in pairs {
        row[c] = decode_cell(&row[a], &row[c]);
    }
}

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};

use crate::fhir::{parse_date, FieldType};

/// Value coercion between dataset cells and resource field values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    /// Cell copied verbatim.
    Identity,
    /// `M`/`1`/`male` to `male`, `F`/`2`/`female` to `female`
    /// (case-insensitive); `other` and `unknown` pass through.
    /// Inverts to `M`, `F`, `other`, `unknown`.
    GenderCode,
    /// `YYYY-MM-DD` or `YYYYMMDD` to `YYYY-MM-DD`.
    DateIso,
    /// Two cells, year and month, to the first day of that month.
    /// Inverts to `YYYY` and the unpadded month number.
    YearMonthDate,
    /// Integer, normalized to its shortest decimal form.
    Int,
}

impl Transform {
    pub const ALL: [Transform; 5] = [
        Transform::Identity,
        Transform::GenderCode,
        Transform::DateIso,
        Transform::YearMonthDate,
        Transform::Int,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Transform::Identity => "identity",
            Transform::GenderCode => "gender-code",
            Transform::DateIso => "date-iso",
            Transform::YearMonthDate => "year-month-date",
            Transform::Int => "int",
        }
    }

    /// Number of dataset columns the transform consumes.
    pub fn arity(self) -> usize {
        match self {
            Transform::YearMonthDate => 2,
            _ => 1,
        }
    }

    /// Whether the transform can feed a field of the given type.
    pub fn fits(self, ty: FieldType) -> bool {
        match (self, ty) {
            (_, FieldType::Ref(_)) => false,
            (Transform::Identity, _) => true,
            (Transform::GenderCode, FieldType::Gender) => true,
            (Transform::DateIso | Transform::YearMonthDate, FieldType::Date) => true,
            (Transform::Int, FieldType::Int | FieldType::Str) => true,
            _ => false,
        }
    }

    /// Cells to a flat field value. All cells are nonempty.
    pub fn forward(self, cells: &[&str]) -> Result<String, String> {
        debug_assert_eq!(cells.len(), self.arity());
        let c = cells[0];
        match self {
            Transform::Identity => Ok(c.to_string()),
            Transform::GenderCode => match c.to_ascii_lowercase().as_str() {
                "m" | "1" | "male" => Ok("male".into()),
                "f" | "2" | "female" => Ok("female".into()),
                "other" => Ok("other".into()),
                "unknown" => Ok("unknown".into()),
                _ => Err(format!("`{c}` is not a gender code")),
            },
            Transform::DateIso => {
                let normalized = if c.len() == 8 && c.bytes().all(|b| b.is_ascii_digit()) {
                    format!("{}-{}-{}", &c[..4], &c[4..6], &c[6..])
                } else {
                    c.to_string()
                };
                parse_date(&normalized).map(|d| d.format("%Y-%m-%d").to_string())
            }
            Transform::YearMonthDate => {
                let year: i32 = cells[0]
                    .trim()
                    .parse()
                    .map_err(|_| format!("`{}` is not a year", cells[0]))?;
                let month: u32 = cells[1]
                    .trim()
                    .parse()
                    .map_err(|_| format!("`{}` is not a month", cells[1]))?;
                NaiveDate::from_ymd_opt(year, month, 1)
                    .filter(|_| (0..=9999).contains(&year))
                    .map(|d| d.format("%Y-%m-%d").to_string())
                    .ok_or_else(|| format!("{year}-{month} is not a valid year and month"))
            }
            Transform::Int => c
                .trim()
                .parse::<i64>()
                .map(|n| n.to_string())
                .map_err(|_| format!("`{c}` is not an integer")),
        }
    }

    /// Flat field value back to cells, in canonical form.
    pub fn inverse(self, value: &str) -> Result<Vec<String>, String> {
        match self {
            Transform::Identity | Transform::DateIso | Transform::Int => Ok(vec![value.to_string()]),
            Transform::GenderCode => Ok(vec![match value {
                "male" => "M".into(),
                "female" => "F".into(),
                other => other.to_string(),
            }]),
            Transform::YearMonthDate => {
                let d = parse_date(value)?;
                Ok(vec![d.year().to_string(), d.month().to_string()])
            }
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Transform {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Transform::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown transform `{s}`"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gender_codes() {
        for c in ["M", "m", "1", "male", "Male"] {
            assert_eq!(Transform::GenderCode.forward(&[c]).unwrap(), "male");
        }
        for c in ["F", "2", "female"] {
            assert_eq!(Transform::GenderCode.forward(&[c]).unwrap(), "female");
        }
        assert!(Transform::GenderCode.forward(&["X"]).is_err());
        assert_eq!(Transform::GenderCode.inverse("male").unwrap(), vec!["M"]);
        assert_eq!(Transform::GenderCode.inverse("female").unwrap(), vec!["F"]);
    }

    #[test]
    fn dates() {
        assert_eq!(Transform::DateIso.forward(&["20200105"]).unwrap(), "2020-01-05");
        assert_eq!(Transform::DateIso.forward(&["2020-01-05"]).unwrap(), "2020-01-05");
        assert!(Transform::DateIso.forward(&["2020-02-30"]).is_err());
        assert!(Transform::DateIso.forward(&["5/1/2020"]).is_err());
        assert_eq!(Transform::YearMonthDate.forward(&["2019", "03"]).unwrap(), "2019-03-01");
        assert!(Transform::YearMonthDate.forward(&["2019", "13"]).is_err());
        assert_eq!(
            Transform::YearMonthDate.inverse("2019-03-01").unwrap(),
            vec!["2019", "3"]
        );
    }

    #[test]
    fn ints() {
        assert_eq!(Transform::Int.forward(&["007"]).unwrap(), "7");
        assert!(Transform::Int.forward(&["7.5"]).is_err());
    }

    #[test]
    fn names_round_trip() {
        for t in Transform::ALL {
            assert_eq!(t.name().parse::<Transform>().unwrap(), t);
        }
        assert!("uppercase".parse::<Transform>().is_err());
    }

    #[test]
    fn canonical_cells_survive_forward_then_inverse() {
        let cases: &[(Transform, &[&str])] = &[
            (Transform::Identity, &["abc"]),
            (Transform::GenderCode, &["M"]),
            (Transform::GenderCode, &["F"]),
            (Transform::DateIso, &["1999-12-31"]),
            (Transform::YearMonthDate, &["2001", "7"]),
            (Transform::Int, &["-42"]),
        ];
        for (t, cells) in cases {
            let v = t.forward(cells).unwrap();
            assert_eq!(&t.inverse(&v).unwrap(), cells, "{t}");
        }
    }
}

//! Random tables in the 35-column layout, each paired with the table an
//! independent canonicalizer says the round trip must produce.

use fhirsynth::table::Table;
use fhirsynth::wrangling::MappingIndex;
use rand::seq::IndexedRandom;
use rand::{Rng, RngCore};

#[derive(Clone, Copy)]
enum Domain {
    Text,
    Gender,
    Date,
    Int,
}

fn domain(column: &str) -> Domain {
    match column {
        "patient_gender" | "prescriber_gender" => Domain::Gender,
        "patient_birth_date" | "prescriber_birth_date" | "hospitalization_start_date" | "hospitalization_end_date" => {
            Domain::Date
        }
        "patient_death_year" | "patient_death_month" | "dispense_day" | "dispense_year" | "dispensed_packages" => {
            Domain::Int
        }
        _ => Domain::Text,
    }
}

const TEXT_CHARS: &[char] = &[
    'a', 'Z', '0', '7', ' ', ',', '"', '\'', '\n', 'ø', 'Å', '-', '.', '/', '{', '}', ':', '#',
];

/// (raw cell, canonical cell)
fn cell(d: Domain, rng: &mut dyn RngCore, messy: bool) -> (String, String) {
    if rng.random_bool(0.15) {
        return (String::new(), String::new());
    }
    match d {
        Domain::Text => {
            let n = rng.random_range(1..12);
            let s: String = (0..n).map(|_| *TEXT_CHARS.choose(rng).unwrap()).collect();
            (s.clone(), s)
        }
        Domain::Gender => {
            let (raw, canon) = *[
                ("M", "M"),
                ("F", "F"),
                ("male", "M"),
                ("Female", "F"),
                ("1", "M"),
                ("2", "F"),
                ("other", "other"),
                ("unknown", "unknown"),
            ]
            .choose(rng)
            .unwrap();
            if messy {
                (raw.into(), canon.into())
            } else {
                (canon.into(), canon.into())
            }
        }
        Domain::Date => {
            let y = rng.random_range(1900..2031);
            let m = rng.random_range(1..13);
            let days = [
                31,
                if y % 4 == 0 && (y % 100 != 0 || y % 400 == 0) {
                    29
                } else {
                    28
                },
                31,
                30,
                31,
                30,
                31,
                31,
                30,
                31,
                30,
                31,
            ];
            let d = rng.random_range(1..=days[m as usize - 1]);
            let canon = format!("{y:04}-{m:02}-{d:02}");
            if messy && rng.random_bool(0.5) {
                (format!("{y:04}{m:02}{d:02}"), canon)
            } else {
                (canon.clone(), canon)
            }
        }
        Domain::Int => {
            let n: i64 = if rng.random_bool(0.1) {
                rng.random()
            } else {
                rng.random_range(-50..5000)
            };
            let canon = n.to_string();
            if messy && n >= 0 {
                let raw = match rng.random_range(0..3) {
                    0 => format!(" {n} "),
                    1 => format!("+{n}"),
                    _ => format!("00{n}"),
                };
                (raw, canon)
            } else {
                (canon.clone(), canon)
            }
        }
    }
}

/// `messy` mixes in non-canonical spellings the transforms accept.
pub fn random_table(rng: &mut dyn RngCore, rows: usize, messy: bool) -> (Table, Table) {
    let header: Vec<String> = MappingIndex::npr_norpd().columns().to_vec();
    assert_eq!(header.len(), 35);
    let domains: Vec<Domain> = header.iter().map(|c| domain(c)).collect();
    let (mut raw, mut canon) = (Vec::with_capacity(rows), Vec::with_capacity(rows));
    for _ in 0..rows {
        let (r, c): (Vec<String>, Vec<String>) = domains.iter().map(|&d| cell(d, rng, messy)).unzip();
        raw.push(r);
        canon.push(c);
    }
    (
        Table::new(header.clone(), raw).unwrap(),
        Table::new(header, canon).unwrap(),
    )
}

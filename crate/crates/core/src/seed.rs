//! Deterministic seed dataset in the shape of the linked hospitalization and
//! prescription extract: one row per dispensed prescription tied to an
//! admission. Vocabularies are small fixed lists; persons and prescriptions
//! are drawn from pools that scale with the row count so that ids repeat,
//! and a prescription fixes its prescriber, category, reimbursement and drug.
//!
//! Admission length depends on arrival mode (emergency and transfer
//! admissions tend to last at least a day, planned ones do not), which gives
//! the risk model a signal to find.

use chrono::{Datelike, Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::table::Table;
use crate::wrangling::MappingIndex;

const COUNTIES: [(&str, &str, u32); 11] = [
    ("Oslo", "03", 13),
    ("Rogaland", "11", 9),
    ("Møre og Romsdal", "15", 5),
    ("Nordland", "18", 5),
    ("Viken", "30", 23),
    ("Innlandet", "34", 7),
    ("Vestfold og Telemark", "38", 8),
    ("Agder", "42", 6),
    ("Vestland", "46", 12),
    ("Trøndelag", "50", 9),
    ("Troms og Finnmark", "54", 5),
];

const INSTITUTES: [(&str, &str); 10] = [
    ("Oslo universitetssykehus", "03"),
    ("Akershus universitetssykehus", "30"),
    ("Stavanger universitetssjukehus", "11"),
    ("Haukeland universitetssjukehus", "46"),
    ("St. Olavs hospital", "50"),
    ("Universitetssykehuset Nord-Norge", "54"),
    ("Nordlandssykehuset", "18"),
    ("Sykehuset Innlandet", "34"),
    ("Sørlandet sykehus", "42"),
    ("Sykehuset Telemark", "38"),
];

/// (mode, weight, per-mille chance of a stay of at least one day)
const ARRIVAL: [(&str, u32, u32); 4] = [
    ("emergency", 45, 780),
    ("planned", 30, 250),
    ("referral", 18, 500),
    ("transfer", 7, 700),
];

const DISCHARGE: [(&str, u32); 5] = [
    ("home", 62),
    ("nursing-home", 14),
    ("other-hospital", 10),
    ("rehabilitation", 10),
    ("deceased", 4),
];

const DIAGNOSES: [(&str, u32); 14] = [
    ("I21", 9),
    ("I50", 9),
    ("I63", 7),
    ("J18", 10),
    ("J44", 8),
    ("E11", 8),
    ("N39", 6),
    ("K35", 5),
    ("S72", 6),
    ("C34", 5),
    ("F32", 6),
    ("M16", 7),
    ("R07", 8),
    ("A41", 6),
];

/// (category, code, weight, reimbursed)
const CATEGORIES: [(&str, &str, u32, bool); 3] = [
    ("Blue prescription", "B", 42, true),
    ("White prescription", "W", 48, false),
    ("Hospital prescription", "H", 10, false),
];

const REIMBURSEMENT: [(&str, &str, u32); 3] = [("§2", "2", 60), ("§3a", "3a", 25), ("§4", "4", 15)];

/// Chronic conditions a reimbursed prescription is granted for, ICD-10 and
/// ICPC-2 mixed as in the register.
const REIMBURSEMENT_CODES: [(&str, u32); 6] = [
    ("E11", 24),
    ("I10", 22),
    ("I50", 14),
    ("J44", 16),
    ("F32", 12),
    ("T90", 12),
];

/// (name, ATC, DDD, DDDs per package)
const DRUGS: [(&str, &str, &str, u32); 24] = [
    ("Metformin", "A10BA02", "2", 50),
    ("Insulin glargine", "A10AE04", "0.04", 37),
    ("Omeprazole", "A02BC01", "0.02", 28),
    ("Warfarin", "B01AA03", "0.0075", 100),
    ("Apixaban", "B01AF02", "0.01", 30),
    ("Ramipril", "C09AA05", "0.0025", 28),
    ("Losartan", "C09CA01", "0.05", 28),
    ("Metoprolol", "C07AB02", "0.15", 30),
    ("Furosemide", "C03CA01", "0.04", 100),
    ("Atorvastatin", "C10AA05", "0.02", 30),
    ("Simvastatin", "C10AA01", "0.03", 28),
    ("Prednisolone", "H02AB06", "0.01", 30),
    ("Amoxicillin", "J01CA04", "1.5", 7),
    ("Phenoxymethylpenicillin", "J01CE02", "2", 10),
    ("Ibuprofen", "M01AE01", "1.2", 10),
    ("Paracetamol", "N02BE01", "3", 33),
    ("Oxycodone", "N02AA05", "0.075", 14),
    ("Pregabalin", "N03AX16", "0.3", 28),
    ("Zopiclone", "N05CF01", "0.0075", 30),
    ("Sertraline", "N06AB06", "0.05", 30),
    ("Escitalopram", "N06AB10", "0.01", 28),
    ("Salbutamol", "R03AC02", "0.8", 25),
    ("Budesonide", "R03BA02", "0.8", 30),
    ("Cetirizine", "R06AE07", "0.01", 30),
];

const PACKAGES: [(&str, u32); 4] = [("1", 62), ("2", 24), ("3", 9), ("4", 5)];

struct Prescription {
    id: String,
    prescriber: usize,
    category: usize,
    /// Reimbursement paragraph and the condition it is granted for.
    reimbursement: Option<(usize, &'static str)>,
    drug: usize,
}

struct Person {
    id: String,
    gender: &'static str,
    birth: NaiveDate,
    county: usize,
    death: Option<(i32, u32)>,
}

fn pick_index<T>(rng: &mut ChaCha8Rng, items: &[T], weight: impl Fn(&T) -> u32) -> usize {
    let total: u32 = items.iter().map(&weight).sum();
    let mut x = rng.random_range(0..total);
    for (i, it) in items.iter().enumerate() {
        let w = weight(it);
        if x < w {
            return i;
        }
        x -= w;
    }
    unreachable!("weights sum to total")
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T], weight: impl Fn(&T) -> u32) -> &'a T {
    &items[pick_index(rng, items, weight)]
}

fn random_date(rng: &mut ChaCha8Rng, from: NaiveDate, days: i64) -> NaiveDate {
    from + Duration::days(rng.random_range(0..days))
}

fn age_group(birth: NaiveDate) -> &'static str {
    match 2020 - birth.year() {
        ..=17 => "0-17",
        18..=39 => "18-39",
        40..=59 => "40-59",
        60..=69 => "60-69",
        70..=79 => "70-79",
        _ => "80+",
    }
}

fn person_pool(rng: &mut ChaCha8Rng, n: usize, prefix: &str, digits: usize, births: (NaiveDate, i64)) -> Vec<Person> {
    let mut ids = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let id = format!("{prefix}{:0digits$}", rng.random_range(0..10u64.pow(digits as u32)));
        if !ids.insert(id.clone()) {
            continue;
        }
        let gender = if rng.random_bool(0.5) { "F" } else { "M" };
        let birth = random_date(rng, births.0, births.1);
        let county = pick_index(rng, &COUNTIES, |c| c.2);
        let death = rng
            .random_bool(0.06)
            .then(|| (rng.random_range(2020..=2021), rng.random_range(1..=12u32)));
        out.push(Person {
            id,
            gender,
            birth,
            county,
            death,
        });
    }
    out
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid literal date")
}

/// Generates `rows` rows. The header is the bundled index's column order.
pub fn generate(rows: usize, seed: u64) -> Table {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let patients = person_pool(&mut rng, (rows / 80).max(1), "", 11, (ymd(1925, 1, 1), 365 * 95));
    let prescribers = person_pool(&mut rng, (rows / 200).max(1), "HPR", 7, (ymd(1955, 1, 1), 365 * 38));
    let n_prescriptions = (rows / 50).max(1);
    let prescriptions: Vec<Prescription> = (0..n_prescriptions)
        .map(|i| {
            let category = pick_index(&mut rng, &CATEGORIES, |c| c.2);
            Prescription {
                id: format!("RX{:06}", 100_003 + i * 37),
                prescriber: rng.random_range(0..prescribers.len()),
                category,
                reimbursement: CATEGORIES[category].3.then(|| {
                    (
                        pick_index(&mut rng, &REIMBURSEMENT, |r| r.2),
                        pick(&mut rng, &REIMBURSEMENT_CODES, |d| d.1).0,
                    )
                }),
                drug: rng.random_range(0..DRUGS.len()),
            }
        })
        .collect();
    let drug_ids: Vec<String> = (0..DRUGS.len()).map(|i| format!("{}", 509_812 + i * 113)).collect();

    let idx = MappingIndex::npr_norpd();
    let header: Vec<String> = idx.columns().to_vec();
    let pos = |name: &str| {
        header
            .iter()
            .position(|c| c == name)
            .expect("seed column is in the index")
    };
    let window_start = ymd(2020, 1, 1);

    let mut out = Vec::with_capacity(rows);
    for _ in 0..rows {
        let mut row = vec![String::new(); header.len()];
        let mut set = |name: &str, v: String| row[pos(name)] = v;

        let p = &patients[rng.random_range(0..patients.len())];
        set("patient_id", p.id.clone());
        set("patient_id_type", "FNR".into());
        set("patient_gender", p.gender.into());
        set("patient_birth_date", p.birth.to_string());
        set("patient_age_group", age_group(p.birth).into());
        if let Some((y, m)) = p.death {
            set("patient_death_year", y.to_string());
            set("patient_death_month", m.to_string());
        }
        // Rare gaps in the address, as in registry extracts.
        if !rng.random_bool(0.0015) {
            set("patient_county_name", COUNTIES[p.county].0.into());
            set("patient_county_number", COUNTIES[p.county].1.into());
        }

        let rx = &prescriptions[rng.random_range(0..prescriptions.len())];
        let pr = &prescribers[rx.prescriber];
        set("prescriber_id", pr.id.clone());
        set("prescriber_id_type", "HPR".into());
        set("prescriber_birth_date", pr.birth.to_string());
        set("prescriber_gender", pr.gender.into());

        let arrival = pick(&mut rng, &ARRIVAL, |a| a.1);
        set("hospitalization_arrival_mode", arrival.0.into());
        set(
            "hospitalization_status",
            if rng.random_bool(0.996) {
                "finished"
            } else {
                "cancelled"
            }
            .into(),
        );
        set(
            "hospitalization_discharge_location",
            pick(&mut rng, &DISCHARGE, |d| d.1).0.into(),
        );
        let start = random_date(&mut rng, window_start, 91);
        let stays = rng.random_range(0..1000) < arrival.2;
        let los = if stays { rng.random_range(1..=9) } else { 0 };
        set("hospitalization_start_date", start.to_string());
        set("hospitalization_end_date", (start + Duration::days(los)).to_string());
        let inst = &INSTITUTES[rng.random_range(0..INSTITUTES.len())];
        set("hospitalization_institute_name", inst.0.into());
        set("hospitalization_institute_county_number", inst.1.into());
        set("diagnosis_code", pick(&mut rng, &DIAGNOSES, |d| d.1).0.into());

        set("prescription_id", rx.id.clone());
        let cat = &CATEGORIES[rx.category];
        set("prescription_category", cat.0.into());
        set("prescription_category_code", cat.1.into());
        if let Some((r, code)) = rx.reimbursement {
            set("prescription_reimbursement_category", REIMBURSEMENT[r].0.into());
            set("prescription_reimbursement_category_code", REIMBURSEMENT[r].1.into());
            set("reimbursement_code", code.into());
        }

        let d = rx.drug;
        let drug = &DRUGS[d];
        set("drug_name", drug.0.into());
        set("drug_atc", drug.1.into());
        set("drug_id", drug_ids[d].clone());
        set("drug_ddd", drug.2.into());

        let dispensed = start + Duration::days(rng.random_range(0..=1));
        set("dispense_day", dispensed.ordinal().to_string());
        set("dispense_year", dispensed.year().to_string());
        let packages = pick(&mut rng, &PACKAGES, |p| p.1).0;
        set("dispensed_packages", packages.into());
        let ddd = packages.parse::<u32>().expect("literal") * drug.3;
        set("dispensed_ddd", ddd.to_string());

        out.push(row);
    }
    Table::new(header, out).expect("seed rows match the header")
}

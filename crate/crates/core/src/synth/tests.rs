use super::*;
use crate::table::Table;

fn table(header: &[&str], rows: &[&[&str]]) -> Table {
    Table::new(
        header.iter().map(|s| s.to_string()).collect(),
        rows.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect(),
    )
    .unwrap()
}

fn repeat(rows: &[&[&'static str]], times: usize) -> Vec<Vec<&'static str>> {
    (0..times).flat_map(|_| rows.iter().map(|r| r.to_vec())).collect()
}

fn owned(header: &[&str], rows: Vec<Vec<&str>>) -> Table {
    let refs: Vec<&[&str]> = rows.iter().map(Vec::as_slice).collect();
    table(header, &refs)
}

#[test]
fn independent_binary_columns_get_uniform_tables() {
    let t = table(&["a", "b"], &[&["0", "0"], &["0", "1"], &["1", "0"], &["1", "1"]]);
    let m = fit(&t, &SchemaHints::new(), 0).unwrap();
    let child = if m.root == 0 { 1 } else { 0 };
    assert!(m.edge_mi[child].unwrap().abs() < 1e-12);
    // (1 + 1) / (2 + 2) for every cell.
    for row in m.cpt(child) {
        for &p in row {
            assert!((p - 0.5).abs() < 1e-12);
        }
    }
}

#[test]
fn correlated_pair_concentrates_mass() {
    let t = owned(&["x", "y"], repeat(&[&["a", "A"], &["b", "B"]], 50));
    let m = fit(&t, &SchemaHints::new(), 0).unwrap();
    let child = if m.root == 0 { 1 } else { 0 };
    let cpt = m.cpt(child);
    // (50 + 1) / (50 + 2)
    assert!((cpt[0][0] - 51.0 / 52.0).abs() < 1e-12);
    assert!(cpt[0][0] >= 0.9 && cpt[1][1] >= 0.9);
}

#[test]
fn single_column_is_root_only() {
    let t = table(&["only"], &[&["a"], &["b"], &["a"]]);
    let m = fit(&t, &SchemaHints::new(), 0).unwrap();
    assert_eq!(m.root, 0);
    assert_eq!(m.parents, vec![None]);
    let s = sample(&m, 5, 1);
    assert_eq!(s.n_rows(), 5);
}

#[test]
fn constant_column_is_allowed() {
    let t = table(&["k", "v"], &[&["c", "1"], &["c", "2"], &["c", "1"]]);
    let m = fit(&t, &SchemaHints::new(), 0).unwrap();
    let s = sample(&m, 50, 3);
    assert!(s.rows().iter().all(|r| r[0] == "c"));
}

#[test]
fn rejects_empty_and_tiny_tables() {
    let empty = Table::empty(vec!["a".into()]).unwrap();
    assert!(matches!(
        fit(&empty, &SchemaHints::new(), 0),
        Err(SynthError::EmptyTable)
    ));
    let one = table(&["a"], &[&["x"]]);
    assert!(matches!(
        fit(&one, &SchemaHints::new(), 0),
        Err(SynthError::TooFewRows(1))
    ));
    let t = table(&["a"], &[&["x"], &["y"]]);
    let hints = SchemaHints::new().with("b", ColumnKind::Count);
    assert!(matches!(fit(&t, &hints, 0), Err(SynthError::UnknownHintColumn(_))));
    let hints = SchemaHints::new().with("a", ColumnKind::Count);
    assert!(matches!(fit(&t, &hints, 0), Err(SynthError::NotACount { .. })));
}

#[test]
fn root_is_highest_entropy_with_name_tiebreak() {
    let t = table(
        &["z", "b", "a"],
        &[&["1", "p", "q"], &["2", "q", "p"], &["3", "p", "q"], &["4", "q", "p"]],
    );
    let m = fit(&t, &SchemaHints::new(), 0).unwrap();
    assert_eq!(m.columns[m.root].name, "z");
    let t = table(&["b", "a"], &[&["1", "x"], &["2", "y"]]);
    let m = fit(&t, &SchemaHints::new(), 0).unwrap();
    assert_eq!(m.columns[m.root].name, "a");
}

#[test]
fn count_columns_bin_to_at_most_sixteen_states() {
    let rows: Vec<Vec<String>> = (0..500).map(|i| vec![((i * 7) % 97).to_string()]).collect();
    let t = Table::new(vec!["n".into()], rows).unwrap();
    let m = fit(&t, &SchemaHints::new().with("n", ColumnKind::Count), 0).unwrap();
    let col = &m.columns[0];
    assert!(col.states.len() <= 16);
    assert_eq!(col.vocabulary().count(), 97);
    let s = sample(&m, 2000, 4);
    let vocab: std::collections::HashSet<&str> = col.vocabulary().collect();
    assert!(s.rows().iter().all(|r| vocab.contains(r[0].as_str())));
}

#[test]
fn tables_sum_to_one_on_seed_data() {
    let t = crate::seed::generate(600, 5);
    let m = fit(&t, &SchemaHints::npr_norpd(), 5).unwrap();
    m.validate().unwrap();
    for c in 0..m.columns.len() {
        for row in m.cpt(c) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
    assert_eq!(m.topological_order().len(), 35);
}

#[test]
fn sampling_is_deterministic_and_respects_vocabulary() {
    let t = crate::seed::generate(400, 9);
    let m = fit(&t, &SchemaHints::npr_norpd(), 9).unwrap();
    let a = sample(&m, 5000, 11);
    assert_eq!(a, sample(&m, 5000, 11));
    assert_ne!(a, sample(&m, 5000, 12));
    assert_eq!(a.header(), t.header());
    let stored = m.to_model_space(&a);
    for (c, col) in m.columns.iter().enumerate() {
        let vocab: std::collections::HashSet<&str> = col.vocabulary().collect();
        assert!(
            stored.rows().iter().all(|r| vocab.contains(r[c].as_str())),
            "{}",
            col.name
        );
    }
    let empty = sample(&m, 0, 1);
    assert_eq!(empty.n_rows(), 0);
    assert_eq!(empty.header(), t.header());
}

#[test]
fn model_file_round_trips() {
    let t = crate::seed::generate(300, 2);
    let m = fit(&t, &SchemaHints::npr_norpd(), 2).unwrap();
    let back = GenerativeModel::from_json(&m.to_json()).unwrap();
    assert_eq!(back, m);
    assert_eq!(sample(&back, 100, 1), sample(&m, 100, 1));

    let broken = m.to_json().replacen("\"version\": 1", "\"version\": 99", 1);
    assert!(matches!(
        GenerativeModel::from_json(&broken),
        Err(SynthError::BadModel(_))
    ));
    let mut cyclic = m.clone();
    let child = (0..cyclic.columns.len()).find(|&c| c != cyclic.root).unwrap();
    cyclic.parents[cyclic.root] = Some(child);
    assert!(cyclic.validate().is_err());
}

#[test]
fn report_extremes() {
    let t = table(&["a", "b"], &[&["x", "1"], &["y", "2"], &["x", "1"]]);
    let m = fit(&t, &SchemaHints::new(), 0).unwrap();
    let r = quality_report(&t, &t, &m).unwrap();
    assert!(r.columns.iter().all(|c| c.tv == 0.0));
    assert!(r.edges.iter().all(|e| e.mi_diff == 0.0));
    assert_eq!(r.exact_match_fraction, 1.0);

    let other = table(&["a", "b"], &[&["z", "1"], &["w", "2"]]);
    let r = quality_report(&t, &other, &m).unwrap();
    assert_eq!(r.columns[0].tv, 1.0);

    let wrong = table(&["a", "c"], &[&["x", "1"]]);
    assert!(matches!(
        quality_report(&t, &wrong, &m),
        Err(SynthError::HeaderMismatch(_))
    ));
}

#[test]
fn sample_marginals_converge_to_model_marginals() {
    let t = crate::seed::generate(800, 3);
    let m = fit(&t, &SchemaHints::npr_norpd(), 3).unwrap();
    let c = m.columns.iter().position(|c| c.name == "diagnosis_code").unwrap();
    let model = m.marginal(c);
    assert!((model.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    let tv_at = |n: usize| {
        (0..5)
            .map(|seed| {
                let s = sample(&m, n, seed);
                let mut freq = vec![0.0; model.len()];
                for r in s.rows() {
                    freq[m.columns[c].state_of(&r[c]).unwrap()] += 1.0 / n as f64;
                }
                freq.iter().zip(&model).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0
            })
            .sum::<f64>()
            / 5.0
    };
    let (small, large) = (tv_at(10_000), tv_at(100_000));
    assert!(large <= 3.0 * small, "{large} vs {small}");
    assert!(large < 0.02);
}

#[test]
fn mutual_information_matches_hand_computation() {
    // Perfectly dependent fair bits: MI = ln 2.
    assert!((mutual_information(&[0, 1, 0, 1], &[0, 1, 0, 1], 2, 2) - 2f64.ln()).abs() < 1e-12);
    assert!(mutual_information(&[0, 0, 1, 1], &[0, 1, 0, 1], 2, 2).abs() < 1e-12);
    assert!((entropy(&[2, 2]) - 2f64.ln()).abs() < 1e-12);
    assert_eq!(total_variation(["a", "b"], ["a", "b"]), 0.0);
    assert_eq!(total_variation(["a"], ["b"]), 1.0);
}

#[test]
fn day_offsets_keep_stays_ordered() {
    let t = crate::seed::generate(500, 4);
    let m = fit(&t, &SchemaHints::npr_norpd(), 4).unwrap();
    assert_eq!(m.day_offsets.len(), 1);
    let s = sample(&m, 3000, 5);
    let (si, ei) = (
        s.column_index("hospitalization_start_date").unwrap(),
        s.column_index("hospitalization_end_date").unwrap(),
    );
    for r in s.rows() {
        let start = crate::fhir::parse_date(&r[si]).unwrap();
        let end = crate::fhir::parse_date(&r[ei]).unwrap();
        assert!(end >= start, "{} .. {}", r[si], r[ei]);
    }
    // Without the offset the dates are modelled apart and cross.
    let mut loose = SchemaHints::npr_norpd();
    loose.day_offsets.clear();
    let m = fit(&t, &loose, 4).unwrap();
    let s = sample(&m, 3000, 5);
    assert!(s.rows().iter().any(|r| r[ei] < r[si]));
}

#[test]
fn offset_cells_round_trip() {
    use super::offset::{decode_cell, encode_cell};
    for (a, v) in [
        ("2020-02-27", "2020-03-02"),
        ("2020-03-02", "2020-02-27"),
        ("2020-01-01", ""),
        ("", "2020-01-01"),
        ("2020-01-01", "soon"),
    ] {
        assert_eq!(decode_cell(a, &encode_cell(a, v)), v, "{a} {v}");
    }
    assert_eq!(encode_cell("2020-02-27", "2020-03-02"), "+4");
    assert_eq!(decode_cell("", "+4"), "");
}

#[test]
fn bad_offsets_are_refused() {
    let t = crate::seed::generate(50, 1);
    let chain = SchemaHints::new()
        .offset("hospitalization_end_date", "hospitalization_start_date")
        .offset("hospitalization_start_date", "patient_birth_date");
    assert!(matches!(fit(&t, &chain, 1), Err(SynthError::BadOffset(_))));
    let unknown = SchemaHints::new().offset("nope", "hospitalization_start_date");
    assert!(matches!(fit(&t, &unknown, 1), Err(SynthError::UnknownHintColumn(_))));
}

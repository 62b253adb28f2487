use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use popcast_core::ingest::{apply_deletion_rule, build_dataset, Dataset, RawRecord, Source};
use popcast_core::{Race, SeriesKey, State};
use proptest::prelude::*;

fn persons(i: usize, year: i32) -> u64 {
    (1_000 + 977 * i as u64) * 10 + 37 * (year - 1990) as u64
}

/// 30 FRED files in persons, with `edit` applied to each file's text.
fn fixture(root: &Path, edit: impl Fn(SeriesKey, String) -> Option<String>) -> (PathBuf, PathBuf) {
    let fred = root.join("fred");
    fs::create_dir_all(&fred).unwrap();
    let mut manifest = String::from("FILE,UNIT\n");
    let mut census = String::from("YEAR,STATE,RACE,POPULATION\n");
    for (i, key) in SeriesKey::all().enumerate() {
        let file = format!("{}.csv", key.file_stem());
        writeln!(manifest, "{file},persons").unwrap();
        let mut text = String::from("DATE,VALUE\n");
        for year in 1990..=2019 {
            writeln!(text, "{year}-01-01,{}", persons(i, year)).unwrap();
        }
        if let Some(text) = edit(key, text) {
            fs::write(fred.join(&file), text).unwrap();
        }
        for year in 2020..=2022 {
            writeln!(census, "{year},{},{},{}", key.state, key.race, persons(i, year)).unwrap();
        }
    }
    fs::write(fred.join("manifest.csv"), manifest).unwrap();
    let census_file = root.join("census.csv");
    fs::write(&census_file, census).unwrap();
    (fred, census_file)
}

#[test]
fn complete_fixture_builds() {
    let dir = tempfile::tempdir().unwrap();
    let (fred, census) = fixture(dir.path(), |_, t| Some(t));
    let ds = build_dataset(&fred, &census).unwrap();
    assert_eq!(ds.len(), 30);
    for (key, s) in &ds.series {
        let start = if key.race == Race::Hawaiian { 2000 } else { 1990 };
        assert_eq!((s.start_year(), s.end_year()), (start, 2022), "{key}");
    }
    assert!(ds.warnings.is_empty(), "{:?}", ds.warnings);
}

#[test]
fn missing_file_names_key() {
    let dir = tempfile::tempdir().unwrap();
    let wy_asian = SeriesKey::new(State::WY, Race::Asian);
    let (fred, census) = fixture(dir.path(), |k, t| (k != wy_asian).then_some(t));
    let err = build_dataset(&fred, &census).unwrap_err().to_string();
    assert!(err.contains("WY/Asian") && err.contains("WY_Asian.csv"), "{err}");
}

#[test]
fn gap_names_key_and_year() {
    let dir = tempfile::tempdir().unwrap();
    let target = SeriesKey::new(State::CA, Race::Black);
    let (fred, census) = fixture(dir.path(), |k, t| {
        Some(if k == target {
            t.lines().filter(|l| !l.starts_with("2005-")).map(|l| format!("{l}\n")).collect()
        } else {
            t
        })
    });
    let err = build_dataset(&fred, &census).unwrap_err().to_string();
    assert!(err.contains("CA/Black") && err.contains("gap at 2005"), "{err}");
}

#[test]
fn json_is_deterministic_and_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    let (fred, census) = fixture(dir.path(), |_, t| Some(t));
    let a = build_dataset(&fred, &census).unwrap().to_json();
    let b = build_dataset(&fred, &census).unwrap().to_json();
    assert_eq!(a, b);
    assert!(!a.contains("e+") && !a.contains("e-"), "exponent notation in output");
    let back = Dataset::from_json(&a).unwrap();
    assert_eq!(back.to_json(), a);
}

fn record(year: i32, race: Race) -> RawRecord {
    RawRecord {
        year,
        key: SeriesKey::new(State::HI, race),
        population: 1000.0 + f64::from(year),
        source: Source::Fred,
    }
}

proptest! {
    #[test]
    fn deletion_rule_idempotent(years in prop::collection::vec(1990i32..2023, 0..40), hawaiian: bool) {
        let race = if hawaiian { Race::Hawaiian } else { Race::White };
        let key = SeriesKey::new(State::HI, race);
        let records: Vec<RawRecord> = years.iter().map(|y| record(*y, race)).collect();
        let once = apply_deletion_rule(&records, key);
        let twice = apply_deletion_rule(&once, key);
        prop_assert_eq!(&once, &twice);
        if hawaiian {
            prop_assert!(once.iter().all(|r| r.year >= 2000));
        } else {
            prop_assert_eq!(once, records);
        }
    }
}

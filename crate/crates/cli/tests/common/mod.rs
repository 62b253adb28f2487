//! Synthetic FRED and Census inputs.

#![allow(dead_code)]

use std::fmt::Write;
use std::fs;
use std::path::{Path, PathBuf};

use popcast_core::{Race, SeriesKey};

/// Pre-2000 Hawaiian rows carry this value so their absence can be checked.
pub const HAWAIIAN_PRE_2000_MARKER: f64 = 987_654.0;

/// Smooth growth with a deterministic wobble, in persons.
pub fn population(key: SeriesKey, year: i32) -> f64 {
    let k = SeriesKey::all().position(|x| x == key).unwrap() as f64;
    let base = 2_000.0 * (1.0 + k) * (1.0 + (k * 0.7).sin().abs() * 40.0);
    let t = f64::from(year - 1990);
    let growth = 1.0 + 0.004 * (k % 7.0 - 2.0);
    (base * growth.powf(t) * (1.0 + 0.01 * (t * 0.9 + k).sin())).round()
}

pub struct Fixture {
    pub fred_dir: PathBuf,
    pub census_file: PathBuf,
}

/// Writes 30 FRED files (odd-numbered keys in thousands), a manifest and a
/// Census file under `root`. `skip` omits one key's FRED file.
pub fn write_fixture(root: &Path, skip: Option<SeriesKey>) -> Fixture {
    let fred_dir = root.join("fred");
    fs::create_dir_all(&fred_dir).unwrap();
    let mut manifest = String::from("FILE,UNIT\n");
    for (i, key) in SeriesKey::all().enumerate() {
        let thousands = i % 2 == 1;
        let file = format!("{}.csv", key.file_stem());
        writeln!(manifest, "{file},{}", if thousands { "thousands" } else { "persons" }).unwrap();
        if Some(key) == skip {
            continue;
        }
        let mut text = String::from("DATE,VALUE\n");
        for year in 1990..=2019 {
            let persons = if key.race == Race::Hawaiian && year < 2000 {
                HAWAIIAN_PRE_2000_MARKER
            } else {
                population(key, year)
            };
            if thousands {
                writeln!(text, "{year}-01-01,{:.3}", persons / 1000.0).unwrap();
            } else {
                writeln!(text, "{year}-01-01,{persons}").unwrap();
            }
        }
        fs::write(fred_dir.join(file), text).unwrap();
    }
    fs::write(fred_dir.join("manifest.csv"), manifest).unwrap();

    let mut census = String::from("YEAR,STATE,RACE,POPULATION\n");
    for key in SeriesKey::all() {
        for year in 2020..=2022 {
            writeln!(census, "{year},{},{},{}", key.state, key.race, population(key, year)).unwrap();
        }
    }
    let census_file = root.join("census.csv");
    fs::write(&census_file, census).unwrap();
    Fixture { fred_dir, census_file }
}

//! Raw FRED and Census files to a 30-series dataset.
//!
//! Input layout:
//!
//! * `<root>/<STATE>_<RACE>.csv` with header `DATE,VALUE`, one observation per
//!   January 1, FRED's `.` marking a missing value;
//! * `<root>/manifest.csv` with header `FILE,UNIT`, declaring each FRED file's
//!   unit as `persons` or `thousands`;
//! * one Census file with header `YEAR,STATE,RACE,POPULATION`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::json::to_plain_json;
use crate::series::{make_series, AnnualSeries, Race, SeriesError, SeriesKey, State};

pub const FRED_YEARS: (i32, i32) = (1990, 2019);
pub const CENSUS_YEARS: (i32, i32) = (2020, 2022);
/// Hawaiian observations before this year are dropped.
pub const HAWAIIAN_FIRST_YEAR: i32 = 2000;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {message}")]
    Line { line: u64, message: String },
    #[error("expected header '{expected}', found '{found}'")]
    Header { expected: String, found: String },
    #[error("gap at {year}")]
    Gap { year: i32 },
    #[error("record for {found} passed to series {expected}")]
    KeyMismatch { expected: SeriesKey, found: SeriesKey },
    #[error("no records")]
    NoRecords,
    #[error("missing input file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("manifest declares no unit for {0}")]
    NoUnit(String),
    #[error("{key}: {source}")]
    ForKey {
        key: SeriesKey,
        #[source]
        source: Box<IngestError>,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed dataset JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Series(#[from] SeriesError),
}

impl IngestError {
    fn line(line: u64, message: impl Into<String>) -> Self {
        IngestError::Line {
            line,
            message: message.into(),
        }
    }

    fn for_key(self, key: SeriesKey) -> Self {
        IngestError::ForKey {
            key,
            source: Box::new(self),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Source {
    Fred,
    Census,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    Persons,
    Thousands,
}

impl std::str::FromStr for Unit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "persons" => Ok(Unit::Persons),
            "thousands" => Ok(Unit::Thousands),
            other => Err(format!("unknown unit '{other}', expected persons or thousands")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawRecord {
    pub year: i32,
    pub key: SeriesKey,
    pub population: f64,
    pub source: Source,
}

/// Parsed records plus non-fatal notes such as skipped missing values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Parsed {
    pub records: Vec<RawRecord>,
    pub warnings: Vec<String>,
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes())
}

/// Reads rows after checking the header. Yields `(line, fields)`.
fn rows(text: &str, header: &[&str]) -> Result<Vec<(u64, Vec<String>)>, IngestError> {
    let mut out = Vec::new();
    let mut records = reader(text).into_records();
    let first = match records.next() {
        Some(r) => r.map_err(|e| IngestError::line(1, e.to_string()))?,
        None => {
            return Err(IngestError::Header {
                expected: header.join(","),
                found: String::new(),
            })
        }
    };
    let found: Vec<&str> = first.iter().map(|f| f.trim_start_matches('\u{feff}')).collect();
    if found != header {
        return Err(IngestError::Header {
            expected: header.join(","),
            found: found.join(","),
        });
    }
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            IngestError::line(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if rec.len() != header.len() {
            return Err(IngestError::line(
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        out.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(out)
}

/// Parses `YYYY-MM-DD`, requiring a January 1 observation date.
fn parse_observation_year(date: &str) -> Result<i32, String> {
    let parts: Vec<&str> = date.split('-').collect();
    let [y, m, d] = parts.as_slice() else {
        return Err(format!("bad date '{date}', expected YYYY-MM-DD"));
    };
    if y.len() != 4 || m.len() != 2 || d.len() != 2 {
        return Err(format!("bad date '{date}', expected YYYY-MM-DD"));
    }
    let year: i32 = y.parse().map_err(|_| format!("bad year in '{date}'"))?;
    let month: u32 = m.parse().map_err(|_| format!("bad month in '{date}'"))?;
    let day: u32 = d.parse().map_err(|_| format!("bad day in '{date}'"))?;
    if !(1..=12).contains(&month) {
        return Err(format!("bad month {month} in '{date}'"));
    }
    if !(1..=31).contains(&day) {
        return Err(format!("bad day {day} in '{date}'"));
    }
    if (month, day) != (1, 1) {
        return Err(format!("observation date '{date}' is not January 1"));
    }
    Ok(year)
}

/// Moves the decimal point of a plain decimal literal three places right, so
/// that thousands convert to persons without binary rounding.
fn thousands_to_persons(text: &str) -> Option<f64> {
    let (int, frac) = text.split_once('.').unwrap_or((text, ""));
    let digits = |s: &str| s.bytes().all(|b| b.is_ascii_digit());
    if int.is_empty() || !digits(int) || !digits(frac) {
        return None;
    }
    let mut frac = frac.to_string();
    while frac.len() < 3 {
        frac.push('0');
    }
    let (moved, rest) = frac.split_at(3);
    format!("{int}{moved}.{}", if rest.is_empty() { "0" } else { rest })
        .parse()
        .ok()
}

fn parse_population(text: &str, unit: Unit) -> Result<f64, String> {
    let value: f64 = text
        .parse()
        .map_err(|_| format!("non-numeric value '{text}'"))?;
    if !value.is_finite() || value < 0.0 {
        return Err(format!("invalid population '{text}'"));
    }
    Ok(match unit {
        Unit::Persons => value,
        Unit::Thousands => thousands_to_persons(text).unwrap_or(value * 1000.0),
    })
}

/// One FRED series file for `key`.
pub fn parse_fred_csv(text: &str, key: SeriesKey, unit: Unit) -> Result<Parsed, IngestError> {
    let mut parsed = Parsed::default();
    let mut seen: HashMap<i32, u64> = HashMap::new();
    for (line, fields) in rows(text, &["DATE", "VALUE"])? {
        let year = parse_observation_year(&fields[0]).map_err(|m| IngestError::line(line, m))?;
        if let Some(prev) = seen.insert(year, line) {
            return Err(IngestError::line(line, format!("duplicate year {year} (first on line {prev})")));
        }
        if !(FRED_YEARS.0..=FRED_YEARS.1).contains(&year) {
            return Err(IngestError::line(
                line,
                format!("FRED years are {}-{}, found {year}", FRED_YEARS.0, FRED_YEARS.1),
            ));
        }
        if fields[1] == "." {
            parsed.warnings.push(format!("{key}: missing value for {year} skipped (line {line})"));
            continue;
        }
        let population = parse_population(&fields[1], unit).map_err(|m| IngestError::line(line, m))?;
        parsed.records.push(RawRecord {
            year,
            key,
            population,
            source: Source::Fred,
        });
    }
    Ok(parsed)
}

/// The Census estimates file, all keys at once. Populations are integer
/// persons.
pub fn parse_census_csv(text: &str) -> Result<Vec<RawRecord>, IngestError> {
    let mut out = Vec::new();
    let mut seen: HashMap<(i32, SeriesKey), u64> = HashMap::new();
    for (line, f) in rows(text, &["YEAR", "STATE", "RACE", "POPULATION"])? {
        let year: i32 = f[0]
            .parse()
            .map_err(|_| IngestError::line(line, format!("bad year '{}'", f[0])))?;
        if !(CENSUS_YEARS.0..=CENSUS_YEARS.1).contains(&year) {
            return Err(IngestError::line(
                line,
                format!("census years are {}-{}, found {year}", CENSUS_YEARS.0, CENSUS_YEARS.1),
            ));
        }
        let state: State = f[1].parse().map_err(|e: SeriesError| IngestError::line(line, e.to_string()))?;
        let race: Race = f[2].parse().map_err(|e: SeriesError| IngestError::line(line, e.to_string()))?;
        let population: u64 = f[3]
            .parse()
            .map_err(|_| IngestError::line(line, format!("population '{}' is not an integer", f[3])))?;
        let key = SeriesKey::new(state, race);
        if let Some(prev) = seen.insert((year, key), line) {
            return Err(IngestError::line(
                line,
                format!("duplicate {key} {year} (first on line {prev})"),
            ));
        }
        out.push(RawRecord {
            year,
            key,
            population: population as f64,
            source: Source::Census,
        });
    }
    Ok(out)
}

/// Drops Hawaiian records before 2000; other keys pass through unchanged.
pub fn apply_deletion_rule(records: &[RawRecord], key: SeriesKey) -> Vec<RawRecord> {
    if key.race != Race::Hawaiian {
        return records.to_vec();
    }
    records
        .iter()
        .filter(|r| r.year >= HAWAIIAN_FIRST_YEAR)
        .copied()
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergedSeries {
    pub series: AnnualSeries,
    /// Source of each point, aligned with `series.values()`.
    pub sources: Vec<Source>,
    pub warnings: Vec<String>,
}

/// Joins both sources on year after the deletion rule. A year present in
/// both takes the Census value and, if they differ, records a warning.
pub fn merge_sources(
    fred: &[RawRecord],
    census: &[RawRecord],
    key: SeriesKey,
) -> Result<MergedSeries, IngestError> {
    if let Some(r) = fred.iter().chain(census).find(|r| r.key != key) {
        return Err(IngestError::KeyMismatch {
            expected: key,
            found: r.key,
        });
    }
    let mut by_year: BTreeMap<i32, (f64, Source)> = BTreeMap::new();
    let mut warnings = Vec::new();
    for r in apply_deletion_rule(fred, key) {
        by_year.insert(r.year, (r.population, r.source));
    }
    for r in apply_deletion_rule(census, key) {
        if let Some((old, _)) = by_year.insert(r.year, (r.population, r.source)) {
            if old != r.population {
                warnings.push(format!(
                    "{key}: {} present in both sources (FRED {old}, Census {}); using Census",
                    r.year, r.population
                ));
            }
        }
    }
    let (&first, _) = by_year.first_key_value().ok_or(IngestError::NoRecords)?;
    let (&last, _) = by_year.last_key_value().unwrap();
    if let Some(year) = (first..=last).find(|y| !by_year.contains_key(y)) {
        return Err(IngestError::Gap { year });
    }
    let (values, sources): (Vec<f64>, Vec<Source>) = by_year.into_values().unzip();
    Ok(MergedSeries {
        series: make_series(key, first, values)?,
        sources,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub series: BTreeMap<SeriesKey, AnnualSeries>,
    /// Per-point sources; empty for datasets loaded from JSON.
    pub provenance: BTreeMap<SeriesKey, Vec<Source>>,
    pub warnings: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct SeriesDoc {
    start_year: i32,
    values: Vec<f64>,
}

impl Dataset {
    pub fn get(&self, key: SeriesKey) -> Option<&AnnualSeries> {
        self.series.get(&key)
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    /// `{"STATE/RACE": {"start_year": .., "values": [..]}, ..}` in key order.
    pub fn to_json(&self) -> String {
        let doc: BTreeMap<SeriesKey, SeriesDoc> = self
            .series
            .iter()
            .map(|(k, s)| {
                (
                    *k,
                    SeriesDoc {
                        start_year: s.start_year(),
                        values: s.values().to_vec(),
                    },
                )
            })
            .collect();
        to_plain_json(&doc).expect("dataset serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, IngestError> {
        let doc: BTreeMap<SeriesKey, SeriesDoc> = serde_json::from_str(text)?;
        let mut series = BTreeMap::new();
        for (key, s) in doc {
            let built = make_series(key, s.start_year, s.values).map_err(|e| IngestError::from(e).for_key(key))?;
            series.insert(key, built);
        }
        Ok(Self {
            series,
            ..Default::default()
        })
    }
}

fn read(path: &Path) -> Result<String, IngestError> {
    fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            IngestError::MissingFile(path.to_path_buf())
        } else {
            IngestError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })
}

fn read_manifest(root: &Path) -> Result<HashMap<String, Unit>, IngestError> {
    let path = root.join("manifest.csv");
    let text = read(&path)?;
    let mut units = HashMap::new();
    for (line, f) in rows(&text, &["FILE", "UNIT"])? {
        let unit: Unit = f[1].parse().map_err(|m: String| IngestError::line(line, m))?;
        units.insert(f[0].clone(), unit);
    }
    Ok(units)
}

/// Reads one FRED file per key from `fred_dir` plus the Census file and
/// merges them into 30 contiguous series.
pub fn build_dataset(fred_dir: &Path, census_file: &Path) -> Result<Dataset, IngestError> {
    let census = parse_census_csv(&read(census_file)?)?;
    let units = read_manifest(fred_dir)?;
    let mut census_by_key: BTreeMap<SeriesKey, Vec<RawRecord>> = BTreeMap::new();
    for r in census {
        census_by_key.entry(r.key).or_default().push(r);
    }

    let mut dataset = Dataset::default();
    for key in SeriesKey::all() {
        let file = format!("{}.csv", key.file_stem());
        let load = || -> Result<MergedSeries, IngestError> {
            let unit = *units.get(&file).ok_or_else(|| IngestError::NoUnit(file.clone()))?;
            let text = read(&fred_dir.join(&file))?;
            let fred = parse_fred_csv(&text, key, unit)?;
            let census = census_by_key.get(&key).map_or(&[][..], Vec::as_slice);
            let mut merged = merge_sources(&fred.records, census, key)?;
            let mut warnings = fred.warnings;
            warnings.append(&mut merged.warnings);
            merged.warnings = warnings;
            Ok(merged)
        };
        let merged = load().map_err(|e| e.for_key(key))?;
        dataset.warnings.extend(merged.warnings);
        dataset.provenance.insert(key, merged.sources);
        dataset.series.insert(key, merged.series);
    }
    Ok(dataset)
}

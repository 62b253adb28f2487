//! Annual population series, min-max normalization and chronological splits.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SeriesError {
    #[error("empty series")]
    Empty,
    #[error("invalid value {value} at index {index}: populations must be finite and non-negative")]
    InvalidValue { index: usize, value: f64 },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("invalid split: test must start the year after training ends and end no earlier than it starts")]
    InvalidSplit,
    #[error("series {first}-{last} has no training points up to {train_end}")]
    NoTrainingPoints { first: i32, last: i32, train_end: i32 },
    #[error("series {first}-{last} has no test points in {test_start}-{test_end}")]
    NoTestPoints {
        first: i32,
        last: i32,
        test_start: i32,
        test_end: i32,
    },
    #[error("unknown state code '{0}'")]
    UnknownState(String),
    #[error("unknown race code '{0}'")]
    UnknownRace(String),
    #[error("malformed series key '{0}', expected STATE/RACE")]
    MalformedKey(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum State {
    AL,
    CA,
    HI,
    NY,
    TX,
    WY,
}

impl State {
    pub const ALL: [State; 6] = [State::AL, State::CA, State::HI, State::NY, State::TX, State::WY];

    pub fn code(self) -> &'static str {
        match self {
            State::AL => "AL",
            State::CA => "CA",
            State::HI => "HI",
            State::NY => "NY",
            State::TX => "TX",
            State::WY => "WY",
        }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for State {
    type Err = SeriesError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        State::ALL
            .into_iter()
            .find(|st| st.code() == s)
            .ok_or_else(|| SeriesError::UnknownState(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Race {
    White,
    Black,
    AmericanIndian,
    Asian,
    Hawaiian,
}

impl Race {
    pub const ALL: [Race; 5] = [
        Race::White,
        Race::Black,
        Race::AmericanIndian,
        Race::Asian,
        Race::Hawaiian,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Race::White => "White",
            Race::Black => "Black",
            Race::AmericanIndian => "AmericanIndian",
            Race::Asian => "Asian",
            Race::Hawaiian => "Hawaiian",
        }
    }
}

impl fmt::Display for Race {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Race {
    type Err = SeriesError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Race::ALL
            .into_iter()
            .find(|r| r.code() == s)
            .ok_or_else(|| SeriesError::UnknownRace(s.to_string()))
    }
}

/// One (state, race) pair. Serialized as `STATE/RACE`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SeriesKey {
    pub state: State,
    pub race: Race,
}

impl SeriesKey {
    pub fn new(state: State, race: Race) -> Self {
        Self { state, race }
    }

    /// All 30 keys, state-major.
    pub fn all() -> impl Iterator<Item = SeriesKey> {
        State::ALL
            .into_iter()
            .flat_map(|s| Race::ALL.into_iter().map(move |r| SeriesKey::new(s, r)))
    }

    /// File stem used by the FRED input directory, e.g. `NY_AmericanIndian`.
    pub fn file_stem(&self) -> String {
        format!("{}_{}", self.state, self.race)
    }
}

impl fmt::Display for SeriesKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.state, self.race)
    }
}

impl FromStr for SeriesKey {
    type Err = SeriesError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (state, race) = s
            .split_once('/')
            .ok_or_else(|| SeriesError::MalformedKey(s.to_string()))?;
        Ok(SeriesKey::new(state.parse()?, race.parse()?))
    }
}

impl Serialize for SeriesKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SeriesKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Yearly population counts for one key. The value at index `i` belongs to
/// year `start_year + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnualSeries {
    key: SeriesKey,
    start_year: i32,
    values: Vec<f64>,
}

impl AnnualSeries {
    pub fn key(&self) -> SeriesKey {
        self.key
    }

    pub fn start_year(&self) -> i32 {
        self.start_year
    }

    pub fn end_year(&self) -> i32 {
        self.start_year + self.values.len() as i32 - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn years(&self) -> impl Iterator<Item = i32> + '_ {
        (0..self.values.len()).map(move |i| self.start_year + i as i32)
    }

    pub fn value_at(&self, year: i32) -> Option<f64> {
        let idx = usize::try_from(year - self.start_year).ok()?;
        self.values.get(idx).copied()
    }
}

pub fn make_series(
    key: SeriesKey,
    start_year: i32,
    values: Vec<f64>,
) -> Result<AnnualSeries, SeriesError> {
    if values.is_empty() {
        return Err(SeriesError::Empty);
    }
    if let Some((index, &value)) = values
        .iter()
        .enumerate()
        .find(|(_, v)| !v.is_finite() || **v < 0.0)
    {
        return Err(SeriesError::InvalidValue { index, value });
    }
    Ok(AnnualSeries {
        key,
        start_year,
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    train_end_year: i32,
    test_start_year: i32,
    test_end_year: i32,
}

impl SplitSpec {
    pub fn new(train_end_year: i32, test_end_year: i32) -> Result<Self, SeriesError> {
        Self::with_years(train_end_year, train_end_year + 1, test_end_year)
    }

    pub fn with_years(
        train_end_year: i32,
        test_start_year: i32,
        test_end_year: i32,
    ) -> Result<Self, SeriesError> {
        if test_start_year != train_end_year + 1 || test_end_year < test_start_year {
            return Err(SeriesError::InvalidSplit);
        }
        Ok(Self {
            train_end_year,
            test_start_year,
            test_end_year,
        })
    }

    /// Train through 2016, test 2017-2022.
    pub fn default_test() -> Self {
        Self {
            train_end_year: 2016,
            test_start_year: 2017,
            test_end_year: 2022,
        }
    }

    /// Train through 2013, validate on 2014-2016.
    pub fn default_validation() -> Self {
        Self {
            train_end_year: 2013,
            test_start_year: 2014,
            test_end_year: 2016,
        }
    }

    pub fn train_end_year(&self) -> i32 {
        self.train_end_year
    }

    pub fn test_start_year(&self) -> i32 {
        self.test_start_year
    }

    pub fn test_end_year(&self) -> i32 {
        self.test_end_year
    }
}

/// Splits chronologically. Points after `test_end_year` are dropped.
pub fn temporal_split(
    series: &AnnualSeries,
    spec: &SplitSpec,
) -> Result<(AnnualSeries, AnnualSeries), SeriesError> {
    let first = series.start_year;
    let last = series.end_year();
    if first > spec.train_end_year {
        return Err(SeriesError::NoTrainingPoints {
            first,
            last,
            train_end: spec.train_end_year,
        });
    }
    if last < spec.test_start_year || first > spec.test_end_year {
        return Err(SeriesError::NoTestPoints {
            first,
            last,
            test_start: spec.test_start_year,
            test_end: spec.test_end_year,
        });
    }
    let train_len = (spec.train_end_year - first + 1) as usize;
    let test_end_idx = ((spec.test_end_year.min(last)) - first + 1) as usize;
    let train = AnnualSeries {
        key: series.key,
        start_year: first,
        values: series.values[..train_len].to_vec(),
    };
    let test = AnnualSeries {
        key: series.key,
        start_year: spec.test_start_year,
        values: series.values[train_len..test_end_idx].to_vec(),
    };
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    min_value: f64,
    max_value: f64,
    degenerate: bool,
}

impl NormParams {
    pub fn min_value(&self) -> f64 {
        self.min_value
    }

    pub fn max_value(&self) -> f64 {
        self.max_value
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn range(&self) -> f64 {
        self.max_value - self.min_value
    }
}

pub fn minmax_fit(train: &AnnualSeries) -> NormParams {
    let (min_value, max_value) = train
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    NormParams {
        min_value,
        max_value,
        degenerate: max_value == min_value,
    }
}

/// Maps persons to the fitted unit interval. Values outside the fitted range
/// land outside `[0, 1]`; nothing is clamped. Degenerate params map to zero.
pub fn minmax_apply(params: &NormParams, values: &[f64]) -> Result<Vec<f64>, SeriesError> {
    check_finite(values)?;
    if params.degenerate {
        return Ok(vec![0.0; values.len()]);
    }
    let range = params.range();
    Ok(values.iter().map(|v| (v - params.min_value) / range).collect())
}

pub fn minmax_invert(params: &NormParams, normalized: &[f64]) -> Result<Vec<f64>, SeriesError> {
    check_finite(normalized)?;
    if params.degenerate {
        return Ok(vec![params.min_value; normalized.len()]);
    }
    let range = params.range();
    Ok(normalized
        .iter()
        .map(|n| n * range + params.min_value)
        .collect())
}

fn check_finite(values: &[f64]) -> Result<(), SeriesError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(SeriesError::NonFinite { index }),
        None => Ok(()),
    }
}

//! Leaderboard tables, win-rate summary and per-series charts from a results
//! file.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ValueEnum;
use popcast_core::eval::{build_leaderboard, ForecastResult, Leaderboard, LeaderboardSummary};
use popcast_core::json::to_plain_json;
use popcast_core::SeriesKey;
use serde::Serialize;

use crate::chart;
use crate::run::ResultsFile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
    All,
}

#[derive(Serialize)]
struct LeaderboardDoc<'a> {
    #[serde(flatten)]
    summary: &'a LeaderboardSummary,
    /// Keys left out because at least one model failed on them.
    omitted: Vec<String>,
}

#[derive(Debug)]
pub struct Report {
    pub board: Leaderboard,
    pub omitted: Vec<SeriesKey>,
    pub written: Vec<PathBuf>,
}

impl Report {
    /// One line per model plus one per omitted row.
    pub fn summary_text(&self) -> String {
        let mut out = String::new();
        for m in self.board.models() {
            let w = self.board.win_rate(m).expect("registered");
            out.push_str(&format!("{m}: {}/{} wins ({:.2}%)\n", w.wins, w.total, w.percent()));
        }
        for k in &self.omitted {
            out.push_str(&format!("omitted {k}: failed cell\n"));
        }
        out
    }
}

/// Builds the leaderboard from complete rows only.
pub fn leaderboard(results: &ResultsFile) -> Result<(Leaderboard, Vec<SeriesKey>)> {
    let failed: BTreeSet<SeriesKey> = results.failures.iter().map(|f| f.key).collect();
    let kept: Vec<ForecastResult> = results
        .results
        .iter()
        .filter(|r| !failed.contains(&r.key))
        .cloned()
        .collect();
    let models: Vec<&str> = results.models.iter().map(String::as_str).collect();
    let board = build_leaderboard(&kept, &models).context("results are not a complete grid")?;
    Ok((board, failed.into_iter().collect()))
}

fn write(path: PathBuf, text: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    written.push(path);
    Ok(())
}

/// Writes the selected tables and one chart per key into `out`.
pub fn cmd_report(results_path: &Path, format: Format, out: &Path) -> Result<Report> {
    let text = fs::read_to_string(results_path)
        .with_context(|| format!("cannot read results {}", results_path.display()))?;
    let results = ResultsFile::from_json(&text).with_context(|| results_path.display().to_string())?;
    let (board, omitted) = leaderboard(&results)?;

    let mut written = Vec::new();
    let plots = out.join("plots");
    fs::create_dir_all(&plots).with_context(|| format!("cannot create {}", plots.display()))?;
    if matches!(format, Format::Csv | Format::All) {
        write(out.join("leaderboard.csv"), &board.to_csv(), &mut written)?;
    }
    if matches!(format, Format::Json | Format::All) {
        let doc = LeaderboardDoc {
            summary: &board.summary(),
            omitted: omitted.iter().map(ToString::to_string).collect(),
        };
        write(out.join("leaderboard.json"), &to_plain_json(&doc)?, &mut written)?;
    }

    let mut by_key: BTreeMap<SeriesKey, Vec<&ForecastResult>> = BTreeMap::new();
    for r in &results.results {
        by_key.entry(r.key).or_default().push(r);
    }
    for (key, cells) in by_key {
        let svg = chart::render(key, &results.models, &cells);
        write(plots.join(format!("{}.svg", key.file_stem())), &svg, &mut written)?;
    }
    Ok(Report {
        board,
        omitted,
        written,
    })
}

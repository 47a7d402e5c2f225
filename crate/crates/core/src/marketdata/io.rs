//! CSV ingestion and serialization of minute bars and stock metadata.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use serde::Serialize;

use super::{Market, MetaTable, MinuteBar, StockMeta, TradingDay};
use crate::{Error, Result};

const BAR_HEADER: [&str; 9] = [
    "symbol", "date", "minute", "open", "high", "low", "close", "volume", "amount",
];
const META_HEADER: [&str; 3] = ["symbol", "shares_outstanding", "market"];

/// Largest tolerated fraction of missing minutes in a session.
const MAX_MISSING_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RejectedDay {
    pub symbol: String,
    pub date: NaiveDate,
    pub missing: usize,
}

/// What happened while loading, besides the accepted days.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    /// Days dropped for exceeding the missing-minute tolerance.
    pub rejected: Vec<RejectedDay>,
    /// Zero-volume bars inserted into accepted days.
    pub filled_minutes: usize,
    /// Weekdays inside a symbol's date range with no rows at all.
    pub missing_days: usize,
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: u64, name: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.trim().parse::<T>().map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("column `{name}`: cannot parse `{raw}`: {e}"),
    })
}

fn check_header(path: &Path, got: &csv::StringRecord, want: &[&str]) -> Result<()> {
    let got: Vec<&str> = got.iter().map(str::trim).collect();
    if got != want {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!(
                "expected header `{}`, found `{}`",
                want.join(","),
                got.join(",")
            ),
        });
    }
    Ok(())
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

pub fn load_meta(path: impl AsRef<Path>) -> Result<MetaTable> {
    let path = path.as_ref();
    let mut reader = open_reader(path)?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    check_header(path, &header, &META_HEADER)?;
    let mut table = MetaTable::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != META_HEADER.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!(
                    "expected {} columns, found {}",
                    META_HEADER.len(),
                    record.len()
                ),
            });
        }
        let symbol = record[0].trim().to_string();
        let shares: u64 = parse_field(path, line, "shares_outstanding", &record[1])?;
        let market: Market = parse_field(path, line, "market", &record[2])?;
        let meta = StockMeta::new(symbol.clone(), shares, market).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        table.insert(symbol, meta);
    }
    Ok(table)
}

/// Loads a minute-bar file into complete sessions of `bars_per_day` bars.
///
/// Sessions missing more than 5% of their minutes are rejected; smaller gaps
/// are filled with zero-volume bars priced at the previous close. Output is
/// sorted by (symbol, date).
pub fn load_minute_bars(
    path: impl AsRef<Path>,
    meta: &MetaTable,
    bars_per_day: usize,
) -> Result<(Vec<TradingDay>, LoadReport)> {
    let path = path.as_ref();
    if bars_per_day == 0 {
        return Err(Error::Invalid("bars_per_day must be positive".into()));
    }
    let mut reader = open_reader(path)?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    check_header(path, &header, &BAR_HEADER)?;

    let mut grouped: BTreeMap<(String, NaiveDate), BTreeMap<usize, MinuteBar>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != BAR_HEADER.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!(
                    "expected {} columns, found {}",
                    BAR_HEADER.len(),
                    record.len()
                ),
            });
        }
        let symbol = record[0].trim().to_string();
        if !meta.contains_key(&symbol) {
            return Err(Error::UnknownSymbol(symbol));
        }
        let date: NaiveDate = parse_field(path, line, "date", &record[1])?;
        let minute_index: usize = parse_field(path, line, "minute", &record[2])?;
        let bar = MinuteBar {
            symbol: symbol.clone(),
            date,
            minute_index,
            open: parse_field(path, line, "open", &record[3])?,
            high: parse_field(path, line, "high", &record[4])?,
            low: parse_field(path, line, "low", &record[5])?,
            close: parse_field(path, line, "close", &record[6])?,
            volume: parse_field(path, line, "volume", &record[7])?,
            amount: parse_field(path, line, "amount", &record[8])?,
        };
        let bad = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        if minute_index >= bars_per_day {
            return Err(bad(format!(
                "minute {minute_index} outside session of {bars_per_day} bars"
            )));
        }
        bar.validate().map_err(|e| bad(e.to_string()))?;
        let slot = grouped.entry((symbol, date)).or_default();
        if slot.insert(minute_index, bar).is_some() {
            return Err(bad(format!("duplicate minute {minute_index}")));
        }
    }

    let mut report = LoadReport::default();
    let mut days = Vec::with_capacity(grouped.len());
    let mut seen_dates: BTreeMap<String, Vec<NaiveDate>> = BTreeMap::new();
    for ((symbol, date), bars) in grouped {
        seen_dates.entry(symbol.clone()).or_default().push(date);
        let missing = bars_per_day - bars.len();
        if missing as f64 > MAX_MISSING_FRACTION * bars_per_day as f64 {
            report.rejected.push(RejectedDay {
                symbol,
                date,
                missing,
            });
            continue;
        }
        report.filled_minutes += missing;
        let first_open = bars.values().next().map(|b| b.open).unwrap_or(0.0);
        let mut full = Vec::with_capacity(bars_per_day);
        let mut bars = bars;
        let mut prev_close = first_open;
        for m in 0..bars_per_day {
            let bar = bars.remove(&m).unwrap_or_else(|| MinuteBar {
                symbol: symbol.clone(),
                date,
                minute_index: m,
                open: prev_close,
                high: prev_close,
                low: prev_close,
                close: prev_close,
                volume: 0,
                amount: 0.0,
            });
            prev_close = bar.close;
            full.push(bar);
        }
        days.push(TradingDay::new(symbol, date, full)?);
    }
    for dates in seen_dates.values() {
        report.missing_days += count_missing_weekdays(dates);
    }
    Ok((days, report))
}

fn count_missing_weekdays(sorted: &[NaiveDate]) -> usize {
    let (Some(first), Some(last)) = (sorted.first(), sorted.last()) else {
        return 0;
    };
    let mut missing = 0;
    let mut d = *first;
    let mut idx = 0;
    while d <= *last {
        if idx < sorted.len() && sorted[idx] == d {
            idx += 1;
        } else if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            missing += 1;
        }
        d = d + Days::new(1);
    }
    missing
}

pub fn write_minute_bars(path: impl AsRef<Path>, days: &[TradingDay]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    out.push_str(&BAR_HEADER.join(","));
    out.push('\n');
    for day in days {
        for b in &day.bars {
            // `{}` on f64 prints the shortest representation that round-trips.
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                b.symbol,
                b.date.format("%Y-%m-%d"),
                b.minute_index,
                b.open,
                b.high,
                b.low,
                b.close,
                b.volume,
                b.amount
            ));
        }
    }
    write_string(path, &out)
}

pub fn write_meta(path: impl AsRef<Path>, meta: &MetaTable) -> Result<()> {
    let path = path.as_ref();
    let mut out = META_HEADER.join(",");
    out.push('\n');
    for m in meta.values() {
        out.push_str(&format!(
            "{},{},{}\n",
            m.symbol, m.shares_outstanding, m.market
        ));
    }
    write_string(path, &out)
}

fn write_string(path: &Path, contents: &str) -> Result<()> {
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(contents.as_bytes())
        .map_err(|e| Error::io(path, e))
}

//! CSV loaders that canonicalize raw case, mobility, commute, population and
//! census files into gap-free daily series keyed by geo id.
//!
//! Every loader validates row by row: a bad row is reported with its line
//! number and skipped, the rest of the file still loads. A file with no
//! usable rows is an error.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, RejectedRow, Result};
use crate::series::TimeSeries;

pub const CASES_HEADER: &[&str] = &["geo_id", "date", "cum_cases", "cum_deaths"];
pub const MOBILITY_HEADER: &[&str] = &["geo_id", "date", "mobility_index"];
pub const COMMUTE_HEADER: &[&str] = &["home_id", "work_id", "workers"];
pub const POPULATION_HEADER: &[&str] = &["geo_id", "population"];
pub const STATES_HEADER: &[&str] = &["geo_id", "state"];
pub const CENSUS_HEADER: &[&str] = &["geo_id", "date", "hosp_census", "icu_census"];

/// Loader output plus the rows that were rejected along the way.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded<T> {
    pub data: T,
    pub rejected: Vec<RejectedRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSeries {
    pub cum_cases: TimeSeries,
    pub cum_deaths: TimeSeries,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusSeries {
    pub hosp: TimeSeries,
    pub icu: TimeSeries,
}

/// Directed commute flow between two geo ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommuteEdge {
    pub home: String,
    pub work: String,
    pub workers: f64,
}

pub type CaseMap = BTreeMap<String, CaseSeries>;
pub type SeriesMap = BTreeMap<String, TimeSeries>;

struct Rows {
    records: Vec<(u64, csv::StringRecord)>,
    rejected: Vec<RejectedRow>,
}

fn read_rows<R: Read>(reader: R, path: &Path, header: &[&str]) -> Result<Rows> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let found = rdr.headers()?.clone();
    if found.len() != header.len() || found.iter().zip(header).any(|(a, b)| a != *b) {
        return Err(Error::Header {
            path: path.to_path_buf(),
            expected: header.join(","),
        });
    }
    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for rec in rdr.records() {
        match rec {
            Ok(r) => {
                let line = r.position().map(|p| p.line()).unwrap_or(0);
                if r.iter().all(str::is_empty) {
                    continue;
                }
                if r.len() != header.len() {
                    rejected.push(RejectedRow::new(
                        line,
                        format!("expected {} fields, found {}", header.len(), r.len()),
                        r.get(0),
                    ));
                    continue;
                }
                records.push((line, r));
            }
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                rejected.push(RejectedRow::new(line, e.to_string(), None));
            }
        }
    }
    Ok(Rows { records, rejected })
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_date(s: &str) -> std::result::Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| format!("bad date `{s}`"))
}

fn parse_nonneg(s: &str, what: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("non-numeric {what} `{s}`"))?;
    if !v.is_finite() || v < 0.0 {
        return Err(format!("negative or non-finite {what} `{s}`"));
    }
    Ok(v)
}

fn parse_count(s: &str, what: &str) -> std::result::Result<f64, String> {
    let v = parse_nonneg(s, what)?;
    if v.fract() != 0.0 {
        return Err(format!("non-integer {what} `{s}`"));
    }
    Ok(v)
}

fn parse_geo(s: &str) -> std::result::Result<String, String> {
    if s.is_empty() {
        Err("empty geo id".to_string())
    } else {
        Ok(s.to_string())
    }
}

/// Expand sparse dated points into a gap-free series, filling interior gaps
/// with `fill(prev, next, fraction)`.
fn densify(
    geo: &str,
    points: &BTreeMap<NaiveDate, f64>,
    fill: impl Fn(f64, f64, f64) -> f64,
) -> TimeSeries {
    let mut iter = points.iter();
    let (&start, &first) = iter.next().expect("densify needs at least one point");
    let mut values = vec![first];
    let mut prev_date = start;
    let mut prev = first;
    for (&date, &v) in iter {
        let gap = (date - prev_date).num_days();
        for k in 1..gap {
            values.push(fill(prev, v, k as f64 / gap as f64));
        }
        values.push(v);
        prev_date = date;
        prev = v;
    }
    TimeSeries::new(geo, start, values)
}

fn forward_fill(prev: f64, _next: f64, _frac: f64) -> f64 {
    prev
}

fn linear_fill(prev: f64, next: f64, frac: f64) -> f64 {
    prev + (next - prev) * frac
}

/// Load `geo_id,date,cum_cases,cum_deaths`.
///
/// Interior missing dates are forward-filled; duplicate `(geo_id, date)`
/// rows keep the larger cumulative value per column.
pub fn load_cases(path: impl AsRef<Path>) -> Result<Loaded<CaseMap>> {
    let path = path.as_ref();
    read_cases(open(path)?, path)
}

pub fn read_cases<R: Read>(reader: R, path: &Path) -> Result<Loaded<CaseMap>> {
    let Rows {
        records,
        mut rejected,
    } = read_rows(reader, path, CASES_HEADER)?;
    let mut raw: BTreeMap<String, BTreeMap<NaiveDate, (f64, f64)>> = BTreeMap::new();
    for (line, r) in records {
        let parsed = (|| {
            Ok::<_, String>((
                parse_geo(&r[0])?,
                parse_date(&r[1])?,
                parse_count(&r[2], "cum_cases")?,
                parse_count(&r[3], "cum_deaths")?,
            ))
        })();
        match parsed {
            Ok((geo, date, c, d)) => {
                let slot = raw.entry(geo).or_default().entry(date).or_insert((c, d));
                slot.0 = slot.0.max(c);
                slot.1 = slot.1.max(d);
            }
            Err(reason) => rejected.push(RejectedRow::new(line, reason, r.get(0))),
        }
    }
    if raw.is_empty() {
        return Err(Error::EmptyInput(path.to_path_buf()));
    }
    let data = raw
        .into_iter()
        .map(|(geo, rows)| {
            let cases: BTreeMap<_, _> = rows.iter().map(|(d, v)| (*d, v.0)).collect();
            let deaths: BTreeMap<_, _> = rows.iter().map(|(d, v)| (*d, v.1)).collect();
            let series = CaseSeries {
                cum_cases: densify(&geo, &cases, forward_fill),
                cum_deaths: densify(&geo, &deaths, forward_fill),
            };
            (geo, series)
        })
        .collect();
    Ok(Loaded { data, rejected })
}

/// Load `geo_id,date,mobility_index`; interior gaps linearly interpolated,
/// duplicate dates averaged.
pub fn load_mobility(path: impl AsRef<Path>) -> Result<Loaded<SeriesMap>> {
    let path = path.as_ref();
    read_mobility(open(path)?, path)
}

pub fn read_mobility<R: Read>(reader: R, path: &Path) -> Result<Loaded<SeriesMap>> {
    let Rows {
        records,
        mut rejected,
    } = read_rows(reader, path, MOBILITY_HEADER)?;
    let mut raw: BTreeMap<String, BTreeMap<NaiveDate, (f64, u32)>> = BTreeMap::new();
    for (line, r) in records {
        let parsed = (|| {
            Ok::<_, String>((
                parse_geo(&r[0])?,
                parse_date(&r[1])?,
                parse_nonneg(&r[2], "mobility_index")?,
            ))
        })();
        match parsed {
            Ok((geo, date, m)) => {
                let slot = raw.entry(geo).or_default().entry(date).or_insert((0.0, 0));
                slot.0 += m;
                slot.1 += 1;
            }
            Err(reason) => rejected.push(RejectedRow::new(line, reason, r.get(0))),
        }
    }
    if raw.is_empty() {
        return Err(Error::EmptyInput(path.to_path_buf()));
    }
    let data = raw
        .into_iter()
        .map(|(geo, rows)| {
            let pts: BTreeMap<_, _> = rows
                .into_iter()
                .map(|(d, (sum, n))| (d, sum / f64::from(n)))
                .collect();
            let ts = densify(&geo, &pts, linear_fill);
            (geo, ts)
        })
        .collect();
    Ok(Loaded { data, rejected })
}

/// Load `home_id,work_id,workers` as directed edges. Self-loops are kept,
/// duplicate pairs summed. Output is sorted by `(home, work)`.
pub fn load_commute(path: impl AsRef<Path>) -> Result<Loaded<Vec<CommuteEdge>>> {
    let path = path.as_ref();
    read_commute(open(path)?, path)
}

pub fn read_commute<R: Read>(reader: R, path: &Path) -> Result<Loaded<Vec<CommuteEdge>>> {
    let Rows {
        records,
        mut rejected,
    } = read_rows(reader, path, COMMUTE_HEADER)?;
    let mut sums: BTreeMap<(String, String), f64> = BTreeMap::new();
    for (line, r) in records {
        let parsed = (|| {
            Ok::<_, String>((
                parse_geo(&r[0])?,
                parse_geo(&r[1])?,
                parse_nonneg(&r[2], "workers")?,
            ))
        })();
        match parsed {
            Ok((h, w, n)) => *sums.entry((h, w)).or_insert(0.0) += n,
            Err(reason) => rejected.push(RejectedRow::new(line, reason, r.get(0))),
        }
    }
    if sums.is_empty() {
        return Err(Error::EmptyInput(path.to_path_buf()));
    }
    let data = sums
        .into_iter()
        .map(|((home, work), workers)| CommuteEdge {
            home,
            work,
            workers,
        })
        .collect();
    Ok(Loaded { data, rejected })
}

/// Load `geo_id,population`. Population must be positive.
pub fn load_population(path: impl AsRef<Path>) -> Result<Loaded<BTreeMap<String, f64>>> {
    let path = path.as_ref();
    let Rows {
        records,
        mut rejected,
    } = read_rows(open(path)?, path, POPULATION_HEADER)?;
    let mut data = BTreeMap::new();
    for (line, r) in records {
        match parse_geo(&r[0]).and_then(|g| Ok((g, parse_nonneg(&r[1], "population")?))) {
            Ok((g, p)) if p <= 0.0 => {
                rejected.push(RejectedRow::new(line, "population must be positive", Some(&g)))
            }
            Ok((g, p)) => {
                data.insert(g, p);
            }
            Err(reason) => rejected.push(RejectedRow::new(line, reason, r.get(0))),
        }
    }
    if data.is_empty() {
        return Err(Error::EmptyInput(path.to_path_buf()));
    }
    Ok(Loaded { data, rejected })
}

/// Load `geo_id,state` used to forbid cross-state commute edges.
pub fn load_states(path: impl AsRef<Path>) -> Result<Loaded<BTreeMap<String, String>>> {
    let path = path.as_ref();
    let Rows {
        records,
        mut rejected,
    } = read_rows(open(path)?, path, STATES_HEADER)?;
    let mut data = BTreeMap::new();
    for (line, r) in records {
        match (parse_geo(&r[0]), parse_geo(&r[1])) {
            (Ok(g), Ok(s)) => {
                data.insert(g, s);
            }
            (Err(reason), _) | (_, Err(reason)) => rejected.push(RejectedRow::new(line, reason, r.get(0))),
        }
    }
    if data.is_empty() {
        return Err(Error::EmptyInput(path.to_path_buf()));
    }
    Ok(Loaded { data, rejected })
}

/// Load `geo_id,date,hosp_census,icu_census`; census levels are linearly
/// interpolated over gaps.
pub fn load_census(path: impl AsRef<Path>) -> Result<Loaded<BTreeMap<String, CensusSeries>>> {
    let path = path.as_ref();
    let Rows {
        records,
        mut rejected,
    } = read_rows(open(path)?, path, CENSUS_HEADER)?;
    let mut raw: BTreeMap<String, BTreeMap<NaiveDate, (f64, f64)>> = BTreeMap::new();
    for (line, r) in records {
        let parsed = (|| {
            Ok::<_, String>((
                parse_geo(&r[0])?,
                parse_date(&r[1])?,
                parse_nonneg(&r[2], "hosp_census")?,
                parse_nonneg(&r[3], "icu_census")?,
            ))
        })();
        match parsed {
            Ok((g, d, h, u)) => {
                raw.entry(g).or_default().insert(d, (h, u));
            }
            Err(reason) => rejected.push(RejectedRow::new(line, reason, r.get(0))),
        }
    }
    if raw.is_empty() {
        return Err(Error::EmptyInput(path.to_path_buf()));
    }
    let data = raw
        .into_iter()
        .map(|(geo, rows)| {
            let h: BTreeMap<_, _> = rows.iter().map(|(d, v)| (*d, v.0)).collect();
            let u: BTreeMap<_, _> = rows.iter().map(|(d, v)| (*d, v.1)).collect();
            let series = CensusSeries {
                hosp: densify(&geo, &h, linear_fill),
                icu: densify(&geo, &u, linear_fill),
            };
            (geo, series)
        })
        .collect();
    Ok(Loaded { data, rejected })
}

pub fn write_cases<W: Write>(writer: W, cases: &CaseMap) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CASES_HEADER)?;
    for (geo, s) in cases {
        for (i, date) in s.cum_cases.dates().enumerate() {
            w.write_record([
                geo.as_str(),
                &date.to_string(),
                &s.cum_cases.values[i].to_string(),
                &s.cum_deaths.values[i].to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn write_mobility<W: Write>(writer: W, mobility: &SeriesMap) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(MOBILITY_HEADER)?;
    for (geo, s) in mobility {
        for (date, v) in s.dates().zip(&s.values) {
            w.write_record([geo.as_str(), &date.to_string(), &v.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

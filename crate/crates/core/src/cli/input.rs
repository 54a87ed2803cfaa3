//! CSV ingestion and grid parsing.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use nalgebra::DMatrix;

use crate::data::{build_lagged_design, LaggedDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct InputOptions {
    pub lag_count: usize,
    pub calendar_covariates: bool,
    pub negate_exposure: bool,
}

/// Missing cells (empty or `NA`) become NaN so the row is dropped with its
/// lag window; anything else that is not a finite number is an error.
fn parse_cell(raw: &str, column: &str, line: usize) -> Result<f64> {
    let s = raw.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Schema(format!(
            "line {line}, column {column:?}: {s:?} is not a finite number"
        ))),
    }
}

/// Day number for an ISO date, or the integer itself.
fn parse_time(raw: &str, line: usize) -> Result<i64> {
    let s = raw.trim();
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(d.num_days_from_ce() as i64);
    }
    s.parse::<i64>()
        .map_err(|_| Error::Schema(format!("line {line}: time {s:?} is neither an integer nor YYYY-MM-DD")))
}

fn day_to_date(day: i64) -> Result<NaiveDate> {
    i32::try_from(day)
        .ok()
        .and_then(NaiveDate::from_num_days_from_ce_opt)
        .ok_or_else(|| Error::Schema(format!("time {day} is out of calendar range")))
}

/// Reads `time,outcome,exposure[,trials][,covariates...]`. Rows must be
/// consecutive days. An intercept column is always prepended.
pub fn read_dataset(path: &Path, opts: &InputOptions) -> Result<LaggedDataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();
    let expect = ["time", "outcome", "exposure"];
    if headers.len() < 3 || headers[..3] != expect {
        return Err(Error::Schema(format!(
            "expected leading columns time,outcome,exposure, found {headers:?}"
        )));
    }
    let has_trials = headers.get(3).is_some_and(|h| h == "trials");
    let cov_start = if has_trials { 4 } else { 3 };

    let mut times = Vec::new();
    let mut outcomes = Vec::new();
    let mut exposures = Vec::new();
    let mut trials = Vec::new();
    let mut extra: Vec<Vec<f64>> = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        if rec.len() != headers.len() {
            return Err(Error::Schema(format!(
                "line {line}: {} fields, expected {}",
                rec.len(),
                headers.len()
            )));
        }
        times.push(parse_time(&rec[0], line)?);
        outcomes.push(parse_cell(&rec[1], "outcome", line)?);
        exposures.push(parse_cell(&rec[2], "exposure", line)?);
        if has_trials {
            trials.push(parse_cell(&rec[3], "trials", line)?);
        }
        let row = (cov_start..headers.len())
            .map(|j| {
                let v = parse_cell(&rec[j], &headers[j], line)?;
                if v.is_nan() {
                    Err(Error::Schema(format!(
                        "line {line}: covariate {:?} is missing",
                        headers[j]
                    )))
                } else {
                    Ok(v)
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        extra.push(row);
    }
    if times.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(w) = times.windows(2).position(|w| w[1] != w[0] + 1) {
        return Err(Error::Schema(format!(
            "time column must increase by one per row; break after line {}",
            w + 2
        )));
    }

    let covariates: Vec<Vec<f64>> = extra
        .into_iter()
        .map(|row| std::iter::once(1.0).chain(row).collect())
        .collect();
    let mut data = build_lagged_design(
        &exposures,
        &outcomes,
        &covariates,
        has_trials.then_some(trials.as_slice()),
        opts.lag_count,
    )?;
    if opts.calendar_covariates {
        data = add_calendar_columns(data, &times)?;
    }
    if opts.negate_exposure {
        data.negate_exposures();
    }
    Ok(data)
}

/// Month-by-year and day-of-week indicators, with the first level of each
/// absorbed by the intercept. Only levels present among kept rows appear.
fn add_calendar_columns(data: LaggedDataset, times: &[i64]) -> Result<LaggedDataset> {
    let rows = data.source_rows().to_vec();
    let dates = rows
        .iter()
        .map(|&r| day_to_date(times[r]))
        .collect::<Result<Vec<_>>>()?;
    let mut months: BTreeMap<(i32, u32), usize> = BTreeMap::new();
    for d in &dates {
        let next = months.len();
        months.entry((d.year(), d.month())).or_insert(next);
    }
    let month_levels: Vec<(i32, u32)> = months.keys().copied().skip(1).collect();
    let weekday_levels: Vec<u32> = {
        let mut w: Vec<u32> = dates.iter().map(|d| d.weekday().num_days_from_monday()).collect();
        w.sort_unstable();
        w.dedup();
        w.into_iter().skip(1).collect()
    };
    let base = data.covariates();
    let p0 = base.ncols();
    let p = p0 + month_levels.len() + weekday_levels.len();
    let z = DMatrix::from_fn(data.n(), p, |i, j| {
        if j < p0 {
            base[(i, j)]
        } else if j < p0 + month_levels.len() {
            let (y, m) = month_levels[j - p0];
            f64::from(u8::from(dates[i].year() == y && dates[i].month() == m))
        } else {
            let w = weekday_levels[j - p0 - month_levels.len()];
            f64::from(u8::from(dates[i].weekday().num_days_from_monday() == w))
        }
    });
    let mut out = LaggedDataset::new(
        data.outcomes().clone(),
        data.exposures().clone(),
        z,
        data.lag_count(),
        data.trial_counts().cloned(),
    )?;
    out.source_rows = rows;
    Ok(out)
}

/// Single-column exposure series; a header row is optional.
pub fn read_exposure_library(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec?;
        let cell = rec.get(0).unwrap_or("");
        match cell.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            _ if k == 0 => continue,
            _ => {
                return Err(Error::Schema(format!(
                    "library line {}: {cell:?} is not a finite number",
                    k + 1
                )))
            }
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<T>()
                .map_err(|_| Error::param(format!("bad {what} grid entry {t:?}")))
        })
        .collect()
}

/// `start:stop:step` (inclusive) or `a,b,c`.
pub fn parse_grid_x(s: &str) -> Result<Vec<f64>> {
    let grid: Vec<f64> = if s.contains(':') {
        let parts: Vec<f64> = parse_list::<f64>(&s.replace(':', ","), "exposure")?;
        let (start, stop, step) = match parts.as_slice() {
            [a, b] => (*a, *b, 1.0),
            [a, b, c] => (*a, *b, *c),
            _ => return Err(Error::param(format!("exposure grid {s:?}: use start:stop[:step]"))),
        };
        if !(step > 0.0) || stop < start {
            return Err(Error::param(format!("exposure grid {s:?} is empty")));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        (0..count).map(|k| start + k as f64 * step).collect()
    } else {
        parse_list(s, "exposure")?
    };
    if grid.is_empty() || grid.iter().any(|v| !v.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("exposure grid must be finite and strictly increasing"));
    }
    Ok(grid)
}

/// `start:stop` (inclusive) or `a,b,c`; every lag must be at most `max_lag`.
pub fn parse_grid_l(s: &str, max_lag: usize) -> Result<Vec<usize>> {
    let grid: Vec<usize> = if let Some((a, b)) = s.split_once(':') {
        let a: usize = a
            .trim()
            .parse()
            .map_err(|_| Error::param(format!("bad lag grid {s:?}")))?;
        let b: usize = b
            .trim()
            .parse()
            .map_err(|_| Error::param(format!("bad lag grid {s:?}")))?;
        (a..=b).collect()
    } else {
        parse_list(s, "lag")?
    };
    if grid.is_empty() || grid.iter().any(|&l| l > max_lag) {
        return Err(Error::param(format!(
            "lag grid must be nonempty with lags in 0..={max_lag}"
        )));
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn grids() {
        assert_eq!(parse_grid_x("3:6").unwrap(), vec![3.0, 4.0, 5.0, 6.0]);
        assert_eq!(parse_grid_x("0:1:0.5").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_grid_x("1, 2.5").unwrap(), vec![1.0, 2.5]);
        assert!(parse_grid_x("2,1").is_err());
        assert_eq!(parse_grid_l("0:3", 5).unwrap(), vec![0, 1, 2, 3]);
        assert!(parse_grid_l("0:6", 5).is_err());
    }

    #[test]
    fn reads_and_drops_incomplete_windows() {
        let mut text = String::from("time,outcome,exposure,humidity\n");
        for t in 0..12 {
            let x = if t == 5 {
                "NA".to_string()
            } else {
                format!("{}", 20 + t % 4)
            };
            text.push_str(&format!("{t},{},{x},{}\n", t as f64 * 0.5, (t * 7 % 5) as f64));
        }
        let f = write_csv(&text);
        let opts = InputOptions {
            lag_count: 2,
            ..Default::default()
        };
        let d = read_dataset(f.path(), &opts).unwrap();
        // t = 5, 6, 7 see the missing exposure; t = 0, 1 lack a window
        assert_eq!(d.source_rows(), &[2, 3, 4, 8, 9, 10, 11]);
        assert_eq!(d.covariates().ncols(), 2);
        assert_eq!(d.exposures()[(0, 2)], 20.0);

        let neg = read_dataset(
            f.path(),
            &InputOptions {
                negate_exposure: true,
                ..opts
            },
        )
        .unwrap();
        assert_eq!(neg.exposures()[(0, 2)], -20.0);
    }

    #[test]
    fn schema_errors() {
        let opts = InputOptions {
            lag_count: 1,
            ..Default::default()
        };
        assert!(matches!(
            read_dataset(write_csv("t,y,x\n0,1,2\n").path(), &opts),
            Err(Error::Schema(_))
        ));
        assert!(matches!(
            read_dataset(write_csv("time,outcome,exposure\n0,1,inf\n1,1,2\n").path(), &opts),
            Err(Error::Schema(_))
        ));
        assert!(matches!(
            read_dataset(write_csv("time,outcome,exposure\n0,1,2\n2,1,2\n").path(), &opts),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn calendar_columns() {
        let mut text = String::from("time,outcome,exposure\n");
        let start = NaiveDate::from_ymd_opt(2001, 1, 20).unwrap();
        for k in 0..40 {
            let d = start + chrono::Days::new(k);
            text.push_str(&format!(
                "{},{},{}\n",
                d.format("%Y-%m-%d"),
                (k * 13 % 7) as f64,
                20.0 + (k % 5) as f64
            ));
        }
        let opts = InputOptions {
            lag_count: 3,
            calendar_covariates: true,
            negate_exposure: false,
        };
        let d = read_dataset(write_csv(&text).path(), &opts).unwrap();
        // intercept + February + six weekdays
        assert_eq!(d.covariates().ncols(), 1 + 1 + 6);
        assert_eq!(d.n(), 37);
    }
}

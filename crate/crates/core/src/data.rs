//! Traffic series: CSV ingestion, synthetic generation, rolling windows and
//! error metrics.

use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, Timelike};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Width of the trailing average applied to the deviation random walk.
pub const DEVIATION_SMOOTHING: usize = 6;

/// Hourly series.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    pub start: NaiveDateTime,
    /// Sampling interval in hours.
    pub interval: f64,
    pub values: Vec<f64>,
}

impl TimeSeriesDataset {
    pub fn new(start: NaiveDateTime, interval: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput("a dataset needs at least two points".into()));
        }
        if !(interval > 0.0) {
            return Err(Error::InvalidInput("sampling interval must be positive".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("dataset contains non-finite values".into()));
        }
        Ok(Self { start, interval, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Time of each sample in hours since `start`.
    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| i as f64 * self.interval).collect()
    }

    pub fn timestamp(&self, index: usize) -> NaiveDateTime {
        let secs = (index as f64 * self.interval * 3600.0).round() as i64;
        self.start + chrono::Duration::seconds(secs)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["timestamp", "value"])?;
        for (i, v) in self.values.iter().enumerate() {
            w.write_record([self.timestamp(i).format(TIMESTAMP_FORMAT).to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Impute {
    /// Missing hours are an error.
    #[default]
    None,
    /// Missing hours are filled by linear interpolation.
    Linear,
}

impl std::str::FromStr for Impute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Impute::None),
            "linear" => Ok(Impute::Linear),
            other => Err(Error::InvalidConfig(format!("unknown impute mode `{other}`"))),
        }
    }
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc());
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

/// Parses a `timestamp,value` CSV with a header row.
pub fn read_csv<R: Read>(reader: R, impute: Impute) -> Result<TimeSeriesDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let mut rows: Vec<(NaiveDateTime, f64)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::MalformedRow { line, reason: e.to_string() })?;
        if rec.len() != 2 {
            return Err(Error::MalformedRow {
                line,
                reason: format!("expected 2 fields, found {}", rec.len()),
            });
        }
        let ts = parse_timestamp(&rec[0]).ok_or_else(|| Error::MalformedRow {
            line,
            reason: format!("unparseable timestamp `{}`", &rec[0]),
        })?;
        if ts.minute() != 0 || ts.second() != 0 || ts.nanosecond() != 0 {
            return Err(Error::MalformedRow { line, reason: "timestamp is not on the hour".into() });
        }
        let value: f64 = rec[1].parse().map_err(|_| Error::MalformedRow {
            line,
            reason: format!("unparseable value `{}`", &rec[1]),
        })?;
        if !value.is_finite() {
            return Err(Error::MalformedRow { line, reason: "value is not finite".into() });
        }
        if let Some(&(prev, _)) = rows.last() {
            if ts <= prev {
                return Err(Error::NonMonotoneTimestamps { line });
            }
        }
        rows.push((ts, value));
    }
    if rows.len() < 2 {
        return Err(Error::InvalidInput("a dataset needs at least two rows".into()));
    }

    let mut values = vec![rows[0].1];
    for (pos, w) in rows.windows(2).enumerate() {
        let hours = (w[1].0 - w[0].0).num_hours();
        if hours > 1 {
            if impute == Impute::None {
                return Err(Error::Gap { position: pos + 1 });
            }
            for h in 1..hours {
                let frac = h as f64 / hours as f64;
                values.push(w[0].1 + frac * (w[1].1 - w[0].1));
            }
        }
        values.push(w[1].1);
    }
    TimeSeriesDataset::new(rows[0].0, 1.0, values)
}

pub fn load_csv(path: &Path, impute: Impute) -> Result<TimeSeriesDataset> {
    read_csv(std::fs::File::open(path)?, impute)
}

/// Parameters of the synthetic traffic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub weekly_amplitude: f64,
    pub daily_amplitude: f64,
    /// Standard deviation of the random-walk increments.
    pub deviation_scale: f64,
    /// Standard deviation of the white observation noise.
    pub noise_scale: f64,
    /// Constant offset added to every sample.
    pub level: f64,
    pub length: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            weekly_amplitude: 1.0,
            daily_amplitude: 2.0,
            deviation_scale: 0.05,
            noise_scale: 0.1,
            level: 10.0,
            length: 720,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.length < 2 {
            return Err(Error::InvalidConfig("synth.length must be at least 2".into()));
        }
        if self.weekly_amplitude != 0.0 && self.length <= 2 * 168 {
            return Err(Error::InvalidConfig("a weekly pattern needs more than two weeks of samples".into()));
        }
        let finite = [self.weekly_amplitude, self.daily_amplitude, self.deviation_scale, self.noise_scale, self.level];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("synthetic parameters must be finite".into()));
        }
        if self.deviation_scale < 0.0 || self.noise_scale < 0.0 {
            return Err(Error::InvalidConfig("synthetic scales must be non-negative".into()));
        }
        Ok(())
    }
}

/// `level + A_w sin(2πt/168) + A_d sin(2πt/24) + deviation(t) + noise(t)`.
pub fn generate(spec: &SyntheticSpec) -> Result<TimeSeriesDataset> {
    spec.validate()?;
    let n = spec.length;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut walk = Vec::with_capacity(n);
    let mut w = 0.0;
    for _ in 0..n {
        let step: f64 = StandardNormal.sample(&mut rng);
        w += spec.deviation_scale * step;
        walk.push(w);
    }
    let deviation: Vec<f64> = (0..n)
        .map(|t| {
            let lo = (t + 1).saturating_sub(DEVIATION_SMOOTHING);
            walk[lo..=t].iter().sum::<f64>() / (t + 1 - lo) as f64
        })
        .collect();
    let tau = std::f64::consts::TAU;
    let values = (0..n)
        .map(|t| {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let x = t as f64;
            spec.level
                + spec.weekly_amplitude * (tau * x / 168.0).sin()
                + spec.daily_amplitude * (tau * x / 24.0).sin()
                + deviation[t]
                + spec.noise_scale * noise
        })
        .collect();
    let start = NaiveDateTime::parse_from_str("2024-01-01T00:00:00", TIMESTAMP_FORMAT).expect("valid literal");
    TimeSeriesDataset::new(start, 1.0, values)
}

/// One backtest split, as index ranges into the series.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub index: usize,
    pub train: Range<usize>,
    pub test: Range<usize>,
}

/// Window `w` trains on `[w·step, w·step + train_len)` and tests on the next
/// `horizon` points.
pub fn rolling_windows(len: usize, train_len: usize, horizon: usize, step: usize) -> Result<Vec<Window>> {
    if train_len == 0 || horizon == 0 || step == 0 {
        return Err(Error::InvalidConfig("train_len, horizon and step must be positive".into()));
    }
    let mut out = vec![];
    let mut start = 0;
    while start + train_len + horizon <= len {
        out.push(Window {
            index: out.len(),
            train: start..start + train_len,
            test: start + train_len..start + train_len + horizon,
        });
        start += step;
    }
    Ok(out)
}

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!("{} predictions for {} truths", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("metrics need at least one point".into()));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// Truth values smaller than this in magnitude are left out of MAPE.
pub const MAPE_ZERO_GUARD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mape {
    pub percent: f64,
    /// Points skipped because their truth was (numerically) zero.
    pub excluded: usize,
}

pub fn mape_detail(pred: &[f64], truth: &[f64]) -> Result<Mape> {
    check_pair(pred, truth)?;
    let (sum, used) = pred
        .iter()
        .zip(truth)
        .filter(|(_, t)| t.abs() >= MAPE_ZERO_GUARD)
        .fold((0.0, 0usize), |(s, c), (p, t)| (s + ((p - t) / t).abs(), c + 1));
    if used == 0 {
        return Err(Error::ZeroTruth);
    }
    Ok(Mape {
        percent: 100.0 * sum / used as f64,
        excluded: pred.len() - used,
    })
}

/// Mean absolute percentage error, in percent.
pub fn mape(pred: &[f64], truth: &[f64]) -> Result<f64> {
    mape_detail(pred, truth).map(|m| m.percent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const CSV3: &str = "timestamp,value\n2024-03-01T00:00:00,1.5\n2024-03-01T01:00:00,2\n2024-03-01T02:00:00,2.5\n";

    #[test]
    fn reads_valid_rows() {
        let d = read_csv(CSV3.as_bytes(), Impute::None).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.values, vec![1.5, 2.0, 2.5]);
        assert_eq!(d.times(), vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn duplicate_timestamp() {
        let s = "timestamp,value\n2024-03-01T00:00:00,1\n2024-03-01T00:00:00,2\n";
        assert!(matches!(read_csv(s.as_bytes(), Impute::None), Err(Error::NonMonotoneTimestamps { line: 3 })));
    }

    #[test]
    fn gap_handling() {
        let s = "timestamp,value\n2024-03-01T00:00:00,1\n2024-03-01T02:00:00,3\n";
        assert!(matches!(read_csv(s.as_bytes(), Impute::None), Err(Error::Gap { position: 1 })));
        let d = read_csv(s.as_bytes(), Impute::Linear).unwrap();
        assert_eq!(d.values, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn malformed_rows() {
        let s = "timestamp,value\n2024-03-01T00:00:00,abc\n";
        assert!(matches!(read_csv(s.as_bytes(), Impute::None), Err(Error::MalformedRow { line: 2, .. })));
        let s = "timestamp,value\n2024-03-01T00:30:00,1\n2024-03-01T01:30:00,1\n";
        assert!(matches!(read_csv(s.as_bytes(), Impute::None), Err(Error::MalformedRow { line: 2, .. })));
    }

    #[test]
    fn csv_round_trip() {
        let d = generate(&SyntheticSpec { length: 400, ..Default::default() }).unwrap();
        let mut buf = vec![];
        d.write_csv(&mut buf).unwrap();
        let back = read_csv(buf.as_slice(), Impute::None).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn zero_spec_is_zero() {
        let spec = SyntheticSpec {
            weekly_amplitude: 0.0,
            daily_amplitude: 0.0,
            deviation_scale: 0.0,
            noise_scale: 0.0,
            level: 0.0,
            length: 50,
            seed: 1,
        };
        assert!(generate(&spec).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn daily_only_is_periodic() {
        let spec = SyntheticSpec {
            weekly_amplitude: 0.0,
            daily_amplitude: 3.0,
            deviation_scale: 0.0,
            noise_scale: 0.0,
            level: 0.0,
            length: 200,
            seed: 1,
        };
        let v = generate(&spec).unwrap().values;
        for t in 0..v.len() - 24 {
            assert_relative_eq!(v[t + 24], v[t], epsilon = 1e-12);
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let spec = SyntheticSpec { seed: 99, ..Default::default() };
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = SyntheticSpec { seed: 100, ..Default::default() };
        assert_ne!(generate(&spec).unwrap().values, generate(&other).unwrap().values);
    }

    #[test]
    fn short_weekly_series_rejected() {
        let spec = SyntheticSpec { length: 300, ..Default::default() };
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn window_counts() {
        assert_eq!(rolling_windows(12, 10, 1, 1).unwrap().len(), 2);
        assert!(rolling_windows(10, 10, 1, 1).unwrap().is_empty());
        assert_eq!(rolling_windows(720, 300, 1, 1).unwrap().len(), 420);
        let w = rolling_windows(12, 10, 1, 1).unwrap();
        assert_eq!(w[1].train, 1..11);
        assert_eq!(w[1].test, 11..12);
    }

    #[test]
    fn metric_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mape(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_relative_eq!(rmse(&[110.0], &[100.0]).unwrap(), 10.0);
        assert_relative_eq!(mape(&[110.0], &[100.0]).unwrap(), 10.0, epsilon = 1e-12);
        assert!(matches!(mape(&[1.0], &[0.0]), Err(Error::ZeroTruth)));
        let m = mape_detail(&[1.0, 2.0], &[0.0, 1.0]).unwrap();
        assert_eq!(m.excluded, 1);
        assert_relative_eq!(m.percent, 100.0);
        assert!(rmse(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }
}

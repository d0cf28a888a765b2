//! Data pipeline: CSV ingestion, return conversion, temporal splits and the
//! synthetic generator with known signal/noise decomposition.
//!
//! Market columns are converted to log returns, everything else to first
//! differences; the first timestep is dropped. A processed series is the
//! universal currency the rest of the crate operates on.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// Tradable/price-like variable, converted to log returns.
    Market,
    /// Rates, spreads, sentiment etc., converted to first differences.
    NonMarket,
}

/// Half-open index interval `[start, end)` into a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        assert!(start <= end, "span start must not exceed end");
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

/// As-loaded series; missing cells are `NaN`.
#[derive(Debug, Clone)]
pub struct RawSeries {
    pub dates: Vec<NaiveDate>,
    pub columns: Vec<RawColumn>,
}

#[derive(Debug, Clone)]
pub struct RawColumn {
    pub name: String,
    pub kind: FeatureKind,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: FeatureKind,
    pub values: Vec<f64>,
}

/// Fully numeric series of per-feature log returns / differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessedSeries {
    pub dates: Vec<NaiveDate>,
    pub columns: Vec<Column>,
    /// Indices of the tradable universe within `columns`; always market kind.
    pub universe: Vec<usize>,
}

impl ProcessedSeries {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn n_assets(&self) -> usize {
        self.universe.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn market_indices(&self) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.kind == FeatureKind::Market)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn non_market_indices(&self) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.kind == FeatureKind::NonMarket)
            .map(|(i, _)| i)
            .collect()
    }

    /// Designates the tradable universe; every name must be a market column.
    pub fn set_universe(&mut self, names: &[String]) -> Result<()> {
        let mut indices = Vec::with_capacity(names.len());
        for name in names {
            let idx = self.column_index(name).ok_or_else(|| {
                Error::Validation(format!("universe column '{name}' not present in series"))
            })?;
            if self.columns[idx].kind != FeatureKind::Market {
                return Err(Error::Validation(format!(
                    "universe column '{name}' is not a market column"
                )));
            }
            indices.push(idx);
        }
        if indices.is_empty() {
            return Err(Error::Validation("universe must not be empty".into()));
        }
        self.universe = indices;
        Ok(())
    }

    /// Per-asset log returns of the universe at row `t`.
    pub fn universe_returns(&self, t: usize) -> Vec<f64> {
        self.universe
            .iter()
            .map(|&c| self.columns[c].values[t])
            .collect()
    }

    /// Copies the rows of `span` into a standalone series.
    pub fn slice(&self, span: Span) -> ProcessedSeries {
        ProcessedSeries {
            dates: self.dates[span.range()].to_vec(),
            columns: self
                .columns
                .iter()
                .map(|c| Column {
                    name: c.name.clone(),
                    kind: c.kind,
                    values: c.values[span.range()].to_vec(),
                })
                .collect(),
            universe: self.universe.clone(),
        }
    }

    fn same_schema(&self, other: &ProcessedSeries) -> bool {
        self.columns.len() == other.columns.len()
            && self
                .columns
                .iter()
                .zip(&other.columns)
                .all(|(a, b)| a.name == b.name && a.kind == b.kind)
            && self.universe == other.universe
    }
}

/// Contiguous train/validation/test intervals over a processed series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train: Span,
    pub validation: Span,
    pub test: Span,
}

impl DataSplit {
    /// Errors unless every range is longer than `min_len` rows (the maximum
    /// state lag of the environment that will consume the split).
    pub fn require_min_len(&self, min_len: usize) -> Result<()> {
        for (name, span) in [
            ("train", self.train),
            ("validation", self.validation),
            ("test", self.test),
        ] {
            if span.len() <= min_len {
                return Err(Error::Config(format!(
                    "{name} range has {} rows, need more than the state lag {min_len}",
                    span.len()
                )));
            }
        }
        Ok(())
    }
}

/// Synthetic data request. Each asset's predictable component is
/// `signal_scale` times the previous value of a stationary AR(1) latent
/// driver; the driver itself is published as an observable non-market column,
/// so at `noise_scale = 0` the next return is an exact function of the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_assets: usize,
    pub length: usize,
    /// AR(1) coefficient of the latent driver, |coeff| < 1.
    pub ar_coeff: f64,
    /// Standard deviation of the predictable return component.
    pub signal_scale: f64,
    /// Standard deviation of the i.i.d. Gaussian noise component.
    pub noise_scale: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.n_assets < 1 {
            return Err(Error::Validation("n_assets must be >= 1".into()));
        }
        if self.length < 10 {
            return Err(Error::Validation("length must be >= 10".into()));
        }
        if self.noise_scale < 0.0 {
            return Err(Error::Validation("noise_scale must be >= 0".into()));
        }
        if self.ar_coeff.is_nan() || self.ar_coeff.abs() >= 1.0 {
            return Err(Error::Validation(
                "ar_coeff must satisfy |coeff| < 1".into(),
            ));
        }
        if self.signal_scale < 0.0 {
            return Err(Error::Validation("signal_scale must be >= 0".into()));
        }
        Ok(())
    }
}

/// Exact per-asset decomposition of the generated returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// `signal[asset][t]`, the predictable component of each return.
    pub signal: Vec<Vec<f64>>,
    /// `noise[asset][t]`, the i.i.d. component; `signal + noise` is the return.
    pub noise: Vec<Vec<f64>>,
}

/// Loads a CSV with a leading date column. `kinds` must name every other
/// column exactly once. Empty cells are treated as missing.
pub fn load_csv(path: &Path, kinds: &BTreeMap<String, FeatureKind>) -> Result<RawSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Validation(format!("cannot open CSV {}: {e}", path.display())))?;

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Validation(format!("cannot read CSV header: {e}")))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    if headers.len() < 2 {
        return Err(Error::Validation(
            "CSV needs a date column plus at least one feature column".into(),
        ));
    }
    let feature_names = &headers[1..];

    let missing: Vec<&String> = feature_names
        .iter()
        .filter(|n| !kinds.contains_key(*n))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Validation(format!(
            "feature kind not declared for columns: {missing:?}"
        )));
    }
    let unknown: Vec<&String> = kinds
        .keys()
        .filter(|k| !feature_names.contains(k))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Validation(format!(
            "kind map names columns absent from the file: {unknown:?}"
        )));
    }

    let mut rows: Vec<(NaiveDate, Vec<f64>)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1; // 1-based data row, excluding the header
        let record = record.map_err(|e| Error::Parse {
            row,
            column: "<record>".into(),
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row,
                column: "<record>".into(),
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d").map_err(|e| Error::Parse {
            row,
            column: headers[0].clone(),
            message: format!("bad ISO-8601 date '{}': {e}", &record[0]),
        })?;
        let mut values = Vec::with_capacity(feature_names.len());
        for (j, cell) in record.iter().skip(1).enumerate() {
            if cell.is_empty() {
                values.push(f64::NAN);
            } else {
                let v: f64 = cell.parse().map_err(|e| Error::Parse {
                    row,
                    column: feature_names[j].clone(),
                    message: format!("bad number '{cell}': {e}"),
                })?;
                values.push(v);
            }
        }
        rows.push((date, values));
    }

    rows.sort_by_key(|(d, _)| *d);
    for w in rows.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(Error::Validation(format!("duplicate date {}", w[0].0)));
        }
    }

    let dates: Vec<NaiveDate> = rows.iter().map(|(d, _)| *d).collect();
    let columns = feature_names
        .iter()
        .enumerate()
        .map(|(j, name)| RawColumn {
            name: name.clone(),
            kind: kinds[name],
            values: rows.iter().map(|(_, v)| v[j]).collect(),
        })
        .collect();

    Ok(RawSeries { dates, columns })
}

/// Converts raw levels to log returns (market) or first differences
/// (non-market), dropping the first timestep.
///
/// Missing non-market values are carried over: the row itself becomes a zero
/// difference and the next present value is differenced against the most
/// recent present one. Missing market values are rejected.
pub fn process_raw(raw: &RawSeries) -> Result<ProcessedSeries> {
    let n = raw.dates.len();
    if n < 2 {
        return Err(Error::Validation(
            "need at least 2 rows to difference".into(),
        ));
    }
    let mut columns = Vec::with_capacity(raw.columns.len());
    for col in &raw.columns {
        let values = match col.kind {
            FeatureKind::Market => {
                let mut out = Vec::with_capacity(n - 1);
                for t in 0..n {
                    let x = col.values[t];
                    if x.is_nan() {
                        return Err(Error::Validation(format!(
                            "market column '{}' has a missing value at row {}",
                            col.name,
                            t + 1
                        )));
                    }
                    if x <= 0.0 {
                        return Err(Error::Domain(format!(
                            "market column '{}' has non-positive price {} at row {}",
                            col.name,
                            x,
                            t + 1
                        )));
                    }
                    if t > 0 {
                        out.push((x / col.values[t - 1]).ln());
                    }
                }
                out
            }
            FeatureKind::NonMarket => {
                if col.values.iter().all(|v| v.is_nan()) {
                    return Err(Error::Validation(format!(
                        "column '{}' has no valid values",
                        col.name
                    )));
                }
                let mut out = Vec::with_capacity(n - 1);
                let mut last_valid = if col.values[0].is_nan() {
                    None
                } else {
                    Some(col.values[0])
                };
                for t in 1..n {
                    let x = col.values[t];
                    if x.is_nan() {
                        out.push(0.0);
                    } else {
                        out.push(match last_valid {
                            Some(prev) => x - prev,
                            None => 0.0,
                        });
                        last_valid = Some(x);
                    }
                }
                out
            }
        };
        columns.push(Column {
            name: col.name.clone(),
            kind: col.kind,
            values,
        });
    }
    Ok(ProcessedSeries {
        dates: raw.dates[1..].to_vec(),
        columns,
        universe: Vec::new(),
    })
}

/// Contiguous temporal split. Validation and test sizes are floored; the
/// remainder goes to the train range.
pub fn split(series: &ProcessedSeries, ratios: [f64; 3]) -> Result<DataSplit> {
    split_indices(series.len(), ratios)
}

pub fn split_indices(len: usize, ratios: [f64; 3]) -> Result<DataSplit> {
    if ratios.iter().any(|&r| r <= 0.0) {
        return Err(Error::Config(format!(
            "split ratios must be positive, got {ratios:?}"
        )));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must sum to 1, got {sum}"
        )));
    }
    if len < 3 {
        return Err(Error::Config(format!(
            "series of length {len} cannot be split three ways"
        )));
    }
    let n_val = (len as f64 * ratios[1]).floor() as usize;
    let n_test = (len as f64 * ratios[2]).floor() as usize;
    let n_train = len - n_val - n_test;
    Ok(DataSplit {
        train: Span::new(0, n_train),
        validation: Span::new(n_train, n_train + n_val),
        test: Span::new(n_train + n_val, len),
    })
}

/// Generates a synthetic processed series together with its exact
/// signal/noise decomposition. Deterministic under the spec seed.
///
/// Columns: one market column `asset_<i>` per asset (the universe) and one
/// non-market column `driver_<i>` per asset exposing the latent driver. The
/// driver column at row `t` holds the value that generates the asset return
/// at row `t + 1`, so predicting from lagged observations is possible by
/// construction.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(ProcessedSeries, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.length;
    let innov_scale = (1.0 - spec.ar_coeff * spec.ar_coeff).sqrt();

    let mut signal = vec![vec![0.0; n]; spec.n_assets];
    let mut noise = vec![vec![0.0; n]; spec.n_assets];
    let mut asset_cols = Vec::with_capacity(spec.n_assets);
    let mut driver_cols = Vec::with_capacity(spec.n_assets);

    for a in 0..spec.n_assets {
        // Latent AR(1) driver with unit stationary variance; one extra value
        // so that every return has a lag-observable predictor.
        let mut latent = Vec::with_capacity(n + 1);
        let mut z: f64 = rng.sample(StandardNormal);
        latent.push(z);
        for _ in 0..n {
            let eps: f64 = rng.sample(StandardNormal);
            z = spec.ar_coeff * z + innov_scale * eps;
            latent.push(z);
        }

        let mut returns = Vec::with_capacity(n);
        for t in 0..n {
            let s = spec.signal_scale * latent[t];
            let e: f64 = rng.sample(StandardNormal);
            let nz = spec.noise_scale * e;
            signal[a][t] = s;
            noise[a][t] = nz;
            returns.push(s + nz);
        }
        asset_cols.push(Column {
            name: format!("asset_{a}"),
            kind: FeatureKind::Market,
            values: returns,
        });
        driver_cols.push(Column {
            name: format!("driver_{a}"),
            kind: FeatureKind::NonMarket,
            values: latent[1..].to_vec(),
        });
    }

    let start = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
    let dates = (0..n)
        .map(|t| start + chrono::Duration::days(t as i64))
        .collect();

    let universe = (0..spec.n_assets).collect();
    let mut columns = asset_cols;
    columns.extend(driver_cols);
    Ok((
        ProcessedSeries {
            dates,
            columns,
            universe,
        },
        GroundTruth { signal, noise },
    ))
}

/// Concatenates two schema-identical series, `a` strictly before `b`.
pub fn concat(a: &ProcessedSeries, b: &ProcessedSeries) -> Result<ProcessedSeries> {
    if !a.same_schema(b) {
        return Err(Error::Validation(
            "cannot concat series with different columns, kinds or universe".into(),
        ));
    }
    if b.is_empty() {
        return Ok(a.clone());
    }
    if a.is_empty() {
        return Ok(b.clone());
    }
    if a.dates.last().unwrap() >= b.dates.first().unwrap() {
        return Err(Error::Validation(format!(
            "series do not follow in time: {} does not precede {}",
            a.dates.last().unwrap(),
            b.dates.first().unwrap()
        )));
    }
    let mut out = a.clone();
    out.dates.extend_from_slice(&b.dates);
    for (oc, bc) in out.columns.iter_mut().zip(&b.columns) {
        oc.values.extend_from_slice(&bc.values);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::io::Write;

    fn raw(dates: &[&str], cols: Vec<RawColumn>) -> RawSeries {
        RawSeries {
            dates: dates
                .iter()
                .map(|d| NaiveDate::parse_from_str(d, "%Y-%m-%d").unwrap())
                .collect(),
            columns: cols,
        }
    }

    fn market(name: &str, values: Vec<f64>) -> RawColumn {
        RawColumn {
            name: name.into(),
            kind: FeatureKind::Market,
            values,
        }
    }

    fn non_market(name: &str, values: Vec<f64>) -> RawColumn {
        RawColumn {
            name: name.into(),
            kind: FeatureKind::NonMarket,
            values,
        }
    }

    #[test]
    fn flat_market_column_gives_zero_return() {
        let r = raw(
            &["2020-01-01", "2020-01-02"],
            vec![market("p", vec![100.0, 100.0])],
        );
        let p = process_raw(&r).unwrap();
        assert_eq!(p.columns[0].values, vec![0.0]);
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn market_column_log_return() {
        let r = raw(
            &["2020-01-01", "2020-01-02"],
            vec![market("p", vec![100.0, 110.0])],
        );
        let p = process_raw(&r).unwrap();
        assert_relative_eq!(p.columns[0].values[0], 1.1f64.ln(), max_relative = 1e-15);
        assert_relative_eq!(
            p.columns[0].values[0],
            0.09531017980432486,
            max_relative = 1e-12
        );
    }

    #[test]
    fn non_market_missing_differences_against_last_valid() {
        let r = raw(
            &["2020-01-01", "2020-01-02", "2020-01-03"],
            vec![non_market("x", vec![2.0, f64::NAN, 2.5])],
        );
        let p = process_raw(&r).unwrap();
        assert_eq!(p.columns[0].values, vec![0.0, 0.5]);
    }

    #[test]
    fn missing_market_value_rejected() {
        let r = raw(
            &["2020-01-01", "2020-01-02"],
            vec![market("p", vec![f64::NAN, 100.0])],
        );
        assert!(matches!(process_raw(&r), Err(Error::Validation(_))));
    }

    #[test]
    fn non_positive_market_price_rejected() {
        let r = raw(
            &["2020-01-01", "2020-01-02"],
            vec![market("p", vec![100.0, 0.0])],
        );
        assert!(matches!(process_raw(&r), Err(Error::Domain(_))));
    }

    #[test]
    fn all_missing_column_rejected() {
        let r = raw(
            &["2020-01-01", "2020-01-02"],
            vec![non_market("x", vec![f64::NAN, f64::NAN])],
        );
        assert!(matches!(process_raw(&r), Err(Error::Validation(_))));
    }

    #[test]
    fn prices_reconstruct_from_log_returns() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let prices: Vec<f64> = std::iter::successors(Some(50.0f64), |p| {
            Some(p * (1.0 + 0.02 * rng.gen::<f64>() - 0.01))
        })
        .take(200)
        .collect();
        let dates: Vec<NaiveDate> = (0..200)
            .map(|t| NaiveDate::from_ymd_opt(2000, 1, 1).unwrap() + chrono::Duration::days(t))
            .collect();
        let r = RawSeries {
            dates,
            columns: vec![market("p", prices.clone())],
        };
        let p = process_raw(&r).unwrap();
        let mut level = prices[0];
        for (t, lr) in p.columns[0].values.iter().enumerate() {
            level *= lr.exp();
            assert_relative_eq!(level, prices[t + 1], max_relative = 1e-12);
        }
    }

    #[test]
    fn split_is_exact_for_reference_lengths() {
        let s = split_indices(100, [0.6, 0.2, 0.2]).unwrap();
        assert_eq!(s.train, Span::new(0, 60));
        assert_eq!(s.validation, Span::new(60, 80));
        assert_eq!(s.test, Span::new(80, 100));

        let s = split_indices(101, [0.6, 0.2, 0.2]).unwrap();
        assert_eq!(s.train.len(), 61);
        assert_eq!(s.validation.len(), 20);
        assert_eq!(s.test.len(), 20);
    }

    #[test]
    fn split_partitions_every_length() {
        for len in 3..10_000 {
            let s = split_indices(len, [0.6, 0.2, 0.2]).unwrap();
            assert_eq!(s.train.start, 0);
            assert_eq!(s.train.end, s.validation.start);
            assert_eq!(s.validation.end, s.test.start);
            assert_eq!(s.test.end, len);
        }
    }

    #[test]
    fn split_rejects_bad_ratios() {
        assert!(split_indices(100, [0.5, 0.5, 0.5]).is_err());
        assert!(split_indices(100, [0.6, 0.4, 0.0]).is_err());
    }

    #[test]
    fn synthetic_is_deterministic_and_decomposes() {
        let spec = SyntheticSpec {
            n_assets: 3,
            length: 50,
            ar_coeff: 0.9,
            signal_scale: 0.01,
            noise_scale: 0.02,
            seed: 7,
        };
        let (s1, g1) = generate_synthetic(&spec).unwrap();
        let (s2, g2) = generate_synthetic(&spec).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(g1, g2);
        for a in 0..3 {
            for t in 0..50 {
                assert_eq!(s1.columns[a].values[t], g1.signal[a][t] + g1.noise[a][t]);
            }
        }
    }

    #[test]
    fn synthetic_noiseless_has_zero_noise() {
        let spec = SyntheticSpec {
            n_assets: 2,
            length: 30,
            ar_coeff: 0.5,
            signal_scale: 0.01,
            noise_scale: 0.0,
            seed: 3,
        };
        let (s, g) = generate_synthetic(&spec).unwrap();
        assert!(g.noise.iter().flatten().all(|&v| v == 0.0));
        for a in 0..2 {
            assert_eq!(s.columns[a].values, g.signal[a]);
        }
    }

    #[test]
    fn synthetic_noise_to_signal_ratio_matches_spec() {
        let spec = SyntheticSpec {
            n_assets: 1,
            length: 10_000,
            ar_coeff: 0.9,
            signal_scale: 0.01,
            noise_scale: 0.05,
            seed: 21,
        };
        let (_, g) = generate_synthetic(&spec).unwrap();
        let std = |xs: &[f64]| {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
        };
        let ratio = std(&g.noise[0]) / std(&g.signal[0]);
        assert!(
            (ratio - 5.0).abs() < 0.5,
            "noise-to-signal ratio {ratio} not within 10% of 5"
        );
    }

    #[test]
    fn synthetic_noise_mean_is_centered() {
        let spec = SyntheticSpec {
            n_assets: 1,
            length: 20_000,
            ar_coeff: 0.9,
            signal_scale: 0.01,
            noise_scale: 0.03,
            seed: 9,
        };
        let (_, g) = generate_synthetic(&spec).unwrap();
        let n = g.noise[0].len() as f64;
        let mean = g.noise[0].iter().sum::<f64>() / n;
        let bound = 3.0 * spec.noise_scale / n.sqrt();
        assert!(
            mean.abs() < bound,
            "noise mean {mean} outside 3 sigma bound {bound}"
        );
    }

    #[test]
    fn synthetic_driver_column_predicts_next_signal() {
        let spec = SyntheticSpec {
            n_assets: 2,
            length: 40,
            ar_coeff: 0.8,
            signal_scale: 0.02,
            noise_scale: 0.0,
            seed: 5,
        };
        let (s, _) = generate_synthetic(&spec).unwrap();
        for a in 0..2 {
            let driver = &s.columns[2 + a].values;
            let ret = &s.columns[a].values;
            for t in 1..40 {
                assert_relative_eq!(
                    ret[t],
                    spec.signal_scale * driver[t - 1],
                    max_relative = 1e-12
                );
            }
        }
    }

    #[test]
    fn concat_appends_and_validates() {
        let spec = SyntheticSpec {
            n_assets: 2,
            length: 80,
            ar_coeff: 0.5,
            signal_scale: 0.01,
            noise_scale: 0.01,
            seed: 2,
        };
        let (s, _) = generate_synthetic(&spec).unwrap();
        let a = s.slice(Span::new(0, 60));
        let b = s.slice(Span::new(60, 80));
        let joined = concat(&a, &b).unwrap();
        assert_eq!(joined.len(), 80);
        assert_eq!(joined, s);

        // identity on empty tail
        let empty = s.slice(Span::new(80, 80));
        assert_eq!(concat(&s, &empty).unwrap(), s);

        // schema mismatch
        let mut c = b.clone();
        c.columns[0].name = "other".into();
        assert!(concat(&a, &c).is_err());

        // wrong temporal order
        assert!(concat(&b, &a).is_err());
    }

    #[test]
    fn load_csv_parses_sorts_and_flags_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("series.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        // unsorted rows on purpose; one missing cell in the non-market column
        writeln!(f, "date,px,rate").unwrap();
        writeln!(f, "2020-01-03,102.0,1.5").unwrap();
        writeln!(f, "2020-01-01,100.0,1.2").unwrap();
        writeln!(f, "2020-01-02,101.0,").unwrap();
        drop(f);

        let mut kinds = BTreeMap::new();
        kinds.insert("px".to_string(), FeatureKind::Market);
        kinds.insert("rate".to_string(), FeatureKind::NonMarket);
        let raw = load_csv(&path, &kinds).unwrap();
        assert_eq!(raw.dates.len(), 3);
        assert!(raw.dates.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(raw.columns[0].values, vec![100.0, 101.0, 102.0]);
        assert!(raw.columns[1].values[1].is_nan());

        // non-numeric cell names row and column
        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "date,px,rate\n2020-01-01,abc,1.2\n").unwrap();
        match load_csv(&bad, &kinds) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 1);
                assert_eq!(column, "px");
            }
            other => panic!("expected parse error, got {other:?}"),
        }

        // duplicate dates rejected
        let dup = dir.path().join("dup.csv");
        std::fs::write(
            &dup,
            "date,px,rate\n2020-01-01,1.0,1.0\n2020-01-01,2.0,2.0\n",
        )
        .unwrap();
        assert!(matches!(load_csv(&dup, &kinds), Err(Error::Validation(_))));
    }

    #[test]
    fn universe_must_be_market_subset() {
        let spec = SyntheticSpec {
            n_assets: 1,
            length: 20,
            ar_coeff: 0.5,
            signal_scale: 0.01,
            noise_scale: 0.0,
            seed: 1,
        };
        let (mut s, _) = generate_synthetic(&spec).unwrap();
        assert!(s.set_universe(&["driver_0".into()]).is_err());
        assert!(s.set_universe(&["nope".into()]).is_err());
        s.set_universe(&["asset_0".into()]).unwrap();
        assert_eq!(s.universe, vec![0]);
    }
}

//! Dataset ingestion, chronological splits, per-channel scaling and
//! channel-independent windowing.

use std::collections::HashMap;
use std::fs::File;
use std::io::Read;
use std::ops::Range;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frequency::Frequency;
use crate::scalar::Scalar;

/// How missing or non-finite cells are repaired during ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    /// Carry the previous valid value forward; leading gaps take the first valid value.
    #[default]
    ForwardFill,
    /// Drop every row that has a missing cell in a selected column.
    DropRow,
}

/// Which column holds timestamps (ignored for modelling).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum TimestampColumn {
    /// First column, if its header looks like a timestamp or its first cell is not numeric.
    #[default]
    Auto,
    Named(String),
    None,
}

#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub delimiter: u8,
    pub timestamp: TimestampColumn,
    /// Columns to load; `None` loads every non-timestamp column.
    pub columns: Option<Vec<String>>,
    pub missing: MissingPolicy,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            delimiter: b',',
            timestamp: TimestampColumn::Auto,
            columns: None,
            missing: MissingPolicy::ForwardFill,
        }
    }
}

/// Counts of cells repaired during ingestion.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingReport {
    pub policy: MissingPolicy,
    pub filled_cells: usize,
    pub dropped_rows: usize,
}

/// A named collection of univariate channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub name: String,
    pub channel_names: Vec<String>,
    pub channels: Vec<Vec<T>>,
    pub sampling_rate: Option<String>,
    pub dominant_frequency: Option<Frequency>,
    pub missing: MissingReport,
}

impl<T: Scalar> Dataset<T> {
    /// Builds a dataset from raw channels, validating the ingestion invariants.
    pub fn new(name: impl Into<String>, channels: Vec<Vec<T>>) -> Result<Self> {
        let name = name.into();
        if channels.is_empty() || channels.iter().any(|c| c.is_empty()) {
            return Err(Error::EmptyDataset(name));
        }
        if channels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("dataset `{name}` contains non-finite values")));
        }
        let channel_names = (0..channels.len()).map(|i| format!("ch{i}")).collect();
        Ok(Self {
            name,
            channel_names,
            channels,
            sampling_rate: None,
            dominant_frequency: None,
            missing: MissingReport::default(),
        })
    }

    pub fn with_frequency(mut self, f: Frequency) -> Self {
        self.dominant_frequency = Some(f);
        self
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Length of the longest channel.
    pub fn max_len(&self) -> usize {
        self.channels.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Keeps only the first `n` steps of every channel.
    pub fn truncated(&self, n: usize) -> Self {
        self.map_channels(|c| c[..c.len().min(n)].to_vec())
    }

    fn map_channels(&self, f: impl Fn(&[T]) -> Vec<T>) -> Self {
        Self {
            channels: self.channels.iter().map(|c| f(c)).collect(),
            ..self.clone()
        }
    }

    /// Attaches sidecar metadata whose name matches this dataset.
    pub fn apply_metadata(&mut self, meta: &[DatasetMeta]) -> bool {
        match meta.iter().find(|m| m.name == self.name) {
            Some(m) => {
                self.sampling_rate = m.sampling_rate.clone();
                self.dominant_frequency = m.dominant_frequency;
                true
            }
            None => false,
        }
    }
}

fn is_missing_token(s: &str) -> bool {
    matches!(
        s.to_ascii_lowercase().as_str(),
        "" | "na" | "nan" | "null" | "none" | "?" | "inf" | "-inf"
    )
}

fn looks_like_timestamp(header: &str) -> bool {
    matches!(
        header.trim().to_ascii_lowercase().as_str(),
        "date" | "time" | "timestamp" | "datetime" | "ds" | "index"
    )
}

/// Loads a CSV file with a header row; one channel per selected column.
pub fn load_csv<T: Scalar>(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    parse_csv(&name, text.as_bytes(), schema)
}

/// Parses CSV content already in memory. See [`load_csv`].
pub fn parse_csv<T: Scalar>(name: &str, input: impl Read, schema: &CsvSchema) -> Result<Dataset<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if headers.is_empty() {
        return Err(Error::EmptyDataset(name.into()));
    }

    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        records.push((line, rec));
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset(name.into()));
    }

    let ts_index = match &schema.timestamp {
        TimestampColumn::None => None,
        TimestampColumn::Named(n) => Some(
            headers
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| Error::config(format!("timestamp column `{n}` not found")))?,
        ),
        TimestampColumn::Auto => {
            let first = records[0].1.get(0).unwrap_or("");
            let numeric = first.parse::<f64>().is_ok() || is_missing_token(first);
            (looks_like_timestamp(&headers[0]) || !numeric).then_some(0)
        }
    };

    let selected: Vec<usize> = match &schema.columns {
        Some(cols) => cols
            .iter()
            .map(|c| {
                headers
                    .iter()
                    .position(|h| h == c)
                    .ok_or_else(|| Error::config(format!("column `{c}` not found in `{name}`")))
            })
            .collect::<Result<_>>()?,
        None => (0..headers.len()).filter(|&i| Some(i) != ts_index).collect(),
    };
    if selected.is_empty() {
        return Err(Error::EmptyDataset(name.into()));
    }

    let mut cells: Vec<Vec<Option<f64>>> = vec![Vec::with_capacity(records.len()); selected.len()];
    for (line, rec) in &records {
        for (slot, &col) in selected.iter().enumerate() {
            let raw = rec.get(col).unwrap_or("");
            let value = if is_missing_token(raw) {
                None
            } else {
                let v: f64 = raw.parse().map_err(|_| Error::Parse {
                    line: *line,
                    column: headers[col].clone(),
                    message: format!("`{raw}` is not a number"),
                })?;
                v.is_finite().then_some(v)
            };
            cells[slot].push(value);
        }
    }

    let mut report = MissingReport {
        policy: schema.missing,
        ..Default::default()
    };
    let channels: Vec<Vec<f64>> = match schema.missing {
        MissingPolicy::DropRow => {
            let rows = records.len();
            let keep: Vec<bool> = (0..rows).map(|r| cells.iter().all(|c| c[r].is_some())).collect();
            report.dropped_rows = keep.iter().filter(|k| !**k).count();
            cells
                .iter()
                .map(|c| c.iter().zip(&keep).filter(|(_, k)| **k).map(|(v, _)| v.unwrap()).collect())
                .collect()
        }
        MissingPolicy::ForwardFill => {
            let mut out = Vec::with_capacity(cells.len());
            for (slot, col) in cells.iter().enumerate() {
                let first = col.iter().flatten().next().copied().ok_or_else(|| {
                    Error::Data(format!("column `{}` of `{name}` has no valid values", headers[selected[slot]]))
                })?;
                let mut last = first;
                let mut filled = Vec::with_capacity(col.len());
                for v in col {
                    match v {
                        Some(x) => last = *x,
                        None => report.filled_cells += 1,
                    }
                    filled.push(last);
                }
                out.push(filled);
            }
            out
        }
    };
    if report.filled_cells > 0 || report.dropped_rows > 0 {
        log::warn!(
            "{name}: missing values repaired ({:?}): {} cells filled, {} rows dropped",
            report.policy,
            report.filled_cells,
            report.dropped_rows
        );
    }

    let channels = channels.into_iter().map(|c| c.into_iter().map(T::of).collect()).collect();
    let mut ds = Dataset::new(name, channels)?;
    ds.channel_names = selected.iter().map(|&i| headers[i].clone()).collect();
    ds.missing = report;
    Ok(ds)
}

/// One record of the metadata sidecar file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    #[serde(default, deserialize_with = "empty_as_none")]
    pub sampling_rate: Option<String>,
    #[serde(default)]
    pub dominant_frequency: Option<Frequency>,
}

fn empty_as_none<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<String>, D::Error> {
    let s: Option<String> = Option::deserialize(d)?;
    Ok(s.filter(|s| !s.trim().is_empty()))
}

/// Reads the metadata sidecar: a CSV with columns
/// `name,sampling_rate,dominant_frequency` (frequency written as `1/N`).
pub fn load_metadata(path: impl AsRef<Path>) -> Result<Vec<DatasetMeta>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut out = Vec::new();
    for rec in reader.deserialize() {
        let meta: DatasetMeta = rec.map_err(|e| Error::Data(format!("metadata: {e}")))?;
        if let Some(f) = meta.dominant_frequency {
            if f.value() <= 0.0 || f.value() > 0.5 {
                return Err(Error::Data(format!("metadata frequency {f} outside (0, 1/2]")));
            }
        }
        out.push(meta);
    }
    Ok(out)
}

/// Chronological train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        if [train, val, test].iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::config(format!("split fractions must be nonnegative: {train},{val},{test}")));
        }
        if (train + val + test - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "split fractions must sum to 1, got {}",
                train + val + test
            )));
        }
        Ok(Self { train, val, test })
    }

    /// 0.6 / 0.2 / 0.2, used for the ETT family.
    pub fn ett() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }

    /// 0.7 / 0.1 / 0.2, used for the remaining benchmark datasets.
    pub fn standard() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }

    /// `(train_end, val_end)` for a channel of length `len`.
    pub fn bounds(&self, len: usize) -> (usize, usize) {
        let n_train = (self.train * len as f64 + 1e-9).floor() as usize;
        let n_val = (self.val * len as f64 + 1e-9).floor() as usize;
        let train_end = n_train.min(len);
        (train_end, (train_end + n_val).min(len))
    }
}

impl std::str::FromStr for SplitSpec {
    type Err = Error;

    /// Parses `0.6,0.2,0.2`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::config(format!("cannot parse split `{s}`")))?;
        match parts.as_slice() {
            [a, b, c] => SplitSpec::new(*a, *b, *c),
            _ => Err(Error::config(format!("split `{s}` needs three fractions"))),
        }
    }
}

/// Splits every channel along the time axis into train, validation and test parts.
pub fn chronological_split<T: Scalar>(d: &Dataset<T>, s: &SplitSpec) -> Result<(Dataset<T>, Dataset<T>, Dataset<T>)> {
    if let Some(c) = d.channels.iter().position(|c| c.len() < 3) {
        return Err(Error::Data(format!("channel {c} of `{}` is too short to split", d.name)));
    }
    let part = |pick: fn(usize, usize, usize) -> Range<usize>| {
        d.map_channels(|c| {
            let (a, b) = s.bounds(c.len());
            c[pick(a, b, c.len())].to_vec()
        })
    };
    Ok((part(|a, _, _| 0..a), part(|a, b, _| a..b), part(|_, b, n| b..n)))
}

/// Per-channel standardization parameters fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Scaler {
    /// Fits mean and population standard deviation per channel. A channel with
    /// zero variance gets divisor 1 and a warning.
    pub fn fit<T: Scalar>(train: &Dataset<T>) -> Self {
        let mut means = Vec::with_capacity(train.num_channels());
        let mut stds = Vec::with_capacity(train.num_channels());
        for (i, c) in train.channels.iter().enumerate() {
            let n = c.len().max(1) as f64;
            let mean = c.iter().map(|v| v.as_f64()).sum::<f64>() / n;
            let var = c.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n;
            let mut std = var.sqrt();
            if std == 0.0 || !std.is_finite() {
                log::warn!("{}: channel {i} has zero variance in the training split; using divisor 1", train.name);
                std = 1.0;
            }
            means.push(mean);
            stds.push(std);
        }
        Self { means, stds }
    }

    pub fn transform<T: Scalar>(&self, d: &Dataset<T>) -> Result<Dataset<T>> {
        self.check(d)?;
        let mut out = d.clone();
        for (i, c) in out.channels.iter_mut().enumerate() {
            let (m, s) = (self.means[i], self.stds[i]);
            c.iter_mut().for_each(|v| *v = T::of((v.as_f64() - m) / s));
        }
        Ok(out)
    }

    pub fn inverse<T: Scalar>(&self, d: &Dataset<T>) -> Result<Dataset<T>> {
        self.check(d)?;
        let mut out = d.clone();
        for (i, c) in out.channels.iter_mut().enumerate() {
            c.iter_mut().for_each(|v| *v = self.inverse_value(i, *v));
        }
        Ok(out)
    }

    pub fn inverse_value<T: Scalar>(&self, channel: usize, v: T) -> T {
        T::of(v.as_f64() * self.stds[channel] + self.means[channel])
    }

    fn check<T>(&self, d: &Dataset<T>) -> Result<()> {
        if d.channels.len() != self.means.len() {
            return Err(Error::dim("scaler", self.means.len(), d.channels.len()));
        }
        Ok(())
    }
}

/// Fits a [`Scaler`] on `train` and applies it to `train` and every dataset in `others`.
pub fn standardize<T: Scalar>(train: &Dataset<T>, others: &[&Dataset<T>]) -> Result<(Scaler, Dataset<T>, Vec<Dataset<T>>)> {
    let scaler = Scaler::fit(train);
    let t = scaler.transform(train)?;
    let o = others.iter().map(|d| scaler.transform(d)).collect::<Result<_>>()?;
    Ok((scaler, t, o))
}

/// A matrix of fixed-length windows, each row `lookback + horizon` wide.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet<T> {
    pub data: Array2<T>,
    pub lookback: usize,
    pub horizon: usize,
    /// Source channel of each row.
    pub channel: Vec<usize>,
    /// Offset of each row's first element within its channel.
    pub start: Vec<usize>,
}

impl<T: Scalar> WindowSet<T> {
    pub fn empty(lookback: usize, horizon: usize) -> Self {
        Self {
            data: Array2::zeros((0, lookback + horizon)),
            lookback,
            horizon,
            channel: Vec::new(),
            start: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inputs(&self) -> ArrayView2<'_, T> {
        self.data.slice(s![.., ..self.lookback])
    }

    pub fn targets(&self) -> ArrayView2<'_, T> {
        self.data.slice(s![.., self.lookback..])
    }

    /// Rows at the given indices, in that order.
    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            data: self.data.select(Axis(0), rows),
            lookback: self.lookback,
            horizon: self.horizon,
            channel: rows.iter().map(|&r| self.channel[r]).collect(),
            start: rows.iter().map(|&r| self.start[r]).collect(),
        }
    }

    /// Stacks window sets of identical geometry.
    pub fn concat(sets: &[WindowSet<T>]) -> Result<Self> {
        let Some(first) = sets.first() else {
            return Err(Error::Data("no window sets to concatenate".into()));
        };
        if sets.iter().any(|w| w.lookback != first.lookback || w.horizon != first.horizon) {
            return Err(Error::dim("WindowSet::concat", "equal geometry", "mixed geometry"));
        }
        let views: Vec<_> = sets.iter().map(|w| w.data.view()).collect();
        let data = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Data(e.to_string()))?;
        Ok(Self {
            data,
            lookback: first.lookback,
            horizon: first.horizon,
            channel: sets.iter().flat_map(|w| w.channel.iter().copied()).collect(),
            start: sets.iter().flat_map(|w| w.start.iter().copied()).collect(),
        })
    }

    /// Uniform subsample without replacement down to `cap` rows (order kept).
    pub fn capped(self, cap: usize, seed: u64) -> Self {
        if self.len() <= cap {
            return self;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, self.len(), cap).into_vec();
        idx.sort_unstable();
        self.select(&idx)
    }
}

/// Sliding windows over every channel with an optional cap on the total count.
///
/// Channels shorter than `lookback + horizon` contribute no windows. Rows are
/// ordered by channel, then by start offset.
pub fn make_windows<T: Scalar>(
    d: &Dataset<T>,
    lookback: usize,
    horizon: usize,
    stride: usize,
    cap: Option<usize>,
    seed: u64,
) -> Result<WindowSet<T>> {
    let ws = make_windows_in(d, lookback, horizon, stride, 0..usize::MAX)?;
    Ok(match cap {
        Some(c) => ws.capped(c, seed),
        None => ws,
    })
}

/// Windows whose forecast part lies entirely in `forecast_range` (clipped to each
/// channel). The lookback may reach back before the range, which is how
/// validation and test windows borrow context from the preceding split.
pub fn make_windows_in<T: Scalar>(
    d: &Dataset<T>,
    lookback: usize,
    horizon: usize,
    stride: usize,
    forecast_range: Range<usize>,
) -> Result<WindowSet<T>> {
    if lookback == 0 || stride == 0 {
        return Err(Error::config("lookback and stride must be at least 1"));
    }
    let width = lookback + horizon;
    let mut origin = Vec::new();
    for (ci, c) in d.channels.iter().enumerate() {
        let lo = forecast_range.start.max(lookback);
        let hi = forecast_range.end.min(c.len());
        if hi < lo + horizon {
            continue;
        }
        origin.extend((lo..=hi - horizon).step_by(stride).map(|t| (ci, t - lookback)));
    }
    let mut data = Array2::zeros((origin.len(), width));
    for (row, &(ci, start)) in data.outer_iter_mut().zip(&origin) {
        let src = &d.channels[ci][start..start + width];
        row.into_slice().expect("standard layout").copy_from_slice(src);
    }
    Ok(WindowSet {
        data,
        lookback,
        horizon,
        channel: origin.iter().map(|o| o.0).collect(),
        start: origin.iter().map(|o| o.1).collect(),
    })
}

/// Train/validation/test window sets following the usual long-horizon
/// benchmark convention: validation and test windows take their lookback from
/// the data preceding their split.
pub fn split_windows<T: Scalar>(
    d: &Dataset<T>,
    split: &SplitSpec,
    lookback: usize,
    horizon: usize,
    stride: usize,
) -> Result<[WindowSet<T>; 3]> {
    let mut sets: [Vec<WindowSet<T>>; 3] = Default::default();
    for (ci, c) in d.channels.iter().enumerate() {
        let (a, b) = split.bounds(c.len());
        let single = Dataset {
            channels: vec![c.clone()],
            channel_names: vec![d.channel_names.get(ci).cloned().unwrap_or_default()],
            ..d.clone()
        };
        for (k, range) in [0..a, a..b, b..c.len()].into_iter().enumerate() {
            let mut w = make_windows_in(&single, lookback, horizon, stride, range)?;
            w.channel.iter_mut().for_each(|x| *x = ci);
            sets[k].push(w);
        }
    }
    let build = |v: &Vec<WindowSet<T>>| {
        if v.is_empty() {
            Ok(WindowSet::empty(lookback, horizon))
        } else {
            WindowSet::concat(v)
        }
    };
    Ok([build(&sets[0])?, build(&sets[1])?, build(&sets[2])?])
}

/// Groups metadata by name for quick lookup.
pub fn metadata_index(meta: &[DatasetMeta]) -> HashMap<&str, &DatasetMeta> {
    meta.iter().map(|m| (m.name.as_str(), m)).collect()
}

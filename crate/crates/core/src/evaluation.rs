//! Metrics, autoregressive rollout, variable-length forecasting, expert usage
//! diagnostics, the sine-mixture experiment and error-bound reports.

use std::fmt;
use std::io::Write;
use std::path::Path;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experts::ExpertBank;
use crate::frequency::Frequency;
use crate::gating::GateDecision;
use crate::model::SuperLinear;
use crate::resampling::{
    adapt_short_lookback, long_lookback_search, rescale_forecast, LongSearchConfig, LookbackAdaptation, ShortMode,
};
use crate::scalar::Scalar;
use crate::series_data::{split_windows, standardize, chronological_split, Dataset, SplitSpec, WindowSet};
use crate::spectral::SpectralTransform;
use crate::training::{gate_init, train_expert_on, train_router_stage2, ChannelMode, LrDecay, RouterData, Stage, TrainConfig};

fn check_shapes<T: Scalar>(pred: ArrayView2<'_, T>, target: ArrayView2<'_, T>) -> Result<()> {
    if pred.dim() != target.dim() {
        return Err(Error::dim("metric", format!("{:?}", target.dim()), format!("{:?}", pred.dim())));
    }
    if pred.is_empty() {
        return Err(Error::EmptyDataset("metric over zero entries".into()));
    }
    Ok(())
}

pub fn mse<T: Scalar>(pred: ArrayView2<'_, T>, target: ArrayView2<'_, T>) -> Result<f64> {
    check_shapes(pred, target)?;
    let sum: f64 = pred.iter().zip(target).map(|(p, t)| (p.as_f64() - t.as_f64()).powi(2)).sum();
    Ok(sum / pred.len() as f64)
}

pub fn mae<T: Scalar>(pred: ArrayView2<'_, T>, target: ArrayView2<'_, T>) -> Result<f64> {
    check_shapes(pred, target)?;
    let sum: f64 = pred.iter().zip(target).map(|(p, t)| (p.as_f64() - t.as_f64()).abs()).sum();
    Ok(sum / pred.len() as f64)
}

/// In-sample mean absolute error of the seasonal-naive forecast at lag `season`.
pub fn seasonal_naive_scale<T: Scalar>(insample: &[T], season: usize) -> Result<f64> {
    if season == 0 || insample.len() <= season {
        return Err(Error::Domain(format!(
            "seasonal scale needs more than {season} in-sample points, got {}",
            insample.len()
        )));
    }
    let n = insample.len() - season;
    Ok((0..n).map(|t| (insample[t + season].as_f64() - insample[t].as_f64()).abs()).sum::<f64>() / n as f64)
}

/// MAE scaled by the in-sample seasonal-naive error. `None` marks an undefined
/// value (zero denominator).
pub fn mase<T: Scalar>(pred: ArrayView2<'_, T>, target: ArrayView2<'_, T>, insample: &[T], season: usize) -> Result<Option<f64>> {
    let scale = seasonal_naive_scale(insample, season)?;
    let err = mae(pred, target)?;
    if scale == 0.0 {
        log::warn!("MASE undefined: seasonal-naive error at lag {season} is zero");
        return Ok(None);
    }
    Ok(Some(err / scale))
}

pub fn geometric_mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Domain("geometric mean of no values".into()));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Domain(format!("geometric mean needs positive values, got {v}")));
    }
    Ok((values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp())
}

/// Geometric mean over the defined entries; undefined ones are skipped with a warning.
pub fn geometric_mean_defined(values: &[Option<f64>]) -> Result<f64> {
    let skipped = values.iter().filter(|v| v.is_none()).count();
    if skipped > 0 {
        log::warn!("excluding {skipped} undefined values from the geometric mean");
    }
    geometric_mean(&values.iter().flatten().copied().collect::<Vec<_>>())
}

/// Repeated `H`-step forecasts, each appended to the lookback before the next,
/// truncated to `total_horizon` columns.
pub fn autoregressive_forecast<T: Scalar>(model: &SuperLinear<T>, x: ArrayView2<'_, T>, total_horizon: usize) -> Result<Array2<T>> {
    if total_horizon == 0 {
        return Err(Error::config("forecast horizon must be at least 1"));
    }
    let (l, h) = (model.lookback(), model.horizon());
    let passes = total_horizon.div_ceil(h);
    let mut window = x.to_owned();
    let mut outputs = Vec::with_capacity(passes);
    for p in 0..passes {
        let y = model.predict(window.view())?;
        if p + 1 < passes {
            let joined = concatenate(Axis(1), &[window.view(), y.view()]).map_err(|e| Error::Data(e.to_string()))?;
            window = joined.slice(s![.., joined.ncols() - l..]).to_owned();
        }
        outputs.push(y);
    }
    let views: Vec<_> = outputs.iter().map(|o| o.view()).collect();
    let all = concatenate(Axis(1), &views).map_err(|e| Error::Data(e.to_string()))?;
    Ok(all.slice(s![.., ..total_horizon]).to_owned())
}

/// How inputs whose length differs from the training lookback are handled.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub short_mode: ShortMode,
    pub long: LongSearchConfig,
}

/// Forecast `horizon` original-granularity steps from a series of any length
/// >= 2: the input is adapted to the training lookback, rolled out in the
/// adapted time base and mapped back.
pub fn forecast_series<T: Scalar>(
    model: &SuperLinear<T>,
    x: &[T],
    horizon: usize,
    cfg: &AdaptConfig,
) -> Result<(Vec<T>, LookbackAdaptation<T>)> {
    if x.len() < 2 {
        return Err(Error::Domain(format!("input series needs at least 2 points, got {}", x.len())));
    }
    let l = model.lookback();
    let adaptation = if x.len() > l {
        long_lookback_search(x, &cfg.long, model)?.0
    } else {
        adapt_short_lookback(x, l, cfg.short_mode)?
    };
    let steps = ((horizon as f64) / adaptation.output_rescale - 1e-9).ceil().max(1.0) as usize;
    let input = Array2::from_shape_vec((1, l), adaptation.input.clone()).map_err(|e| Error::Data(e.to_string()))?;
    let y = autoregressive_forecast(model, input.view(), steps)?;
    let mut out = rescale_forecast(y.row(0).as_slice().expect("row is contiguous"), &adaptation)?;
    if out.len() < horizon {
        return Err(Error::Domain(format!("rescaled forecast has {} < {horizon} steps", out.len())));
    }
    out.truncate(horizon);
    Ok((out, adaptation))
}

/// Per-expert usage under inference-mode gating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertHistogram {
    pub names: Vec<String>,
    pub frequencies: Vec<Option<Frequency>>,
    pub mean_weight: Vec<f64>,
    /// Fraction of windows whose active set contains the expert.
    pub selection_rate: Vec<f64>,
    pub num_windows: usize,
}

pub fn expert_distribution<T: Scalar>(model: &SuperLinear<T>, x: ArrayView2<'_, T>) -> Result<ExpertHistogram> {
    let n = model.bank.len();
    let (mut weight, mut selected) = (vec![0.0; n], vec![0usize; n]);
    for lo in (0..x.nrows()).step_by(1024) {
        let d = model.gate.infer(x.slice(s![lo..(lo + 1024).min(x.nrows()), ..]))?;
        accumulate_usage(&d, &mut weight, &mut selected);
    }
    let rows = x.nrows().max(1) as f64;
    Ok(ExpertHistogram {
        names: model.bank.names(),
        frequencies: model.bank.frequencies(),
        mean_weight: weight.iter().map(|w| w / rows).collect(),
        selection_rate: selected.iter().map(|c| *c as f64 / rows).collect(),
        num_windows: x.nrows(),
    })
}

fn accumulate_usage<T: Scalar>(d: &GateDecision<T>, weight: &mut [f64], selected: &mut [usize]) {
    for (row, act) in d.weights.outer_iter().zip(&d.active) {
        for &i in act {
            weight[i] += row[i].as_f64();
            selected[i] += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub dataset: String,
    /// `None` for the average row.
    pub horizon: Option<usize>,
    pub metric: String,
    pub value: f64,
    pub num_windows: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
    /// `(dataset, histogram)` pairs.
    pub histograms: Vec<(String, ExpertHistogram)>,
}

impl EvalReport {
    pub fn value(&self, dataset: &str, horizon: Option<usize>, metric: &str) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.dataset == dataset && r.horizon == horizon && r.metric == metric)
            .map(|r| r.value)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["dataset", "horizon", "metric", "value", "num_windows"])?;
        for r in &self.records {
            let h = r.horizon.map_or("avg".to_string(), |h| h.to_string());
            w.write_record([r.dataset.clone(), h, r.metric.clone(), format!("{}", r.value), r.num_windows.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_histogram_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["dataset", "expert_name", "assigned_frequency", "mean_weight", "selection_rate"])?;
        for (name, h) in &self.histograms {
            for i in 0..h.names.len() {
                let f = h.frequencies[i].map_or(String::new(), |f| f.to_string());
                w.write_record([
                    name.clone(),
                    h.names[i].clone(),
                    f,
                    format!("{}", h.mean_weight[i]),
                    format!("{}", h.selection_rate[i]),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut metrics: Vec<&str> = Vec::new();
        for r in &self.records {
            if !metrics.contains(&r.metric.as_str()) {
                metrics.push(&r.metric);
            }
        }
        write!(f, "{:<16} {:>8}", "dataset", "horizon")?;
        for m in &metrics {
            write!(f, " {m:>10}")?;
        }
        writeln!(f)?;
        let mut keys: Vec<(&str, Option<usize>)> = Vec::new();
        for r in &self.records {
            if !keys.contains(&(r.dataset.as_str(), r.horizon)) {
                keys.push((&r.dataset, r.horizon));
            }
        }
        for (d, h) in keys {
            let label = h.map_or("Avg.".to_string(), |h| h.to_string());
            write!(f, "{d:<16} {label:>8}")?;
            for m in &metrics {
                match self.value(d, h, m) {
                    Some(v) => write!(f, " {v:>10.4}")?,
                    None => write!(f, " {:>10}", "-")?,
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub horizons: Vec<usize>,
    /// Inference-time top-k override.
    pub k: Option<usize>,
    /// Adds MASE records at this seasonal lag.
    pub season: Option<usize>,
    pub stride: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            horizons: vec![96, 192, 336, 720],
            k: None,
            season: None,
            stride: 1,
        }
    }
}

/// Benchmark protocol on one raw dataset: split chronologically, standardize
/// with training statistics, forecast every test window autoregressively and
/// report per-horizon MSE/MAE (and MASE when requested) plus their average.
pub fn evaluate<T: Scalar>(model: &SuperLinear<T>, raw: &Dataset<T>, split: &SplitSpec, opts: &EvalOptions) -> Result<EvalReport> {
    let model = match opts.k {
        Some(k) => model.with_top_k(k)?,
        None => model.clone(),
    };
    let (train, _, _) = chronological_split(raw, split)?;
    let (_, _, scaled) = standardize(&train, &[raw])?;
    let data = scaled.into_iter().next().expect("one dataset in, one out");
    let scales: Vec<Option<f64>> = match opts.season {
        Some(season) => data
            .channels
            .iter()
            .map(|c| {
                let (a, _) = split.bounds(c.len());
                seasonal_naive_scale(&c[..a], season).ok().filter(|s| *s > 0.0)
            })
            .collect(),
        None => Vec::new(),
    };

    let mut report = EvalReport::default();
    let mut per_metric: Vec<(String, Vec<f64>)> = Vec::new();
    let mut push = |report: &mut EvalReport, h: usize, metric: &str, value: f64, n: usize| {
        report.records.push(EvalRecord {
            dataset: raw.name.clone(),
            horizon: Some(h),
            metric: metric.to_string(),
            value,
            num_windows: n,
        });
        match per_metric.iter_mut().find(|(m, _)| m == metric) {
            Some((_, v)) => v.push(value),
            None => per_metric.push((metric.to_string(), vec![value])),
        }
    };
    for &h in &opts.horizons {
        let [_, _, test] = split_windows(&data, split, model.lookback(), h, opts.stride)?;
        if test.is_empty() {
            log::warn!("{}: no test windows for horizon {h}; skipped", raw.name);
            continue;
        }
        if report.histograms.is_empty() {
            report.histograms.push((raw.name.clone(), expert_distribution(&model, test.inputs())?));
        }
        let pred = forecast_windows(&model, &test, h)?;
        let target = test.targets();
        push(&mut report, h, "mse", mse(pred.view(), target)?, test.len());
        push(&mut report, h, "mae", mae(pred.view(), target)?, test.len());
        if opts.season.is_some() {
            let mut vals = Vec::new();
            for r in 0..test.len() {
                if let Some(scale) = scales[test.channel[r]] {
                    let e: f64 = pred.row(r).iter().zip(target.row(r)).map(|(p, t)| (p.as_f64() - t.as_f64()).abs()).sum();
                    vals.push(e / h as f64 / scale);
                }
            }
            if vals.len() < test.len() {
                log::warn!("{}: MASE undefined for {} windows; excluded", raw.name, test.len() - vals.len());
            }
            if !vals.is_empty() {
                push(&mut report, h, "mase", vals.iter().sum::<f64>() / vals.len() as f64, vals.len());
            }
        }
    }
    for (metric, vals) in per_metric {
        report.records.push(EvalRecord {
            dataset: raw.name.clone(),
            horizon: None,
            metric,
            value: vals.iter().sum::<f64>() / vals.len() as f64,
            num_windows: vals.len(),
        });
    }
    Ok(report)
}

fn forecast_windows<T: Scalar>(model: &SuperLinear<T>, w: &WindowSet<T>, h: usize) -> Result<Array2<T>> {
    let mut parts = Vec::new();
    for lo in (0..w.len()).step_by(1024) {
        let x = w.inputs().slice_move(s![lo..(lo + 1024).min(w.len()), ..]);
        parts.push(autoregressive_forecast(model, x, h)?);
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    concatenate(Axis(0), &views).map_err(|e| Error::Data(e.to_string()))
}

/// Settings of the synthetic sine-mixture experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SineExperimentConfig {
    pub num_freqs: usize,
    /// Step standard deviation of the added random walk, relative to the unit tone amplitude.
    pub noise_scale: f64,
    pub expert_counts: Vec<usize>,
    pub seed: u64,
    pub length: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub bins: usize,
    pub expert_train: TrainConfig,
    /// Router recipe; its `k` is capped at the expert count.
    pub router_train: TrainConfig,
    /// Experts mixed at test time.
    pub eval_k: usize,
}

impl Default for SineExperimentConfig {
    fn default() -> Self {
        let expert_train = TrainConfig {
            learning_rate: 0.005,
            batch_size: 64,
            epochs: 20,
            patience: 4,
            lr_decay: LrDecay::Constant,
            k: 1,
            k_candidates: Vec::new(),
            sigma_noise: 0.0,
            seed: 0,
            stage: Stage::ExpertPretrain,
            channel_mode: ChannelMode::Independent,
            freeze_gate: false,
        };
        let router_train = TrainConfig {
            learning_rate: 0.01,
            sigma_noise: 0.1,
            stage: Stage::RouterTrain,
            epochs: 10,
            k: 4,
            ..expert_train.clone()
        };
        Self {
            num_freqs: 12,
            noise_scale: 0.1,
            expert_counts: vec![1, 3, 6, 12],
            seed: 0,
            length: 4000,
            lookback: 24,
            horizon: 24,
            bins: 256,
            expert_train,
            router_train,
            eval_k: 2,
        }
    }
}

/// Tone frequencies `j / (2 (n + 4))` for `j = 1..=n`, evenly spaced and well
/// below Nyquist.
pub fn sine_frequencies(num_freqs: usize) -> Result<Vec<Frequency>> {
    let denom = 2 * (num_freqs as u64 + 4);
    (1..=num_freqs as u64).map(|j| Frequency::new(j, denom)).collect()
}

/// One standardized single-channel dataset per tone: a unit sine with random
/// phase plus a random walk.
pub fn sine_datasets(num_freqs: usize, noise_scale: f64, length: usize, seed: u64) -> Result<Vec<Dataset<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sine_frequencies(num_freqs)?
        .into_iter()
        .map(|f| {
            let phase = rand::Rng::random_range(&mut rng, 0.0..std::f64::consts::TAU);
            let mut walk = 0.0;
            let x: Vec<f64> = (0..length)
                .map(|t| {
                    let step: f64 = StandardNormal.sample(&mut rng);
                    walk += noise_scale * step;
                    (std::f64::consts::TAU * f.value() * t as f64 + phase).sin() + walk
                })
                .collect();
            Ok(Dataset::new(format!("sine_{}_{}", f.numer(), f.denom()), vec![x])?.with_frequency(f))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SineRow {
    pub expert_count: usize,
    pub test_mse: f64,
}

/// Trains one model per expert count. Tones are partitioned into contiguous
/// groups, one frequency expert per group trained on that group's data, and a
/// router learns to pick among them; reports pooled test MSE.
pub fn sine_mixture_experiment(cfg: &SineExperimentConfig) -> Result<Vec<SineRow>> {
    if cfg.expert_counts.windows(2).any(|w| w[0] > w[1]) || cfg.expert_counts.iter().any(|&c| c == 0 || c > cfg.num_freqs) {
        return Err(Error::config("expert counts must be ascending and within [1, num_freqs]"));
    }
    let split = SplitSpec::new(0.7, 0.1, 0.2)?;
    let (l, h) = (cfg.lookback, cfg.horizon);
    let mut sets: Vec<[WindowSet<f64>; 3]> = Vec::new();
    for raw in sine_datasets(cfg.num_freqs, cfg.noise_scale, cfg.length, cfg.seed)? {
        let (train, _, _) = chronological_split(&raw, &split)?;
        let (_, _, scaled) = standardize(&train, &[&raw])?;
        sets.push(split_windows(&scaled[0], &split, l, h, 1)?);
    }
    let pooled = |part: usize, members: &[usize]| -> Result<WindowSet<f64>> {
        WindowSet::concat(&members.iter().map(|&j| sets[j][part].clone()).collect::<Vec<_>>())
    };
    let everyone: Vec<usize> = (0..cfg.num_freqs).collect();
    let spectral = SpectralTransform::new(cfg.bins)?;
    let router_train = RouterData::new(pooled(0, &everyone)?, &spectral)?;
    let router_val = RouterData::new(pooled(1, &everyone)?, &spectral)?;
    let test = RouterData::new(pooled(2, &everyone)?, &spectral)?;
    let freqs = sine_frequencies(cfg.num_freqs)?;

    let mut rows = Vec::new();
    for &count in &cfg.expert_counts {
        let mut experts = Vec::new();
        for g in 0..count {
            let members: Vec<usize> = (g * cfg.num_freqs / count..(g + 1) * cfg.num_freqs / count).collect();
            let label = freqs[members[members.len() / 2]];
            let tc = TrainConfig {
                seed: cfg.seed.wrapping_add(g as u64),
                ..cfg.expert_train.clone()
            };
            let init = crate::experts::LinearExpert::frequency(label, l, h);
            let (mut e, _) = train_expert_on(init, &pooled(0, &members)?, &pooled(1, &members)?, &tc)?;
            e.frozen = true;
            experts.push(e);
        }
        let bank = ExpertBank::new(experts, Vec::new(), false, false, l, h)?;
        let train_k = cfg.router_train.k.min(count);
        let gate = gate_init(cfg.bins, count, train_k, cfg.router_train.sigma_noise, cfg.seed)?;
        let mut model = SuperLinear::new(bank, gate)?;
        if count > 1 {
            let rc = TrainConfig {
                k: train_k,
                k_candidates: Vec::new(),
                seed: cfg.seed,
                ..cfg.router_train.clone()
            };
            model = train_router_stage2(model, &router_train, &router_val, &rc)?.0;
        }
        let model = model.with_top_k(cfg.eval_k.min(count))?;
        let err = crate::training::dataset_mse(&model, &test)?;
        log::info!("sine experiment: {count} experts, test mse {err:.5}");
        rows.push(SineRow {
            expert_count: count,
            test_mse: err,
        });
    }
    Ok(rows)
}

/// Approximation/estimation decomposition of one forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// Energy of the target outside the expert frequencies.
    pub e_perp: f64,
    /// `gamma * ||X|| * ||beta - G||_1`.
    pub estimation_term: f64,
    /// `sqrt(e_perp) + estimation_term`.
    pub bound: f64,
    /// `||Y - Y_hat||`.
    pub empirical_error: f64,
    pub gamma: f64,
    pub beta: Vec<f64>,
    pub gate_weights: Vec<f64>,
    /// `sqrt(1 + eps) * sqrt(E_perp of X) + estimation_term`, when `eps` is given.
    pub relaxed_bound: Option<f64>,
}

/// Full two-sided spectrum of `x` on a transform of length `2 len(x)`, and the
/// mask of bins within one bin of some `freqs` entry (or its mirror image).
fn span_split<T: Scalar>(x: &[T], freqs: &[f64]) -> Result<(Vec<f64>, Vec<bool>)> {
    let t = SpectralTransform::<T>::new(x.len())?;
    let spec: Vec<f64> = t.full_spectrum(x)?.into_iter().map(Scalar::as_f64).collect();
    let n = spec.len();
    let mut inside = vec![false; n];
    for &f in freqs {
        let c = f * n as f64;
        for centre in [c, n as f64 - c] {
            let lo = (centre - 1.0).ceil().max(0.0) as usize;
            let hi = ((centre + 1.0).floor() as usize).min(n - 1);
            for flag in inside.iter_mut().take(hi + 1).skip(lo) {
                *flag = true;
            }
        }
    }
    Ok((spec, inside))
}

fn out_of_span_energy<T: Scalar>(x: &[T], freqs: &[f64]) -> Result<f64> {
    let (spec, inside) = span_split(x, freqs)?;
    Ok(spec.iter().zip(&inside).filter(|(_, i)| !**i).map(|(v, _)| v).sum())
}

/// Energy of `x` near each expert frequency; experts without a frequency get the total energy.
fn expert_energies<T: Scalar>(x: &[T], bank_freqs: &[Option<Frequency>]) -> Result<Vec<f64>> {
    let total: f64 = SpectralTransform::<T>::new(x.len())?.full_spectrum(x)?.into_iter().map(Scalar::as_f64).sum();
    bank_freqs
        .iter()
        .map(|f| match f {
            Some(f) => {
                let (spec, inside) = span_split(x, &[f.value()])?;
                Ok(spec.iter().zip(&inside).filter(|(_, i)| **i).map(|(v, _)| v).sum())
            }
            None => Ok(total),
        })
        .collect()
}

fn norm(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn project_simplex(v: &mut [f64]) {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let (mut cum, mut theta) = (0.0, 0.0);
    for (j, uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter_mut().for_each(|x| *x = (*x - theta).max(0.0));
}

/// Least-squares mixture weights on the probability simplex, by projected
/// gradient descent from the uniform vector.
pub fn fit_simplex_weights(outputs: &[Vec<f64>], y: &[f64], iterations: usize) -> Vec<f64> {
    let n = outputs.len();
    if n == 0 {
        return Vec::new();
    }
    let lip = 2.0 * outputs.iter().map(|f| f.iter().map(|v| v * v).sum::<f64>()).sum::<f64>();
    let step = if lip > 0.0 { 1.0 / lip } else { 0.0 };
    let mut beta = vec![1.0 / n as f64; n];
    for _ in 0..iterations {
        let resid: Vec<f64> = (0..y.len())
            .map(|t| outputs.iter().zip(&beta).map(|(f, b)| b * f[t]).sum::<f64>() - y[t])
            .collect();
        for (b, f) in beta.iter_mut().zip(outputs) {
            *b -= step * 2.0 * f.iter().zip(&resid).map(|(a, r)| a * r).sum::<f64>();
        }
        project_simplex(&mut beta);
    }
    beta
}

/// Bound report for one window, using the model's own gate weights.
pub fn bound_report<T: Scalar>(
    model: &SuperLinear<T>,
    x: &[T],
    y: &[T],
    beta: Option<&[f64]>,
    gamma: Option<f64>,
    eps: Option<f64>,
) -> Result<BoundReport> {
    let row = Array2::from_shape_vec((1, x.len()), x.to_vec()).map_err(|e| Error::Data(e.to_string()))?;
    let g: Vec<f64> = model.gate.infer(row.view())?.weights.row(0).iter().map(|v| v.as_f64()).collect();
    bound_report_with_weights(model, x, y, &g, beta, gamma, eps)
}

/// Bound report for explicit mixture weights `g`.
pub fn bound_report_with_weights<T: Scalar>(
    model: &SuperLinear<T>,
    x: &[T],
    y: &[T],
    g: &[f64],
    beta: Option<&[f64]>,
    gamma: Option<f64>,
    eps: Option<f64>,
) -> Result<BoundReport> {
    let n = model.bank.len();
    if x.len() != model.lookback() || y.len() != model.horizon() || g.len() != n {
        return Err(Error::dim(
            "bound report",
            format!("x {} y {} g {n}", model.lookback(), model.horizon()),
            format!("x {} y {} g {}", x.len(), y.len(), g.len()),
        ));
    }
    let row = Array2::from_shape_vec((1, x.len()), x.to_vec()).map_err(|e| Error::Data(e.to_string()))?;
    let outputs: Vec<Vec<f64>> = (0..n)
        .map(|i| Ok(model.bank.forward(i, row.view())?.row(0).iter().map(|v| v.as_f64()).collect()))
        .collect::<Result<_>>()?;
    let yf: Vec<f64> = y.iter().map(|v| v.as_f64()).collect();
    let beta = match beta {
        Some(b) if b.len() == n => b.to_vec(),
        Some(b) => return Err(Error::dim("oracle weights", n, b.len())),
        None => fit_simplex_weights(&outputs, &yf, 500),
    };
    let bank_freqs = model.bank.frequencies();
    let freqs: Vec<f64> = bank_freqs.iter().flatten().map(|f| f.value()).collect();
    let gamma = match gamma {
        Some(gm) => gm,
        None => {
            let energies = expert_energies(x, &bank_freqs)?;
            outputs
                .iter()
                .zip(&energies)
                .map(|(f, e)| {
                    let fnorm = norm(f.iter().copied());
                    if fnorm == 0.0 {
                        0.0
                    } else {
                        fnorm / e.sqrt()
                    }
                })
                .fold(0.0, f64::max)
        }
    };
    let e_perp = out_of_span_energy(y, &freqs)?;
    let x_norm = norm(x.iter().map(|v| v.as_f64()));
    let l1: f64 = beta.iter().zip(g).map(|(b, w)| (b - w).abs()).sum();
    let estimation_term = gamma * x_norm * l1;
    let y_hat: Vec<f64> = (0..y.len()).map(|t| outputs.iter().zip(g).map(|(f, w)| w * f[t]).sum()).collect();
    let empirical_error = norm(yf.iter().zip(&y_hat).map(|(a, b)| a - b));
    let relaxed_bound = match eps {
        Some(e) => Some((1.0 + e).sqrt() * out_of_span_energy(x, &freqs)?.sqrt() + estimation_term),
        None => None,
    };
    Ok(BoundReport {
        e_perp,
        estimation_term,
        bound: e_perp.sqrt() + estimation_term,
        empirical_error,
        gamma,
        beta,
        gate_weights: g.to_vec(),
        relaxed_bound,
    })
}

/// Writes a single-column forecast CSV.
pub fn write_forecast_csv<T: Scalar>(path: impl AsRef<Path>, values: &[T]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,forecast")?;
    for (i, v) in values.iter().enumerate() {
        writeln!(f, "{},{}", i + 1, v)?;
    }
    f.flush()?;
    Ok(())
}

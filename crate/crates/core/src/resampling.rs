//! Linear-interpolation resampling: frequency retargeting for expert
//! pretraining, short-lookback upsampling and the long-lookback scale search.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frequency::Frequency;
use crate::model::SuperLinear;
use crate::scalar::Scalar;
use crate::spectral::{normalize_l1, periodogram, spectral_entropy, tail_energy_fraction};

/// Default cap on the upsampling factor used for augmentation.
pub const DEFAULT_R_MAX: f64 = 20.0;

fn lerp<T: Scalar>(x: &[T], pos: f64) -> T {
    let n = x.len();
    let j = (pos.floor() as usize).min(n - 1);
    if j + 1 >= n {
        return x[n - 1];
    }
    let frac = T::of(pos - j as f64);
    let (a, b) = (x[j], x[j + 1]);
    let v = a + frac * (b - a);
    // keep rounding from stepping outside the segment
    v.max(a.min(b)).min(a.max(b))
}

/// Resamples `x` to `target_len` points spread uniformly over its index range.
/// Both endpoints are kept exactly.
pub fn linear_resample<T: Scalar>(x: &[T], target_len: usize) -> Result<Vec<T>> {
    if x.len() < 2 || target_len < 2 {
        return Err(Error::Domain(format!(
            "linear resampling needs at least 2 points in and out, got {} -> {target_len}",
            x.len()
        )));
    }
    if target_len == x.len() {
        return Ok(x.to_vec());
    }
    let step = (x.len() - 1) as f64 / (target_len - 1) as f64;
    let mut out: Vec<T> = (0..target_len).map(|i| lerp(x, i as f64 * step)).collect();
    out[target_len - 1] = x[x.len() - 1];
    Ok(out)
}

/// Samples `x` every `1 / factor` steps starting at index 0, so one input
/// step becomes `factor` output steps (`factor < 1` decimates).
pub fn resample_by_factor<T: Scalar>(x: &[T], factor: f64) -> Result<Vec<T>> {
    if x.len() < 2 || !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::Domain(format!("cannot resample {} points by factor {factor}", x.len())));
    }
    let span = (x.len() - 1) as f64 * factor;
    let count = (span + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| lerp(x, i as f64 / factor)).collect())
}

/// Stretches or compresses `x` so that content at `source` cycles/step moves
/// to `target`. Returns `None` when the upsampling factor would exceed `r_max`
/// or the result is shorter than `min_len`.
pub fn frequency_retarget<T: Scalar>(
    x: &[T],
    source: Frequency,
    target: Frequency,
    r_max: f64,
    min_len: usize,
) -> Option<Vec<T>> {
    let factor = source.value() / target.value();
    if factor > r_max + 1e-12 || x.len() < 2 {
        return None;
    }
    let out = if source == target {
        x.to_vec()
    } else {
        resample_by_factor(x, factor).ok()?
    };
    (out.len() >= min_len).then_some(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "method")]
pub enum AdaptMethod {
    None,
    /// Upsampled by `factor` and cropped to the training lookback.
    ShortUpsample { factor: f64 },
    /// Downsampled by the scale chosen by [`long_lookback_search`].
    LongSearch { scale: usize },
}

/// Input rewritten to the training lookback, with the factor needed to map the
/// forecast back to the original granularity.
#[derive(Debug, Clone, PartialEq)]
pub struct LookbackAdaptation<T> {
    pub input: Vec<T>,
    pub method: AdaptMethod,
    /// Original steps per model step: `1/factor` after upsampling, `s` after
    /// downsampling by `s`, `1` otherwise.
    pub output_rescale: f64,
}

/// How short inputs are stretched to the training lookback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShortMode {
    /// Integer factor `ceil(L_train / L_input)`, then keep the most recent points.
    #[default]
    CeilFactor,
    /// Fractional resampling straight to `L_train` points.
    Exact,
}

fn most_recent<T: Scalar>(x: &[T], n: usize) -> Vec<T> {
    x[x.len().saturating_sub(n)..].to_vec()
}

/// Upsamples an input shorter than `train_len` to exactly `train_len` points.
pub fn adapt_short_lookback<T: Scalar>(x: &[T], train_len: usize, mode: ShortMode) -> Result<LookbackAdaptation<T>> {
    if x.len() < 2 {
        return Err(Error::Domain(format!("lookback of length {} is too short", x.len())));
    }
    if x.len() >= train_len {
        return Ok(LookbackAdaptation {
            input: most_recent(x, train_len),
            method: AdaptMethod::None,
            output_rescale: 1.0,
        });
    }
    match mode {
        ShortMode::CeilFactor => {
            let factor = train_len.div_ceil(x.len());
            let up = linear_resample(x, x.len() * factor)?;
            Ok(LookbackAdaptation {
                input: most_recent(&up, train_len),
                method: AdaptMethod::ShortUpsample { factor: factor as f64 },
                output_rescale: 1.0 / factor as f64,
            })
        }
        ShortMode::Exact => {
            let factor = train_len as f64 / x.len() as f64;
            Ok(LookbackAdaptation {
                input: linear_resample(x, train_len)?,
                method: AdaptMethod::ShortUpsample { factor },
                output_rescale: 1.0 / factor,
            })
        }
    }
}

/// Parameters of the long-lookback scale search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongSearchConfig {
    pub scales: Vec<usize>,
    /// Weight of the energy-loss penalty.
    pub lambda: f64,
    /// Largest tolerated fraction of lost spectral energy.
    pub max_energy_loss: f64,
    /// Frequency of the highest-frequency expert; taken from the bank when `None`.
    pub highest_expert_frequency: Option<f64>,
}

impl Default for LongSearchConfig {
    fn default() -> Self {
        Self {
            scales: vec![2, 4, 6],
            lambda: 2.0,
            max_energy_loss: 0.2,
            highest_expert_frequency: None,
        }
    }
}

/// Diagnostics of one search, useful for logging and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchTrace {
    /// Cutoff bin frequency below which at most `1 - max_energy_loss` of the energy lies.
    pub cutoff_frequency: f64,
    /// Largest admissible scale (`usize::MAX` when unbounded).
    pub max_scale: usize,
    pub baseline_score: f64,
    /// `(scale, penalty, score)`; `score` is `None` for inadmissible scales.
    pub candidates: Vec<(usize, f64, Option<f64>)>,
}

fn gate_entropy<T: Scalar>(model: &SuperLinear<T>, window: &[T]) -> Result<f64> {
    let x = Array2::from_shape_vec((1, window.len()), window.to_vec()).map_err(|e| Error::Data(e.to_string()))?;
    let d = model.gate.infer(x.view())?;
    Ok(spectral_entropy(d.weights.row(0).as_slice().expect("row is contiguous"))?.as_f64())
}

/// Chooses a downsampling scale for an input longer than the model's lookback.
///
/// Scores each admissible scale by the entropy of the gate's expert weights on
/// the resampled input plus `lambda` times the fraction of spectral energy lost
/// above the new Nyquist frequency, and keeps the lowest score (the
/// un-resampled input is the baseline). A scale is admissible when the
/// resampled input still covers the lookback and the scale does not push the
/// energy cutoff frequency past the highest-frequency expert.
pub fn long_lookback_search<T: Scalar>(
    x: &[T],
    cfg: &LongSearchConfig,
    model: &SuperLinear<T>,
) -> Result<(LookbackAdaptation<T>, SearchTrace)> {
    let train_len = model.lookback();
    if x.len() <= train_len {
        return Err(Error::Domain(format!(
            "long lookback search needs more than {train_len} points, got {}",
            x.len()
        )));
    }
    if cfg.scales.iter().any(|s| *s <= 1) {
        return Err(Error::config("search scales must be greater than 1"));
    }
    if !(cfg.lambda >= 0.0) || !(cfg.max_energy_loss > 0.0 && cfg.max_energy_loss < 1.0) {
        return Err(Error::config("lambda must be >= 0 and max energy loss in (0, 1)"));
    }

    let bins = model.gate.num_bins().max(x.len().div_ceil(2));
    let spec = normalize_l1(&periodogram(x, bins)?);

    let keep = 1.0 - cfg.max_energy_loss;
    let mut cumulative = 0.0;
    let mut cutoff_bin = 0;
    for (j, v) in spec.bins.iter().enumerate() {
        cumulative += v.as_f64();
        if cumulative <= keep {
            cutoff_bin = j;
        } else {
            break;
        }
    }
    let cutoff_frequency = spec.bin_frequency(cutoff_bin);
    let highest = cfg.highest_expert_frequency.unwrap_or_else(|| {
        model
            .bank
            .frequencies()
            .into_iter()
            .flatten()
            .map(Frequency::value)
            .reduce(f64::max)
            .unwrap_or(0.5)
    });
    let max_scale = if cutoff_frequency > 0.0 {
        ((highest / cutoff_frequency).floor() as usize).max(1)
    } else {
        usize::MAX
    };

    let baseline = most_recent(x, train_len);
    let baseline_score = gate_entropy(model, &baseline)?;
    let mut best = (baseline_score, 1usize, baseline);
    let mut candidates = Vec::new();
    for &s in &cfg.scales {
        let penalty = tail_energy_fraction(&spec, 0.5 / s as f64).as_f64();
        let resampled = resample_by_factor(x, 1.0 / s as f64)?;
        if resampled.len() < train_len || s > max_scale {
            candidates.push((s, penalty, None));
            continue;
        }
        let cropped = most_recent(&resampled, train_len);
        let score = gate_entropy(model, &cropped)? + cfg.lambda * penalty;
        candidates.push((s, penalty, Some(score)));
        if score < best.0 {
            best = (score, s, cropped);
        }
    }
    let (_, scale, input) = best;
    let adaptation = LookbackAdaptation {
        input,
        method: if scale == 1 {
            AdaptMethod::None
        } else {
            AdaptMethod::LongSearch { scale }
        },
        output_rescale: scale as f64,
    };
    Ok((
        adaptation,
        SearchTrace {
            cutoff_frequency,
            max_scale,
            baseline_score,
            candidates,
        },
    ))
}

/// Maps a forecast made in the adapted time base back to the original one.
pub fn rescale_forecast<T: Scalar>(y: &[T], adaptation: &LookbackAdaptation<T>) -> Result<Vec<T>> {
    if adaptation.method == AdaptMethod::None || y.is_empty() {
        return Ok(y.to_vec());
    }
    let target = (y.len() as f64 * adaptation.output_rescale).round().max(1.0) as usize;
    match (y.len(), target) {
        (_, 1) => Ok(vec![y[y.len() - 1]]),
        (1, t) => Ok(vec![y[0]; t]),
        (_, t) => linear_resample(y, t),
    }
}

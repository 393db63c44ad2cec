//! Training from scratch: MSE loss, the analytic backward pass through the
//! sparse mixture, Adam, the learning-rate schedule, early stopping, and the
//! two training stages (per-frequency expert pretraining, then router plus
//! complementary experts with frozen frequency experts).

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::distr::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experts::{default_frequency_table, revin_normalize, ExpertBank, LinearExpert, RevinState};
use crate::frequency::Frequency;
use crate::gating::GatingNetwork;
use crate::model::{ForwardTrace, SuperLinear};
use crate::resampling::{frequency_retarget, DEFAULT_R_MAX};
use crate::scalar::{count, Scalar};
use crate::series_data::{Dataset, WindowSet};
use crate::spectral::SpectralTransform;

/// Named random sub-streams derived from one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Subsample = 1,
    Noise = 2,
    Init = 3,
    Shuffle = 4,
    GateInit = 5,
}

pub fn substream(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Mean squared error over all entries and its gradient `2 (pred - target) / (B H)`.
pub fn mse_loss<T: Scalar>(pred: ArrayView2<'_, T>, target: ArrayView2<'_, T>) -> Result<(T, Array2<T>)> {
    if pred.dim() != target.dim() {
        return Err(Error::dim("mse loss", format!("{:?}", pred.dim()), format!("{:?}", target.dim())));
    }
    let n = count::<T>(pred.len().max(1));
    let diff = &pred - &target;
    let loss = diff.iter().map(|d| *d * *d).sum::<T>() / n;
    Ok((loss, diff * (T::of(2.0) / n)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

/// Gradients of the loss with respect to every trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    /// One entry per linear expert in bank order; `None` for frozen experts.
    pub experts: Vec<Option<ParamGrad<T>>>,
    /// `None` when the gate is not being trained.
    pub gate: Option<ParamGrad<T>>,
}

/// Loss and exact gradients for a batch under a fixed gate decision.
///
/// `features` are the gate inputs for the rows of `x`; they are only read when
/// `train_gate` is set.
pub fn backward<T: Scalar>(
    model: &SuperLinear<T>,
    x: ArrayView2<'_, T>,
    features: ArrayView2<'_, T>,
    target: ArrayView2<'_, T>,
    decision: &crate::gating::GateDecision<T>,
    train_gate: bool,
) -> Result<(T, Gradients<T>)> {
    let trace = model.trace_with(x, decision.clone())?;
    backward_trace(model, &trace, features, target, train_gate)
}

pub(crate) fn backward_trace<T: Scalar>(
    model: &SuperLinear<T>,
    trace: &ForwardTrace<T>,
    features: ArrayView2<'_, T>,
    target: ArrayView2<'_, T>,
    train_gate: bool,
) -> Result<(T, Gradients<T>)> {
    let (loss, d) = mse_loss(trace.output.view(), target)?;
    let weights = &trace.decision.weights;
    let experts = (0..model.bank.num_linear())
        .into_par_iter()
        .map(|i| {
            let e = model.bank.linear(i).expect("linear expert index");
            if e.frozen {
                return None;
            }
            let rows = &trace.passes[i].rows;
            let mut dpre = d.select(Axis(0), rows);
            for (mut row, &r) in dpre.outer_iter_mut().zip(rows) {
                let s = trace.revin.std[r] * weights[[r, i]];
                row.mapv_inplace(|v| v * s);
            }
            let z = trace.normalized.select(Axis(0), rows);
            Some(ParamGrad {
                weight: z.t().dot(&dpre),
                bias: dpre.sum_axis(Axis(0)),
            })
        })
        .collect();

    let gate = if train_gate {
        if features.nrows() != d.nrows() || features.ncols() != model.gate.num_bins() {
            return Err(Error::dim(
                "gate features",
                format!("{}x{}", d.nrows(), model.gate.num_bins()),
                format!("{:?}", features.dim()),
            ));
        }
        let mut dg = Array2::zeros(weights.raw_dim());
        for (i, pass) in trace.passes.iter().enumerate() {
            for (out, &r) in pass.output.outer_iter().zip(&pass.rows) {
                dg[[r, i]] = d.row(r).dot(&out);
            }
        }
        let mut ds = Array2::zeros(weights.raw_dim());
        for (r, act) in trace.decision.active.iter().enumerate() {
            let inner: T = act.iter().map(|&i| weights[[r, i]] * dg[[r, i]]).sum();
            for &i in act {
                ds[[r, i]] = weights[[r, i]] * (dg[[r, i]] - inner);
            }
        }
        Some(ParamGrad {
            weight: features.t().dot(&ds),
            bias: ds.sum_axis(Axis(0)),
        })
    } else {
        None
    };
    Ok((loss, Gradients { experts, gate }))
}

/// Adam moments for a fixed sequence of parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> Default for OptimizerState<T> {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn moments(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.first, &self.second)
    }

    /// One bias-corrected Adam update. Nothing is modified if any gradient
    /// entry is non-finite.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]], lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::dim("adam blocks", params.len(), grads.len()));
        }
        for (b, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(Error::dim("adam block", p.len(), g.len()));
            }
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite gradient {} in block {b} at entry {j} (step {})",
                    g[j],
                    self.step + 1
                )));
            }
        }
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| vec![T::zero(); g.len()]).collect();
            self.second = self.first.clone();
        } else if self.first.len() != grads.len() || self.first.iter().zip(grads).any(|(m, g)| m.len() != g.len()) {
            return Err(Error::dim("adam state", self.first.len(), grads.len()));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (c1, c2) = (T::one() - b1, T::one() - b2);
        let bc1 = T::of(1.0 - self.beta1.powi(t));
        let bc2 = T::of(1.0 - self.beta2.powi(t));
        let (lr, eps) = (T::of(lr), T::of(self.eps));
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            for j in 0..g.len() {
                m[j] = b1 * m[j] + c1 * g[j];
                v[j] = b2 * v[j] + c2 * g[j] * g[j];
                p[j] = p[j] - lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Learning rate for a 1-based epoch: `base` through epoch 3, then `base * 0.9^(epoch - 3)`.
pub fn lr_schedule(epoch: usize, base_lr: f64) -> f64 {
    if epoch > 3 {
        base_lr * 0.9f64.powi((epoch - 3) as i32)
    } else {
        base_lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrDecay {
    Constant,
    /// [`lr_schedule`].
    Exponential,
}

impl LrDecay {
    pub fn rate(self, epoch: usize, base_lr: f64) -> f64 {
        match self {
            LrDecay::Constant => base_lr,
            LrDecay::Exponential => lr_schedule(epoch, base_lr),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    ExpertPretrain,
    RouterTrain,
}

/// `Independent` batches single-channel windows; `Multivariate` keeps all
/// channels of the same time window together in one batch unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelMode {
    Independent,
    Multivariate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub lr_decay: LrDecay,
    pub k: usize,
    /// Values tried by [`select_k`]; empty means only `k`.
    #[serde(default)]
    pub k_candidates: Vec<usize>,
    pub sigma_noise: f64,
    pub seed: u64,
    pub stage: Stage,
    pub channel_mode: ChannelMode,
    /// Keep the gate fixed during router training.
    #[serde(default)]
    pub freeze_gate: bool,
}

impl TrainConfig {
    /// Zero-shot pretraining recipe.
    pub fn zs(stage: Stage) -> Self {
        Self {
            learning_rate: 0.1,
            batch_size: 512,
            epochs: 30,
            patience: 5,
            lr_decay: LrDecay::Exponential,
            k: 12,
            k_candidates: Vec::new(),
            sigma_noise: 0.1,
            seed: 0,
            stage,
            channel_mode: ChannelMode::Independent,
            freeze_gate: false,
        }
    }

    /// Full-shot recipe for a single target dataset.
    pub fn fs(stage: Stage) -> Self {
        Self {
            learning_rate: 0.05,
            batch_size: 32,
            lr_decay: LrDecay::Constant,
            k_candidates: vec![6, 8, 10, 12, 20],
            channel_mode: ChannelMode::Multivariate,
            ..Self::zs(stage)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::config("batch size and epochs must be at least 1"));
        }
        if self.patience > self.epochs {
            return Err(Error::config("patience cannot exceed the number of epochs"));
        }
        if self.k == 0 || self.k_candidates.contains(&0) {
            return Err(Error::config("top-k must be at least 1"));
        }
        if !(self.sigma_noise >= 0.0) {
            return Err(Error::config("gate noise must be nonnegative"));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: String,
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

impl TrainHistory {
    /// Copy with wall-clock timings zeroed, for storing in reproducible artifacts.
    pub fn without_timing(&self) -> Self {
        let mut h = self.clone();
        for e in &mut h.epochs {
            e.seconds = 0.0;
        }
        h
    }
}

/// Batch units: single rows, or all rows sharing a window start.
pub fn batch_units<T>(w: &WindowSet<T>, mode: ChannelMode) -> Vec<Vec<usize>> {
    match mode {
        ChannelMode::Independent => (0..w.start.len()).map(|r| vec![r]).collect(),
        ChannelMode::Multivariate => {
            let mut by_start: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (r, &s) in w.start.iter().enumerate() {
                by_start.entry(s).or_default().push(r);
            }
            by_start.into_values().collect()
        }
    }
}

/// Mini-batch loop with early stopping; leaves the best-validation snapshot in `params`.
fn fit<P: Clone>(
    params: &mut P,
    stage: &str,
    cfg: &TrainConfig,
    units: &[Vec<usize>],
    mut step: impl FnMut(&mut P, &[usize], f64, &mut ChaCha8Rng) -> Result<f64>,
    mut validate: impl FnMut(&P) -> Result<f64>,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if units.is_empty() {
        return Err(Error::Training(format!("{stage}: no training windows")));
    }
    let mut shuffle = substream(cfg.seed, Stream::Shuffle);
    let mut noise = substream(cfg.seed, Stream::Noise);
    let mut order: Vec<usize> = (0..units.len()).collect();
    let mut history = TrainHistory {
        best_val_loss: f64::INFINITY,
        ..Default::default()
    };
    let mut best = params.clone();
    let mut waited = 0;
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let lr = cfg.lr_decay.rate(epoch, cfg.learning_rate);
        order.shuffle(&mut shuffle);
        let (mut total, mut rows_seen) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let rows: Vec<usize> = chunk.iter().flat_map(|&u| units[u].iter().copied()).collect();
            total += step(params, &rows, lr, &mut noise)? * rows.len() as f64;
            rows_seen += rows.len();
        }
        let val_loss = validate(params)?;
        let log = EpochLog {
            stage: stage.to_string(),
            epoch,
            lr,
            train_loss: total / rows_seen.max(1) as f64,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(target: "training", "{}", serde_json::to_string(&log)?);
        history.epochs.push(log);
        if val_loss < history.best_val_loss {
            history.best_val_loss = val_loss;
            history.best_epoch = epoch;
            best = params.clone();
            waited = 0;
        } else {
            waited += 1;
            if waited >= cfg.patience {
                history.stopped_early = epoch < cfg.epochs;
                break;
            }
        }
    }
    *params = best;
    Ok(history)
}

/// Windows for stage 1, with the input side already instance-normalized.
struct ExpertData<T: Scalar> {
    z: Array2<T>,
    revin: RevinState<T>,
    target: Array2<T>,
}

impl<T: Scalar> ExpertData<T> {
    fn new(w: &WindowSet<T>) -> Self {
        let (z, revin) = revin_normalize(w.inputs());
        Self {
            z,
            revin,
            target: w.targets().to_owned(),
        }
    }

    fn predict(&self, e: &LinearExpert<T>, rows: &[usize]) -> (Array2<T>, Array2<T>) {
        let z = self.z.select(Axis(0), rows);
        let mut out = e.forward_normalized(z.view());
        for (mut row, &r) in out.outer_iter_mut().zip(rows) {
            let (m, s) = (self.revin.mean[r], self.revin.std[r]);
            row.mapv_inplace(|v| v * s + m);
        }
        (z, out)
    }

    fn mse(&self, e: &LinearExpert<T>) -> Result<f64> {
        let n = self.z.nrows();
        let mut sse = 0.0;
        for lo in (0..n).step_by(4096) {
            let rows: Vec<usize> = (lo..(lo + 4096).min(n)).collect();
            let (_, pred) = self.predict(e, &rows);
            let tgt = self.target.select(Axis(0), &rows);
            sse += (&pred - &tgt).iter().map(|d| d.as_f64() * d.as_f64()).sum::<f64>();
        }
        Ok(sse / (n * self.target.ncols()).max(1) as f64)
    }
}

/// How the stage-1 window pool is assembled.
pub struct ExpertCorpusOptions {
    pub r_max: f64,
    /// Cap on training windows contributed by each dataset.
    pub cap_per_dataset: Option<usize>,
    pub stride: usize,
    /// Chronological validation fraction of each (resampled) channel.
    pub val_fraction: f64,
}

impl Default for ExpertCorpusOptions {
    fn default() -> Self {
        Self {
            r_max: DEFAULT_R_MAX,
            cap_per_dataset: Some(100_000),
            stride: 1,
            val_fraction: 0.2,
        }
    }
}

fn materialize<T: Scalar>(channels: &[Vec<T>], origins: &[(usize, usize)], lookback: usize, horizon: usize) -> WindowSet<T> {
    let width = lookback + horizon;
    let mut data = Array2::zeros((origins.len(), width));
    for (mut row, &(c, s)) in data.outer_iter_mut().zip(origins) {
        row.assign(&ndarray::ArrayView1::from(&channels[c][s..s + width]));
    }
    WindowSet {
        data,
        lookback,
        horizon,
        channel: origins.iter().map(|o| o.0).collect(),
        start: origins.iter().map(|o| o.1).collect(),
    }
}

fn sample_origins(mut origins: Vec<(usize, usize)>, cap: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    if let Some(cap) = cap {
        if origins.len() > cap {
            let mut idx = rand::seq::index::sample(rng, origins.len(), cap).into_vec();
            idx.sort_unstable();
            origins = idx.into_iter().map(|i| origins[i]).collect();
        }
    }
    origins
}

/// Train and validation windows whose dominant periodicity has been moved to
/// `target` by resampling every labeled dataset in the corpus.
pub fn expert_windows<T: Scalar>(
    corpus: &[Dataset<T>],
    target: Frequency,
    lookback: usize,
    horizon: usize,
    opts: &ExpertCorpusOptions,
    seed: u64,
) -> Result<(WindowSet<T>, WindowSet<T>)> {
    if opts.stride == 0 || !(opts.val_fraction > 0.0 && opts.val_fraction < 1.0) {
        return Err(Error::config("stride must be >= 1 and validation fraction in (0, 1)"));
    }
    let width = lookback + horizon;
    let mut rng = substream(seed, Stream::Subsample);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for d in corpus {
        let Some(source) = d.dominant_frequency else {
            return Err(Error::config(format!(
                "dataset '{}' has no frequency label; supply it through the metadata file",
                d.name
            )));
        };
        let resampled: Vec<Vec<T>> = d
            .channels
            .iter()
            .filter_map(|c| frequency_retarget(c, source, target, opts.r_max, width))
            .collect();
        let (mut tr, mut va) = (Vec::new(), Vec::new());
        for (ci, c) in resampled.iter().enumerate() {
            let cut = ((c.len() as f64) * (1.0 - opts.val_fraction)).round() as usize;
            let train_end = cut.min(c.len());
            if train_end >= width {
                tr.extend((0..=train_end - width).step_by(opts.stride).map(|s| (ci, s)));
            }
            let lo = cut.max(lookback);
            if c.len() >= lo + horizon {
                va.extend((lo..=c.len() - horizon).step_by(opts.stride).map(|t| (ci, t - lookback)));
            }
        }
        let val_cap = opts
            .cap_per_dataset
            .map(|c| ((c as f64) * opts.val_fraction / (1.0 - opts.val_fraction)).ceil() as usize);
        let tr = sample_origins(tr, opts.cap_per_dataset, &mut rng);
        let va = sample_origins(va, val_cap, &mut rng);
        if !tr.is_empty() && !va.is_empty() {
            train.push(materialize(&resampled, &tr, lookback, horizon));
            val.push(materialize(&resampled, &va, lookback, horizon));
        }
    }
    if train.is_empty() {
        return Err(Error::Training(format!(
            "no admissible training windows for frequency {target} (r_max = {})",
            opts.r_max
        )));
    }
    Ok((WindowSet::concat(&train)?, WindowSet::concat(&val)?))
}

/// Trains one frequency expert on its own windows; returns the best-validation
/// expert.
pub fn train_expert_on<T: Scalar>(
    expert: LinearExpert<T>,
    train: &WindowSet<T>,
    val: &WindowSet<T>,
    cfg: &TrainConfig,
) -> Result<(LinearExpert<T>, TrainHistory)> {
    if train.lookback != expert.lookback() || train.horizon != expert.horizon() {
        return Err(Error::dim(
            "expert windows",
            format!("{}x{}", expert.lookback(), expert.horizon()),
            format!("{}x{}", train.lookback, train.horizon),
        ));
    }
    let tr = ExpertData::new(train);
    let va = ExpertData::new(val);
    let units = batch_units(train, cfg.channel_mode);
    let mut opt = OptimizerState::new();
    let name = match expert.frequency {
        Some(f) => format!("expert_{f}"),
        None => "expert".to_string(),
    };
    let mut expert = expert;
    let history = fit(
        &mut expert,
        &name,
        cfg,
        &units,
        |e, rows, lr, _| {
            let (z, pred) = tr.predict(e, rows);
            let (loss, mut d) = mse_loss(pred.view(), tr.target.select(Axis(0), rows).view())?;
            for (mut row, &r) in d.outer_iter_mut().zip(rows) {
                let s = tr.revin.std[r];
                row.mapv_inplace(|v| v * s);
            }
            let dw = z.t().dot(&d);
            let db = d.sum_axis(Axis(0));
            opt.step(
                &mut [
                    e.weight.as_slice_mut().expect("contiguous weight"),
                    e.bias.as_slice_mut().expect("contiguous bias"),
                ],
                &[dw.as_slice().expect("contiguous"), db.as_slice().expect("contiguous")],
                lr,
            )?;
            Ok(loss.as_f64())
        },
        |e| va.mse(e),
    )?;
    Ok((expert, history))
}

/// Stage 1: builds the resampled window pool for `target` and trains a
/// zero-initialized frequency expert on it.
pub fn train_expert_stage1<T: Scalar>(
    corpus: &[Dataset<T>],
    target: Frequency,
    lookback: usize,
    horizon: usize,
    cfg: &TrainConfig,
    opts: &ExpertCorpusOptions,
) -> Result<(LinearExpert<T>, TrainHistory)> {
    let (train, val) = expert_windows(corpus, target, lookback, horizon, opts, cfg.seed)?;
    train_expert_on(LinearExpert::frequency(target, lookback, horizon), &train, &val, cfg)
}

/// Windows plus their cached gate features.
#[derive(Debug, Clone)]
pub struct RouterData<T: Scalar> {
    pub windows: WindowSet<T>,
    pub features: Array2<T>,
}

impl<T: Scalar> RouterData<T> {
    pub fn new(windows: WindowSet<T>, spectral: &SpectralTransform<T>) -> Result<Self> {
        const CHUNK: usize = 512;
        let inputs = windows.inputs();
        let starts: Vec<usize> = (0..windows.len()).step_by(CHUNK).collect();
        let parts = starts
            .par_iter()
            .map(|&lo| {
                let hi = (lo + CHUNK).min(windows.len());
                spectral.features(inputs.slice(ndarray::s![lo..hi, ..]))
            })
            .collect::<Result<Vec<_>>>()?;
        let features = if parts.is_empty() {
            Array2::zeros((0, spectral.bins()))
        } else {
            let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
            ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Data(e.to_string()))?
        };
        Ok(Self { windows, features })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

/// Inference-mode MSE of `model` over `data`.
pub fn dataset_mse<T: Scalar>(model: &SuperLinear<T>, data: &RouterData<T>) -> Result<f64> {
    let n = data.len();
    if n == 0 {
        return Err(Error::EmptyDataset("no windows to evaluate".into()));
    }
    let starts: Vec<usize> = (0..n).step_by(2048).collect();
    let parts = starts
        .iter()
        .map(|&lo| {
            let hi = (lo + 2048).min(n);
            let x = data.windows.inputs().slice_move(ndarray::s![lo..hi, ..]);
            let f = data.features.slice(ndarray::s![lo..hi, ..]);
            let pred = model.predict_from_features(x, f)?;
            let tgt = data.windows.targets().slice_move(ndarray::s![lo..hi, ..]);
            Ok((&pred - &tgt).iter().map(|d| d.as_f64() * d.as_f64()).sum::<f64>())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(parts.iter().sum::<f64>() / (n * model.horizon()) as f64)
}

/// SHA-256 over the parameters of every frozen linear expert.
pub fn frozen_checksum<T: Scalar>(model: &SuperLinear<T>) -> [u8; 32] {
    let mut h = Sha256::new();
    for e in model.bank.linear_experts().filter(|e| e.frozen) {
        for v in e.weight.iter().chain(e.bias.iter()) {
            h.update(v.as_f64().to_le_bytes());
        }
    }
    h.finalize().into()
}

fn apply_update<T: Scalar>(model: &mut SuperLinear<T>, grads: &Gradients<T>, opt: &mut OptimizerState<T>, lr: f64) -> Result<()> {
    let mut params: Vec<&mut [T]> = Vec::new();
    let mut gs: Vec<&[T]> = Vec::new();
    let bank = &mut model.bank;
    let experts = bank.frequency_experts.iter_mut().chain(bank.complementary_experts.iter_mut());
    for (e, g) in experts.zip(&grads.experts) {
        if let Some(g) = g {
            params.push(e.weight.as_slice_mut().expect("contiguous weight"));
            params.push(e.bias.as_slice_mut().expect("contiguous bias"));
            gs.push(g.weight.as_slice().expect("contiguous"));
            gs.push(g.bias.as_slice().expect("contiguous"));
        }
    }
    if let Some(g) = &grads.gate {
        params.push(model.gate.weight.as_slice_mut().expect("contiguous gate weight"));
        params.push(model.gate.bias.as_slice_mut().expect("contiguous gate bias"));
        gs.push(g.weight.as_slice().expect("contiguous"));
        gs.push(g.bias.as_slice().expect("contiguous"));
    }
    opt.step(&mut params, &gs, lr)
}

/// Stage 2: trains the gate jointly with the unfrozen (complementary) experts.
/// Frozen frequency experts are verified to be bit-identical afterwards.
pub fn train_router_stage2<T: Scalar>(
    model: SuperLinear<T>,
    train: &RouterData<T>,
    val: &RouterData<T>,
    cfg: &TrainConfig,
) -> Result<(SuperLinear<T>, TrainHistory)> {
    cfg.validate()?;
    if model.bank.frequency_experts.iter().any(|e| !e.frozen) {
        return Err(Error::config("frequency experts must be frozen before router training"));
    }
    let any_expert = model.bank.linear_experts().any(|e| !e.frozen);
    if cfg.freeze_gate && !any_expert {
        return Err(Error::config("router training has no unfrozen parameters"));
    }
    let mut model = model.with_top_k(cfg.k)?;
    model.gate.noise_std = T::of(cfg.sigma_noise);
    let before = frozen_checksum(&model);
    let units = batch_units(&train.windows, cfg.channel_mode);
    let train_gate = !cfg.freeze_gate;
    let mut opt = OptimizerState::new();
    let history = fit(
        &mut model,
        "router",
        cfg,
        &units,
        |m, rows, lr, rng| {
            let x = train.windows.inputs().select(Axis(0), rows);
            let f = train.features.select(Axis(0), rows);
            let y = train.windows.targets().select(Axis(0), rows);
            let trace = m.forward_traced(x.view(), f.view(), true, rng)?;
            let (loss, grads) = backward_trace(m, &trace, f.view(), y.view(), train_gate)?;
            apply_update(m, &grads, &mut opt, lr)?;
            Ok(loss.as_f64())
        },
        |m| dataset_mse(m, val),
    )?;
    if frozen_checksum(&model) != before {
        return Err(Error::Integrity {
            offset: 0,
            message: "frozen expert parameters changed during router training".into(),
        });
    }
    Ok((model, history))
}

/// One row of a top-k selection sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSweepEntry {
    pub k: usize,
    pub val_loss: f64,
    pub best_epoch: usize,
}

/// Runs stage 2 once per candidate `k` from the same initial model and keeps
/// the one with the lowest validation MSE (ties favor the smaller `k`).
pub fn select_k<T: Scalar>(
    init: &SuperLinear<T>,
    train: &RouterData<T>,
    val: &RouterData<T>,
    cfg: &TrainConfig,
) -> Result<(SuperLinear<T>, TrainHistory, Vec<KSweepEntry>)> {
    let mut ks: Vec<usize> = if cfg.k_candidates.is_empty() {
        vec![cfg.k]
    } else {
        cfg.k_candidates.iter().copied().filter(|&k| k <= init.bank.len()).collect()
    };
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() {
        return Err(Error::config(format!("no candidate k fits a bank of {} experts", init.bank.len())));
    }
    let mut best: Option<(SuperLinear<T>, TrainHistory)> = None;
    let mut sweep = Vec::new();
    for k in ks {
        let c = TrainConfig { k, ..cfg.clone() };
        let (m, h) = train_router_stage2(init.clone(), train, val, &c)?;
        sweep.push(KSweepEntry {
            k,
            val_loss: h.best_val_loss,
            best_epoch: h.best_epoch,
        });
        if best.as_ref().is_none_or(|(_, b)| h.best_val_loss < b.best_val_loss) {
            best = Some((m, h));
        }
    }
    let (m, h) = best.expect("at least one candidate");
    Ok((m, h, sweep))
}

fn uniform_matrix<T: Scalar>(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Array2<T> {
    let dist = Uniform::new_inclusive(-scale, scale).expect("finite scale");
    Array2::from_shape_simple_fn((rows, cols), || T::of(dist.sample(rng)))
}

/// `n` complementary experts with weights uniform in `±1/sqrt(L)` and zero bias.
pub fn complementary_init<T: Scalar>(n: usize, lookback: usize, horizon: usize, seed: u64) -> Vec<LinearExpert<T>> {
    let mut rng = substream(seed, Stream::Init);
    let scale = 1.0 / (lookback as f64).sqrt();
    (0..n)
        .map(|_| LinearExpert::complementary(uniform_matrix(lookback, horizon, scale, &mut rng), Array1::zeros(horizon)))
        .collect()
}

/// Gate with weights and bias uniform in `±1/sqrt(M)`.
pub fn gate_init<T: Scalar>(bins: usize, experts: usize, top_k: usize, noise_std: f64, seed: u64) -> Result<GatingNetwork<T>> {
    let mut rng = substream(seed, Stream::GateInit);
    let scale = 1.0 / (bins as f64).sqrt();
    let w = uniform_matrix(bins, experts, scale, &mut rng);
    let b = uniform_matrix(1, experts, scale, &mut rng).into_shape_with_order(experts).map_err(|e| Error::Data(e.to_string()))?;
    GatingNetwork::new(w, b, T::of(noise_std), top_k)
}

/// Shape of a full model: which experts it holds and the gate resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub frequencies: Vec<Frequency>,
    pub complementary: usize,
    pub naive: bool,
    pub mean: bool,
    /// Gate weight rows `M`.
    pub bins: usize,
    pub lookback: usize,
    pub horizon: usize,
}

impl Architecture {
    /// Zero-shot preset: the full frequency table with 12 complementary experts.
    pub fn zs() -> Self {
        Self {
            frequencies: default_frequency_table(),
            complementary: 12,
            naive: true,
            mean: true,
            bins: 2500,
            lookback: 512,
            horizon: 96,
        }
    }

    /// Full-shot preset: as `zs` but with 10 complementary experts.
    pub fn fs() -> Self {
        Self {
            complementary: 10,
            ..Self::zs()
        }
    }

    pub fn num_experts(&self) -> usize {
        self.frequencies.len() + self.complementary + usize::from(self.naive) + usize::from(self.mean)
    }

    /// `(N_f + N_c)(L H + H) + (M + 1) N`.
    pub fn param_count(&self) -> usize {
        let linear = self.frequencies.len() + self.complementary;
        linear * (self.lookback * self.horizon + self.horizon) + (self.bins + 1) * self.num_experts()
    }

    /// Assembles a model around trained frequency experts, adding freshly
    /// initialized complementary experts and gate.
    pub fn assemble<T: Scalar>(
        &self,
        frequency_experts: Vec<LinearExpert<T>>,
        top_k: usize,
        noise_std: f64,
        seed: u64,
    ) -> Result<SuperLinear<T>> {
        let comp = complementary_init(self.complementary, self.lookback, self.horizon, seed);
        let bank = ExpertBank::new(frequency_experts, comp, self.naive, self.mean, self.lookback, self.horizon)?;
        let n = bank.len();
        let gate = gate_init(self.bins, n, top_k.min(n), noise_std, seed)?;
        SuperLinear::new(bank, gate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn mse_examples() {
        let a = array![[1.0f64, 2.0], [3.0, 4.0]];
        let (l, g) = mse_loss(a.view(), a.view()).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
        let (l, g) = mse_loss(array![[2.0f64]].view(), array![[1.0]].view()).unwrap();
        assert_eq!((l, g[[0, 0]]), (1.0, 2.0));
        assert!(mse_loss(a.view(), array![[1.0]].view()).is_err());
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(lr_schedule(2, 0.1), 0.1);
        assert_eq!(lr_schedule(3, 0.1), 0.1);
        assert!((lr_schedule(4, 0.1) - 0.09).abs() < 1e-15);
        assert_eq!(LrDecay::Constant.rate(10, 0.05), 0.05);
    }

    #[test]
    fn adam_basics() {
        let mut p = vec![1.0f64, -2.0];
        let mut opt = OptimizerState::new();
        opt.step(&mut [&mut p], &[&[0.0, 0.0]], 0.1).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        let mut opt = OptimizerState::new();
        opt.step(&mut [&mut p], &[&[3.0, -0.5]], 0.1).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-6 && (p[1] + 1.9).abs() < 1e-6);
        let before = p.clone();
        assert!(matches!(opt.step(&mut [&mut p], &[&[f64::NAN, 0.0]], 0.1), Err(Error::Training(_))));
        assert_eq!(p, before);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut x = vec![2.0f64];
        let mut opt = OptimizerState::new();
        for _ in 0..100 {
            let g = 2.0 * (x[0] - 1.5);
            opt.step(&mut [&mut x], &[&[g]], 0.02).unwrap();
        }
        assert!((x[0] - 1.5).abs() < 1e-3, "{}", x[0]);
    }

    #[test]
    fn presets() {
        let z = TrainConfig::zs(Stage::ExpertPretrain);
        assert_eq!((z.learning_rate, z.batch_size, z.epochs, z.patience), (0.1, 512, 30, 5));
        let f = TrainConfig::fs(Stage::RouterTrain);
        assert_eq!((f.learning_rate, f.batch_size), (0.05, 32));
        assert_eq!(f.k_candidates, vec![6, 8, 10, 12, 20]);
        let bad = TrainConfig { patience: 40, ..z };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn complementary_init_is_seeded() {
        let a: Vec<LinearExpert<f64>> = complementary_init(3, 16, 4, 7);
        let b: Vec<LinearExpert<f64>> = complementary_init(3, 16, 4, 7);
        assert_eq!(a, b);
        assert!(complementary_init::<f64>(0, 16, 4, 7).is_empty());
        assert!(a[0].weight.iter().all(|v| v.abs() <= 0.25));
        assert!(a[0].bias.iter().all(|v| *v == 0.0));
    }
}

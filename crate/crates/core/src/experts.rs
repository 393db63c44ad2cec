//! The expert bank: RevIN-wrapped linear experts plus the naive and mean heuristics.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frequency::Frequency;
use crate::scalar::{count, Scalar};

/// Standard-deviation stabilizer of the instance normalization.
pub const REVIN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpertKind {
    Frequency,
    Complementary,
    Naive,
    Mean,
}

/// Per-row statistics removed by [`revin_normalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct RevinState<T> {
    pub mean: Array1<T>,
    /// `sqrt(var + eps^2)`, so always at least `REVIN_EPS`.
    pub std: Array1<T>,
}

/// Standardizes each row to zero mean and (almost) unit standard deviation.
pub fn revin_normalize<T: Scalar>(x: ArrayView2<'_, T>) -> (Array2<T>, RevinState<T>) {
    let width = count::<T>(x.ncols().max(1));
    let eps2 = T::of(REVIN_EPS * REVIN_EPS);
    let mut out = x.to_owned();
    let mut mean = Array1::zeros(x.nrows());
    let mut std = Array1::zeros(x.nrows());
    for (i, mut row) in out.outer_iter_mut().enumerate() {
        let m = row.sum() / width;
        let var = row.iter().map(|v| (*v - m) * (*v - m)).sum::<T>() / width;
        let s = (var + eps2).sqrt();
        row.mapv_inplace(|v| (v - m) / s);
        mean[i] = m;
        std[i] = s;
    }
    (out, RevinState { mean, std })
}

/// Re-applies the per-row statistics to an output batch.
pub fn revin_denormalize<T: Scalar>(y: ArrayView2<'_, T>, state: &RevinState<T>) -> Array2<T> {
    let mut out = y.to_owned();
    for (i, mut row) in out.outer_iter_mut().enumerate() {
        let (m, s) = (state.mean[i], state.std[i]);
        row.mapv_inplace(|v| v * s + m);
    }
    out
}

/// Repeats each row's last value `horizon` times.
pub fn naive_forward<T: Scalar>(x: ArrayView2<'_, T>, horizon: usize) -> Array2<T> {
    let last = x.ncols().saturating_sub(1);
    Array2::from_shape_fn((x.nrows(), horizon), |(r, _)| x[[r, last]])
}

/// Repeats each row's mean `horizon` times.
pub fn mean_forward<T: Scalar>(x: ArrayView2<'_, T>, horizon: usize) -> Array2<T> {
    let means = x.sum_axis(Axis(1)) / count::<T>(x.ncols().max(1));
    Array2::from_shape_fn((x.nrows(), horizon), |(r, _)| means[r])
}

/// A linear map applied in instance-normalized space.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearExpert<T> {
    /// `lookback x horizon`.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
    pub kind: ExpertKind,
    /// Present exactly for frequency experts.
    pub frequency: Option<Frequency>,
    pub frozen: bool,
}

impl<T: Scalar> LinearExpert<T> {
    /// Zero-initialized frequency expert; it predicts the input mean until trained.
    pub fn frequency(freq: Frequency, lookback: usize, horizon: usize) -> Self {
        Self {
            weight: Array2::zeros((lookback, horizon)),
            bias: Array1::zeros(horizon),
            kind: ExpertKind::Frequency,
            frequency: Some(freq),
            frozen: false,
        }
    }

    pub fn complementary(weight: Array2<T>, bias: Array1<T>) -> Self {
        Self {
            weight,
            bias,
            kind: ExpertKind::Complementary,
            frequency: None,
            frozen: false,
        }
    }

    pub fn lookback(&self) -> usize {
        self.weight.nrows()
    }

    pub fn horizon(&self) -> usize {
        self.weight.ncols()
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// `Z W + b` on already-normalized rows.
    pub fn forward_normalized(&self, z: ArrayView2<'_, T>) -> Array2<T> {
        z.dot(&self.weight) + &self.bias
    }

    /// `RevIN^-1(RevIN(x) W + b)`.
    pub fn forward(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        if x.ncols() != self.lookback() {
            return Err(Error::dim("expert forward", self.lookback(), x.ncols()));
        }
        let (z, state) = revin_normalize(x);
        Ok(revin_denormalize(self.forward_normalized(z.view()).view(), &state))
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// Default 37-entry frequency table, ordered by descending period.
///
/// Periods follow natural sampling-rate cycles (weekly, daily, yearly, hourly in
/// minutes, ...) from half a day of 4-second samples down to the Nyquist period 2.
pub fn default_frequency_table() -> Vec<Frequency> {
    const PERIODS: [u64; 37] = [
        21600, 10080, 4320, 2880, 1440, 1008, 720, 512, 420, 365, 336, 288, 240, 192, 168, 144, 120, 96, 72, 60,
        48, 36, 30, 27, 24, 20, 16, 14, 12, 10, 8, 7, 6, 5, 4, 3, 2,
    ];
    PERIODS
        .iter()
        .map(|&p| Frequency::per_period(p).expect("table periods are at least 2"))
        .collect()
}

/// Borrowed view of one expert in bank order.
#[derive(Debug, Clone, Copy)]
pub enum ExpertRef<'a, T> {
    Linear(&'a LinearExpert<T>),
    Naive,
    Mean,
}

/// Ordered collection of experts whose indices the gate scores refer to.
///
/// Order: frequency experts by descending period, complementary experts,
/// then the naive and mean experts when enabled.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertBank<T> {
    pub frequency_experts: Vec<LinearExpert<T>>,
    pub complementary_experts: Vec<LinearExpert<T>>,
    pub include_naive: bool,
    pub include_mean: bool,
    pub lookback: usize,
    pub horizon: usize,
}

impl<T: Scalar> ExpertBank<T> {
    pub fn new(
        mut frequency_experts: Vec<LinearExpert<T>>,
        complementary_experts: Vec<LinearExpert<T>>,
        include_naive: bool,
        include_mean: bool,
        lookback: usize,
        horizon: usize,
    ) -> Result<Self> {
        for e in frequency_experts.iter().chain(&complementary_experts) {
            if e.lookback() != lookback || e.horizon() != horizon || e.bias.len() != horizon {
                return Err(Error::dim(
                    "expert bank",
                    format!("{lookback}x{horizon}"),
                    format!("{}x{} (bias {})", e.lookback(), e.horizon(), e.bias.len()),
                ));
            }
            if !e.is_finite() {
                return Err(Error::Data("expert parameters must be finite".into()));
            }
        }
        if frequency_experts
            .iter()
            .any(|e| e.kind != ExpertKind::Frequency || e.frequency.is_none())
        {
            return Err(Error::config("frequency experts need kind=frequency and an assigned frequency"));
        }
        if complementary_experts
            .iter()
            .any(|e| e.kind != ExpertKind::Complementary || e.frequency.is_some())
        {
            return Err(Error::config("complementary experts carry no frequency"));
        }
        frequency_experts.sort_by_key(|e| e.frequency);
        let bank = Self {
            frequency_experts,
            complementary_experts,
            include_naive,
            include_mean,
            lookback,
            horizon,
        };
        if bank.is_empty() {
            return Err(Error::config("expert bank is empty"));
        }
        Ok(bank)
    }

    pub fn len(&self) -> usize {
        self.num_linear() + self.include_naive as usize + self.include_mean as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_linear(&self) -> usize {
        self.frequency_experts.len() + self.complementary_experts.len()
    }

    pub fn expert(&self, i: usize) -> ExpertRef<'_, T> {
        let nf = self.frequency_experts.len();
        let nl = self.num_linear();
        if i < nf {
            ExpertRef::Linear(&self.frequency_experts[i])
        } else if i < nl {
            ExpertRef::Linear(&self.complementary_experts[i - nf])
        } else if i == nl && self.include_naive {
            ExpertRef::Naive
        } else if i < self.len() {
            ExpertRef::Mean
        } else {
            panic!("expert index {i} out of range for a bank of {}", self.len())
        }
    }

    pub fn linear(&self, i: usize) -> Option<&LinearExpert<T>> {
        match self.expert(i) {
            ExpertRef::Linear(e) => Some(e),
            _ => None,
        }
    }

    pub fn linear_mut(&mut self, i: usize) -> Option<&mut LinearExpert<T>> {
        let nf = self.frequency_experts.len();
        if i < nf {
            Some(&mut self.frequency_experts[i])
        } else if i < self.num_linear() {
            Some(&mut self.complementary_experts[i - nf])
        } else {
            None
        }
    }

    pub fn linear_experts(&self) -> impl Iterator<Item = &LinearExpert<T>> {
        self.frequency_experts.iter().chain(&self.complementary_experts)
    }

    /// Output of expert `i` on a batch of lookback rows.
    pub fn forward(&self, i: usize, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        if x.ncols() != self.lookback {
            return Err(Error::dim("expert bank forward", self.lookback, x.ncols()));
        }
        Ok(match self.expert(i) {
            ExpertRef::Linear(e) => e.forward(x)?,
            ExpertRef::Naive => naive_forward(x, self.horizon),
            ExpertRef::Mean => mean_forward(x, self.horizon),
        })
    }

    /// Human-readable expert names in bank order.
    pub fn names(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .frequency_experts
            .iter()
            .map(|e| format!("freq_{}", e.frequency.expect("frequency expert")))
            .collect();
        out.extend((0..self.complementary_experts.len()).map(|i| format!("comp_{i}")));
        if self.include_naive {
            out.push("naive".into());
        }
        if self.include_mean {
            out.push("mean".into());
        }
        out
    }

    pub fn frequencies(&self) -> Vec<Option<Frequency>> {
        (0..self.len())
            .map(|i| self.linear(i).and_then(|e| e.frequency))
            .collect()
    }

    pub fn kinds(&self) -> Vec<ExpertKind> {
        (0..self.len())
            .map(|i| match self.expert(i) {
                ExpertRef::Linear(e) => e.kind,
                ExpertRef::Naive => ExpertKind::Naive,
                ExpertRef::Mean => ExpertKind::Mean,
            })
            .collect()
    }

    pub fn freeze_frequency_experts(&mut self) {
        self.frequency_experts.iter_mut().for_each(|e| e.frozen = true);
    }

    pub fn num_params(&self) -> usize {
        self.linear_experts().map(LinearExpert::num_params).sum()
    }
}

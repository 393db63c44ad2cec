//! Spectral gating: scores from the normalized periodogram, optional training
//! noise, top-k sparsification and a softmax restricted to the survivors.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spectral::SpectralTransform;

/// Linear map from the normalized periodogram to one score per expert.
#[derive(Debug, Clone)]
pub struct GatingNetwork<T: Scalar> {
    /// `M x N`: periodogram bins by experts.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
    /// Standard deviation of the Gaussian noise added to scores while training.
    pub noise_std: T,
    pub top_k: usize,
    spectral: SpectralTransform<T>,
}

impl<T: Scalar> PartialEq for GatingNetwork<T> {
    fn eq(&self, other: &Self) -> bool {
        self.weight == other.weight
            && self.bias == other.bias
            && self.noise_std == other.noise_std
            && self.top_k == other.top_k
    }
}

/// Result of gating one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct GateDecision<T> {
    /// Scores before masking (including training noise, if any).
    pub scores: Array2<T>,
    /// Mixture weights; exactly `k` nonzero entries per row.
    pub weights: Array2<T>,
    /// Surviving expert indices per row, best score first.
    pub active: Vec<Vec<usize>>,
}

impl<T: Scalar> GateDecision<T> {
    pub fn k(&self) -> usize {
        self.active.first().map_or(0, Vec::len)
    }
}

impl<T: Scalar> GatingNetwork<T> {
    pub fn new(weight: Array2<T>, bias: Array1<T>, noise_std: T, top_k: usize) -> Result<Self> {
        let n = weight.ncols();
        if bias.len() != n {
            return Err(Error::dim("gating bias", n, bias.len()));
        }
        if top_k == 0 || top_k > n {
            return Err(Error::config(format!("top-k must lie in [1, {n}], got {top_k}")));
        }
        if !(noise_std >= T::zero()) {
            return Err(Error::config("gate noise std must be nonnegative"));
        }
        if weight.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data("gate parameters must be finite".into()));
        }
        let spectral = SpectralTransform::new(weight.nrows())?;
        Ok(Self {
            weight,
            bias,
            noise_std,
            top_k,
            spectral,
        })
    }

    /// All-zero gate: every expert scores equally until trained.
    pub fn zeros(bins: usize, experts: usize, top_k: usize, noise_std: T) -> Result<Self> {
        Self::new(Array2::zeros((bins, experts)), Array1::zeros(experts), noise_std, top_k)
    }

    pub fn num_bins(&self) -> usize {
        self.weight.nrows()
    }

    pub fn num_experts(&self) -> usize {
        self.weight.ncols()
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn spectral(&self) -> &SpectralTransform<T> {
        &self.spectral
    }

    /// L1-normalized periodogram of every input row, shape `(B, M)`.
    pub fn features(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        self.spectral.features(x)
    }

    /// `P W_g + b_g` for precomputed features.
    pub fn scores_from_features(&self, features: ArrayView2<'_, T>) -> Result<Array2<T>> {
        if features.ncols() != self.num_bins() {
            return Err(Error::config(format!(
                "periodogram has {} bins but the gate expects {}",
                features.ncols(),
                self.num_bins()
            )));
        }
        Ok(features.dot(&self.weight) + &self.bias)
    }

    pub fn gate_scores(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        self.scores_from_features(self.features(x)?.view())
    }

    /// Gate decision from features. Noise is drawn only when `training` is set.
    pub fn decide_from_features<R: Rng + ?Sized>(
        &self,
        features: ArrayView2<'_, T>,
        training: bool,
        rng: &mut R,
    ) -> Result<GateDecision<T>> {
        let mut scores = self.scores_from_features(features)?;
        if training && self.noise_std > T::zero() {
            for v in scores.iter_mut() {
                let r: f64 = rng.sample(StandardNormal);
                *v = *v + self.noise_std * T::of(r);
            }
        }
        sparse_softmax(scores, self.top_k)
    }

    pub fn gate_weights<R: Rng + ?Sized>(&self, x: ArrayView2<'_, T>, training: bool, rng: &mut R) -> Result<GateDecision<T>> {
        self.decide_from_features(self.features(x)?.view(), training, rng)
    }

    /// Deterministic inference-mode decision.
    pub fn infer(&self, x: ArrayView2<'_, T>) -> Result<GateDecision<T>> {
        sparse_softmax(self.gate_scores(x)?, self.top_k)
    }
}

/// Indices of the `k` largest entries, best first; ties go to the lower index.
pub fn top_k_indices<T: Scalar>(row: ArrayView1<'_, T>, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::config(format!("top-k must lie in [1, {n}], got {k}")));
    }
    Ok(())
}

/// Keeps the `k` largest scores of each row and sets the rest to `-inf`.
pub fn top_k_mask<T: Scalar>(scores: ArrayView2<'_, T>, k: usize) -> Result<Array2<T>> {
    check_k(k, scores.ncols())?;
    let mut out = Array2::from_elem(scores.raw_dim(), T::neg_infinity());
    for (src, mut dst) in scores.outer_iter().zip(out.outer_iter_mut()) {
        for i in top_k_indices(src, k) {
            dst[i] = src[i];
        }
    }
    Ok(out)
}

/// Top-k masking followed by a softmax over the surviving entries only, so that
/// masked experts get weight exactly zero.
pub fn sparse_softmax<T: Scalar>(scores: Array2<T>, k: usize) -> Result<GateDecision<T>> {
    check_k(k, scores.ncols())?;
    let mut weights = Array2::zeros(scores.raw_dim());
    let mut active = Vec::with_capacity(scores.nrows());
    for (src, mut dst) in scores.outer_iter().zip(weights.outer_iter_mut()) {
        let keep = top_k_indices(src, k);
        let max = src[keep[0]];
        let mut total = T::zero();
        for &i in &keep {
            let e = (src[i] - max).exp();
            dst[i] = e;
            total = total + e;
        }
        for &i in &keep {
            dst[i] = dst[i] / total;
        }
        active.push(keep);
    }
    Ok(GateDecision { scores, weights, active })
}

/// Recomputes the decision for a different `k` from the same raw scores.
pub fn rebalance_k<T: Scalar>(decision: &GateDecision<T>, new_k: usize) -> Result<GateDecision<T>> {
    sparse_softmax(decision.scores.clone(), new_k)
}

/// Per-expert column sums of the weights: used for usage diagnostics.
pub fn weight_totals<T: Scalar>(decision: &GateDecision<T>) -> Array1<T> {
    decision.weights.sum_axis(Axis(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mask_examples() {
        let m = top_k_mask(array![[3.0f64, 1.0, 2.0]].view(), 2).unwrap();
        assert_eq!(m[[0, 0]], 3.0);
        assert_eq!(m[[0, 1]], f64::NEG_INFINITY);
        assert_eq!(m[[0, 2]], 2.0);
        let m = top_k_mask(array![[1.0f64, 1.0, 0.0]].view(), 1).unwrap();
        assert_eq!(m[[0, 0]], 1.0);
        assert_eq!(m[[0, 1]], f64::NEG_INFINITY);
        let s = array![[0.5f64, -1.0, 2.0]];
        assert_eq!(top_k_mask(s.view(), 3).unwrap(), s);
        assert!(matches!(top_k_mask(s.view(), 4), Err(Error::Config(_))));
        assert!(matches!(top_k_mask(s.view(), 0), Err(Error::Config(_))));
    }

    #[test]
    fn equal_survivors_split_evenly() {
        let d = sparse_softmax(array![[2.0f64, 2.0, -1.0]], 2).unwrap();
        assert_eq!(d.weights.row(0).to_vec(), vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn zero_gate_scores_equal_bias() {
        let mut gate = GatingNetwork::<f64>::zeros(16, 3, 1, 0.0).unwrap();
        gate.bias = array![0.1, -0.2, 0.3];
        let x = Array2::from_shape_fn((2, 10), |(r, c)| ((r + 1) * c) as f64);
        let s = gate.gate_scores(x.view()).unwrap();
        assert!(s.outer_iter().all(|r| r == gate.bias));
    }

    #[test]
    fn one_hot_feature_selects_weight_row() {
        let w = Array2::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f64);
        let gate = GatingNetwork::new(w.clone(), array![1.0, 1.0, 1.0], 0.0, 2).unwrap();
        let p = array![[0.0, 0.0, 1.0, 0.0]];
        let s = gate.scores_from_features(p.view()).unwrap();
        assert_eq!(s.row(0), &(&w.row(2) + 1.0));
        assert!(gate.scores_from_features(array![[1.0, 0.0]].view()).is_err());
    }

    #[test]
    fn inference_is_deterministic_and_noise_only_in_training() {
        let w = Array2::from_shape_fn((32, 5), |(i, j)| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let gate = GatingNetwork::new(w, Array1::zeros(5), 0.1, 2).unwrap();
        let x = Array2::from_shape_fn((3, 20), |(r, c)| ((r + 2) as f64 * c as f64).sin());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = gate.gate_weights(x.view(), false, &mut rng).unwrap();
        let b = gate.infer(x.view()).unwrap();
        assert_eq!(a, b);
        let c = gate.gate_weights(x.view(), true, &mut rng).unwrap();
        assert_ne!(a.scores, c.scores);
    }

    #[test]
    fn rebalance_limits() {
        let d = sparse_softmax(array![[0.3f64, 2.0, 1.0, -0.5]], 2).unwrap();
        assert_eq!(rebalance_k(&d, 2).unwrap(), d);
        let one = rebalance_k(&d, 1).unwrap();
        assert_eq!(one.weights.row(0).to_vec(), vec![0.0, 1.0, 0.0, 0.0]);
        assert!(rebalance_k(&d, 5).is_err());
    }
}

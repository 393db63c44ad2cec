//! The full forecaster: an expert bank mixed by a sparse spectral gate.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::experts::{mean_forward, naive_forward, revin_normalize, ExpertBank, ExpertRef, RevinState};
use crate::gating::{sparse_softmax, GateDecision, GatingNetwork};
use crate::scalar::Scalar;

/// Sparse mixture of linear experts.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperLinear<T: Scalar> {
    pub bank: ExpertBank<T>,
    pub gate: GatingNetwork<T>,
}

/// Output of one expert on the rows that selected it.
#[derive(Debug, Clone)]
pub(crate) struct ExpertPass<T> {
    pub rows: Vec<usize>,
    pub output: Array2<T>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub(crate) struct ForwardTrace<T: Scalar> {
    pub output: Array2<T>,
    pub decision: GateDecision<T>,
    pub normalized: Array2<T>,
    pub revin: RevinState<T>,
    pub passes: Vec<ExpertPass<T>>,
}

impl<T: Scalar> SuperLinear<T> {
    pub fn new(bank: ExpertBank<T>, gate: GatingNetwork<T>) -> Result<Self> {
        if gate.num_experts() != bank.len() {
            return Err(Error::dim("gate vs bank", bank.len(), gate.num_experts()));
        }
        Ok(Self { bank, gate })
    }

    pub fn lookback(&self) -> usize {
        self.bank.lookback
    }

    pub fn horizon(&self) -> usize {
        self.bank.horizon
    }

    pub fn top_k(&self) -> usize {
        self.gate.top_k
    }

    /// Total number of trainable parameters (linear experts plus gate).
    pub fn num_params(&self) -> usize {
        self.bank.num_params() + self.gate.num_params()
    }

    /// Same parameters with a different inference-time `k`.
    pub fn with_top_k(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.bank.len() {
            return Err(Error::config(format!("top-k must lie in [1, {}], got {k}", self.bank.len())));
        }
        let mut m = self.clone();
        m.gate.top_k = k;
        Ok(m)
    }

    fn check_input(&self, x: ArrayView2<'_, T>) -> Result<()> {
        if x.ncols() != self.lookback() {
            return Err(Error::dim("mixture forward", self.lookback(), x.ncols()));
        }
        Ok(())
    }

    /// Forecast plus the gate decision. Only experts in a row's active set are evaluated.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: ArrayView2<'_, T>,
        training: bool,
        rng: &mut R,
    ) -> Result<(Array2<T>, GateDecision<T>)> {
        self.check_input(x)?;
        let features = self.gate.features(x)?;
        let t = self.forward_traced(x, features.view(), training, rng)?;
        Ok((t.output, t.decision))
    }

    /// Deterministic inference forecast.
    pub fn predict(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        self.check_input(x)?;
        let decision = self.gate.infer(x)?;
        Ok(self.mix(x, &decision)?.0)
    }

    /// Forecast for an explicit decision (e.g. one rebalanced to another `k`).
    pub fn predict_with(&self, x: ArrayView2<'_, T>, decision: &GateDecision<T>) -> Result<Array2<T>> {
        self.check_input(x)?;
        Ok(self.mix(x, decision)?.0)
    }

    /// Inference forecast from precomputed gate features (see [`GatingNetwork::features`]).
    pub fn predict_from_features(&self, x: ArrayView2<'_, T>, features: ArrayView2<'_, T>) -> Result<Array2<T>> {
        self.check_input(x)?;
        if features.nrows() != x.nrows() {
            return Err(Error::dim("gate features", x.nrows(), features.nrows()));
        }
        let decision = sparse_softmax(self.gate.scores_from_features(features)?, self.top_k())?;
        Ok(self.mix(x, &decision)?.0)
    }

    pub(crate) fn forward_traced<R: Rng + ?Sized>(
        &self,
        x: ArrayView2<'_, T>,
        features: ArrayView2<'_, T>,
        training: bool,
        rng: &mut R,
    ) -> Result<ForwardTrace<T>> {
        self.check_input(x)?;
        if features.nrows() != x.nrows() {
            return Err(Error::dim("gate features", x.nrows(), features.nrows()));
        }
        let decision = self.gate.decide_from_features(features, training, rng)?;
        self.trace_with(x, decision)
    }

    pub(crate) fn trace_with(&self, x: ArrayView2<'_, T>, decision: GateDecision<T>) -> Result<ForwardTrace<T>> {
        self.check_input(x)?;
        let (output, normalized, revin, passes) = self.mix(x, &decision)?;
        Ok(ForwardTrace {
            output,
            decision,
            normalized,
            revin,
            passes,
        })
    }

    #[allow(clippy::type_complexity)]
    fn mix(
        &self,
        x: ArrayView2<'_, T>,
        decision: &GateDecision<T>,
    ) -> Result<(Array2<T>, Array2<T>, RevinState<T>, Vec<ExpertPass<T>>)> {
        let n = self.bank.len();
        if decision.weights.dim() != (x.nrows(), n) {
            return Err(Error::dim(
                "gate decision",
                format!("{}x{n}", x.nrows()),
                format!("{:?}", decision.weights.dim()),
            ));
        }
        let (z, revin) = revin_normalize(x);
        let mut rows_of: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (r, act) in decision.active.iter().enumerate() {
            for &i in act {
                rows_of[i].push(r);
            }
        }
        let passes: Vec<ExpertPass<T>> = rows_of
            .into_par_iter()
            .enumerate()
            .map(|(i, rows)| {
                let output = if rows.is_empty() {
                    Array2::zeros((0, self.horizon()))
                } else {
                    self.expert_rows(i, x, &z, &revin, &rows)
                };
                ExpertPass { rows, output }
            })
            .collect();
        let mut y = Array2::zeros((x.nrows(), self.horizon()));
        for (i, pass) in passes.iter().enumerate() {
            for (k, &r) in pass.rows.iter().enumerate() {
                let w = decision.weights[[r, i]];
                y.row_mut(r).scaled_add(w, &pass.output.row(k));
            }
        }
        Ok((y, z, revin, passes))
    }

    fn expert_rows(&self, i: usize, x: ArrayView2<'_, T>, z: &Array2<T>, revin: &RevinState<T>, rows: &[usize]) -> Array2<T> {
        match self.bank.expert(i) {
            ExpertRef::Linear(e) => {
                let mut out = e.forward_normalized(z.select(Axis(0), rows).view());
                for (k, mut row) in out.outer_iter_mut().enumerate() {
                    let (m, s) = (revin.mean[rows[k]], revin.std[rows[k]]);
                    row.mapv_inplace(|v| v * s + m);
                }
                out
            }
            ExpertRef::Naive => naive_forward(x.select(Axis(0), rows).view(), self.horizon()),
            ExpertRef::Mean => mean_forward(x.select(Axis(0), rows).view(), self.horizon()),
        }
    }

    /// Dense reference mixture evaluating every expert; used to cross-check the
    /// sparse path.
    pub fn dense_mixture(&self, x: ArrayView2<'_, T>, weights: ArrayView2<'_, T>) -> Result<Array2<T>> {
        self.check_input(x)?;
        let mut y = Array2::zeros((x.nrows(), self.horizon()));
        for i in 0..self.bank.len() {
            let f = self.bank.forward(i, x)?;
            for r in 0..x.nrows() {
                y.row_mut(r).scaled_add(weights[[r, i]], &f.row(r));
            }
        }
        Ok(y)
    }

    /// Rebalanced inference decision for `k` experts.
    pub fn decide(&self, x: ArrayView2<'_, T>, k: usize) -> Result<GateDecision<T>> {
        sparse_softmax(self.gate.gate_scores(x)?, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experts::LinearExpert;
    use crate::frequency::Frequency;
    use ndarray::{array, Array1};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> SuperLinear<f64> {
        let (l, h) = (8, 3);
        let mut f = LinearExpert::frequency(Frequency::per_period(4).unwrap(), l, h);
        f.weight = Array2::from_shape_fn((l, h), |(i, j)| ((i + 2 * j) as f64 * 0.37).sin());
        let bank = ExpertBank::new(vec![f], vec![], true, false, l, h).unwrap();
        let gate = GatingNetwork::zeros(8, 2, 2, 0.0).unwrap();
        SuperLinear::new(bank, gate).unwrap()
    }

    #[test]
    fn k1_on_naive_equals_naive() {
        let mut m = toy();
        m.gate.top_k = 1;
        m.gate.bias = array![0.0, 1.0];
        let x = Array2::from_shape_fn((3, 8), |(r, c)| (r * 8 + c) as f64 * 0.1);
        let y = m.predict(x.view()).unwrap();
        assert_eq!(y, naive_forward(x.view(), 3));
    }

    #[test]
    fn convex_combination_matches_dense_sum() {
        let mut m = toy();
        m.gate.bias = array![0.0, 3f64.ln()]; // softmax -> (0.25, 0.75)
        let x = Array2::from_shape_fn((2, 8), |(r, c)| ((r + 1) as f64 * c as f64).cos());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (y, d) = m.forward(x.view(), false, &mut rng).unwrap();
        assert!((d.weights[[0, 0]] - 0.25).abs() < 1e-15);
        let f0 = m.bank.forward(0, x.view()).unwrap();
        let f1 = m.bank.forward(1, x.view()).unwrap();
        let expect = &f0 * 0.25 + &f1 * 0.75;
        assert!(y.iter().zip(expect.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        let dense = m.dense_mixture(x.view(), d.weights.view()).unwrap();
        assert!(y.iter().zip(dense.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn rejects_wrong_width_and_k() {
        let m = toy();
        assert!(m.predict(Array2::zeros((1, 5)).view()).is_err());
        assert!(m.with_top_k(3).is_err());
        let bad = GatingNetwork::<f64>::new(Array2::zeros((8, 3)), Array1::zeros(3), 0.0, 1).unwrap();
        assert!(SuperLinear::new(m.bank.clone(), bad).is_err());
    }
}

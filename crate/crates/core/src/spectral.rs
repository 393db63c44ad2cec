//! Periodogram, L1 normalization, spectral entropy and tail-energy accounting.
//!
//! The periodogram of a window `x` of length `L` is computed on the mean-removed
//! signal zero-padded to `2M` samples:
//! `I_j = |DFT(x - mean(x))_j|^2 / (2M)` for `j = 0..M`, where bin `j` sits at
//! `j / (2M)` cycles per step.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::scalar::{count, Scalar};

/// Stabilizer added to the denominator of energy fractions.
pub const ENERGY_EPS: f64 = 1e-10;

/// One-sided power spectrum of a zero-padded, mean-removed window.
#[derive(Debug, Clone, PartialEq)]
pub struct Periodogram<T> {
    pub bins: Vec<T>,
    /// Transform length, always `2 * bins.len()`.
    pub pad_length: usize,
}

impl<T: Scalar> Periodogram<T> {
    pub fn num_bins(&self) -> usize {
        self.bins.len()
    }

    /// Frequency of bin `j` in cycles per step.
    pub fn bin_frequency(&self, j: usize) -> f64 {
        j as f64 / self.pad_length as f64
    }

    pub fn bin_frequencies(&self) -> Vec<f64> {
        (0..self.bins.len()).map(|j| self.bin_frequency(j)).collect()
    }

    pub fn total(&self) -> T {
        self.bins.iter().copied().sum()
    }

    /// Index of the largest bin (lowest index on ties).
    pub fn peak_bin(&self) -> usize {
        let mut best = 0;
        for (j, v) in self.bins.iter().enumerate() {
            if *v > self.bins[best] {
                best = j;
            }
        }
        best
    }
}

/// Planned FFT for a fixed number of retained bins `M`.
#[derive(Clone)]
pub struct SpectralTransform<T: Scalar> {
    bins: usize,
    fft: Arc<dyn Fft<T>>,
}

impl<T: Scalar> fmt::Debug for SpectralTransform<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralTransform").field("bins", &self.bins).finish()
    }
}

impl<T: Scalar> SpectralTransform<T> {
    pub fn new(bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::config("periodogram needs at least one bin"));
        }
        let fft = FftPlanner::new().plan_fft_forward(2 * bins);
        Ok(Self { bins, fft })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn pad_length(&self) -> usize {
        2 * self.bins
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len < 2 {
            return Err(Error::Domain(format!("periodogram needs at least 2 samples, got {len}")));
        }
        if len > self.pad_length() {
            return Err(Error::config(format!(
                "window of length {len} does not fit the padded transform length {} (M = {})",
                self.pad_length(),
                self.bins
            )));
        }
        Ok(())
    }

    /// Full two-sided power spectrum (all `2M` bins), scaled by `1/(2M)`.
    fn power_into(&self, x: &[T], buf: &mut [Complex<T>], scratch: &mut [Complex<T>]) {
        let mean = x.iter().copied().sum::<T>() / count::<T>(x.len());
        for (b, v) in buf.iter_mut().zip(x) {
            *b = Complex::new(*v - mean, T::zero());
        }
        for b in buf[x.len()..].iter_mut() {
            *b = Complex::new(T::zero(), T::zero());
        }
        self.fft.process_with_scratch(buf, scratch);
    }

    fn buffers(&self) -> (Vec<Complex<T>>, Vec<Complex<T>>) {
        let zero = Complex::new(T::zero(), T::zero());
        (
            vec![zero; self.pad_length()],
            vec![zero; self.fft.get_inplace_scratch_len()],
        )
    }

    pub fn periodogram(&self, x: &[T]) -> Result<Periodogram<T>> {
        self.check_len(x.len())?;
        let (mut buf, mut scratch) = self.buffers();
        self.power_into(x, &mut buf, &mut scratch);
        let scale = count::<T>(self.pad_length());
        Ok(Periodogram {
            bins: buf[..self.bins].iter().map(|c| c.norm_sqr() / scale).collect(),
            pad_length: self.pad_length(),
        })
    }

    /// All `2M` bins of the power spectrum; the one-sided periodogram is its
    /// first half. Sums to the energy of the mean-removed signal.
    pub fn full_spectrum(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_len(x.len())?;
        let (mut buf, mut scratch) = self.buffers();
        self.power_into(x, &mut buf, &mut scratch);
        let scale = count::<T>(self.pad_length());
        Ok(buf.iter().map(|c| c.norm_sqr() / scale).collect())
    }

    /// L1-normalized periodograms of every row of `x`, shape `(rows, M)`.
    pub fn features(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        self.check_len(x.ncols())?;
        let (mut buf, mut scratch) = self.buffers();
        let mut row_buf = vec![T::zero(); x.ncols()];
        let mut out = Array2::zeros((x.nrows(), self.bins));
        let uniform = T::one() / count::<T>(self.bins);
        for (src, mut dst) in x.outer_iter().zip(out.outer_iter_mut()) {
            row_buf.iter_mut().zip(src.iter()).for_each(|(d, s)| *d = *s);
            self.power_into(&row_buf, &mut buf, &mut scratch);
            let mut total = T::zero();
            for (d, c) in dst.iter_mut().zip(&buf[..self.bins]) {
                *d = c.norm_sqr();
                total = total + *d;
            }
            if total > T::zero() {
                dst.mapv_inplace(|v| v / total);
            } else {
                dst.fill(uniform);
            }
        }
        Ok(out)
    }
}

/// Periodogram of `x` with `m` retained bins (transform length `2m`).
pub fn periodogram<T: Scalar>(x: &[T], m: usize) -> Result<Periodogram<T>> {
    SpectralTransform::new(m)?.periodogram(x)
}

/// Divides bins by their sum; an all-zero periodogram maps to the uniform vector.
pub fn normalize_l1<T: Scalar>(p: &Periodogram<T>) -> Periodogram<T> {
    let total = p.total();
    let bins = if total > T::zero() {
        p.bins.iter().map(|v| *v / total).collect()
    } else {
        vec![T::one() / count::<T>(p.bins.len().max(1)); p.bins.len()]
    };
    Periodogram {
        bins,
        pad_length: p.pad_length,
    }
}

/// Shannon entropy `-sum w ln w` (natural log, `0 ln 0 = 0`) of a probability vector.
pub fn spectral_entropy<T: Scalar>(w: &[T]) -> Result<T> {
    if let Some(v) = w.iter().find(|v| !(**v >= T::zero())) {
        return Err(Error::Domain(format!("entropy of a vector with negative entry {v}")));
    }
    let sum: T = w.iter().copied().sum();
    if num_traits::Float::abs(sum - T::one()) > T::of(1e-6) {
        return Err(Error::Domain(format!("entropy input sums to {sum}, not 1")));
    }
    Ok(w.iter()
        .filter(|v| **v > T::zero())
        .map(|v| -*v * v.ln())
        .sum())
}

/// Fraction of normalized energy in bins strictly above `cutoff` cycles/step.
pub fn tail_energy_fraction<T: Scalar>(p: &Periodogram<T>, cutoff: f64) -> T {
    let norm = normalize_l1(p);
    let total: T = norm.bins.iter().copied().sum();
    let lost: T = norm
        .bins
        .iter()
        .enumerate()
        .filter(|(j, _)| norm.bin_frequency(*j) > cutoff)
        .map(|(_, v)| *v)
        .sum();
    lost / (total + T::of(ENERGY_EPS))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_has_no_energy() {
        let p = periodogram(&[3.0f64; 16], 8).unwrap();
        assert!(p.bins.iter().all(|v| v.abs() < 1e-24));
        let n = normalize_l1(&p);
        assert!(n.bins.iter().all(|v| (*v - 0.125).abs() < 1e-15));
    }

    #[test]
    fn shapes_at_default_resolution() {
        let x: Vec<f64> = (0..512).map(|t| (t as f64 * 0.3).sin()).collect();
        let p = periodogram(&x, 2500).unwrap();
        assert_eq!(p.pad_length, 5000);
        assert_eq!(p.num_bins(), 2500);
        assert_eq!(p.bin_frequency(1), 1.0 / 5000.0);
    }

    #[test]
    fn too_few_bins_is_config_error() {
        let x = vec![0.0f64; 20];
        assert!(matches!(periodogram(&x, 8), Err(Error::Config(_))));
        assert!(matches!(periodogram(&[1.0f64], 8), Err(Error::Domain(_))));
    }

    #[test]
    fn normalize_examples() {
        let p = Periodogram {
            bins: vec![2.0f64, 2.0, 0.0, 0.0],
            pad_length: 8,
        };
        assert_eq!(normalize_l1(&p).bins, vec![0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(spectral_entropy(&[0.0f64, 1.0, 0.0]).unwrap(), 0.0);
        assert!((spectral_entropy(&[0.25f64; 4]).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!((spectral_entropy(&[0.5f64, 0.5, 0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!(spectral_entropy(&[1.5f64, -0.5]).is_err());
    }

    #[test]
    fn tail_fraction_of_tones() {
        let low: Vec<f64> = (0..512).map(|t| (2.0 * std::f64::consts::PI * t as f64 / 32.0).sin()).collect();
        let high: Vec<f64> = (0..512).map(|t| (2.0 * std::f64::consts::PI * 0.4 * t as f64).sin()).collect();
        let pl = periodogram(&low, 512).unwrap();
        let ph = periodogram(&high, 512).unwrap();
        assert!(tail_energy_fraction(&pl, 0.25) < 1e-3);
        assert!(tail_energy_fraction(&ph, 0.25) > 0.999);
    }
}

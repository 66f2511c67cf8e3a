//! Exact synthesis of fractional Gaussian noise and fractional Brownian
//! motion, together with the increment covariance and its asymptotics.
//!
//! Sampling goes through circulant embedding of the Toeplitz covariance:
//! the covariance sequence is embedded in a circulant matrix diagonalized by
//! the FFT, so a path of length `len` costs one length-`M` FFT (`M` the
//! padded embedding size) and is exact in law, not approximate.

use std::f64::consts::FRAC_1_SQRT_2;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Relative eigenvalue tolerance for the circulant embedding: eigenvalues in
/// `[-tol, 0)` are clamped to zero, anything below fails the construction.
pub const EMBEDDING_EIGENVALUE_TOL: f64 = 1e-9;

/// Hard budget on the number of increments a single path may hold.
pub const MAX_PATH_LEN: usize = 1 << 22;

/// The model parameters: Hurst index and Hermite order.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HurstParams {
    pub h: f64,
    pub q: u32,
}

impl HurstParams {
    pub fn new(h: f64, q: u32) -> Result<Self> {
        check_hurst(h)?;
        if q < 1 {
            return Err(Error::domain("Hermite order q must be >= 1"));
        }
        Ok(HurstParams { h, q })
    }
}

pub(crate) fn check_hurst(h: f64) -> Result<()> {
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::domain(format!("Hurst index must lie in (0,1), got {h}")));
    }
    Ok(())
}

/// Covariance of unit-lag fractional Gaussian noise increments,
/// rho(r) = (|r+1|^{2H} + |r-1|^{2H} - 2|r|^{2H}) / 2.
pub fn rho(h: f64, r: i64) -> Result<f64> {
    check_hurst(h)?;
    Ok(rho_unchecked(h, r))
}

pub(crate) fn rho_unchecked(h: f64, r: i64) -> f64 {
    let r = r.unsigned_abs() as f64;
    let e = 2.0 * h;
    0.5 * ((r + 1.0).powf(e) + (r - 1.0).abs().powf(e) - 2.0 * r.powf(e))
}

/// Leading tail behaviour H(2H-1)|r|^{2H-2} of `rho`; meaningful for r != 0.
pub fn rho_asymptotic(h: f64, r: i64) -> Result<f64> {
    check_hurst(h)?;
    if r == 0 {
        return Err(Error::domain("rho_asymptotic is undefined at lag 0"));
    }
    let r = r.unsigned_abs() as f64;
    Ok(h * (2.0 * h - 1.0) * r.powf(2.0 * h - 2.0))
}

/// Covariance of fractional Brownian motion, (t^{2H} + s^{2H} - |t-s|^{2H}) / 2.
pub fn covariance_fbm(h: f64, s: f64, t: f64) -> Result<f64> {
    check_hurst(h)?;
    if s < 0.0 || t < 0.0 {
        return Err(Error::domain("covariance_fbm requires s, t >= 0"));
    }
    let e = 2.0 * h;
    Ok(0.5 * (t.powf(e) + s.powf(e) - (t - s).abs().powf(e)))
}

/// Memoized unit-lag covariance table for one Hurst index.
///
/// Immutable after construction; lags beyond the table fall back to direct
/// evaluation.
#[derive(Debug, Clone)]
pub struct CovarianceSequence {
    h: f64,
    table: Vec<f64>,
}

impl CovarianceSequence {
    pub fn new(h: f64, max_lag: usize) -> Result<Self> {
        check_hurst(h)?;
        let table = (0..=max_lag as i64).map(|r| rho_unchecked(h, r)).collect();
        Ok(CovarianceSequence { h, table })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn get(&self, r: i64) -> f64 {
        let a = r.unsigned_abs() as usize;
        match self.table.get(a) {
            Some(&v) => v,
            None => rho_unchecked(self.h, r),
        }
    }

    /// Table of rho(0..=max_lag).
    pub fn table(&self) -> &[f64] {
        &self.table
    }

    /// Element-wise powers rho(d)^p for d = 0..len.
    pub(crate) fn pow_table(&self, p: u32, len: usize) -> Vec<f64> {
        (0..len as i64).map(|d| self.get(d).powi(p as i32)).collect()
    }
}

/// One seeded realization of fractional Gaussian noise.
///
/// `y[k]` holds the increments of fractional Brownian motion on the grid
/// with spacing `1/resolution`; for `resolution = 1` these are the
/// unit-variance stationary increments with covariance `rho`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FgnPath {
    pub h: f64,
    /// Total number of increments (n * resolution at sampling time).
    pub n: usize,
    pub y: Vec<f64>,
    pub seed: u64,
    /// Replication stream index the path was drawn on.
    pub stream: u64,
    /// Grid refinement m: the path lives on {k/m}.
    pub resolution: usize,
}

/// Reusable circulant-embedding sampler for one (H, n, m).
///
/// Construction performs the embedding eigenvalue analysis once; `sample`
/// then costs one FFT per path and is safe to call from many threads.
pub struct FgnSampler {
    h: f64,
    len: usize,
    resolution: usize,
    fft_len: usize,
    /// sqrt(lambda_k / M), so synthesis is a single forward FFT.
    sqrt_eigs: Vec<f64>,
    eigs: Vec<f64>,
    scale: f64,
    fft: Arc<dyn Fft<f64>>,
}

impl FgnSampler {
    pub fn new(h: f64, n: usize, m: usize) -> Result<Self> {
        check_hurst(h)?;
        if n < 1 || m < 1 {
            return Err(Error::domain("path length n and resolution m must be >= 1"));
        }
        let len = n
            .checked_mul(m)
            .filter(|&l| l <= MAX_PATH_LEN)
            .ok_or_else(|| {
                Error::capacity(format!("n * m exceeds the path budget of {MAX_PATH_LEN}"))
            })?;
        let fft_len = (2 * len).next_power_of_two();

        // First row of the embedding circulant: rho at the wrap-around lag.
        let mut buf: Vec<Complex64> = (0..fft_len)
            .map(|j| Complex64::new(rho_unchecked(h, j.min(fft_len - j) as i64), 0.0))
            .collect();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(fft_len);
        fft.process(&mut buf);

        let eigs: Vec<f64> = buf.iter().map(|c| c.re).collect();
        let max_eig = eigs.iter().cloned().fold(f64::MIN, f64::max);
        let min_eig = eigs.iter().cloned().fold(f64::MAX, f64::min);
        if min_eig < -EMBEDDING_EIGENVALUE_TOL * max_eig {
            return Err(Error::Embedding { min_eigenvalue: min_eig });
        }
        let eigs: Vec<f64> = eigs.into_iter().map(|l| l.max(0.0)).collect();
        let sqrt_eigs = eigs.iter().map(|&l| (l / fft_len as f64).sqrt()).collect();

        Ok(FgnSampler {
            h,
            len,
            resolution: m,
            fft_len,
            sqrt_eigs,
            eigs,
            scale: (m as f64).powf(-h),
            fft,
        })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Number of increments per sampled path.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Draw the path for (seed, stream); identical arguments reproduce the
    /// path bit for bit regardless of thread count.
    pub fn sample(&self, seed: u64, stream: u64) -> FgnPath {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let m = self.fft_len;
        let half = m / 2;
        let mut buf = vec![Complex64::new(0.0, 0.0); m];

        let g0: f64 = rng.sample(StandardNormal);
        let g1: f64 = rng.sample(StandardNormal);
        buf[0] = Complex64::new(self.sqrt_eigs[0] * g0, 0.0);
        buf[half] = Complex64::new(self.sqrt_eigs[half] * g1, 0.0);
        // Hermitian-symmetric spectrum makes the synthesized vector real.
        for k in 1..half {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            let re = a * FRAC_1_SQRT_2 * self.sqrt_eigs[k];
            let im = b * FRAC_1_SQRT_2 * self.sqrt_eigs[k];
            buf[k] = Complex64::new(re, im);
            buf[m - k] = Complex64::new(re, -im);
        }

        self.fft.process(&mut buf);
        let y: Vec<f64> = buf[..self.len].iter().map(|c| c.re * self.scale).collect();
        FgnPath {
            h: self.h,
            n: self.len,
            y,
            seed,
            stream,
            resolution: self.resolution,
        }
    }

    /// Unit-spacing covariance the embedding actually realizes, by inverse
    /// transform of the clamped eigenvalues. Deterministic; used to check
    /// exactness of the synthesis without Monte Carlo.
    pub fn implied_covariance(&self) -> Vec<f64> {
        let mut buf: Vec<Complex64> =
            self.eigs.iter().map(|&l| Complex64::new(l, 0.0)).collect();
        let mut planner = FftPlanner::new();
        let ifft = planner.plan_fft_inverse(self.fft_len);
        ifft.process(&mut buf);
        buf[..self.len]
            .iter()
            .map(|c| c.re / self.fft_len as f64)
            .collect()
    }
}

/// Sample one fGn path by circulant embedding (stream 0).
pub fn sample_fgn(h: f64, n: usize, m: usize, seed: u64) -> Result<FgnPath> {
    Ok(FgnSampler::new(h, n, m)?.sample(seed, 0))
}

/// Prefix sums B_1..B_n of the increments.
pub fn fbm_from_fgn(path: &FgnPath) -> Vec<f64> {
    let mut acc = 0.0;
    path.y
        .iter()
        .map(|&dy| {
            acc += dy;
            acc
        })
        .collect()
}

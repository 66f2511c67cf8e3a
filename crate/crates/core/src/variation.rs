//! Hermite power variations, exact finite-n normalizers, the normalized
//! statistics G_n for the Gaussian-limit regimes, and the dyadic Z-series
//! for the non-Gaussian regime.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fgn::{check_hurst, rho_unchecked, FgnPath, HurstParams};
use crate::hermite::hermite_eval;

/// Which limit theorem governs (q, H).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    /// q = 1: G_n = B_n / n^H is exactly standard normal.
    Linear,
    /// q >= 2, H < 1 - 1/(2q): CLT with sqrt(n) normalization.
    SubcriticalClt,
    /// q >= 2, H = 1 - 1/(2q): CLT with sqrt(n log n) normalization.
    CriticalClt,
    /// q >= 2, H > 1 - 1/(2q): non-Gaussian (Hermite) limit.
    HermiteRegime,
}

/// Tolerance for recognizing the critical boundary H = 1 - 1/(2q) from a
/// floating-point Hurst index.
pub const BOUNDARY_TOL: f64 = 1e-12;

/// Classify (q, H) into its regime.
pub fn classify(q: u32, h: f64) -> Result<Regime> {
    check_hurst(h)?;
    if q < 1 {
        return Err(Error::domain("Hermite order q must be >= 1"));
    }
    if q == 1 {
        return Ok(Regime::Linear);
    }
    let boundary = 1.0 - 1.0 / (2.0 * q as f64);
    if (h - boundary).abs() <= BOUNDARY_TOL {
        Ok(Regime::CriticalClt)
    } else if h < boundary {
        Ok(Regime::SubcriticalClt)
    } else {
        Ok(Regime::HermiteRegime)
    }
}

/// Normalized variation statistics along one path.
///
/// `values[i]` is the statistic at horizon `ks[i]`; `ks` is contiguous for
/// the G-series and dyadic for the Z-series. `sigmas` carries the per-horizon
/// normalizer (sigma_k for G, the scaling prefactor for Z).
#[derive(Debug, Clone, Serialize)]
pub struct VariationSeries {
    pub params: HurstParams,
    pub regime: Regime,
    pub ks: Vec<u64>,
    pub values: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub source_seed: u64,
}

impl VariationSeries {
    /// Largest horizon available.
    pub fn horizon(&self) -> u64 {
        *self.ks.last().unwrap_or(&0)
    }
}

/// Running prefix sums V_1..V_N of H_q over the increments.
pub fn hermite_variation_prefixes(q: u32, path: &FgnPath) -> Vec<f64> {
    let mut acc = 0.0;
    path.y
        .iter()
        .map(|&y| {
            acc += hermite_eval(q, y);
            acc
        })
        .collect()
}

/// E[V_k^2] = q! sum_{|r|<k} (k - |r|) rho(r)^q for k = 1..=n, in O(n).
///
/// Index 0 is unused (zero) so that `out[k]` is the value at horizon k.
pub fn variance_prefix(q: u32, h: f64, n: usize) -> Result<Vec<f64>> {
    check_hurst(h)?;
    if q < 1 || n < 1 {
        return Err(Error::domain("variance_prefix requires q >= 1, n >= 1"));
    }
    let fact: f64 = (1..=q as u64).map(|v| v as f64).product();
    let rho_q: Vec<f64> = (0..n as i64)
        .map(|r| rho_unchecked(h, r).powi(q as i32))
        .collect();
    let mut out = vec![0.0; n + 1];
    let mut s1 = 0.0; // sum of rho^q over 1..k-1
    let mut s2 = 0.0; // sum of r rho^q over 1..k-1
    for k in 1..=n {
        if k >= 2 {
            let r = (k - 1) as f64;
            s1 += rho_q[k - 1];
            s2 += r * rho_q[k - 1];
        }
        out[k] = fact * (k as f64 + 2.0 * (k as f64 * s1 - s2));
    }
    Ok(out)
}

fn normalizer_divisor(regime: Regime, k: usize) -> f64 {
    match regime {
        Regime::CriticalClt => k as f64 * (k as f64).ln(),
        _ => k as f64,
    }
}

/// Exact finite-n normalizer sigma_n, the positive constant making
/// E[G_n^2] = 1 under the regime's normalization.
pub fn sigma_n_exact(q: u32, h: f64, n: usize) -> Result<f64> {
    let regime = classify(q, h)?;
    if n < 1 {
        return Err(Error::domain("n must be >= 1"));
    }
    if regime == Regime::CriticalClt && n < 2 {
        return Err(Error::domain(
            "critical-regime normalizer is undefined at n = 1 (log 1 = 0)",
        ));
    }
    let ev2 = variance_prefix(q, h, n)?[n];
    Ok((ev2 / normalizer_divisor(regime, n)).sqrt())
}

/// Per-term cutoff for the subcritical limit sum.
const SIGMA_LIMIT_TERM_TOL: f64 = 1e-12;
const SIGMA_LIMIT_MAX_TERMS: u64 = 1 << 26;

/// Limit of sigma_n^2 as n -> infinity.
///
/// Subcritical: q! sum_{r in Z} rho(r)^q, summed until the term drops below
/// 1e-12 (the tail is controlled by rho(r)^q ~ c r^{(2H-2)q}).
/// Critical: the closed form 2 q! (1 - 1/(2q))^q (1 - 1/q)^q.
pub fn sigma_limit(q: u32, h: f64) -> Result<f64> {
    let regime = classify(q, h)?;
    let fact: f64 = (1..=q as u64).map(|v| v as f64).product();
    match regime {
        Regime::SubcriticalClt => {
            let mut sum = 1.0;
            let mut r = 1u64;
            loop {
                let term = rho_unchecked(h, r as i64).powi(q as i32);
                sum += 2.0 * term;
                if term.abs() < SIGMA_LIMIT_TERM_TOL || r >= SIGMA_LIMIT_MAX_TERMS {
                    break;
                }
                r += 1;
            }
            Ok(fact * sum)
        }
        Regime::CriticalClt => {
            let a = 1.0 - 1.0 / (2.0 * q as f64);
            let b = 1.0 - 1.0 / q as f64;
            Ok(2.0 * fact * a.powi(q as i32) * b.powi(q as i32))
        }
        Regime::Linear => Err(Error::domain("sigma_limit requires q >= 2")),
        Regime::HermiteRegime => Err(Error::domain(
            "sigma_limit diverges for H > 1 - 1/(2q); use z_limit_second_moment",
        )),
    }
}

/// Normalized statistics G_k along one unit-spacing path, k = 1..N
/// (k = 2..N in the critical regime).
pub fn normalized_series(q: u32, h: f64, path: &FgnPath) -> Result<VariationSeries> {
    let regime = classify(q, h)?;
    if regime == Regime::HermiteRegime {
        return Err(Error::domain(
            "H > 1 - 1/(2q) has a non-Gaussian limit; use z_series",
        ));
    }
    if path.resolution != 1 {
        return Err(Error::domain("normalized_series requires a unit-spacing path"));
    }
    let n = path.y.len();
    if n < 1 {
        return Err(Error::domain("empty path"));
    }
    let ev2 = variance_prefix(q, h, n)?;
    let prefixes = hermite_variation_prefixes(q, path);
    let k_start = if regime == Regime::CriticalClt { 2 } else { 1 };
    if n < k_start {
        return Err(Error::domain("critical-regime series needs n >= 2"));
    }
    let mut ks = Vec::with_capacity(n + 1 - k_start);
    let mut values = Vec::with_capacity(n + 1 - k_start);
    let mut sigmas = Vec::with_capacity(n + 1 - k_start);
    for k in k_start..=n {
        ks.push(k as u64);
        values.push(prefixes[k - 1] / ev2[k].sqrt());
        sigmas.push((ev2[k] / normalizer_divisor(regime, k)).sqrt());
    }
    Ok(VariationSeries {
        params: HurstParams { h, q },
        regime,
        ks,
        values,
        sigmas,
        source_seed: path.seed,
    })
}

/// The dyadic statistics Z_n = n^{q(1-H)-1} sum_k H_q(n^H (B_{(k+1)/n} - B_{k/n}))
/// for every dyadic n dividing the fine resolution, all coarsened from the
/// same fine path so the whole series lives on one realization.
pub fn z_series(q: u32, h: f64, fine_path: &FgnPath) -> Result<VariationSeries> {
    let regime = classify(q, h)?;
    if regime != Regime::HermiteRegime {
        return Err(Error::domain(
            "z_series requires q >= 2 and H > 1 - 1/(2q)",
        ));
    }
    let n_max = fine_path.y.len();
    if fine_path.resolution != n_max {
        return Err(Error::domain(
            "fine path must cover [0,1]: resolution equal to its length",
        ));
    }
    if !n_max.is_power_of_two() {
        return Err(Error::domain("fine resolution must be a power of two"));
    }
    let levels = n_max.trailing_zeros();
    let mut ks = Vec::with_capacity(levels as usize + 1);
    let mut values = Vec::with_capacity(levels as usize + 1);
    let mut sigmas = Vec::with_capacity(levels as usize + 1);
    let exponent = q as f64 * (1.0 - h) - 1.0;
    for j in 0..=levels {
        let n = 1usize << j;
        let block = n_max / n;
        let nf = n as f64;
        let scale = nf.powf(h);
        let sum: f64 = fine_path
            .y
            .chunks(block)
            .map(|c| hermite_eval(q, scale * c.iter().sum::<f64>()))
            .sum();
        ks.push(n as u64);
        values.push(nf.powf(exponent) * sum);
        sigmas.push(nf.powf(exponent));
    }
    Ok(VariationSeries {
        params: HurstParams { h, q },
        regime,
        ks,
        values,
        sigmas,
        source_seed: fine_path.seed,
    })
}

/// Limit of E[Z_n^2]: q! H^q (2H-1)^q times the closed form
/// 2/((a+1)(a+2)) of the double integral of |u-v|^a over the unit square,
/// a = (2H-2)q.
pub fn z_limit_second_moment(q: u32, h: f64) -> Result<f64> {
    let regime = classify(q, h)?;
    if regime != Regime::HermiteRegime {
        return Err(Error::domain(
            "the limiting second moment is finite only for H > 1 - 1/(2q)",
        ));
    }
    let a = (2.0 * h - 2.0) * q as f64;
    let fact: f64 = (1..=q as u64).map(|v| v as f64).product();
    Ok(fact * (h * (2.0 * h - 1.0)).powi(q as i32) * 2.0 / ((a + 1.0) * (a + 2.0)))
}

/// Exact finite-n second moment E[Z_n^2] = n^{2(q(1-H)-1)} E[V_n^2].
pub fn z_second_moment_exact(q: u32, h: f64, n: usize) -> Result<f64> {
    if classify(q, h)? != Regime::HermiteRegime {
        return Err(Error::domain("z_second_moment_exact requires the Hermite regime"));
    }
    let ev2 = variance_prefix(q, h, n)?[n];
    let nf = n as f64;
    Ok(nf.powf(2.0 * (q as f64 * (1.0 - h) - 1.0)) * ev2)
}

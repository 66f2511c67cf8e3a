//! The almost-sure CLT experiment layer: log-weighted empirical measures and
//! their Kolmogorov distance to the normal law, the characteristic-function
//! summability statistic, the pathwise Malliavin norm, the Stein-type bound,
//! and the non-Gaussian-regime contrast experiment.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fgn::{CovarianceSequence, FgnSampler};
use crate::hermite::hermite_eval;
use crate::parallel::{mean_stderr, replicate_map, sample_variance};
use crate::variation::{classify, variance_prefix, Regime, VariationSeries};

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// How the weighted empirical measure is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NormalizerMode {
    /// 1 / log n, as in the limit theorems.
    LogN,
    /// 1 / sum of weights; the measure integrates to one exactly.
    Harmonic,
}

/// The weighted empirical measure sum_k (1/k) delta_{G_k} over one series
/// prefix, with its normalizer.
#[derive(Debug, Clone, Serialize)]
pub struct LogAverageMeasure {
    /// (value, weight) pairs; weights are 1/k.
    pub atoms: Vec<(f64, f64)>,
    pub horizon: u64,
    pub mode: NormalizerMode,
    normalizer: f64,
}

impl LogAverageMeasure {
    pub fn new(atoms: Vec<(f64, f64)>, horizon: u64, mode: NormalizerMode) -> Result<Self> {
        if horizon < 2 {
            return Err(Error::domain("log averages need a horizon n >= 2"));
        }
        if atoms.iter().any(|&(_, w)| w <= 0.0) {
            return Err(Error::domain("weights must be positive"));
        }
        let normalizer = match mode {
            NormalizerMode::LogN => (horizon as f64).ln(),
            NormalizerMode::Harmonic => atoms.iter().map(|&(_, w)| w).sum(),
        };
        Ok(LogAverageMeasure { atoms, horizon, mode, normalizer })
    }

    /// Atoms (G_k, 1/k) for k up to n from a contiguous series.
    pub fn from_series(series: &VariationSeries, n: u64, mode: NormalizerMode) -> Result<Self> {
        if series.regime == Regime::HermiteRegime {
            return Err(Error::domain(
                "the dyadic Z-series is handled by hermite_regime_experiment",
            ));
        }
        if n > series.horizon() {
            return Err(Error::domain("horizon exceeds the series length"));
        }
        let atoms = series
            .ks
            .iter()
            .zip(&series.values)
            .take_while(|(&k, _)| k <= n)
            .map(|(&k, &v)| (v, 1.0 / k as f64))
            .collect();
        LogAverageMeasure::new(atoms, n, mode)
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|&(_, w)| w).sum::<f64>() / self.normalizer
    }

    /// Integrate a bounded function against the measure.
    pub fn eval<F: Fn(f64) -> f64>(&self, phi: F) -> f64 {
        self.atoms.iter().map(|&(v, w)| w * phi(v)).sum::<f64>() / self.normalizer
    }

    /// Kolmogorov distance sup_x |F(x) - Phi(x)| to the standard normal,
    /// evaluated exactly at the atoms (both one-sided limits) and at the
    /// right tail.
    pub fn cdf_distance_to_normal(&self) -> f64 {
        let mut sorted: Vec<(f64, f64)> = self.atoms.clone();
        sorted.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut cum = 0.0;
        let mut sup: f64 = 0.0;
        for &(v, w) in &sorted {
            let phi = normal_cdf(v);
            sup = sup.max((cum / self.normalizer - phi).abs());
            cum += w;
            sup = sup.max((cum / self.normalizer - phi).abs());
        }
        sup.max((cum / self.normalizer - 1.0).abs())
    }
}

/// (1/nu_n) sum_{k <= n} (1/k) phi(G_k) with nu the chosen normalizer.
pub fn log_average_eval<F: Fn(f64) -> f64>(
    series: &VariationSeries,
    phi: F,
    n: u64,
) -> Result<f64> {
    Ok(LogAverageMeasure::from_series(series, n, NormalizerMode::LogN)?.eval(phi))
}

/// Kolmogorov distance of the log-averaged empirical measure at horizon n.
pub fn log_average_cdf_distance(series: &VariationSeries, n: u64) -> Result<f64> {
    Ok(LogAverageMeasure::from_series(series, n, NormalizerMode::LogN)?.cdf_distance_to_normal())
}

fn k_start_for(regime: Regime) -> usize {
    if regime == Regime::CriticalClt {
        2
    } else {
        1
    }
}

/// G_k for k = k_start..=n along one unit-spacing increment vector.
fn g_series(q: u32, ev2: &[f64], y: &[f64], k_start: usize) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(y.len() + 1 - k_start);
    for (i, &yi) in y.iter().enumerate() {
        acc += hermite_eval(q, yi);
        let k = i + 1;
        if k >= k_start {
            out.push(acc / ev2[k].sqrt());
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Characteristic-function statistic.
// ---------------------------------------------------------------------------

/// Monte Carlo estimate of E|Delta_n(t)|^2 where
/// Delta_n(t) = (1/log n) sum_k (1/k)(e^{itG_k} - e^{-t^2/2}).
pub fn il_delta_sq_mc(
    q: u32,
    h: f64,
    n: usize,
    t: f64,
    reps: u64,
    seed: u64,
) -> Result<(f64, f64)> {
    let regime = classify(q, h)?;
    if regime == Regime::HermiteRegime {
        return Err(Error::domain("the statistic targets the Gaussian-limit regimes"));
    }
    if n < 2 {
        return Err(Error::domain("need n >= 2"));
    }
    if reps < 100 {
        return Err(Error::domain("need at least 100 replications"));
    }
    let k_start = k_start_for(regime);
    let sampler = FgnSampler::new(h, n, 1)?;
    let ev2 = variance_prefix(q, h, n)?;
    let g_t = (-t * t / 2.0).exp();
    let log_n = (n as f64).ln();
    let vals = replicate_map(reps, |stream| {
        let path = sampler.sample(seed, stream);
        let gs = g_series(q, &ev2, &path.y, k_start);
        let mut re = 0.0;
        let mut im = 0.0;
        for (i, &g) in gs.iter().enumerate() {
            let k = (k_start + i) as f64;
            let (s, c) = (t * g).sin_cos();
            re += (c - g_t) / k;
            im += s / k;
        }
        (re * re + im * im) / (log_n * log_n)
    });
    Ok(mean_stderr(&vals))
}

/// Exact E|Delta_n(t)|^2 for the linear case q = 1, where every term is a
/// Gaussian characteristic function:
/// (1/log^2 n) sum_{k,l} (e^{-t^2}/(kl)) (e^{E[G_k G_l] t^2} - 1).
pub fn il_delta_sq_exact_q1(h: f64, n: usize, t: f64) -> Result<f64> {
    crate::fgn::check_hurst(h)?;
    if n < 2 {
        return Err(Error::domain("need n >= 2"));
    }
    let e = 2.0 * h;
    let pow: Vec<f64> = (0..=n).map(|k| (k as f64).powf(e)).collect();
    let t2 = t * t;
    let damp = (-t2).exp();
    let mut s = 0.0;
    for k in 1..=n {
        for l in 1..=n {
            let cov = 0.5 * (pow[k] + pow[l] - pow[k.abs_diff(l)]);
            let corr = cov / (pow[k] * pow[l]).sqrt();
            s += damp * ((corr * t2).exp() - 1.0) / (k as f64 * l as f64);
        }
    }
    Ok(s / (n as f64).ln().powi(2))
}

/// One grid cell of the characteristic-function report.
#[derive(Debug, Clone, Serialize)]
pub struct IlCell {
    pub n: u64,
    pub t: f64,
    pub estimate: f64,
    pub stderr: f64,
    /// Exact value when available (q = 1).
    pub exact: Option<f64>,
}

/// Estimates of E|Delta_n(t)|^2 on a dyadic horizon grid and fixed t-grid,
/// with the partial sums of sum E|Delta_n(t)|^2 / (n log n).
#[derive(Debug, Clone, Serialize)]
pub struct IlReport {
    pub q: u32,
    pub h: f64,
    pub reps: u64,
    pub seed: u64,
    pub t_grid: Vec<f64>,
    pub ns: Vec<u64>,
    pub cells: Vec<IlCell>,
    /// partial_sums[ti][ni]: cumulative sum over the dyadic grid.
    pub partial_sums: Vec<Vec<f64>>,
}

/// Default t grid within |t| <= 4; the reported sup over t is the grid max.
pub const DEFAULT_T_GRID: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

/// Evaluate the statistic on all dyadic horizons up to n_max for every t,
/// sharing one path set across the whole grid.
pub fn il_report(
    q: u32,
    h: f64,
    n_max: usize,
    t_grid: &[f64],
    reps: u64,
    seed: u64,
) -> Result<IlReport> {
    let regime = classify(q, h)?;
    if regime == Regime::HermiteRegime {
        return Err(Error::domain("the statistic targets the Gaussian-limit regimes"));
    }
    if n_max < 4 {
        return Err(Error::domain("need n_max >= 4"));
    }
    if reps < 100 {
        return Err(Error::domain("need at least 100 replications"));
    }
    let k_start = k_start_for(regime);
    let ns: Vec<usize> = (2..)
        .map(|j| 1usize << j)
        .take_while(|&v| v <= n_max)
        .collect();
    let sampler = FgnSampler::new(h, n_max, 1)?;
    let ev2 = variance_prefix(q, h, n_max)?;
    let nt = t_grid.len();
    let nn = ns.len();

    // per replication: |Delta_n(t)|^2 for every (t, n) cell
    let per_rep: Vec<Vec<f64>> = replicate_map(reps, |stream| {
        let path = sampler.sample(seed, stream);
        let gs = g_series(q, &ev2, &path.y, k_start);
        let mut out = vec![0.0; nt * nn];
        for (ti, &t) in t_grid.iter().enumerate() {
            let g_t = (-t * t / 2.0).exp();
            let mut re = 0.0;
            let mut im = 0.0;
            let mut ni = 0;
            for (i, &g) in gs.iter().enumerate() {
                let k = k_start + i;
                let (s, c) = (t * g).sin_cos();
                re += (c - g_t) / k as f64;
                im += s / k as f64;
                while ni < nn && k == ns[ni] {
                    let log_n = (ns[ni] as f64).ln();
                    out[ti * nn + ni] = (re * re + im * im) / (log_n * log_n);
                    ni += 1;
                }
            }
            debug_assert_eq!(ni, nn);
        }
        out
    });

    let mut cells = Vec::with_capacity(nt * nn);
    let mut partial_sums = vec![vec![0.0; nn]; nt];
    for (ti, &t) in t_grid.iter().enumerate() {
        let mut acc = 0.0;
        for (ni, &n) in ns.iter().enumerate() {
            let samples: Vec<f64> = per_rep.iter().map(|row| row[ti * nn + ni]).collect();
            let (est, se) = mean_stderr(&samples);
            let exact = if q == 1 {
                Some(il_delta_sq_exact_q1(h, n, t)?)
            } else {
                None
            };
            cells.push(IlCell { n: n as u64, t, estimate: est, stderr: se, exact });
            acc += est / (n as f64 * (n as f64).ln());
            partial_sums[ti][ni] = acc;
        }
    }
    Ok(IlReport {
        q,
        h,
        reps,
        seed,
        t_grid: t_grid.to_vec(),
        ns: ns.iter().map(|&n| n as u64).collect(),
        cells,
        partial_sums,
    })
}

// ---------------------------------------------------------------------------
// Pathwise Malliavin norm and the Stein bound.
// ---------------------------------------------------------------------------

/// (1/q) ||D G_n||^2 along one path prefix: the derivative of the chaos
/// representation collapses to
/// q c_n^2 sum_{k,l} H_{q-1}(Y_k) H_{q-1}(Y_l) rho(k - l),
/// with c_n^2 = 1 / E[V_n^2].
pub fn malliavin_norm_pathwise(q: u32, h: f64, ys: &[f64]) -> Result<f64> {
    let regime = classify(q, h)?;
    if q < 2 {
        return Err(Error::domain("the Malliavin norm statistic needs q >= 2"));
    }
    if regime == Regime::HermiteRegime {
        return Err(Error::domain("defined for the CLT regimes"));
    }
    let n = ys.len();
    if n < 1 {
        return Err(Error::domain("empty path"));
    }
    if regime == Regime::CriticalClt && n < 2 {
        return Err(Error::domain("critical regime needs n >= 2"));
    }
    let ev2 = variance_prefix(q, h, n)?[n];
    let gram = CovarianceSequence::new(h, n)?;
    let hs: Vec<f64> = ys.iter().map(|&y| hermite_eval(q - 1, y)).collect();
    let mut s = hs.iter().map(|v| v * v).sum::<f64>(); // lag 0
    for r in 1..n {
        let rho_r = gram.get(r as i64);
        if rho_r != 0.0 {
            let auto: f64 = hs[..n - r].iter().zip(&hs[r..]).map(|(a, b)| a * b).sum();
            s += 2.0 * rho_r * auto;
        }
    }
    Ok(q as f64 * s / ev2)
}

/// One Lipschitz-1 test function's gap |E h(G_n) - E h(N)|.
#[derive(Debug, Clone, Serialize)]
pub struct LipschitzGap {
    pub name: String,
    pub gap: f64,
    pub stderr: f64,
    /// E h(N), analytically forced.
    pub reference: f64,
}

/// Monte Carlo check of the Stein-type bound: every Lipschitz-1 gap must sit
/// below sqrt(E[(1 - (1/q)||D G_n||^2)^2]), estimated both pathwise and from
/// the kernel identity.
#[derive(Debug, Clone, Serialize)]
pub struct SteinBoundReport {
    pub q: u32,
    pub h: f64,
    pub n: u64,
    pub reps: u64,
    pub seed: u64,
    pub gaps: Vec<LipschitzGap>,
    /// sqrt of the Monte Carlo mean square of 1 - (1/q)||D G_n||^2.
    pub mc_rhs: f64,
    pub mc_rhs_stderr: f64,
    /// Monte Carlo mean square itself, with its standard error.
    pub mc_mean_square: f64,
    pub mc_mean_square_stderr: f64,
    /// The same quantity from the chaos-expansion identity.
    pub kernel_rhs: f64,
}

/// A named Lipschitz-1 test function with its Gaussian expectation E h(N).
pub type TestFunction = (&'static str, fn(f64) -> f64, f64);

/// The three canonical Lipschitz-1 test functions and E h(N).
pub fn lipschitz_test_functions() -> Vec<TestFunction> {
    vec![
        ("abs", |x: f64| x.abs(), (2.0 / std::f64::consts::PI).sqrt()),
        ("sin", f64::sin, 0.0),
        ("clamp", |x: f64| x.clamp(-1.0, 1.0), 0.0),
    ]
}

pub fn stein_bound_report(
    q: u32,
    h: f64,
    n: usize,
    reps: u64,
    seed: u64,
) -> Result<SteinBoundReport> {
    let regime = classify(q, h)?;
    if q < 2 || regime == Regime::HermiteRegime {
        return Err(Error::domain("the Stein bound applies to q >= 2 in the CLT regimes"));
    }
    let sampler = FgnSampler::new(h, n, 1)?;
    let ev2 = variance_prefix(q, h, n)?;
    let gram = CovarianceSequence::new(h, n)?;

    // per replication: (G_n, 1 - (1/q)||D G_n||^2)
    let samples: Vec<(f64, f64)> = replicate_map(reps, |stream| {
        let path = sampler.sample(seed, stream);
        let v: f64 = path.y.iter().map(|&y| hermite_eval(q, y)).sum();
        let g = v / ev2[n].sqrt();
        let hs: Vec<f64> = path.y.iter().map(|&y| hermite_eval(q - 1, y)).collect();
        let mut s = hs.iter().map(|v| v * v).sum::<f64>();
        for r in 1..n {
            let rho_r = gram.get(r as i64);
            if rho_r != 0.0 {
                let auto: f64 = hs[..n - r].iter().zip(&hs[r..]).map(|(a, b)| a * b).sum();
                s += 2.0 * rho_r * auto;
            }
        }
        (g, 1.0 - q as f64 * s / ev2[n])
    });

    let t_sq: Vec<f64> = samples.iter().map(|&(_, t)| t * t).collect();
    let (ms, ms_se) = mean_stderr(&t_sq);
    let mc_rhs = ms.max(0.0).sqrt();
    let mc_rhs_stderr = if mc_rhs > 0.0 { ms_se / (2.0 * mc_rhs) } else { f64::NAN };

    let mut gaps = Vec::new();
    for (name, f, reference) in lipschitz_test_functions() {
        let hv: Vec<f64> = samples.iter().map(|&(g, _)| f(g)).collect();
        let (mean, se) = mean_stderr(&hv);
        gaps.push(LipschitzGap {
            name: name.to_string(),
            gap: (mean - reference).abs(),
            stderr: se,
            reference,
        });
    }

    Ok(SteinBoundReport {
        q,
        h,
        n: n as u64,
        reps,
        seed,
        gaps,
        mc_rhs,
        mc_rhs_stderr,
        mc_mean_square: ms,
        mc_mean_square_stderr: ms_se,
        kernel_rhs: crate::kernels::stein_variance_kernel(q, h, n)?.sqrt(),
    })
}

// ---------------------------------------------------------------------------
// ASCLT end-to-end and the non-Gaussian contrast.
// ---------------------------------------------------------------------------

/// Kolmogorov distances of the log-average measure at several horizons,
/// one path per seed.
#[derive(Debug, Clone, Serialize)]
pub struct AscltKsReport {
    pub q: u32,
    pub h: f64,
    pub n_max: u64,
    pub checkpoints: Vec<u64>,
    pub seeds: Vec<u64>,
    /// distances[seed index][checkpoint index]
    pub distances: Vec<Vec<f64>>,
}

pub fn asclt_ks_experiment(
    q: u32,
    h: f64,
    n_max: usize,
    checkpoints: &[u64],
    seeds: &[u64],
) -> Result<AscltKsReport> {
    asclt_ks_experiment_with(q, h, n_max, checkpoints, seeds, NormalizerMode::LogN)
}

pub fn asclt_ks_experiment_with(
    q: u32,
    h: f64,
    n_max: usize,
    checkpoints: &[u64],
    seeds: &[u64],
    mode: NormalizerMode,
) -> Result<AscltKsReport> {
    let regime = classify(q, h)?;
    if regime == Regime::HermiteRegime {
        return Err(Error::domain("use hermite_regime_experiment for H > 1 - 1/(2q)"));
    }
    if checkpoints.iter().any(|&c| c < 2 || c > n_max as u64) {
        return Err(Error::domain("checkpoints must lie in [2, n_max]"));
    }
    let sampler = FgnSampler::new(h, n_max, 1)?;
    let ev2 = variance_prefix(q, h, n_max)?;
    let k_start = k_start_for(regime);
    let rows: Vec<Result<Vec<f64>>> = replicate_map(seeds.len() as u64, |i| {
        let seed = seeds[i as usize];
        let path = sampler.sample(seed, 0);
        let gs = g_series(q, &ev2, &path.y, k_start);
        let series = VariationSeries {
            params: crate::fgn::HurstParams { h, q },
            regime,
            ks: (k_start as u64..=n_max as u64).collect(),
            values: gs,
            sigmas: Vec::new(),
            source_seed: seed,
        };
        checkpoints
            .iter()
            .map(|&c| {
                Ok(LogAverageMeasure::from_series(&series, c, mode)?.cdf_distance_to_normal())
            })
            .collect()
    });
    let distances = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(AscltKsReport {
        q,
        h,
        n_max: n_max as u64,
        checkpoints: checkpoints.to_vec(),
        seeds: seeds.to_vec(),
        distances,
    })
}

/// Per-seed outcome of the non-Gaussian-regime experiment.
#[derive(Debug, Clone, Serialize)]
pub struct HermiteSeedRow {
    pub seed: u64,
    /// Dyadic log-average of phi(Z) at the full horizon.
    pub log_avg_terminal: f64,
    /// The same average four dyadic levels earlier (horizon n_max / 16).
    pub log_avg_earlier: f64,
    /// phi(Z_{n_max}).
    pub phi_terminal: f64,
    pub z_terminal: f64,
    /// Whether the log-average moved toward phi(Z_{n_max}).
    pub converged: bool,
}

/// The contrast experiment: along each path the dyadic log-average of
/// phi(Z_k) must approach phi(Z_{n_max}) (a random limit), so the terminal
/// averages stay dispersed across seeds instead of concentrating.
#[derive(Debug, Clone, Serialize)]
pub struct HermiteRegimeReport {
    pub q: u32,
    pub h: f64,
    pub n_max: u64,
    pub rows: Vec<HermiteSeedRow>,
    pub converged_count: u64,
    /// Sample variance of the terminal log-averages across seeds.
    pub terminal_dispersion: f64,
}

/// Uniform average over dyadic levels: the discretization of the
/// dt/t log-average along a geometric horizon grid.
fn dyadic_log_averages(phis: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    phis.iter()
        .enumerate()
        .map(|(i, &p)| {
            acc += p;
            acc / (i + 1) as f64
        })
        .collect()
}

pub fn hermite_regime_experiment(
    q: u32,
    h: f64,
    n_max: usize,
    seeds: &[u64],
) -> Result<HermiteRegimeReport> {
    if classify(q, h)? != Regime::HermiteRegime {
        return Err(Error::domain("requires q >= 2 and H > 1 - 1/(2q)"));
    }
    if !n_max.is_power_of_two() || n_max < 16 {
        return Err(Error::domain("n_max must be a power of two, at least 16"));
    }
    if seeds.len() < 2 {
        return Err(Error::domain("need at least two seeds"));
    }
    let sampler = FgnSampler::new(h, 1, n_max)?;
    let rows: Vec<Result<HermiteSeedRow>> = replicate_map(seeds.len() as u64, |i| {
        let seed = seeds[i as usize];
        let fine = sampler.sample(seed, 0);
        let z = crate::variation::z_series(q, h, &fine)?;
        let phis: Vec<f64> = z.values.iter().map(|&v| v.atan()).collect();
        let avgs = dyadic_log_averages(&phis);
        let last = avgs.len() - 1;
        let phi_terminal = phis[last];
        let row = HermiteSeedRow {
            seed,
            log_avg_terminal: avgs[last],
            log_avg_earlier: avgs[last - 4],
            phi_terminal,
            z_terminal: z.values[last],
            converged: (avgs[last] - phi_terminal).abs() < (avgs[last - 4] - phi_terminal).abs(),
        };
        Ok(row)
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let terminals: Vec<f64> = rows.iter().map(|r| r.log_avg_terminal).collect();
    Ok(HermiteRegimeReport {
        q,
        h,
        n_max: n_max as u64,
        converged_count: rows.iter().filter(|r| r.converged).count() as u64,
        terminal_dispersion: sample_variance(&terminals),
        rows,
    })
}

/// Across-seed variance of the analogous dyadic-level log-average of
/// phi(G_{2^j}) in a Gaussian-limit regime: the control that must shrink
/// where the non-Gaussian regime stays dispersed.
pub fn clt_control_terminal_dispersion(
    q: u32,
    h: f64,
    n_max: usize,
    seeds: &[u64],
) -> Result<f64> {
    let regime = classify(q, h)?;
    if regime == Regime::HermiteRegime {
        return Err(Error::domain("the control must be a CLT regime"));
    }
    if !n_max.is_power_of_two() || n_max < 16 {
        return Err(Error::domain("n_max must be a power of two, at least 16"));
    }
    if seeds.len() < 2 {
        return Err(Error::domain("need at least two seeds"));
    }
    let sampler = FgnSampler::new(h, n_max, 1)?;
    let ev2 = variance_prefix(q, h, n_max)?;
    let k_start = k_start_for(regime);
    let j_start = if k_start == 1 { 0 } else { 1 };
    let terminals: Vec<f64> = replicate_map(seeds.len() as u64, |i| {
        let path = sampler.sample(seeds[i as usize], 0);
        let gs = g_series(q, &ev2, &path.y, k_start);
        let phis: Vec<f64> = (j_start..=n_max.trailing_zeros())
            .map(|j| gs[(1usize << j) - k_start].atan())
            .collect();
        *dyadic_log_averages(&phis).last().unwrap()
    });
    Ok(sample_variance(&terminals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fgn::HurstParams;
    use approx::assert_relative_eq;

    fn constant_series(c: f64, n: usize) -> VariationSeries {
        VariationSeries {
            params: HurstParams { h: 0.5, q: 1 },
            regime: Regime::Linear,
            ks: (1..=n as u64).collect(),
            values: vec![c; n],
            sigmas: vec![1.0; n],
            source_seed: 0,
        }
    }

    #[test]
    fn normal_cdf_reference_points() {
        assert_relative_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(normal_cdf(1.96), 0.9750021048517795, epsilon = 1e-12);
        assert_relative_eq!(normal_cdf(-1.0), 1.0 - normal_cdf(1.0), epsilon = 1e-15);
    }

    #[test]
    fn log_average_of_constant_series() {
        let s = constant_series(2.0, 1000);
        let phi = |x: f64| x * x + 1.0;
        // harmonic normalizer integrates to phi(c) exactly
        let m = LogAverageMeasure::from_series(&s, 1000, NormalizerMode::Harmonic).unwrap();
        assert_relative_eq!(m.eval(phi), phi(2.0), epsilon = 1e-12);
        assert_relative_eq!(m.eval(|_| 1.0), 1.0, epsilon = 1e-12);
        assert_relative_eq!(m.total_mass(), 1.0, epsilon = 1e-12);
        // log normalizer carries the harmonic-vs-log mass excess
        let v = log_average_eval(&s, phi, 1000).unwrap();
        let mass: f64 = (1..=1000).map(|k| 1.0 / k as f64).sum::<f64>() / 1000f64.ln();
        assert_relative_eq!(v, phi(2.0) * mass, epsilon = 1e-12);
    }

    #[test]
    fn log_average_rejects_tiny_horizon() {
        let s = constant_series(0.0, 10);
        assert!(log_average_eval(&s, |x| x, 1).is_err());
        assert!(log_average_eval(&s, |x| x, 11).is_err());
    }

    #[test]
    fn cdf_distance_of_point_mass_at_zero() {
        let m = LogAverageMeasure::new(vec![(0.0, 1.0)], 10, NormalizerMode::Harmonic).unwrap();
        assert_relative_eq!(m.cdf_distance_to_normal(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn cdf_distance_bounds() {
        let s = constant_series(0.3, 64);
        let d = log_average_cdf_distance(&s, 64).unwrap();
        assert!(d > 0.0 && d <= 1.1, "{d}");
    }

    #[test]
    fn harmonic_measure_is_genuine_cdf() {
        let path = FgnSampler::new(0.6, 128, 1).unwrap().sample(4, 0);
        let series = crate::variation::normalized_series(2, 0.6, &path).unwrap();
        let m = LogAverageMeasure::from_series(&series, 128, NormalizerMode::Harmonic).unwrap();
        assert_relative_eq!(m.total_mass(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn il_delta_at_zero_is_zero() {
        let (est, _) = il_delta_sq_mc(1, 0.75, 64, 0.0, 100, 3).unwrap();
        assert_eq!(est, 0.0);
        assert_eq!(il_delta_sq_exact_q1(0.75, 64, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn il_mc_matches_exact_for_q1() {
        let (est, se) = il_delta_sq_mc(1, 0.75, 128, 1.0, 600, 42).unwrap();
        let exact = il_delta_sq_exact_q1(0.75, 128, 1.0).unwrap();
        assert!((est - exact).abs() <= 3.0 * se, "est {est} exact {exact} se {se}");
    }

    #[test]
    fn il_report_grid_shape() {
        let rep = il_report(2, 0.6, 64, &[0.5, 1.0], 120, 7).unwrap();
        assert_eq!(rep.ns, vec![4, 8, 16, 32, 64]);
        assert_eq!(rep.cells.len(), 10);
        assert!(rep.cells.iter().all(|c| c.estimate >= 0.0));
        assert!(rep.partial_sums[0].windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn malliavin_norm_mean_is_one() {
        // chi-square collapse at H = 1/2: (1/2)||DG||^2 = mean of y^2
        let sampler = FgnSampler::new(0.5, 64, 1).unwrap();
        let vals: Vec<f64> = (0..400)
            .map(|i| {
                let p = sampler.sample(11, i);
                let m = malliavin_norm_pathwise(2, 0.5, &p.y).unwrap();
                let direct = p.y.iter().map(|y| y * y).sum::<f64>() / 64.0;
                assert_relative_eq!(m, direct, epsilon = 1e-10);
                m
            })
            .collect();
        let (mean, se) = mean_stderr(&vals);
        assert!((mean - 1.0).abs() <= 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn stein_report_structure() {
        let rep = stein_bound_report(2, 0.5, 100, 400, 5).unwrap();
        assert_relative_eq!(rep.kernel_rhs, (2.0f64 / 100.0).sqrt(), epsilon = 1e-12);
        assert_eq!(rep.gaps.len(), 3);
        assert_relative_eq!(
            rep.gaps[0].reference,
            (2.0 / std::f64::consts::PI).sqrt(),
            epsilon = 1e-15
        );
        for g in &rep.gaps {
            assert!(g.gap <= rep.mc_rhs + 3.0 * (g.stderr + rep.mc_rhs_stderr), "{}", g.name);
        }
    }

    #[test]
    fn hermite_experiment_deterministic_replay() {
        let seeds: Vec<u64> = (0..4).collect();
        let a = hermite_regime_experiment(2, 0.9, 64, &seeds).unwrap();
        let b = hermite_regime_experiment(2, 0.9, 64, &seeds).unwrap();
        assert_eq!(a.rows.len(), 4);
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert_eq!(x.log_avg_terminal, y.log_avg_terminal);
            assert_eq!(x.z_terminal, y.z_terminal);
        }
        assert!(hermite_regime_experiment(2, 0.6, 64, &seeds).is_err());
        assert!(hermite_regime_experiment(2, 0.9, 48, &seeds).is_err());
    }

    #[test]
    fn control_dispersion_runs() {
        let seeds: Vec<u64> = (0..6).collect();
        let v = clt_control_terminal_dispersion(2, 0.6, 64, &seeds).unwrap();
        assert!(v.is_finite() && v >= 0.0);
        assert!(clt_control_terminal_dispersion(2, 0.9, 64, &seeds).is_err());
    }

    #[test]
    fn asclt_ks_prefix_consistency() {
        let seeds = [1u64, 2, 3];
        let rep = asclt_ks_experiment(1, 0.75, 256, &[64, 256], &seeds).unwrap();
        assert_eq!(rep.distances.len(), 3);
        // distances computed from the same path at two horizons are both valid KS values
        for row in &rep.distances {
            assert!(row.iter().all(|&d| (0.0..=1.2).contains(&d)));
        }
    }
}

//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line
//! (run with `--nocapture` to see the lines for passing tests too).
//!
//! All tolerances are pinned here. Three sub-criteria are known to be
//! unattainable at the stated scales and fail honestly; the analysis lives
//! with the project notes, and the failing tests print the measured values:
//!   - criterion 2: the critical-regime normalizer at n = 10^5 sits ~29%
//!     above its limit (1/log n convergence);
//!   - criterion 6: the critical-pair partial sums move ~2.2-2.5% per octave
//!     at N = 2^12, not < 1%;
//!   - criterion 9: the dispersion contrast reaches ~3-4x, not 10x.

use asclt_core::asclt::{
    asclt_ks_experiment, clt_control_terminal_dispersion, hermite_regime_experiment, il_report,
    stein_bound_report, DEFAULT_T_GRID,
};
use asclt_core::fgn::{rho, FgnSampler};
use asclt_core::kernels::{
    block_kernel, contraction_duality_check, contraction_norm, contraction_norm_reference,
    criterion_partial_sums, kernel_inner_product, rate_exponent_fit, stein_variance_kernel,
    symmetrized_contraction_norm, GeneralKernel,
};
use asclt_core::parallel::replicate_map;
use asclt_core::variation::{sigma_limit, sigma_n_exact, variance_prefix, z_series};

/// Ten published seeds for the end-to-end runs (criterion 8).
const PUBLISHED_SEEDS: [u64; 10] = [
    21000, 21001, 21002, 21003, 21004, 21005, 21006, 21007, 21008, 21009,
];
/// Master seed of the 10^4-replication Z moment run (criterion 9).
const Z_MOMENT_MASTER_SEED: u64 = 202;
/// Seed base of the Hermite-regime per-seed and dispersion runs.
const HERMITE_SEED_BASE: u64 = 1000;
/// Seed of the Malliavin-Stein cross-validation runs (criterion 4).
const STEIN_SEED: u64 = 11;
/// Seed of the characteristic-function runs (criterion 7).
const IL_SEED: u64 = 21;

fn check(name: &str, ok: bool, detail: &str) {
    println!(
        "ACCEPTANCE {name}: {} — {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "{name}: {detail}");
}

#[test]
fn criterion_01_covariance_exactness() {
    let mut worst = 0.0f64;
    for h in [0.3, 0.5, 0.75, 0.9] {
        let sampler = FgnSampler::new(h, 256, 1).unwrap();
        let implied = sampler.implied_covariance();
        for (d, &c) in implied.iter().enumerate() {
            worst = worst.max((c - rho(h, d as i64).unwrap()).abs());
        }
    }
    check(
        "1 covariance-exactness",
        worst < 1e-10,
        &format!("max entrywise deviation {worst:.3e} (tolerance 1e-10)"),
    );
}

#[test]
fn criterion_02_normalizer_brute_force_and_subcritical_limit() {
    // (a) exact normalizer vs the O(n^2) double sum for n <= 512
    let mut worst = 0.0f64;
    for &(q, h) in &[(2u32, 0.3), (2, 0.5), (2, 0.75), (2, 0.9), (3, 0.3), (3, 0.75)] {
        let table: Vec<f64> = (0..512i64)
            .map(|r| rho(h, r).unwrap().powi(q as i32))
            .collect();
        let k_start = if asclt_core::variation::classify(q, h).unwrap()
            == asclt_core::variation::Regime::CriticalClt
        {
            2
        } else {
            1
        };
        for n in k_start..=512usize {
            let mut double = 0.0;
            for i in 0..n {
                for j in 0..n {
                    double += table[i.abs_diff(j)];
                }
            }
            let fact: f64 = (1..=q as u64).map(|v| v as f64).product();
            let d = if k_start == 2 {
                n as f64 * (n as f64).ln()
            } else {
                n as f64
            };
            let brute = fact * double / d;
            let s = sigma_n_exact(q, h, n).unwrap();
            worst = worst.max(((s * s - brute) / brute).abs());
        }
    }
    let ok_a = worst < 1e-12;

    // (b) sigma_n_exact(2, 0.6, 1e5)^2 within 1% of the limit
    let s = sigma_n_exact(2, 0.6, 100_000).unwrap();
    let lim = sigma_limit(2, 0.6).unwrap();
    let rel_b = (s * s / lim - 1.0).abs();
    let ok_b = rel_b < 0.01;

    check(
        "2a normalizer-vs-brute-force",
        ok_a,
        &format!("max relative gap {worst:.3e} (tolerance 1e-12)"),
    );
    check(
        "2b subcritical-limit",
        ok_b,
        &format!("relative deviation {rel_b:.5} (tolerance 0.01)"),
    );
}

#[test]
fn criterion_02_critical_limit_window() {
    // Pinned from the criterion: sigma^2 with the n log n normalization at
    // n = 10^5 within 3% of 9/16. The normalizer converges at 1/log n speed,
    // so the actual deviation is ~29% and no desk-scale horizon can meet the
    // window; the test records the measured value honestly.
    let s = sigma_n_exact(2, 0.75, 100_000).unwrap();
    let rel = (s * s / 0.5625 - 1.0).abs();
    check(
        "2c critical-limit-window",
        rel < 0.03,
        &format!("sigma^2 = {:.6}, target 9/16, relative deviation {rel:.4} (tolerance 0.03)", s * s),
    );
}

#[test]
fn criterion_03_kernel_identity_suite() {
    // (a) duality on 50 randomized dense symmetric kernels
    let mut worst_dual = 0.0f64;
    for seed in 0..50u64 {
        let q = 2 + (seed % 2) as u32; // alternate q = 2, 3
        let n = 4 + (seed % 5) as usize; // n in 4..=8
        let h = if seed % 3 == 0 { 0.4 } else { 0.6 };
        let f = GeneralKernel::random_symmetric(q, n, h, 5000 + seed).unwrap();
        let g = GeneralKernel::random_symmetric(q, n, h, 6000 + seed).unwrap();
        for r in 1..q {
            let (lhs, rhs) = contraction_duality_check(&f, &g, r).unwrap();
            worst_dual = worst_dual.max((lhs - rhs).abs() / lhs.abs().max(1.0));
        }
    }
    let ok_a = worst_dual < 1e-10;

    // (b) q! ||f_n||^2 = 1
    let mut worst_norm = 0.0f64;
    for &(q, h) in &[(2u32, 0.4), (2, 0.6), (2, 0.75), (3, 0.5), (3, 0.7), (4, 0.6)] {
        for n in [1usize, 2, 7, 32, 101] {
            if n == 1 && q == 2 && h == 0.75 {
                continue; // critical kernel needs n >= 2
            }
            let f = block_kernel(q, h, n).unwrap();
            worst_norm = worst_norm.max((f.normalization_check() - 1.0).abs());
        }
    }
    let ok_b = worst_norm < 1e-10;

    // (c) symmetrized <= unsymmetrized over the q <= 3 grid
    let mut ok_c = true;
    let mut worst_ratio = 0.0f64;
    for &q in &[2u32, 3] {
        for &h in &[0.4, 0.6] {
            for n in [2usize, 4, 8, 16] {
                for r in 1..q {
                    let f = block_kernel(q, h, n).unwrap();
                    let sym = symmetrized_contraction_norm(&f, r).unwrap();
                    let plain = contraction_norm(&f, r).unwrap();
                    ok_c &= sym <= plain * (1.0 + 1e-12);
                    worst_ratio = worst_ratio.max(sym / plain);
                }
            }
        }
    }

    // (d) fast paths vs naive oracles for n <= 32
    let mut worst_fast = 0.0f64;
    for &(q, h) in &[(2u32, 0.4), (2, 0.6), (2, 0.75), (3, 0.7)] {
        for n in [2usize, 3, 5, 9, 17, 32] {
            let f = block_kernel(q, h, n).unwrap();
            for r in 1..q {
                let fast = contraction_norm(&f, r).unwrap();
                let slow = contraction_norm_reference(&f, r).unwrap();
                worst_fast = worst_fast.max((fast - slow).abs() / slow.max(1e-30));
            }
            // O(k + l) inner product vs the O(kl) definition
            let g = block_kernel(q, h, 32).unwrap();
            let fast_ip = kernel_inner_product(&f, &g).unwrap();
            let mut slow_ip = 0.0;
            for i in 0..n as i64 {
                for j in 0..32i64 {
                    slow_ip += rho(h, i - j).unwrap().powi(q as i32);
                }
            }
            slow_ip *= f.coeff() * g.coeff();
            worst_fast = worst_fast.max((fast_ip - slow_ip).abs() / slow_ip.abs().max(1e-30));
        }
    }
    let ok_d = worst_fast < 1e-10;

    check(
        "3 kernel-identities",
        ok_a && ok_b && ok_c && ok_d,
        &format!(
            "duality gap {worst_dual:.2e}, normalization gap {worst_norm:.2e}, \
             sym/unsym max ratio {worst_ratio:.6}, fast-vs-naive gap {worst_fast:.2e}"
        ),
    );
}

#[test]
fn criterion_04_malliavin_stein_cross_validation() {
    // (a) Monte Carlo second moment of 1 - (1/q)||DG_n||^2 vs the kernel
    //     identity at (2, 0.6, 64), 10^4 paths, within 3 standard errors.
    let rep = stein_bound_report(2, 0.6, 64, 10_000, STEIN_SEED).unwrap();
    let kernel_sq = stein_variance_kernel(2, 0.6, 64).unwrap();
    let dev = (rep.mc_mean_square - kernel_sq).abs() / rep.mc_mean_square_stderr;
    let ok_a = dev <= 3.0;

    // (b) (2, 0.5, 100): kernel value = 2/100 exactly, and every Lipschitz
    //     gap respects the bound within 3 standard errors.
    let rep2 = stein_bound_report(2, 0.5, 100, 10_000, STEIN_SEED).unwrap();
    let kernel2 = stein_variance_kernel(2, 0.5, 100).unwrap();
    let ok_b = (kernel2 - 0.02).abs() < 1e-12;
    let mut ok_c = true;
    for g in &rep2.gaps {
        ok_c &= g.gap <= rep2.mc_rhs + 3.0 * (g.stderr + rep2.mc_rhs_stderr);
    }

    check(
        "4 malliavin-stein",
        ok_a && ok_b && ok_c,
        &format!(
            "mc {0:.5} vs kernel {kernel_sq:.5} ({dev:.2} se); closed form {1:.5}; \
             gaps {2:?} vs rhs {3:.4}",
            rep.mc_mean_square,
            kernel2,
            rep2.gaps.iter().map(|g| (g.gap * 1e4).round() / 1e4).collect::<Vec<_>>(),
            rep2.mc_rhs
        ),
    );
}

#[test]
fn criterion_05_rate_reproduction() {
    let ns: Vec<usize> = (6..=11).map(|j| 1usize << j).collect();
    let (slope_04, _) = rate_exponent_fit(2, 0.4, 1, &ns).unwrap();
    let ok_a = (-0.55..=-0.45).contains(&slope_04);

    let (slope_06, _) = rate_exponent_fit(2, 0.6, 1, &ns).unwrap();
    let ok_b = slope_06 <= -0.25;

    // critical: ||f_n (x)_1 f_n|| sqrt(log n) varies by < 25% over 2^6..2^12
    let mut scaled = Vec::new();
    for j in 6..=12 {
        let n = 1usize << j;
        let f = block_kernel(2, 0.75, n).unwrap();
        scaled.push(contraction_norm(&f, 1).unwrap() * (n as f64).ln().sqrt());
    }
    let max = scaled.iter().cloned().fold(f64::MIN, f64::max);
    let min = scaled.iter().cloned().fold(f64::MAX, f64::min);
    let variation = (max - min) / min;
    let ok_c = variation < 0.25;

    check(
        "5 rate-reproduction",
        ok_a && ok_b && ok_c,
        &format!(
            "slope(2,0.4) = {slope_04:.4} in [-0.55,-0.45]; slope(2,0.6) = {slope_06:.4} <= -0.25; \
             critical sqrt-log variation {variation:.4} < 0.25"
        ),
    );
}

fn summability_numbers(q: u32, h: f64) -> (f64, f64, f64, f64) {
    let rep = criterion_partial_sums(q, h, 1 << 12, 4).unwrap();
    let cps = &rep.checkpoints;
    let at = |v: &Vec<f64>, n: u64| v[cps.iter().position(|&c| c == n).unwrap()];
    let a1 = &rep.a1_partial_sums[0];
    let a1_rel = at(a1, 1 << 12) / at(a1, 1 << 11) - 1.0;
    let a2_rel = at(&rep.a2_partial_sums, 1 << 12) / at(&rep.a2_partial_sums, 1 << 11) - 1.0;
    let a1_growth = at(&rep.a1_inner_sums[0], 1 << 12) / at(&rep.a1_inner_sums[0], 1 << 11);
    let a2_growth = at(&rep.a2_inner_over_log, 1 << 12) / at(&rep.a2_inner_over_log, 1 << 11);
    (a1_rel, a2_rel, a1_growth, a2_growth)
}

#[test]
fn criterion_06_summability_subcritical() {
    let (a1_rel, a2_rel, a1_growth, a2_growth) = summability_numbers(2, 0.6);
    // "bounded" witness: the increment-times-weight quantities may not grow
    // by more than 10% over the final octave.
    let ok = a1_rel < 0.01 && a2_rel < 0.01 && a1_growth <= 1.10 && a2_growth <= 1.10;
    check(
        "6a summability (2,0.6)",
        ok,
        &format!(
            "last-octave increases A1 {a1_rel:.4}, A2 {a2_rel:.4} (< 0.01); \
             witness growth A1 {a1_growth:.4}, A2 {a2_growth:.4} (<= 1.10)"
        ),
    );
}

#[test]
fn criterion_06_summability_critical() {
    // Pinned from the criterion: < 1% between N = 2^11 and N = 2^12. At the
    // boundary the increments decay like 1/(n log^{3/2} n), which gives
    // ~2.2-2.5% per octave at this scale; recorded honestly as failing.
    let (a1_rel, a2_rel, a1_growth, a2_growth) = summability_numbers(2, 0.75);
    let ok_witness = a1_growth <= 1.10 && a2_growth <= 1.10;
    check(
        "6b summability (2,0.75) boundedness witness",
        ok_witness,
        &format!("witness growth A1 {a1_growth:.4}, A2 {a2_growth:.4} (<= 1.10)"),
    );
    let ok = a1_rel < 0.01 && a2_rel < 0.01;
    check(
        "6b summability (2,0.75) one-percent window",
        ok,
        &format!("last-octave increases A1 {a1_rel:.4}, A2 {a2_rel:.4} (tolerance 0.01)"),
    );
}

#[test]
fn criterion_07_characteristic_function_checks() {
    // (a) q = 1: Monte Carlo vs the exact Gaussian covariance formula,
    //     within 3 standard errors on the whole dyadic/five-point grid.
    let rep = il_report(1, 0.75, 1 << 12, &DEFAULT_T_GRID, 1000, IL_SEED).unwrap();
    let mut worst = 0.0f64;
    for c in &rep.cells {
        let dev = (c.estimate - c.exact.unwrap()).abs() / c.stderr;
        worst = worst.max(dev);
    }
    let ok_a = worst <= 3.0;

    // (b) q = 2, H = 0.6: estimate * log^2 n bounded over 2^6..2^12,
    //     operationalized as grid max/min <= 3 (a non-summable profile
    //     would reach (log 2^12 / log 2^6)^2 = 4).
    let rep2 = il_report(2, 0.6, 1 << 12, &DEFAULT_T_GRID, 1000, IL_SEED).unwrap();
    let mut worst_ratio = 0.0f64;
    for &t in &rep2.t_grid {
        let scaled: Vec<f64> = rep2
            .cells
            .iter()
            .filter(|c| c.t == t && c.n >= 64)
            .map(|c| c.estimate * (c.n as f64).ln().powi(2))
            .collect();
        let max = scaled.iter().cloned().fold(f64::MIN, f64::max);
        let min = scaled.iter().cloned().fold(f64::MAX, f64::min);
        worst_ratio = worst_ratio.max(max / min);
    }
    let ok_b = worst_ratio <= 3.0;

    check(
        "7 characteristic-function",
        ok_a && ok_b,
        &format!("worst q=1 deviation {worst:.2} se (<= 3); q=2 scaled max/min {worst_ratio:.2} (<= 3)"),
    );
}

#[test]
fn criterion_08_asclt_end_to_end() {
    let combos = [(1u32, 0.3), (1, 0.75), (2, 0.6), (2, 0.75), (3, 0.7)];
    let mut all_ok = true;
    let mut detail = String::new();
    for &(q, h) in &combos {
        let rep =
            asclt_ks_experiment(q, h, 1 << 16, &[1 << 10, 1 << 16], &PUBLISHED_SEEDS).unwrap();
        let wins = rep.distances.iter().filter(|row| row[1] < row[0]).count();
        all_ok &= wins >= 8;
        detail.push_str(&format!("(q={q},H={h}): {wins}/10; "));
    }
    check("8 asclt-end-to-end", all_ok, &detail);
}

#[test]
fn criterion_09_hermite_regime() {
    // (a) E[Z^2] at n = 2^12 over 10^4 replications within 2% of 2.16.
    let sampler = FgnSampler::new(0.9, 1, 1 << 12).unwrap();
    let sq = replicate_map(10_000, |i| {
        let p = sampler.sample(Z_MOMENT_MASTER_SEED, i);
        let z = z_series(2, 0.9, &p).unwrap();
        let zt = *z.values.last().unwrap();
        zt * zt
    });
    let mean = sq.iter().sum::<f64>() / sq.len() as f64;
    let rel = (mean / 2.16 - 1.0).abs();
    let ok_a = rel < 0.02;

    // (b) per-seed log-average convergence on >= 8 of 10 seeds.
    let seeds10: Vec<u64> = (0..10).map(|i| HERMITE_SEED_BASE * 1000 + i).collect();
    let rep = hermite_regime_experiment(2, 0.9, 1 << 12, &seeds10).unwrap();
    let ok_b = rep.converged_count >= 8;

    check(
        "9ab hermite-regime",
        ok_a && ok_b,
        &format!(
            "E[Z^2] = {mean:.4} (relative deviation {rel:.4}, tolerance 0.02); \
             converged {}/10 (>= 8)",
            rep.converged_count
        ),
    );
}

#[test]
fn criterion_09_dispersion_contrast() {
    // Pinned from the criterion: terminal dispersion at (2, 0.9) must exceed
    // 10x the (2, 0.6) control. The control's log-average variance decays
    // only like 1/log n, leaving a 3-4x gap at n = 2^12; recorded honestly
    // as failing.
    let seeds50: Vec<u64> = (0..50).map(|i| HERMITE_SEED_BASE * 1000 + i).collect();
    let rep = hermite_regime_experiment(2, 0.9, 1 << 12, &seeds50).unwrap();
    let ctl = clt_control_terminal_dispersion(2, 0.6, 1 << 12, &seeds50).unwrap();
    let ratio = rep.terminal_dispersion / ctl;
    check(
        "9c dispersion-contrast",
        ratio > 10.0,
        &format!(
            "hermite dispersion {:.4}, control {ctl:.4}, ratio {ratio:.2} (required > 10)",
            rep.terminal_dispersion
        ),
    );
}

#[test]
fn criterion_10_determinism_across_thread_counts() {
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let stein = stein_bound_report(2, 0.6, 64, 2000, 3).unwrap();
            let il = il_report(2, 0.6, 256, &[0.5, 1.0], 200, 4).unwrap();
            let ks = asclt_ks_experiment(2, 0.6, 1 << 12, &[1 << 10, 1 << 12], &[1, 2, 3, 4])
                .unwrap();
            let ev2 = variance_prefix(2, 0.6, 128).unwrap();
            let f = block_kernel(2, 0.6, 128).unwrap();
            let norm = contraction_norm(&f, 1).unwrap();
            (
                stein.mc_mean_square,
                stein.gaps.iter().map(|g| g.gap).collect::<Vec<_>>(),
                il.cells.iter().map(|c| c.estimate).collect::<Vec<_>>(),
                ks.distances,
                ev2[128],
                norm,
            )
        })
    };
    let a = run(1);
    let b = run(8);
    check(
        "10 determinism",
        a == b,
        "single-thread and 8-thread runs are numerically identical",
    );
}

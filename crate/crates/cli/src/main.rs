//! `asclt-lab`: reproducible experiment runner over the core toolkit.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use asclt_cli::{
    compare_fixture, load_fixture, load_record, load_seeds, rows_to_csv, ExperimentConfig,
    MetricRow, ResultRecord,
};
use asclt_core::asclt::{
    asclt_ks_experiment_with, clt_control_terminal_dispersion, hermite_regime_experiment,
    il_report, stein_bound_report, NormalizerMode, DEFAULT_T_GRID,
};
use asclt_core::fgn::{fbm_from_fgn, FgnSampler};
use asclt_core::kernels::{block_kernel, contraction_norm, criterion_partial_sums, rate_exponent_fit};
use asclt_core::variation::{classify, normalized_series, z_series, Regime};

#[derive(Parser)]
#[command(name = "asclt-lab", version, about = "Experiments on normalized Hermite variations of fractional Brownian motion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
    Both,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Normalizer {
    Log,
    Harmonic,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Hermite order.
    #[arg(long)]
    q: Option<u32>,
    /// Hurst index.
    #[arg(long = "H")]
    hurst: Option<f64>,
    /// Horizon (path length in increments).
    #[arg(long)]
    n: Option<u64>,
    /// Largest horizon for grid-valued experiments.
    #[arg(long)]
    n_max: Option<u64>,
    /// Monte Carlo replications (or seed count where seeds are derived).
    #[arg(long)]
    reps: Option<u64>,
    /// Master seed; replication k runs on stream k of this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// File with explicit seeds, one per line.
    #[arg(long)]
    seeds: Option<PathBuf>,
    /// Comma-separated t grid for the characteristic-function statistic.
    #[arg(long, value_delimiter = ',')]
    t_grid: Option<Vec<f64>>,
    /// Empirical-measure normalizer.
    #[arg(long)]
    normalizer: Option<Normalizer>,
    /// Worker threads (default: env ASCLT_LAB_THREADS, then 1).
    #[arg(long)]
    threads: Option<usize>,
    /// Output base path; writes <out>.csv / <out>.json per --format.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Which files to write for --out.
    #[arg(long)]
    format: Option<Format>,
    /// JSON config file supplying defaults for any of the above; explicit
    /// flags win on conflict.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample one path and emit increments, the integrated path, and the
    /// normalized variation series.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Grid refinement m; the path lives on {k/m}.
        #[arg(long)]
        resolution: Option<u64>,
    },
    /// Partial sums of the two kernel summability conditions.
    Criteria {
        #[command(flatten)]
        common: CommonArgs,
        /// Contraction-norm subgrid density (points per octave).
        #[arg(long)]
        stride: Option<u32>,
    },
    /// Kolmogorov distances of the log-averaged empirical measure along
    /// seeded paths at dyadic horizons.
    Asclt {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// The Stein-type bound: Lipschitz gaps against the Malliavin rhs.
    Stein {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Characteristic-function statistic on the dyadic/t grid.
    Il {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Non-Gaussian-regime experiment with its concentration control.
    HermiteRegime {
        #[command(flatten)]
        common: CommonArgs,
        /// Hurst index of the Gaussian-limit control run.
        #[arg(long)]
        control_hurst: Option<f64>,
    },
    /// Contraction-norm decay rates against the bound table.
    Rates {
        #[command(flatten)]
        common: CommonArgs,
        /// Contraction order r (default: every r in 1..q).
        #[arg(long)]
        contraction_order: Option<u32>,
    },
    /// Compare a stored record against a fixture with per-metric tolerances.
    Compare {
        /// Record JSON produced by a previous run.
        #[arg(long)]
        record: PathBuf,
        /// Fixture JSON with {"metrics": [{metric, n?, t?, expected, tol}]}.
        #[arg(long)]
        fixture: PathBuf,
    },
}

/// Config-file counterpart of the common flags.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    q: Option<u32>,
    #[serde(rename = "H")]
    hurst: Option<f64>,
    n: Option<u64>,
    n_max: Option<u64>,
    reps: Option<u64>,
    seed: Option<u64>,
    seeds: Option<Vec<u64>>,
    t_grid: Option<Vec<f64>>,
    normalizer: Option<String>,
    threads: Option<usize>,
    resolution: Option<u64>,
    stride: Option<u32>,
    control_hurst: Option<f64>,
    contraction_order: Option<u32>,
}

struct Resolved {
    config: ExperimentConfig,
    explicit_seeds: Option<Vec<u64>>,
    out: Option<PathBuf>,
    format: Format,
}

fn env_threads() -> Option<usize> {
    std::env::var("ASCLT_LAB_THREADS").ok()?.parse().ok()
}

fn resolve(command: &str, common: &CommonArgs, extra: FileExtras) -> Result<Resolved> {
    let file: FileConfig = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => FileConfig::default(),
    };
    let explicit_seeds = match &common.seeds {
        Some(path) => Some(load_seeds(path)?),
        None => file.seeds.clone(),
    };
    let q = common.q.or(file.q).unwrap_or(1);
    let h = match common.hurst.or(file.hurst) {
        Some(h) => h,
        None => bail!("--H is required (directly or via --config)"),
    };
    let normalizer = match common.normalizer {
        Some(Normalizer::Log) => "log".to_string(),
        Some(Normalizer::Harmonic) => "harmonic".to_string(),
        None => file.normalizer.clone().unwrap_or_else(|| "log".to_string()),
    };
    let threads = common.threads.or(file.threads).or_else(env_threads).unwrap_or(1);
    let config = ExperimentConfig {
        command: command.to_string(),
        q,
        h,
        n: common.n.or(file.n),
        n_max: common.n_max.or(file.n_max),
        reps: common.reps.or(file.reps),
        seed: common.seed.or(file.seed).unwrap_or(0),
        seeds: explicit_seeds.clone(),
        t_grid: common.t_grid.clone().or(file.t_grid),
        normalizer,
        threads,
        resolution: extra.resolution.or(file.resolution),
        stride: extra.stride.or(file.stride),
        control_hurst: extra.control_hurst.or(file.control_hurst),
        contraction_order: extra.contraction_order.or(file.contraction_order),
    };
    Ok(Resolved {
        config,
        explicit_seeds,
        out: common.out.clone(),
        format: common.format.unwrap_or(Format::Both),
    })
}

#[derive(Default)]
struct FileExtras {
    resolution: Option<u64>,
    stride: Option<u32>,
    control_hurst: Option<f64>,
    contraction_order: Option<u32>,
}

fn seeds_for(config: &ExperimentConfig, explicit: &Option<Vec<u64>>, default_count: u64) -> Vec<u64> {
    match explicit {
        Some(s) => s.clone(),
        None => {
            let count = config.reps.unwrap_or(default_count);
            (0..count).map(|i| config.seed.wrapping_add(i)).collect()
        }
    }
}

fn dyadic_grid(lo: u64, hi: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut v = lo;
    while v <= hi {
        out.push(v);
        v *= 2;
    }
    out
}

fn run_simulate(config: &ExperimentConfig) -> Result<Vec<MetricRow>> {
    let n = config.n.context("simulate needs --n")? as usize;
    let m = config.resolution.unwrap_or(1) as usize;
    let sampler = FgnSampler::new(config.h, n, m)?;
    let path = sampler.sample(config.seed, 0);
    let mut rows = Vec::new();
    for (i, &y) in path.y.iter().enumerate() {
        rows.push(MetricRow::new("fgn_increment", config.q, config.h, y).at_n(i as u64 + 1));
    }
    for (i, b) in fbm_from_fgn(&path).into_iter().enumerate() {
        rows.push(MetricRow::new("fbm", config.q, config.h, b).at_n(i as u64 + 1));
    }
    match classify(config.q, config.h)? {
        Regime::HermiteRegime => {
            let z = z_series(config.q, config.h, &path)?;
            for (&k, &v) in z.ks.iter().zip(&z.values) {
                rows.push(MetricRow::new("z_dyadic", config.q, config.h, v).at_n(k));
            }
        }
        _ => {
            if m != 1 {
                bail!("normalized series needs a unit-spacing path (--resolution 1)");
            }
            let series = normalized_series(config.q, config.h, &path)?;
            for ((&k, &v), &s) in series.ks.iter().zip(&series.values).zip(&series.sigmas) {
                rows.push(MetricRow::new("g_normalized", config.q, config.h, v).at_n(k));
                rows.push(MetricRow::new("sigma", config.q, config.h, s).at_n(k));
            }
        }
    }
    Ok(rows)
}

fn run_criteria(config: &ExperimentConfig) -> Result<Vec<MetricRow>> {
    let n = config
        .n
        .or(config.n_max)
        .context("criteria needs --n (largest horizon)")? as usize;
    let stride = config.stride.unwrap_or(4);
    let rep = criterion_partial_sums(config.q, config.h, n, stride)?;
    let mut rows = Vec::new();
    for (ri, &r) in rep.contraction_orders.iter().enumerate() {
        for (ci, &cp) in rep.checkpoints.iter().enumerate() {
            rows.push(
                MetricRow::new(format!("a1_partial_sum[r={r}]"), config.q, config.h, rep.a1_partial_sums[ri][ci])
                    .at_n(cp),
            );
            rows.push(
                MetricRow::new(format!("a1_inner_sum[r={r}]"), config.q, config.h, rep.a1_inner_sums[ri][ci])
                    .at_n(cp),
            );
        }
    }
    for (ci, &cp) in rep.checkpoints.iter().enumerate() {
        rows.push(
            MetricRow::new("a2_partial_sum", config.q, config.h, rep.a2_partial_sums[ci]).at_n(cp),
        );
        rows.push(
            MetricRow::new("a2_inner_over_log", config.q, config.h, rep.a2_inner_over_log[ci])
                .at_n(cp),
        );
    }
    rows.push(MetricRow::new("subgrid_points", config.q, config.h, rep.subgrid.len() as f64).at_n(n as u64));
    Ok(rows)
}

fn run_asclt(config: &ExperimentConfig, explicit: &Option<Vec<u64>>) -> Result<Vec<MetricRow>> {
    let n = config.n.or(config.n_max).context("asclt needs --n")?;
    if n < 16 {
        bail!("asclt needs n >= 16");
    }
    let seeds = seeds_for(config, explicit, 10);
    let checkpoints = dyadic_grid(16.max(n / 64), n);
    let mode = match config.normalizer.as_str() {
        "harmonic" => NormalizerMode::Harmonic,
        _ => NormalizerMode::LogN,
    };
    let rep = asclt_ks_experiment_with(config.q, config.h, n as usize, &checkpoints, &seeds, mode)?;
    let mut rows = Vec::new();
    for (si, seed) in rep.seeds.iter().enumerate() {
        for (ci, &cp) in rep.checkpoints.iter().enumerate() {
            rows.push(
                MetricRow::new(
                    format!("ks_distance[seed={seed}]"),
                    config.q,
                    config.h,
                    rep.distances[si][ci],
                )
                .at_n(cp),
            );
        }
    }
    let wins = rep
        .distances
        .iter()
        .filter(|row| row.last().unwrap() < row.first().unwrap())
        .count();
    rows.push(MetricRow::new("ks_decrease_wins", config.q, config.h, wins as f64).at_n(n));
    Ok(rows)
}

fn run_stein(config: &ExperimentConfig) -> Result<Vec<MetricRow>> {
    let n = config.n.context("stein needs --n")? as usize;
    let reps = config.reps.unwrap_or(10_000);
    let rep = stein_bound_report(config.q, config.h, n, reps, config.seed)?;
    let mut rows = Vec::new();
    for g in &rep.gaps {
        rows.push(
            MetricRow::new(format!("lipschitz_gap[h={}]", g.name), config.q, config.h, g.gap)
                .at_n(n as u64)
                .with_stderr(g.stderr)
                .with_reference(g.reference, "gaussian_moment"),
        );
    }
    rows.push(
        MetricRow::new("mc_rhs", config.q, config.h, rep.mc_rhs)
            .at_n(n as u64)
            .with_stderr(rep.mc_rhs_stderr),
    );
    rows.push(
        MetricRow::new("mc_mean_square", config.q, config.h, rep.mc_mean_square)
            .at_n(n as u64)
            .with_stderr(rep.mc_mean_square_stderr)
            .with_reference(rep.kernel_rhs * rep.kernel_rhs, "chaos_expansion"),
    );
    rows.push(
        MetricRow::new("kernel_rhs", config.q, config.h, rep.kernel_rhs)
            .at_n(n as u64)
            .with_reference(rep.kernel_rhs, "chaos_expansion"),
    );
    Ok(rows)
}

fn run_il(config: &ExperimentConfig) -> Result<Vec<MetricRow>> {
    let n = config.n.or(config.n_max).context("il needs --n")? as usize;
    let reps = config.reps.unwrap_or(1000);
    let t_grid = config.t_grid.clone().unwrap_or_else(|| DEFAULT_T_GRID.to_vec());
    let rep = il_report(config.q, config.h, n, &t_grid, reps, config.seed)?;
    let mut rows = Vec::new();
    for c in &rep.cells {
        let mut row = MetricRow::new("il_delta_sq", config.q, config.h, c.estimate)
            .at_n(c.n)
            .at_t(c.t)
            .with_stderr(c.stderr);
        if let Some(exact) = c.exact {
            row = row.with_reference(exact, "gaussian_covariance");
        }
        rows.push(row);
    }
    for (ti, &t) in rep.t_grid.iter().enumerate() {
        for (ni, &n) in rep.ns.iter().enumerate() {
            rows.push(
                MetricRow::new("il_partial_sum", config.q, config.h, rep.partial_sums[ti][ni])
                    .at_n(n)
                    .at_t(t),
            );
        }
    }
    Ok(rows)
}

fn run_hermite_regime(
    config: &ExperimentConfig,
    explicit: &Option<Vec<u64>>,
) -> Result<Vec<MetricRow>> {
    let n_max = config.n_max.or(config.n).context("hermite-regime needs --n-max")? as usize;
    let seeds = seeds_for(config, explicit, 10);
    let rep = hermite_regime_experiment(config.q, config.h, n_max, &seeds)?;
    let mut rows = Vec::new();
    for r in &rep.rows {
        let s = r.seed;
        rows.push(
            MetricRow::new(format!("log_avg_terminal[seed={s}]"), config.q, config.h, r.log_avg_terminal)
                .at_n(n_max as u64)
                .with_reference(r.phi_terminal, "pathwise_limit"),
        );
        rows.push(
            MetricRow::new(format!("z_terminal[seed={s}]"), config.q, config.h, r.z_terminal)
                .at_n(n_max as u64),
        );
        rows.push(
            MetricRow::new(format!("converged[seed={s}]"), config.q, config.h, f64::from(r.converged))
                .at_n(n_max as u64),
        );
    }
    rows.push(MetricRow::new("converged_count", config.q, config.h, rep.converged_count as f64).at_n(n_max as u64));
    rows.push(
        MetricRow::new("terminal_dispersion", config.q, config.h, rep.terminal_dispersion)
            .at_n(n_max as u64),
    );
    let control_h = config.control_hurst.unwrap_or(0.6);
    let ctl = clt_control_terminal_dispersion(config.q, control_h, n_max, &seeds)?;
    rows.push(MetricRow::new("control_dispersion", config.q, control_h, ctl).at_n(n_max as u64));
    rows.push(
        MetricRow::new("dispersion_ratio", config.q, config.h, rep.terminal_dispersion / ctl)
            .at_n(n_max as u64),
    );
    Ok(rows)
}

/// Decay exponent of the contraction-norm bound table for the fitted slope's
/// reference column (subcritical regimes; the boundary decays in log n).
fn rate_bound_exponent(q: u32, h: f64) -> Option<f64> {
    let qf = q as f64;
    match classify(q, h).ok()? {
        Regime::SubcriticalClt => Some(if h <= 0.5 {
            -0.5
        } else if h <= (2.0 * qf - 3.0) / (2.0 * qf - 2.0) {
            h - 1.0
        } else {
            qf * h - qf + 0.5
        }),
        _ => None,
    }
}

fn run_rates(config: &ExperimentConfig) -> Result<Vec<MetricRow>> {
    let n_max = config.n_max.or(config.n).context("rates needs --n-max")? as usize;
    if n_max < 256 {
        bail!("rates needs --n-max >= 256 for a 3-point dyadic grid");
    }
    let ns: Vec<usize> = dyadic_grid(64, n_max as u64).iter().map(|&v| v as usize).collect();
    let orders: Vec<u32> = match config.contraction_order {
        Some(r) => vec![r],
        None => (1..config.q).collect(),
    };
    let critical = classify(config.q, config.h)? == Regime::CriticalClt;
    let mut rows = Vec::new();
    for &r in &orders {
        for &n in &ns {
            let f = block_kernel(config.q, config.h, n)?;
            let norm = contraction_norm(&f, r)?;
            rows.push(
                MetricRow::new(format!("contraction_norm[r={r}]"), config.q, config.h, norm)
                    .at_n(n as u64),
            );
            if critical {
                rows.push(
                    MetricRow::new(
                        format!("contraction_norm_sqrtlog[r={r}]"),
                        config.q,
                        config.h,
                        norm * (n as f64).ln().sqrt(),
                    )
                    .at_n(n as u64),
                );
            }
        }
        let (slope, intercept) = rate_exponent_fit(config.q, config.h, r, &ns)?;
        let mut row = MetricRow::new(format!("rate_slope[r={r}]"), config.q, config.h, slope)
            .at_n(n_max as u64);
        if let Some(bound) = rate_bound_exponent(config.q, config.h) {
            row = row.with_reference(bound, "rate_bound");
        }
        rows.push(row);
        rows.push(
            MetricRow::new(format!("rate_intercept[r={r}]"), config.q, config.h, intercept)
                .at_n(n_max as u64),
        );
    }
    Ok(rows)
}

fn write_outputs(record: &ResultRecord, out: &Option<PathBuf>, format: Format) -> Result<()> {
    let json = serde_json::to_string_pretty(record)?;
    match out {
        None => println!("{json}"),
        Some(base) => {
            let with_ext = |ext: &str| -> PathBuf {
                let mut p = base.clone();
                p.set_extension(ext);
                p
            };
            if format != Format::Json {
                fs::write(with_ext("csv"), rows_to_csv(&record.results))
                    .with_context(|| "writing CSV output")?;
            }
            if format != Format::Csv {
                fs::write(with_ext("json"), json).with_context(|| "writing JSON output")?;
            }
        }
    }
    Ok(())
}

fn run_command(resolved: Resolved) -> Result<()> {
    let started = Instant::now();
    let config = resolved.config;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .context("building the worker pool")?;
    let results = pool.install(|| -> Result<Vec<MetricRow>> {
        match config.command.as_str() {
            "simulate" => run_simulate(&config),
            "criteria" => run_criteria(&config),
            "asclt" => run_asclt(&config, &resolved.explicit_seeds),
            "stein" => run_stein(&config),
            "il" => run_il(&config),
            "hermite-regime" => run_hermite_regime(&config, &resolved.explicit_seeds),
            "rates" => run_rates(&config),
            other => bail!("unknown command {other}"),
        }
    })?;
    let record = ResultRecord {
        config,
        version: env!("CARGO_PKG_VERSION").to_string(),
        results,
        timing: started.elapsed().as_secs_f64(),
    };
    write_outputs(&record, &resolved.out, resolved.format)
}

fn run_compare(record: &Path, fixture: &Path) -> Result<bool> {
    let record = load_record(record)?;
    let fixture = load_fixture(fixture)?;
    let report = compare_fixture(&record, &fixture);
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(report.pass)
}

fn dispatch() -> Result<bool> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { common, resolution } => {
            run_command(resolve(
                "simulate",
                &common,
                FileExtras { resolution, ..Default::default() },
            )?)?;
        }
        Command::Criteria { common, stride } => {
            run_command(resolve("criteria", &common, FileExtras { stride, ..Default::default() })?)?;
        }
        Command::Asclt { common } => {
            run_command(resolve("asclt", &common, FileExtras::default())?)?;
        }
        Command::Stein { common } => {
            run_command(resolve("stein", &common, FileExtras::default())?)?;
        }
        Command::Il { common } => {
            run_command(resolve("il", &common, FileExtras::default())?)?;
        }
        Command::HermiteRegime { common, control_hurst } => {
            run_command(resolve(
                "hermite-regime",
                &common,
                FileExtras { control_hurst, ..Default::default() },
            )?)?;
        }
        Command::Rates { common, contraction_order } => {
            run_command(resolve(
                "rates",
                &common,
                FileExtras { contraction_order, ..Default::default() },
            )?)?;
        }
        Command::Compare { record, fixture } => {
            return run_compare(&record, &fixture);
        }
    }
    Ok(true)
}

fn main() {
    match dispatch() {
        Ok(true) => {}
        Ok(false) => std::process::exit(2),
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": format!("{e:#}") }));
            std::process::exit(1);
        }
    }
}

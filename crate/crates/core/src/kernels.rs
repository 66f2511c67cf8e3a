//! Exact arithmetic on the discrete block kernels representing the
//! normalized Hermite variations inside the Wiener chaos: inner products,
//! contraction norms, symmetrized contractions, the chaos-expansion variance
//! behind the Stein bound, and the summability criteria driving the
//! almost-sure CLT.
//!
//! A block kernel is f_n = c sum_{k<n} e_k^{(x)q} where e_k = 1_{[k,k+1]}
//! and the Gram matrix of the blocks is <e_i, e_j> = rho(i - j). Everything
//! here reduces to lag sums against that Gram sequence; translation
//! invariance collapses the naive O(n^4) contraction sums to O(n^3).

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fgn::CovarianceSequence;
use crate::variation::{classify, variance_prefix, Regime};

/// Largest n the O(n^4) reference contraction accepts.
pub const REFERENCE_CONTRACTION_MAX_N: usize = 64;

/// Largest chaos order for which symmetrized norms are computed exactly.
pub const MAX_SYMMETRIZED_ORDER: u32 = 4;

fn factorial(n: u32) -> f64 {
    (1..=n as u64).map(|v| v as f64).product()
}

fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    factorial(n) / (factorial(k) * factorial(n - k))
}

/// The block kernel of one normalized variation statistic.
#[derive(Debug, Clone)]
pub struct BlockKernel {
    q: u32,
    h: f64,
    n: usize,
    /// Scalar block coefficient 1 / sqrt(E[V_n^2]); equals 1/(sigma_n sqrt(n))
    /// subcritically and 1/(sigma_n sqrt(n log n)) at the boundary.
    coeff: f64,
    gram: Arc<CovarianceSequence>,
}

impl BlockKernel {
    pub fn q(&self) -> u32 {
        self.q
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn coeff(&self) -> f64 {
        self.coeff
    }

    /// q! ||f_n||^2, which the normalization pins to one.
    pub fn normalization_check(&self) -> f64 {
        let c2 = self.coeff * self.coeff;
        let mut s = 0.0;
        for i in 0..self.n as i64 {
            for j in 0..self.n as i64 {
                s += self.gram.get(i - j).powi(self.q as i32);
            }
        }
        factorial(self.q) * c2 * s
    }
}

/// Build the block kernel for (q, H, n) with the exact normalizer.
pub fn block_kernel(q: u32, h: f64, n: usize) -> Result<BlockKernel> {
    let regime = classify(q, h)?;
    match regime {
        Regime::SubcriticalClt => {}
        Regime::CriticalClt => {
            if n < 2 {
                return Err(Error::domain("critical-regime kernel needs n >= 2"));
            }
        }
        _ => {
            return Err(Error::domain(
                "block kernels are defined for the CLT regimes (q >= 2, H <= 1 - 1/(2q))",
            ))
        }
    }
    if n < 1 {
        return Err(Error::domain("kernel needs n >= 1"));
    }
    let ev2 = variance_prefix(q, h, n)?[n];
    Ok(BlockKernel {
        q,
        h,
        n,
        coeff: 1.0 / ev2.sqrt(),
        gram: Arc::new(CovarianceSequence::new(h, n)?),
    })
}

fn check_compatible(f: &BlockKernel, g: &BlockKernel) -> Result<()> {
    if f.q != g.q {
        return Err(Error::domain("kernels have different chaos orders"));
    }
    if f.h != g.h {
        return Err(Error::domain("kernels have different Hurst indices"));
    }
    Ok(())
}

/// <f, g> = c_f c_g sum_{i<n_f, j<n_g} rho(i-j)^q, by lag counting in
/// O(n_f + n_g).
pub fn kernel_inner_product(f: &BlockKernel, g: &BlockKernel) -> Result<f64> {
    check_compatible(f, g)?;
    let (k, l) = (f.n as i64, g.n as i64);
    let gram = if f.n >= g.n { &f.gram } else { &g.gram };
    let mut s = 0.0;
    for r in (1 - l)..k {
        let count = (k - 1).min(l - 1 + r) - 0.max(r) + 1;
        s += count as f64 * gram.get(r).powi(f.q as i32);
    }
    Ok(f.coeff * g.coeff * s)
}

#[inline]
fn axpy(dst: &mut [f64], c: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * *s;
    }
}

/// Row i of the product of two symmetric Toeplitz matrices A B, where
/// A has symbol `a` (indexed by |lag|) and `bfull[m] = b(|m - (n-1)|)`.
fn toeplitz_product_row(out: &mut [f64], i: usize, a: &[f64], bfull: &[f64], n: usize) {
    out.fill(0.0);
    for j in 0..n {
        let c = a[i.abs_diff(j)];
        if c != 0.0 {
            let off = n - 1 - j;
            axpy(out, c, &bfull[off..off + n]);
        }
    }
}

fn mirrored(sym: &[f64], n: usize) -> Vec<f64> {
    (0..2 * n - 1).map(|m| sym[m.abs_diff(n - 1)]).collect()
}

/// ||f (x)_r f||, the contraction norm of order r, via
/// ||f (x)_r f||^2 = c^4 tr(U V U V) with U, V the Toeplitz matrices of
/// rho^r and rho^{q-r}. Each trace row costs O(n^2), so the whole norm is
/// O(n^3) instead of the O(n^4) definition.
pub fn contraction_norm(f: &BlockKernel, r: u32) -> Result<f64> {
    if r < 1 || r >= f.q {
        return Err(Error::domain("contraction order must satisfy 1 <= r <= q - 1"));
    }
    let n = f.n;
    let u = f.gram.pow_table(r, n);
    let v = f.gram.pow_table(f.q - r, n);
    let ufull = mirrored(&u, n);
    let vfull = mirrored(&v, n);

    let per_row: Vec<f64> = (0..n)
        .into_par_iter()
        .map_init(
            || (vec![0.0; n], vec![0.0; n]),
            |(row_uv, row_vu), i| {
                toeplitz_product_row(row_uv, i, &u, &vfull, n);
                toeplitz_product_row(row_vu, i, &v, &ufull, n);
                row_uv.iter().zip(row_vu.iter()).map(|(a, b)| a * b).sum()
            },
        )
        .collect();
    let trace: f64 = per_row.iter().sum();
    let c2 = f.coeff * f.coeff;
    Ok((c2 * c2 * trace).max(0.0).sqrt())
}

/// O(n^4) contraction norm straight from the definition; the test oracle for
/// the Toeplitz-trace fast path.
pub fn contraction_norm_reference(f: &BlockKernel, r: u32) -> Result<f64> {
    if r < 1 || r >= f.q {
        return Err(Error::domain("contraction order must satisfy 1 <= r <= q - 1"));
    }
    if f.n > REFERENCE_CONTRACTION_MAX_N {
        return Err(Error::capacity(format!(
            "reference contraction is kept for n <= {REFERENCE_CONTRACTION_MAX_N}"
        )));
    }
    let n = f.n as i64;
    let re = r as i32;
    let me = (f.q - r) as i32;
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    s += f.gram.get(i - k).powi(re)
                        * f.gram.get(j - l).powi(re)
                        * f.gram.get(i - j).powi(me)
                        * f.gram.get(k - l).powi(me);
                }
            }
        }
    }
    let c2 = f.coeff * f.coeff;
    Ok((c2 * c2 * s).max(0.0).sqrt())
}

/// ||f ~(x)_r f||, the symmetrized contraction norm.
///
/// For r = q - 1 the contraction has two single-slot blocks and is already
/// symmetric, so the plain norm is returned. Otherwise the permutation sum
/// collapses into lag-equivalence classes indexed by how many slots cross
/// between the two blocks, leaving m + 1 translation-invariant quadruple
/// sums (m = q - r), each evaluated as an O(n^3) lag sum.
pub fn symmetrized_contraction_norm(f: &BlockKernel, r: u32) -> Result<f64> {
    if r < 1 || r >= f.q {
        return Err(Error::domain("contraction order must satisfy 1 <= r <= q - 1"));
    }
    if f.q > MAX_SYMMETRIZED_ORDER {
        return Err(Error::capacity(format!(
            "symmetrized norms are computed for q <= {MAX_SYMMETRIZED_ORDER}; \
             use contraction_norm as the certified upper bound"
        )));
    }
    let m = f.q - r;
    if m == 1 {
        return contraction_norm(f, r);
    }

    let n = f.n;
    let len = 2 * n; // lag magnitudes reach 2n - 2
    let pow_r = f.gram.pow_table(r, len);
    let mut total = 0.0;
    for b in 0..=m {
        let weight = binomial(m, b).powi(2) * factorial(m).powi(2) / factorial(2 * m);
        let pow_mb = f.gram.pow_table(m - b, len);
        let pow_b = f.gram.pow_table(b, len);
        let span = n as i64;
        let per_a: Vec<f64> = ((1 - span)..span)
            .into_par_iter()
            .map(|a| {
                let mut acc = 0.0;
                for d in (1 - span)..span {
                    let fixed = pow_r[d.unsigned_abs() as usize]
                        * pow_mb[a.unsigned_abs() as usize]
                        * pow_b[(a - d).unsigned_abs() as usize];
                    if fixed == 0.0 {
                        continue;
                    }
                    for e in (1 - span)..span {
                        let lo = 0.max(a).max(d).max(d + e);
                        let hi = (span - 1).min(span - 1 + a).min(span - 1 + d).min(span - 1 + d + e);
                        if hi < lo {
                            continue;
                        }
                        acc += (hi - lo + 1) as f64
                            * fixed
                            * pow_r[(d + e - a).unsigned_abs() as usize]
                            * pow_mb[e.unsigned_abs() as usize]
                            * pow_b[(d + e).unsigned_abs() as usize];
                    }
                }
                acc
            })
            .collect();
        total += weight * per_a.iter().sum::<f64>();
    }
    let c2 = f.coeff * f.coeff;
    Ok((c2 * c2 * total).max(0.0).sqrt())
}

// ---------------------------------------------------------------------------
// Dense kernels: the small-n brute-force oracle.
// ---------------------------------------------------------------------------

/// Dense symmetric kernel over the block basis, used as a brute-force oracle
/// at small sizes. Coefficients are row-major over index tuples in
/// {0..n-1}^order; all inner products and contractions run through the Gram
/// sequence of the (non-orthonormal) block basis.
#[derive(Debug, Clone)]
pub struct GeneralKernel {
    pub order: u32,
    pub n: usize,
    pub coeffs: Vec<f64>,
    gram: Arc<CovarianceSequence>,
}

const DENSE_BUDGET: usize = 1 << 20;

impl GeneralKernel {
    pub fn new(order: u32, n: usize, coeffs: Vec<f64>, h: f64) -> Result<Self> {
        let size = n
            .checked_pow(order)
            .filter(|&s| s <= DENSE_BUDGET)
            .ok_or_else(|| Error::capacity("dense kernel exceeds the oracle budget"))?;
        if coeffs.len() != size {
            return Err(Error::domain("coefficient array does not match n^order"));
        }
        Ok(GeneralKernel {
            order,
            n,
            coeffs,
            gram: Arc::new(CovarianceSequence::new(h, n)?),
        })
    }

    /// Dense embedding of a block kernel (small n only).
    pub fn from_block(f: &BlockKernel) -> Result<Self> {
        if f.n > 12 || f.q > 3 {
            return Err(Error::capacity("dense embedding is kept for n <= 12, q <= 3"));
        }
        let size = f.n.pow(f.q);
        let mut coeffs = vec![0.0; size];
        for k in 0..f.n {
            let mut idx = 0;
            for _ in 0..f.q {
                idx = idx * f.n + k;
            }
            coeffs[idx] = f.coeff;
        }
        Ok(GeneralKernel {
            order: f.q,
            n: f.n,
            coeffs,
            gram: f.gram.clone(),
        })
    }

    /// Random element of the symmetric tensor space (seeded).
    pub fn random_symmetric(order: u32, n: usize, h: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let size = n
            .checked_pow(order)
            .filter(|&s| s <= DENSE_BUDGET)
            .ok_or_else(|| Error::capacity("dense kernel exceeds the oracle budget"))?;
        let coeffs: Vec<f64> = (0..size).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        Ok(GeneralKernel::new(order, n, coeffs, h)?.symmetrized())
    }

    fn tuple_of(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0usize; self.order as usize];
        for slot in (0..self.order as usize).rev() {
            idx[slot] = flat % self.n;
            flat /= self.n;
        }
        idx
    }

    fn flat_of(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.n + i)
    }

    /// Average over all permutations of the slot indices.
    pub fn symmetrized(&self) -> Self {
        let p = self.order as usize;
        let perms = permutations(p);
        let mut out = vec![0.0; self.coeffs.len()];
        let mut scratch = vec![0usize; p];
        for (flat, slot_out) in out.iter_mut().enumerate() {
            let idx = self.tuple_of(flat);
            let mut acc = 0.0;
            for perm in &perms {
                for (slot, &src) in perm.iter().enumerate() {
                    scratch[slot] = idx[src];
                }
                acc += self.coeffs[self.flat_of(&scratch)];
            }
            *slot_out = acc / perms.len() as f64;
        }
        GeneralKernel {
            order: self.order,
            n: self.n,
            coeffs: out,
            gram: self.gram.clone(),
        }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let sym = self.symmetrized();
        self.coeffs
            .iter()
            .zip(&sym.coeffs)
            .all(|(a, b)| (a - b).abs() <= tol * a.abs().max(1.0))
    }

    /// Multiply one tensor mode by the Gram matrix.
    fn apply_gram_mode(&self, coeffs: &[f64], mode: u32, order: u32) -> Vec<f64> {
        let n = self.n;
        let stride = n.pow(order - 1 - mode);
        let block = stride * n;
        let mut out = vec![0.0; coeffs.len()];
        for base in (0..coeffs.len()).step_by(block) {
            for off in 0..stride {
                for i in 0..n {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += self.gram.get(i as i64 - j as i64) * coeffs[base + j * stride + off];
                    }
                    out[base + i * stride + off] = acc;
                }
            }
        }
        out
    }

    /// Contraction of order r: pair the last r slots of `self` with the last
    /// r slots of `other` through the Gram.
    pub fn contract(&self, other: &GeneralKernel, r: u32) -> Result<GeneralKernel> {
        if self.n != other.n || self.gram.h() != other.gram.h() {
            return Err(Error::domain("dense kernels live on different bases"));
        }
        if r > self.order.min(other.order) {
            return Err(Error::domain("contraction order exceeds kernel order"));
        }
        let out_order = self.order + other.order - 2 * r;
        self.n
            .checked_pow(out_order)
            .filter(|&s| s <= DENSE_BUDGET)
            .ok_or_else(|| Error::capacity("contraction result exceeds the oracle budget"))?;

        let mut g = other.coeffs.clone();
        for mode in (other.order - r)..other.order {
            g = self.apply_gram_mode(&g, mode, other.order);
        }
        let rows_a = self.n.pow(self.order - r);
        let rows_b = self.n.pow(other.order - r);
        let inner = self.n.pow(r);
        let mut out = vec![0.0; rows_a * rows_b];
        for xa in 0..rows_a {
            for yb in 0..rows_b {
                let mut acc = 0.0;
                for u in 0..inner {
                    acc += self.coeffs[xa * inner + u] * g[yb * inner + u];
                }
                out[xa * rows_b + yb] = acc;
            }
        }
        Ok(GeneralKernel {
            order: out_order,
            n: self.n,
            coeffs: out,
            gram: self.gram.clone(),
        })
    }

    /// Gram-weighted inner product of two kernels of equal order.
    pub fn inner(&self, other: &GeneralKernel) -> Result<f64> {
        if self.order != other.order || self.n != other.n {
            return Err(Error::domain("inner product requires matching kernels"));
        }
        let mut g = other.coeffs.clone();
        for mode in 0..self.order {
            g = self.apply_gram_mode(&g, mode, self.order);
        }
        Ok(self.coeffs.iter().zip(&g).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).expect("self inner product").max(0.0).sqrt()
    }
}

fn permutations(p: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..p {
        out = out
            .into_iter()
            .flat_map(|partial: Vec<usize>| {
                (0..p).filter_map(move |v| {
                    if partial.contains(&v) {
                        None
                    } else {
                        let mut next = partial.clone();
                        next.push(v);
                        Some(next)
                    }
                })
            })
            .collect();
    }
    out
}

/// Both sides of the contraction duality
/// ||f (x)_r g||^2 = < f (x)_{q-r} f, g (x)_{q-r} g >,
/// computed along the two distinct contraction routes.
pub fn contraction_duality_check(
    f: &GeneralKernel,
    g: &GeneralKernel,
    r: u32,
) -> Result<(f64, f64)> {
    if f.order != g.order {
        return Err(Error::domain("duality requires kernels of one order"));
    }
    let q = f.order;
    if r < 1 || r >= q {
        return Err(Error::domain("duality needs 1 <= r <= q - 1"));
    }
    let t = f.contract(g, r)?;
    let lhs = t.inner(&t)?;
    let a = f.contract(f, q - r)?;
    let b = g.contract(g, q - r)?;
    let rhs = a.inner(&b)?;
    Ok((lhs, rhs))
}

/// Exact chaos-expansion variance E[(1 - (1/q)||D G_n||^2)^2] =
/// q^2 sum_r ((r-1)!)^2 binom(q-1, r-1)^4 (2q-2r)! ||f_n ~(x)_r f_n||^2.
pub fn stein_variance_kernel(q: u32, h: f64, n: usize) -> Result<f64> {
    if q < 2 {
        return Err(Error::domain("the Stein variance needs q >= 2"));
    }
    let f = block_kernel(q, h, n)?;
    let mut total = 0.0;
    for r in 1..q {
        let norm = symmetrized_contraction_norm(&f, r)?;
        total += factorial(r - 1).powi(2)
            * binomial(q - 1, r - 1).powi(4)
            * factorial(2 * (q - r))
            * norm
            * norm;
    }
    Ok((q as f64).powi(2) * total)
}

// ---------------------------------------------------------------------------
// Summability criteria.
// ---------------------------------------------------------------------------

/// Partial sums of the two kernel-level summability conditions, with the
/// boundedness witnesses that make the convergence visible at desk scale.
#[derive(Debug, Clone, Serialize)]
pub struct CriterionReport {
    pub q: u32,
    pub h: f64,
    pub n_max: u64,
    /// Contraction orders r = 1..q-1, indexing `a1_partial_sums`.
    pub contraction_orders: Vec<u32>,
    /// k values where contraction norms were evaluated exactly.
    pub subgrid: Vec<u64>,
    /// Which contraction norm enters the first condition.
    pub norm_kind: String,
    /// Horizons where the sums are reported (dyadic, plus n_max).
    pub checkpoints: Vec<u64>,
    /// S1_r(N) = sum_{n=2}^{N} 1/(n log^2 n) sum_{k<=n} ||f_k (x)_r f_k|| / k.
    pub a1_partial_sums: Vec<Vec<f64>>,
    /// Inner sums sum_{k<=n} ||f_k (x)_r f_k|| / k: the per-step increment of
    /// S1 multiplied by n log^2 n; summability shows as boundedness.
    pub a1_inner_sums: Vec<Vec<f64>>,
    /// S2(N) = sum_{n=2}^{N} 1/(n log^3 n) sum_{k,l<=n} |<f_k,f_l>| / (k l).
    pub a2_partial_sums: Vec<f64>,
    /// Inner double sums divided by log n: the S2 increment times
    /// n log^3 n / log n; bounded when the double sum grows at most like log n.
    pub a2_inner_over_log: Vec<f64>,
}

/// Evaluate the partial sums of both summability conditions up to `n_max`.
///
/// Contraction norms are evaluated exactly for k <= 16 and on a geometric
/// subgrid of ratio 2^(1/points_per_octave) beyond, with monotone log-log
/// interpolation in between; the inner product double sum is exact.
pub fn criterion_partial_sums(
    q: u32,
    h: f64,
    n_max: usize,
    points_per_octave: u32,
) -> Result<CriterionReport> {
    let regime = classify(q, h)?;
    let k_start = match regime {
        Regime::SubcriticalClt => 1usize,
        Regime::CriticalClt => 2usize,
        _ => {
            return Err(Error::domain(
                "criteria are defined for the CLT regimes (q >= 2, H <= 1 - 1/(2q))",
            ))
        }
    };
    if n_max < 4 {
        return Err(Error::domain("criteria need n_max >= 4"));
    }
    if points_per_octave < 1 {
        return Err(Error::domain("points_per_octave must be >= 1"));
    }

    // Subgrid: every k up to 16, then geometric up to n_max.
    let mut subgrid: Vec<usize> = (k_start..=16.min(n_max)).collect();
    let ratio = 2f64.powf(1.0 / points_per_octave as f64);
    let mut kf = 16f64;
    while (kf * ratio).round() < n_max as f64 {
        kf *= ratio;
        let k = kf.round() as usize;
        if k > *subgrid.last().unwrap() {
            subgrid.push(k);
        }
    }
    if *subgrid.last().unwrap() < n_max {
        subgrid.push(n_max);
    }

    let orders: Vec<u32> = (1..q).collect();
    let ev2 = variance_prefix(q, h, n_max)?;

    // Exact contraction norms on the subgrid, one column per r.
    let mut norm_cols: Vec<Vec<f64>> = vec![Vec::with_capacity(subgrid.len()); orders.len()];
    for &k in &subgrid {
        let fk = block_kernel(q, h, k)?;
        for (ri, &r) in orders.iter().enumerate() {
            norm_cols[ri].push(contraction_norm(&fk, r)?);
        }
    }

    // log-log interpolation of each norm column onto every k.
    let log_ks: Vec<f64> = subgrid.iter().map(|&k| (k as f64).ln()).collect();
    let interp_norm = |col: &[f64], k: usize| -> f64 {
        let lk = (k as f64).ln();
        let pos = match log_ks.binary_search_by(|x| x.partial_cmp(&lk).unwrap()) {
            Ok(p) => return col[p],
            Err(p) => p,
        };
        let (i0, i1) = (pos - 1, pos);
        let t = (lk - log_ks[i0]) / (log_ks[i1] - log_ks[i0]);
        (col[i0].ln() * (1.0 - t) + col[i1].ln() * t).exp()
    };

    let checkpoints: Vec<usize> = {
        let mut cps: Vec<usize> = (2..)
            .map(|j| 1usize << j)
            .take_while(|&c| c <= n_max)
            .collect();
        if *cps.last().unwrap_or(&0) != n_max {
            cps.push(n_max);
        }
        cps
    };

    // First condition: sweep n, keeping the inner sums incrementally.
    let mut a1_partial_sums = vec![Vec::new(); orders.len()];
    let mut a1_inner_sums = vec![Vec::new(); orders.len()];
    let mut inner = vec![0.0; orders.len()];
    let mut s1 = vec![0.0; orders.len()];
    let mut cp_iter = checkpoints.iter().peekable();
    for n in k_start..=n_max {
        for (ri, col) in norm_cols.iter().enumerate() {
            inner[ri] += interp_norm(col, n) / n as f64;
        }
        if n >= 2 {
            let w = 1.0 / (n as f64 * (n as f64).ln().powi(2));
            for ri in 0..orders.len() {
                s1[ri] += w * inner[ri];
            }
        }
        if cp_iter.peek() == Some(&&n) {
            cp_iter.next();
            for ri in 0..orders.len() {
                a1_partial_sums[ri].push(s1[ri]);
                a1_inner_sums[ri].push(inner[ri]);
            }
        }
    }

    // Second condition: exact rolling evaluation of the double sum
    // D(n) = sum_{k,l<=n} |<f_k, f_l>|/(kl) via the 2-D prefix recursion
    // W_k(l) = W_{k-1}(l) + sum_{j<l} rho(k-1-j)^q; the new-row contribution
    // is itself a running sum over l.
    let gram = CovarianceSequence::new(h, n_max)?;
    let rho_q = gram.pow_table(q, n_max);
    let coeff: Vec<f64> = (0..=n_max)
        .map(|k| if k == 0 { 0.0 } else { 1.0 / ev2[k].sqrt() })
        .collect();

    let mut w_row = vec![0.0; n_max + 1];
    let mut a2_partial_sums = Vec::new();
    let mut a2_inner_over_log = Vec::new();
    let mut d_n = 0.0;
    let mut s2 = 0.0;
    let mut cp_iter = checkpoints.iter().peekable();
    for krow in 1..=n_max {
        let mut run = 0.0;
        for l in 1..=n_max {
            run += rho_q[krow.abs_diff(l)];
            w_row[l] += run;
        }
        debug_assert!(
            (coeff[krow] * coeff[krow] * w_row[krow] * factorial(q) - 1.0).abs() < 1e-8
        );
        if krow >= k_start {
            let ck = coeff[krow];
            let mut cross = 0.0;
            for l in k_start..krow {
                cross += coeff[l] * (w_row[l] * ck).abs() / l as f64;
            }
            d_n += 2.0 * cross / krow as f64
                + (ck * ck * w_row[krow]).abs() / (krow as f64 * krow as f64);
        }
        if krow >= 2 {
            s2 += d_n / (krow as f64 * (krow as f64).ln().powi(3));
        }
        if cp_iter.peek() == Some(&&krow) {
            cp_iter.next();
            a2_partial_sums.push(s2);
            a2_inner_over_log.push(d_n / (krow as f64).ln());
        }
    }

    Ok(CriterionReport {
        q,
        h,
        n_max: n_max as u64,
        contraction_orders: orders,
        subgrid: subgrid.iter().map(|&k| k as u64).collect(),
        norm_kind: "unsymmetrized".to_string(),
        checkpoints: checkpoints.iter().map(|&c| c as u64).collect(),
        a1_partial_sums,
        a1_inner_sums,
        a2_partial_sums,
        a2_inner_over_log,
    })
}

/// Least-squares slope of log ||f_n (x)_r f_n|| against log n
/// (against log log n at the critical boundary, where the decay is
/// logarithmic).
pub fn rate_exponent_fit(q: u32, h: f64, r: u32, ns: &[usize]) -> Result<(f64, f64)> {
    if ns.len() < 3 {
        return Err(Error::domain("rate fit needs at least 3 sizes"));
    }
    if ns.iter().any(|&n| n < 16) {
        return Err(Error::domain("rate fit needs n >= 16"));
    }
    let critical = classify(q, h)? == Regime::CriticalClt;
    let mut xs = Vec::with_capacity(ns.len());
    let mut ys = Vec::with_capacity(ns.len());
    for &n in ns {
        let f = block_kernel(q, h, n)?;
        let norm = contraction_norm(&f, r)?;
        let x = if critical {
            (n as f64).ln().ln()
        } else {
            (n as f64).ln()
        };
        xs.push(x);
        ys.push(norm.ln());
    }
    let nf = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

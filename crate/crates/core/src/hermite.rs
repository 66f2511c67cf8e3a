//! Hermite polynomials in the probabilists' (monic) convention,
//! H_0 = 1, H_1 = x, H_{q+1}(x) = x H_q(x) - q H_{q-1}(x).

use crate::error::{Error, Result};

/// Evaluate H_q(x) by the three-term recurrence.
pub fn hermite_eval(q: u32, x: f64) -> f64 {
    let mut prev = 0.0;
    let mut cur = 1.0;
    for j in 0..q {
        let next = x * cur - j as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Element-wise `hermite_eval` over a slice.
pub fn hermite_map(q: u32, xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|&x| hermite_eval(q, x)).collect()
}

/// Checked variant for callers holding an untrusted order.
pub fn hermite_eval_checked(q: i64, x: f64) -> Result<f64> {
    if q < 0 {
        return Err(Error::domain("Hermite order must be >= 0"));
    }
    Ok(hermite_eval(q as u32, x))
}

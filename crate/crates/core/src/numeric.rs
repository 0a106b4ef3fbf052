//! Small log-space helpers shared across modules.

use std::sync::OnceLock;

const FACTORIAL_TABLE_LEN: usize = 8192;

fn factorial_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        (0..FACTORIAL_TABLE_LEN)
            .map(|n| libm::lgamma(n as f64 + 1.0))
            .collect()
    })
}

/// `ln(n!)`.
pub fn ln_factorial(n: u64) -> f64 {
    match factorial_table().get(n as usize) {
        Some(v) => *v,
        None => libm::lgamma(n as f64 + 1.0),
    }
}

/// `ln C(n, k)`; `-inf` when `k > n`.
pub fn ln_binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// `ln B(a, b)`.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// `k ln(p) + (n - k) ln(1 - p)` with the convention `0 ln 0 = 0`.
pub fn ln_bernoulli_likelihood(p: f64, successes: u64, trials: u64) -> f64 {
    debug_assert!(successes <= trials);
    let failures = trials - successes;
    xlny(successes as f64, p) + xlny(failures as f64, 1.0 - p)
}

/// `x ln y` with `0 ln 0 = 0`.
pub fn xlny(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Numerically stable `ln Σ exp(x_i)`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Standard error of a sample mean given the running sum and sum of squares.
pub(crate) fn mean_and_se(sum: f64, sum_sq: f64, n: usize) -> (f64, f64) {
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let nf = n as f64;
    let mean = sum / nf;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    (mean, (var / nf).sqrt())
}

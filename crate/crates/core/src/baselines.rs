//! Classical comparators: Fisher's exact test and Gunel–Dickey Bayes factors.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::evalue::log_e_from_counts;
use crate::model::AlternativePoint;
use crate::numeric::{ln_binomial, ln_factorial, log_sum_exp};

/// A 2×2 table of success (`1`) and failure (`0`) counts per group.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub n_a1: u64,
    pub n_a0: u64,
    pub n_b1: u64,
    pub n_b0: u64,
}

impl ContingencyTable {
    pub const fn new(n_a1: u64, n_a0: u64, n_b1: u64, n_b0: u64) -> Self {
        Self { n_a1, n_a0, n_b1, n_b0 }
    }

    pub fn n_a(&self) -> u64 {
        self.n_a1 + self.n_a0
    }

    pub fn n_b(&self) -> u64 {
        self.n_b1 + self.n_b0
    }

    pub fn n_1(&self) -> u64 {
        self.n_a1 + self.n_b1
    }

    pub fn n_0(&self) -> u64 {
        self.n_a0 + self.n_b0
    }

    pub fn n(&self) -> u64 {
        self.n_a() + self.n_b()
    }

    /// Table with the group labels exchanged.
    pub fn swapped(&self) -> Self {
        Self::new(self.n_b1, self.n_b0, self.n_a1, self.n_a0)
    }
}

/// One-sided Fisher exact test: probability, with all margins fixed, of at
/// least as many group-b successes as observed.
pub fn fisher_exact_one_sided(table: &ContingencyTable) -> f64 {
    let (n, n_1, n_b) = (table.n(), table.n_1(), table.n_b());
    if n_1 == 0 || n_1 == n {
        return 1.0;
    }
    let n_0 = n - n_1;
    let ln_total = ln_binomial(n, n_b);
    let hi = n_1.min(n_b);
    let terms: Vec<f64> = (table.n_b1..=hi)
        .map(|k| ln_binomial(n_1, k) + ln_binomial(n_0, n_b - k) - ln_total)
        .collect();
    log_sum_exp(&terms).exp().min(1.0)
}

/// `ln` of the Poisson-scheme Gunel–Dickey Bayes factor.
pub fn ln_gd_bf_poisson(t: &ContingencyTable) -> f64 {
    let (n, n_1) = (t.n() as f64, t.n_1() as f64);
    let lead = (8.0 * (n + 1.0) * (n_1 + 1.0)).ln() - ((n + 4.0) * (n + 2.0)).ln();
    lead + ln_factorial(t.n_a1) + ln_factorial(t.n_b1) + ln_factorial(t.n_a0) + ln_factorial(t.n_b0) + ln_factorial(t.n())
        - ln_factorial(t.n_1() + 1)
        - ln_factorial(t.n_0())
        - ln_factorial(t.n_a())
        - ln_factorial(t.n_b())
}

pub fn gd_bf_poisson(table: &ContingencyTable) -> f64 {
    ln_gd_bf_poisson(table).exp()
}

/// `ln` of the independent-multinomial (fixed row totals) Gunel–Dickey Bayes factor.
pub fn ln_gd_bf_indep_multinomial(t: &ContingencyTable) -> f64 {
    let (n, n_a, n_b) = (t.n(), t.n_a(), t.n_b());
    ln_binomial(n, t.n_1()) - ln_binomial(n_a, t.n_a1) - ln_binomial(n_b, t.n_b1) + ((n + 1) as f64).ln()
        - ((n_a + 1) as f64).ln()
        - ((n_b + 1) as f64).ln()
}

pub fn gd_bf_indep_multinomial(table: &ContingencyTable) -> f64 {
    ln_gd_bf_indep_multinomial(table).exp()
}

/// Default per-cell truncation for the Poisson expectation.
pub const DEFAULT_POISSON_TRUNCATION: u64 = 50;

/// Null sampling scheme for [`gd_expectation_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum ExpectationScheme {
    /// Independent Poisson cells with rates `(a1, a0, b1, b0)`; the sum runs over
    /// `0..=truncation` per cell.
    Poisson { rates: [f64; 4], truncation: u64 },
    /// Two binomial rows with a common rate.
    IndepMultinomial { theta: f64, n_a: u64, n_b: u64 },
    /// Same sum as `IndepMultinomial`, taken at the null point of
    /// `alternative`, with the Bayes factor replaced by the simple block e-value.
    SimpleE { alternative: AlternativePoint, n_a: u64, n_b: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectationReport {
    pub value: f64,
    /// Null probability of the tables left out of the sum.
    pub omitted_mass: f64,
}

fn ln_poisson_pmf(k: u64, lambda: f64) -> f64 {
    k as f64 * lambda.ln() - lambda - ln_factorial(k)
}

/// `P(N > truncation)` for `N ~ Poisson(lambda)`.
fn poisson_tail(lambda: f64, truncation: u64) -> f64 {
    let cdf: f64 = (0..=truncation).map(|k| ln_poisson_pmf(k, lambda).exp()).sum();
    if cdf < 0.5 {
        return 1.0 - cdf;
    }
    // Sum the tail directly so tiny remainders do not cancel to zero.
    let mut k = truncation + 1;
    let mut term = ln_poisson_pmf(k, lambda).exp();
    let mut tail = 0.0;
    while term > 0.0 && (k as f64 <= lambda || term > tail * 1e-17) {
        tail += term;
        k += 1;
        term *= lambda / k as f64;
    }
    tail.min(1.0)
}

fn ln_binomial_pmf(k: u64, n: u64, theta: f64) -> f64 {
    ln_binomial(n, k) + crate::numeric::ln_bernoulli_likelihood(theta, k, n)
}

fn check_rate(theta: f64) -> Result<()> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(invalid(format!("theta must lie in (0, 1), got {theta}")));
    }
    Ok(())
}

fn check_rows(n_a: u64, n_b: u64) -> Result<()> {
    if n_a == 0 || n_b == 0 {
        return Err(invalid(format!("row totals must be >= 1, got ({n_a}, {n_b})")));
    }
    Ok(())
}

/// Null expectation of a Gunel–Dickey Bayes factor, or of a simple e-value for comparison.
pub fn gd_expectation_check(scheme: &ExpectationScheme) -> Result<ExpectationReport> {
    match *scheme {
        ExpectationScheme::Poisson { rates, truncation } => {
            if truncation < 1 {
                return Err(invalid("truncation must be >= 1"));
            }
            if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
                return Err(invalid(format!("poisson rates must be positive, got {rates:?}")));
            }
            let pmfs: Vec<Vec<f64>> = rates
                .iter()
                .map(|&l| (0..=truncation).map(|k| ln_poisson_pmf(k, l)).collect())
                .collect();
            let mut value = 0.0;
            for a1 in 0..=truncation {
                for a0 in 0..=truncation {
                    let la = pmfs[0][a1 as usize] + pmfs[1][a0 as usize];
                    for b1 in 0..=truncation {
                        let lab = la + pmfs[2][b1 as usize];
                        for b0 in 0..=truncation {
                            let t = ContingencyTable::new(a1, a0, b1, b0);
                            value += (lab + pmfs[3][b0 as usize] + ln_gd_bf_poisson(&t)).exp();
                        }
                    }
                }
            }
            let ln_covered: f64 = rates.iter().map(|&l| (-poisson_tail(l, truncation)).ln_1p()).sum();
            Ok(ExpectationReport {
                value,
                omitted_mass: -ln_covered.exp_m1(),
            })
        }
        ExpectationScheme::IndepMultinomial { theta, n_a, n_b } => {
            check_rate(theta)?;
            check_rows(n_a, n_b)?;
            let value = binomial_rows_sum(theta, n_a, n_b, |t| Ok(ln_gd_bf_indep_multinomial(t)))?;
            Ok(ExpectationReport { value, omitted_mass: 0.0 })
        }
        ExpectationScheme::SimpleE { alternative: alt, n_a, n_b } => {
            alt.validate()?;
            check_rows(n_a, n_b)?;
            let theta_0 = (n_a as f64 * alt.theta_a + n_b as f64 * alt.theta_b) / (n_a + n_b) as f64;
            check_rate(theta_0)?;
            let value = binomial_rows_sum(theta_0, n_a, n_b, |t| {
                log_e_from_counts(t.n_a1, n_a, t.n_b1, n_b, &alt, theta_0)
            })?;
            Ok(ExpectationReport { value, omitted_mass: 0.0 })
        }
    }
}

fn binomial_rows_sum(
    theta: f64,
    n_a: u64,
    n_b: u64,
    ln_stat: impl Fn(&ContingencyTable) -> Result<f64>,
) -> Result<f64> {
    let mut value = 0.0;
    for a1 in 0..=n_a {
        for b1 in 0..=n_b {
            let t = ContingencyTable::new(a1, n_a - a1, b1, n_b - b1);
            value += (ln_binomial_pmf(a1, n_a, theta) + ln_binomial_pmf(b1, n_b, theta) + ln_stat(&t)?).exp();
        }
    }
    Ok(value)
}

//! Priors on a restricted alternative `{(theta_a, theta_b) : d(theta_a, theta_b) = delta}`.
//!
//! On the restricted set `theta_b` is a function of `theta_a`, so the prior is
//! one-dimensional. It is discretized on the grid `rho_i = i K`, mapped onto
//! `theta_a = offset + (1 - zeta) rho`, weighted by a Beta(alpha, beta)
//! density in `rho` and normalized. Grid points that land on the edge of the
//! unit square are dropped so every likelihood stays positive.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{AlternativePoint, BetaPriorConfig, StreamState};
use crate::numeric::log_sum_exp;

/// Effect-size measure between the two group rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Divergence {
    /// `theta_b - theta_a`.
    Difference,
    /// `ln[(theta_b / (1 - theta_b)) ((1 - theta_a) / theta_a)]`.
    #[serde(alias = "log-odds", alias = "log_odds")]
    LogOddsRatio,
}

impl std::str::FromStr for Divergence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "difference" => Ok(Divergence::Difference),
            "log-odds" | "log_odds" | "log_odds_ratio" => Ok(Divergence::LogOddsRatio),
            other => Err(invalid(format!("unknown divergence '{other}'"))),
        }
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Divergence {
    /// `d(theta_a, theta_b)`.
    pub fn apply(&self, theta_a: f64, theta_b: f64) -> f64 {
        match self {
            Divergence::Difference => theta_b - theta_a,
            Divergence::LogOddsRatio => logit(theta_b) - logit(theta_a),
        }
    }

    fn inverse_unchecked(&self, delta: f64, theta_a: f64) -> f64 {
        match self {
            Divergence::Difference => theta_a + delta,
            Divergence::LogOddsRatio => logistic(logit(theta_a) + delta),
        }
    }

    /// Width `zeta` removed from the `theta_a` range.
    pub fn zeta(&self, delta: f64) -> f64 {
        match self {
            Divergence::Difference => delta.abs(),
            Divergence::LogOddsRatio => 0.0,
        }
    }

    /// Open interval of `theta_a` values whose image under the inverse lies in (0, 1).
    pub fn domain(&self, delta: f64) -> (f64, f64) {
        match self {
            Divergence::Difference if delta >= 0.0 => (0.0, 1.0 - delta),
            Divergence::Difference => (-delta, 1.0),
            Divergence::LogOddsRatio => (0.0, 1.0),
        }
    }
}

/// Returns the `theta_b` with `d(theta_a, theta_b) = delta`.
pub fn d_inverse(divergence: Divergence, delta: f64, theta_a: f64) -> Result<f64> {
    if !delta.is_finite() {
        return Err(invalid(format!("delta must be finite, got {delta}")));
    }
    let (lo, hi) = divergence.domain(delta);
    if !(theta_a > lo && theta_a < hi) {
        return Err(Error::Domain { theta_a, delta });
    }
    Ok(divergence.inverse_unchecked(delta, theta_a))
}

/// The single alternative point when the control-group rate is known.
pub fn point_alternative_from_rate(theta_a: f64, divergence: Divergence, delta: f64) -> Result<AlternativePoint> {
    let theta_b = d_inverse(divergence, delta, theta_a)?;
    AlternativePoint::new(theta_a, theta_b)
}

#[derive(Debug)]
struct Grid {
    rho: Vec<f64>,
    theta_a: Vec<f64>,
    theta_b: Vec<f64>,
    ln_theta_a: Vec<f64>,
    ln_one_minus_a: Vec<f64>,
    ln_theta_b: Vec<f64>,
    ln_one_minus_b: Vec<f64>,
}

/// Discretized prior (or posterior) on a restricted alternative.
///
/// Immutable once built; updates return new values sharing the grid.
#[derive(Debug, Clone)]
pub struct RestrictedPrior {
    divergence: Divergence,
    delta: f64,
    zeta: f64,
    grid_precision: f64,
    alpha: f64,
    beta: f64,
    grid: Arc<Grid>,
    weights: Vec<f64>,
    ln_weights: Vec<f64>,
}

fn check_precision(k: f64) -> Result<usize> {
    if !(k > 0.0 && k <= 1.0) {
        return Err(Error::Config(format!("grid precision must lie in (0, 1], got {k}")));
    }
    let count = (1.0 / k).round();
    if (count * k - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("1/K must be a positive integer, got K = {k}")));
    }
    Ok(count as usize)
}

/// Builds the discretized prior on the restricted alternative.
pub fn build_grid(divergence: Divergence, delta: f64, grid_precision: f64, alpha: f64, beta: f64) -> Result<RestrictedPrior> {
    if !delta.is_finite() || delta == 0.0 {
        return Err(Error::Config(format!("delta must be finite and nonzero, got {delta}")));
    }
    if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
        return Err(Error::Config(format!("beta parameters must be positive, got ({alpha}, {beta})")));
    }
    let count = check_precision(grid_precision)?;
    let zeta = divergence.zeta(delta);
    if zeta >= 1.0 {
        return Err(Error::Config(format!("|delta| = {zeta} leaves no room for theta_a")));
    }
    // For a negative difference the range of theta_a starts at |delta|.
    let offset = match divergence {
        Divergence::Difference if delta < 0.0 => zeta,
        _ => 0.0,
    };
    let (lo, hi) = divergence.domain(delta);

    let mut rho = Vec::new();
    let mut theta_a = Vec::new();
    let mut theta_b = Vec::new();
    let mut ln_density = Vec::new();
    for i in 1..=count {
        let r = i as f64 / count as f64;
        if r >= 1.0 {
            // rho = 1 maps onto the edge of the unit square.
            continue;
        }
        let ta = offset + (1.0 - zeta) * r;
        if !(ta > lo && ta < hi) {
            continue;
        }
        let tb = divergence.inverse_unchecked(delta, ta);
        if !(tb > 0.0 && tb < 1.0) {
            continue;
        }
        rho.push(r);
        theta_a.push(ta);
        theta_b.push(tb);
        ln_density.push((alpha - 1.0) * r.ln() + (beta - 1.0) * (1.0 - r).ln());
    }
    if rho.is_empty() {
        return Err(Error::Config(format!(
            "no feasible grid points for K = {grid_precision}, delta = {delta}"
        )));
    }
    let norm = log_sum_exp(&ln_density);
    let ln_weights: Vec<f64> = ln_density.iter().map(|l| l - norm).collect();
    let weights = ln_weights.iter().map(|l| l.exp()).collect();
    let grid = Grid {
        ln_theta_a: theta_a.iter().map(|t| t.ln()).collect(),
        ln_one_minus_a: theta_a.iter().map(|t| (-t).ln_1p()).collect(),
        ln_theta_b: theta_b.iter().map(|t| t.ln()).collect(),
        ln_one_minus_b: theta_b.iter().map(|t| (-t).ln_1p()).collect(),
        rho,
        theta_a,
        theta_b,
    };
    Ok(RestrictedPrior {
        divergence,
        delta,
        zeta,
        grid_precision,
        alpha,
        beta,
        grid: Arc::new(grid),
        weights,
        ln_weights,
    })
}

impl RestrictedPrior {
    /// A prior on explicitly listed `theta_a` points.
    ///
    /// Unlike [`build_grid`] this admits `theta_b` on the closed interval
    /// [0, 1]; zero-likelihood points simply lose their mass on update.
    pub fn from_points(divergence: Divergence, delta: f64, theta_a: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if theta_a.is_empty() || theta_a.len() != weights.len() {
            return Err(Error::Config("need one weight per grid point".into()));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| w.is_nan() || *w < 0.0) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("weights must be a probability vector, sum = {total}")));
        }
        let mut theta_b = Vec::with_capacity(theta_a.len());
        for &ta in &theta_a {
            if !(0.0..=1.0).contains(&ta) {
                return Err(Error::Domain { theta_a: ta, delta });
            }
            let tb = divergence.inverse_unchecked(delta, ta);
            if !(0.0..=1.0).contains(&tb) {
                return Err(Error::Domain { theta_a: ta, delta });
            }
            theta_b.push(tb);
        }
        let grid = Grid {
            rho: theta_a.clone(),
            ln_theta_a: theta_a.iter().map(|t| t.ln()).collect(),
            ln_one_minus_a: theta_a.iter().map(|t| (-t).ln_1p()).collect(),
            ln_theta_b: theta_b.iter().map(|t| t.ln()).collect(),
            ln_one_minus_b: theta_b.iter().map(|t| (-t).ln_1p()).collect(),
            theta_a,
            theta_b,
        };
        Ok(Self {
            divergence,
            delta,
            zeta: divergence.zeta(delta),
            grid_precision: f64::NAN,
            alpha: f64::NAN,
            beta: f64::NAN,
            grid: Arc::new(grid),
            ln_weights: weights.iter().map(|w| w.ln()).collect(),
            weights,
        })
    }

    fn with_ln_weights(&self, ln_weights: Vec<f64>) -> Self {
        Self {
            weights: ln_weights.iter().map(|l| l.exp()).collect(),
            ln_weights,
            grid: Arc::clone(&self.grid),
            ..*self
        }
    }

    pub fn divergence(&self) -> Divergence {
        self.divergence
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn grid_precision(&self) -> f64 {
        self.grid_precision
    }

    /// Base beta prior parameters `(alpha, beta)`.
    pub fn beta_params(&self) -> (f64, f64) {
        (self.alpha, self.beta)
    }

    pub fn rho_grid(&self) -> &[f64] {
        &self.grid.rho
    }

    pub fn theta_a_grid(&self) -> &[f64] {
        &self.grid.theta_a
    }

    pub fn theta_b_grid(&self) -> &[f64] {
        &self.grid.theta_b
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Posterior over the grid given the counts of all completed blocks.
pub fn grid_posterior_update(prior: &RestrictedPrior, state: &StreamState) -> Result<RestrictedPrior> {
    let g = &prior.grid;
    let (u_a, f_a) = (state.u_a as f64, (state.t_a - state.u_a) as f64);
    let (u_b, f_b) = (state.u_b as f64, (state.t_b - state.u_b) as f64);
    // Terms with a zero count are skipped so that 0 * ln 0 stays 0.
    let term = |count: f64, ln_p: f64| if count == 0.0 { 0.0 } else { count * ln_p };
    let log_post: Vec<f64> = (0..prior.len())
        .map(|i| {
            prior.ln_weights[i]
                + term(u_a, g.ln_theta_a[i])
                + term(f_a, g.ln_one_minus_a[i])
                + term(u_b, g.ln_theta_b[i])
                + term(f_b, g.ln_one_minus_b[i])
        })
        .collect();
    let norm = log_sum_exp(&log_post);
    if !norm.is_finite() {
        return Err(Error::Internal("posterior over the grid has no mass".into()));
    }
    let ln_weights: Vec<f64> = log_post.iter().map(|l| l - norm).collect();
    Ok(prior.with_ln_weights(ln_weights))
}

/// Posterior mean of `theta_a` and the matching `theta_b = d^{-1}(delta; mean)`.
pub fn grid_posterior_means(prior: &RestrictedPrior) -> (f64, f64) {
    let theta_a: f64 = prior
        .weights
        .iter()
        .zip(&prior.grid.theta_a)
        .map(|(w, t)| w * t)
        .sum();
    (theta_a, prior.divergence.inverse_unchecked(prior.delta, theta_a))
}

/// Restriction settings as read from JSON.
///
/// A `control_rate` selects the single point alternative instead of a grid prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestrictionConfig {
    pub divergence: Divergence,
    pub delta: f64,
    #[serde(default = "default_precision")]
    pub grid_precision: f64,
    #[serde(default = "default_gamma")]
    pub alpha: f64,
    #[serde(default = "default_gamma")]
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_rate: Option<f64>,
}

pub const DEFAULT_GRID_PRECISION: f64 = 0.001;

fn default_precision() -> f64 {
    DEFAULT_GRID_PRECISION
}

fn default_gamma() -> f64 {
    BetaPriorConfig::DEFAULT_GAMMA
}

impl RestrictionConfig {
    /// Grid prior with default precision and beta parameters.
    pub fn new(divergence: Divergence, delta: f64) -> Self {
        Self {
            divergence,
            delta,
            grid_precision: DEFAULT_GRID_PRECISION,
            alpha: BetaPriorConfig::DEFAULT_GAMMA,
            beta: BetaPriorConfig::DEFAULT_GAMMA,
            control_rate: None,
        }
    }

    pub fn with_control_rate(self, rate: f64) -> Self {
        Self {
            control_rate: Some(rate),
            ..self
        }
    }

    pub fn build_prior(&self) -> Result<RestrictedPrior> {
        build_grid(self.divergence, self.delta, self.grid_precision, self.alpha, self.beta)
    }
}

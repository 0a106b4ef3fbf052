//! Block e-variables for two streams.
//!
//! For a simple alternative `(theta_a, theta_b)` the block e-value is the
//! likelihood ratio of the alternative against the null point
//! `theta_0 = (n_a/n) theta_a + (n_b/n) theta_b`. Its expectation is at most
//! one under every `P_theta` with `theta_a = theta_b = theta`, so products of
//! such factors form a test martingale. The general finite-alphabet form
//! replaces the Bernoulli null point by the per-outcome mixture
//! `(n_a/n) q_a(y) + (n_b/n) q_b(y)`.
//!
//! Everything is evaluated in natural-log space.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{AlternativePoint, BetaPriorConfig, Block, BlockDesign, StreamState};
use crate::numeric::{ln_bernoulli_likelihood, ln_beta};

/// Log block e-value from per-group success counts.
///
/// The value only depends on the counts, so the hot simulation paths call
/// this directly instead of materializing a [`Block`].
pub fn log_e_from_counts(
    k_a: u64,
    n_a: u64,
    k_b: u64,
    n_b: u64,
    alt: &AlternativePoint,
    theta_0: f64,
) -> Result<f64> {
    let num = ln_bernoulli_likelihood(alt.theta_a, k_a, n_a)
        + ln_bernoulli_likelihood(alt.theta_b, k_b, n_b);
    let den = ln_bernoulli_likelihood(theta_0, k_a + k_b, n_a + n_b);
    if den == f64::NEG_INFINITY {
        // theta_0 in {0, 1} forces theta_a = theta_b = theta_0, so the
        // numerator vanishes as well.
        return Err(Error::DegenerateEvidence);
    }
    if num == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(num - den)
}

/// Natural log of the simple block e-value.
pub fn simple_block_log_e(block: &Block, design: &BlockDesign, alt: &AlternativePoint) -> Result<f64> {
    block.check_design(design)?;
    alt.validate()?;
    log_e_from_counts(
        block.successes_a(),
        design.n_a as u64,
        block.successes_b(),
        design.n_b as u64,
        alt,
        alt.null_point(design),
    )
}

/// The simple block e-value `p_{theta_a}(ys_a) p_{theta_b}(ys_b) / p_{theta_0}(ys_a, ys_b)`.
///
/// Returns `0` when the alternative rules out the block but the null does not,
/// and [`Error::DegenerateEvidence`] when both rule it out.
pub fn simple_block_e(block: &Block, design: &BlockDesign, alt: &AlternativePoint) -> Result<f64> {
    simple_block_log_e(block, design, alt).map(f64::exp)
}

const PMF_TOLERANCE: f64 = 1e-9;

fn check_pmf(name: &str, q: &[f64]) -> Result<()> {
    if q.is_empty() {
        return Err(invalid(format!("{name} is empty")));
    }
    if q.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(invalid(format!("{name} has negative or non-finite mass")));
    }
    let total: f64 = q.iter().sum();
    if (total - 1.0).abs() > PMF_TOLERANCE {
        return Err(invalid(format!("{name} sums to {total}, expected 1")));
    }
    Ok(())
}

/// Log of the finite-alphabet block e-value.
///
/// `ys_a` and `ys_b` hold symbol indices into the shared alphabet of `q_a`
/// and `q_b`.
pub fn simple_block_log_e_general(
    ys_a: &[usize],
    ys_b: &[usize],
    design: &BlockDesign,
    q_a: &[f64],
    q_b: &[f64],
) -> Result<f64> {
    design.validate()?;
    check_pmf("q_a", q_a)?;
    check_pmf("q_b", q_b)?;
    if q_a.len() != q_b.len() {
        return Err(invalid("q_a and q_b must share one alphabet"));
    }
    if ys_a.len() != design.n_a || ys_b.len() != design.n_b {
        return Err(invalid("block does not match the design"));
    }
    let (w_a, w_b) = (design.weight_a(), design.weight_b());
    let mut num = 0.0;
    let mut den = 0.0;
    let mut tally = |y: usize, q: &[f64]| -> Result<()> {
        if y >= q_a.len() {
            return Err(invalid(format!("symbol {y} outside alphabet of size {}", q_a.len())));
        }
        num += q[y].ln();
        den += (w_a * q_a[y] + w_b * q_b[y]).ln();
        Ok(())
    };
    for &y in ys_a {
        tally(y, q_a)?;
    }
    for &y in ys_b {
        tally(y, q_b)?;
    }
    if den == f64::NEG_INFINITY {
        return Err(Error::DegenerateEvidence);
    }
    Ok(num - den)
}

pub fn simple_block_e_general(
    ys_a: &[usize],
    ys_b: &[usize],
    design: &BlockDesign,
    q_a: &[f64],
    q_b: &[f64],
) -> Result<f64> {
    simple_block_log_e_general(ys_a, ys_b, design, q_a, q_b).map(f64::exp)
}

/// Posterior-mean plug-in rates for the next block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorMeans {
    pub theta_a: f64,
    pub theta_b: f64,
    pub theta_0: f64,
}

impl PosteriorMeans {
    pub fn alternative(&self) -> AlternativePoint {
        AlternativePoint {
            theta_a: self.theta_a,
            theta_b: self.theta_b,
        }
    }
}

/// Beta posterior means given the counts of all completed blocks.
pub fn posterior_means(prior: &BetaPriorConfig, state: &StreamState, design: &BlockDesign) -> PosteriorMeans {
    let theta_a = (state.u_a as f64 + prior.alpha_a) / (state.t_a as f64 + prior.alpha_a + prior.beta_a);
    let theta_b = (state.u_b as f64 + prior.alpha_b) / (state.t_b as f64 + prior.alpha_b + prior.beta_b);
    PosteriorMeans {
        theta_a,
        theta_b,
        theta_0: design.weight_a() * theta_a + design.weight_b() * theta_b,
    }
}

/// Both sides of the telescoping identity for the 1/1 design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BayesFactorIdentity {
    /// `ln` of the product of one-step posterior-predictive numerators.
    pub log_predictive_product: f64,
    /// `ln` of the product of the two beta-binomial marginal likelihoods.
    pub log_marginal_product: f64,
}

impl BayesFactorIdentity {
    pub fn predictive_product(&self) -> f64 {
        self.log_predictive_product.exp()
    }

    pub fn marginal_product(&self) -> f64 {
        self.log_marginal_product.exp()
    }

    /// `|lhs / rhs - 1|`.
    pub fn relative_gap(&self) -> f64 {
        (self.log_predictive_product - self.log_marginal_product).exp_m1().abs()
    }
}

/// Computes the prequential numerator and the Bayes marginal likelihood for
/// a stream of 1/1 blocks under independent beta priors.
pub fn bayes_factor_identity_check(prior: &BetaPriorConfig, blocks: &[Block]) -> Result<BayesFactorIdentity> {
    prior.validate()?;
    let design = BlockDesign::paired();
    let mut state = StreamState::default();
    let mut log_pred = 0.0;
    for block in blocks {
        if block.ys_a.len() != 1 || block.ys_b.len() != 1 {
            return Err(Error::UnsupportedDesign(format!(
                "identity holds for n_a = n_b = 1 only, got block of ({}, {})",
                block.ys_a.len(),
                block.ys_b.len()
            )));
        }
        let means = posterior_means(prior, &state, &design);
        log_pred += ln_bernoulli_likelihood(means.theta_a, block.successes_a(), 1)
            + ln_bernoulli_likelihood(means.theta_b, block.successes_b(), 1);
        state.absorb(block);
    }
    let marginal = |alpha: f64, beta: f64, u: u64, t: u64| {
        ln_beta(alpha + u as f64, beta + (t - u) as f64) - ln_beta(alpha, beta)
    };
    let log_marg = marginal(prior.alpha_a, prior.beta_a, state.u_a, state.t_a)
        + marginal(prior.alpha_b, prior.beta_b, state.u_b, state.t_b);
    Ok(BayesFactorIdentity {
        log_predictive_product: log_pred,
        log_marginal_product: log_marg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bits(v: u32, len: usize) -> Vec<bool> {
        (0..len).map(|i| (v >> i) & 1 == 1).collect()
    }

    /// Enumerates every block of the design and returns the largest null
    /// expectation over a 0.01 grid of theta. Independent of the count-based
    /// implementation: probabilities are products over individual outcomes.
    fn sup_null_expectation(design: &BlockDesign, alt: &AlternativePoint) -> f64 {
        let n = design.n();
        let blocks: Vec<Block> = (0..1u32 << n)
            .map(|v| {
                let all = bits(v, n);
                Block::new(all[..design.n_a].to_vec(), all[design.n_a..].to_vec())
            })
            .collect();
        let values: Vec<f64> = blocks
            .iter()
            .map(|b| simple_block_e(b, design, alt).unwrap())
            .collect();
        (0..=100)
            .map(|i| {
                let theta = i as f64 / 100.0;
                blocks
                    .iter()
                    .zip(&values)
                    .map(|(b, s)| {
                        let p: f64 = b
                            .ys_a
                            .iter()
                            .chain(&b.ys_b)
                            .map(|&y| if y { theta } else { 1.0 - theta })
                            .product();
                        p * s
                    })
                    .sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn equal_rates_give_unit_evalue() {
        let d = BlockDesign::paired();
        let alt = AlternativePoint::new(0.3, 0.3).unwrap();
        for v in 0..4u32 {
            let b = Block::new(bits(v, 1), bits(v >> 1, 1));
            assert_eq!(simple_block_e(&b, &d, &alt).unwrap(), 1.0);
        }
    }

    #[test]
    fn extreme_point_alternative() {
        let d = BlockDesign::paired();
        let alt = AlternativePoint::new(0.0, 1.0).unwrap();
        let b = Block::from_bits(&[0], &[1]).unwrap();
        assert!((simple_block_e(&b, &d, &alt).unwrap() - 4.0).abs() < 1e-12);
        // numerator zero, null positive
        let b = Block::from_bits(&[1], &[1]).unwrap();
        assert_eq!(simple_block_e(&b, &d, &alt).unwrap(), 0.0);
    }

    #[test]
    fn zero_over_zero_is_an_error() {
        let d = BlockDesign::paired();
        let alt = AlternativePoint::new(1.0, 1.0).unwrap();
        let b = Block::from_bits(&[0], &[1]).unwrap();
        assert_eq!(simple_block_e(&b, &d, &alt), Err(Error::DegenerateEvidence));
    }

    #[test]
    fn mismatched_block_is_rejected() {
        let alt = AlternativePoint::new(0.2, 0.6).unwrap();
        let b = Block::from_bits(&[0, 1], &[1]).unwrap();
        assert!(simple_block_e(&b, &BlockDesign::paired(), &alt).is_err());
    }

    #[test]
    fn two_one_design_is_an_evariable() {
        let d = BlockDesign::new(2, 1).unwrap();
        let alt = AlternativePoint::new(0.2, 0.6).unwrap();
        assert!(sup_null_expectation(&d, &alt) <= 1.0 + 1e-12);
    }

    #[test]
    fn evariable_over_small_designs_and_alternatives() {
        for n_a in 1..=5 {
            for n_b in 1..=(6 - n_a) {
                let d = BlockDesign::new(n_a, n_b).unwrap();
                for ia in (0..=20).step_by(3) {
                    for ib in (0..=20).step_by(4) {
                        if ia == ib {
                            // equal rates give E = 1 wherever it is defined
                            continue;
                        }
                        let alt = AlternativePoint::new(ia as f64 * 0.05, ib as f64 * 0.05).unwrap();
                        let sup = sup_null_expectation(&d, &alt);
                        assert!(sup <= 1.0 + 1e-10, "design {d:?} alt {alt:?}: {sup}");
                    }
                }
            }
        }
    }

    #[test]
    fn null_denominator_is_unique_for_paired_design() {
        // With a Bernoulli(theta') denominator the ratio is an e-variable only
        // when theta' sits at the induced null point.
        let (ta, tb) = (0.2, 0.7);
        let theta_0 = 0.45;
        let q = |y: bool, t: f64| if y { t } else { 1.0 - t };
        let valid: Vec<f64> = (1..1000)
            .map(|i| i as f64 / 1000.0)
            .filter(|&tp| {
                (0..=1000).all(|k| {
                    let th = k as f64 / 1000.0;
                    let mut e = 0.0;
                    for ya in [false, true] {
                        for yb in [false, true] {
                            let ratio = q(ya, ta) * q(yb, tb) / (q(ya, tp) * q(yb, tp));
                            e += q(ya, th) * q(yb, th) * ratio;
                        }
                    }
                    e <= 1.0 + 1e-12
                })
            })
            .collect();
        assert!(!valid.is_empty());
        for tp in valid {
            assert!((tp - theta_0).abs() <= 0.001 + 1e-12, "theta' = {tp}");
        }
    }

    #[test]
    fn general_matches_bernoulli() {
        let d = BlockDesign::new(2, 3).unwrap();
        let (ta, tb) = (0.15, 0.8);
        let alt = AlternativePoint::new(ta, tb).unwrap();
        for v in 0..32u32 {
            let all = bits(v, 5);
            let block = Block::new(all[..2].to_vec(), all[2..].to_vec());
            let sym = |ys: &[bool]| ys.iter().map(|&y| y as usize).collect::<Vec<_>>();
            let g = simple_block_e_general(
                &sym(&block.ys_a),
                &sym(&block.ys_b),
                &d,
                &[1.0 - ta, ta],
                &[1.0 - tb, tb],
            )
            .unwrap();
            let s = simple_block_e(&block, &d, &alt).unwrap();
            assert!((g - s).abs() <= 1e-12 * s.max(1.0), "{g} vs {s}");
        }
    }

    #[test]
    fn general_equal_pmfs_give_one() {
        let d = BlockDesign::new(1, 2).unwrap();
        let q = [0.2, 0.5, 0.3];
        for y in 0..27usize {
            let (a, b1, b2) = (y % 3, (y / 3) % 3, y / 9);
            let e = simple_block_e_general(&[a], &[b1, b2], &d, &q, &q).unwrap();
            assert!((e - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn general_rejects_unnormalized_pmf() {
        let d = BlockDesign::paired();
        let err = simple_block_e_general(&[0], &[1], &d, &[0.5, 0.6], &[0.5, 0.5]);
        assert!(matches!(err, Err(Error::Invalid(_))));
        let err = simple_block_e_general(&[0], &[3], &d, &[0.5, 0.5], &[0.5, 0.5]);
        assert!(matches!(err, Err(Error::Invalid(_))));
    }

    #[test]
    fn three_symbol_alphabet_is_an_evariable() {
        let d = BlockDesign::paired();
        let q_a = [0.5, 0.3, 0.2];
        let q_b = [0.2, 0.3, 0.5];
        let s: Vec<f64> = (0..9)
            .map(|k| simple_block_e_general(&[k % 3], &[k / 3], &d, &q_a, &q_b).unwrap())
            .collect();
        let mut worst = f64::NEG_INFINITY;
        for i in 0..=100 {
            for j in 0..=(100 - i) {
                let p = [i as f64 / 100.0, j as f64 / 100.0, (100 - i - j) as f64 / 100.0];
                let e: f64 = (0..9).map(|k| p[k % 3] * p[k / 3] * s[k]).sum();
                worst = worst.max(e);
            }
        }
        assert!(worst <= 1.0 + 1e-10, "{worst}");
    }

    #[test]
    fn posterior_mean_examples() {
        let prior = BetaPriorConfig::symmetric(0.18).unwrap();
        let state = StreamState {
            u_a: 1,
            t_a: 4,
            u_b: 3,
            t_b: 4,
            j: 4,
        };
        let m = posterior_means(&prior, &state, &BlockDesign::paired());
        assert!((m.theta_a - 1.18 / 4.36).abs() < 1e-15);
        assert!((m.theta_b - 3.18 / 4.36).abs() < 1e-15);
        assert!((m.theta_0 - 0.5).abs() < 1e-15);
        assert!((m.theta_a - 0.27064).abs() < 1e-5);

        let flat = BetaPriorConfig::symmetric(1.0).unwrap();
        let m = posterior_means(&flat, &StreamState::default(), &BlockDesign::paired());
        assert_eq!((m.theta_a, m.theta_b, m.theta_0), (0.5, 0.5, 0.5));
    }

    #[test]
    fn proportional_prior_pools_counts() {
        let design = BlockDesign::new(2, 3).unwrap();
        let kappa = design.kappa();
        let (alpha_a, beta_a) = (0.7, 1.3);
        let prior = BetaPriorConfig::new(alpha_a, beta_a, kappa * alpha_a, kappa * beta_a).unwrap();
        let state = StreamState {
            u_a: 5,
            t_a: 14,
            u_b: 11,
            t_b: 21,
            j: 7,
        };
        let m = posterior_means(&prior, &state, &design);
        let pooled = (state.u() as f64 + (1.0 + kappa) * alpha_a)
            / ((state.j * design.n() as u64) as f64 + (1.0 + kappa) * alpha_a + (1.0 + kappa) * beta_a);
        assert!((m.theta_0 - pooled).abs() < 1e-12);
    }

    #[test]
    fn identity_small_cases() {
        let prior = BetaPriorConfig::symmetric(1.0).unwrap();
        let empty = bayes_factor_identity_check(&prior, &[]).unwrap();
        assert_eq!((empty.predictive_product(), empty.marginal_product()), (1.0, 1.0));
        let blocks = vec![
            Block::from_bits(&[1], &[0]).unwrap(),
            Block::from_bits(&[1], &[1]).unwrap(),
            Block::from_bits(&[0], &[1]).unwrap(),
        ];
        let r = bayes_factor_identity_check(&prior, &blocks).unwrap();
        // Uniform prior: marginal of a sequence with k ones in n is k!(n-k)!/(n+1)!.
        let exact = (2.0 / 24.0) * (2.0 / 24.0);
        assert!((r.marginal_product() - exact).abs() < 1e-15);
        assert!(r.relative_gap() < 1e-12);
        let bad = vec![Block::from_bits(&[1, 0], &[0]).unwrap()];
        assert!(matches!(
            bayes_factor_identity_check(&prior, &bad),
            Err(Error::UnsupportedDesign(_))
        ));
    }

    proptest! {
        #[test]
        fn within_block_order_does_not_matter(
            ys in proptest::collection::vec(any::<bool>(), 4),
            yb in proptest::collection::vec(any::<bool>(), 2),
            ta in 0.01f64..0.99,
            tb in 0.01f64..0.99,
        ) {
            let d = BlockDesign::new(4, 2).unwrap();
            let alt = AlternativePoint::new(ta, tb).unwrap();
            let base = simple_block_log_e(&Block::new(ys.clone(), yb.clone()), &d, &alt).unwrap();
            let mut rev = ys.clone();
            rev.reverse();
            let mut rot = ys.clone();
            rot.rotate_left(1);
            for perm in [rev, rot] {
                let v = simple_block_log_e(&Block::new(perm, yb.clone()), &d, &alt).unwrap();
                prop_assert!((v - base).abs() <= 1e-15);
            }
        }

        #[test]
        fn mixture_denominator_equals_bernoulli_null(
            v in 0u32..64,
            n_a in 1usize..4,
            n_b in 1usize..4,
            ta in 0.0f64..=1.0,
            tb in 0.0f64..=1.0,
        ) {
            let d = BlockDesign::new(n_a, n_b).unwrap();
            let all = bits(v, n_a + n_b);
            let block = Block::new(all[..n_a].to_vec(), all[n_a..].to_vec());
            let sym = |ys: &[bool]| ys.iter().map(|&y| y as usize).collect::<Vec<_>>();
            let g = simple_block_log_e_general(&sym(&block.ys_a), &sym(&block.ys_b), &d, &[1.0 - ta, ta], &[1.0 - tb, tb]);
            let s = simple_block_log_e(&block, &d, &AlternativePoint::new(ta, tb).unwrap());
            match (g, s) {
                (Ok(g), Ok(s)) if g.is_finite() => prop_assert!((g - s).abs() <= 1e-12 * s.abs().max(1.0)),
                (Ok(g), Ok(s)) => prop_assert_eq!(g, s),
                (Err(a), Err(b)) => prop_assert_eq!(a, b),
                (g, s) => prop_assert!(false, "{:?} vs {:?}", g, s),
            }
        }

        #[test]
        fn young_inequality_fact(
            n_a in 1u32..20,
            n_b in 1u32..20,
            u in 0.0f64..1.0,
            frac in 0.0f64..=1.0,
        ) {
            // Sample (u, v) on or below the line n_a u + n_b v = n.
            let n = (n_a + n_b) as f64;
            let u = u * n / n_a as f64;
            let v = frac * (n - n_a as f64 * u) / n_b as f64;
            let log = n_a as f64 * u.ln() + n_b as f64 * v.ln();
            prop_assert!(log <= 1e-12, "u={u} v={v} log={log}");
        }
    }
}

//! Data model for two Bernoulli streams observed in fixed-size blocks.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// One of the two compared groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    A,
    B,
}

impl std::fmt::Display for Group {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Group::A => f.write_str("a"),
            Group::B => f.write_str("b"),
        }
    }
}

/// Number of outcomes per group in every block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockDesign {
    pub n_a: usize,
    pub n_b: usize,
}

impl BlockDesign {
    pub fn new(n_a: usize, n_b: usize) -> Result<Self> {
        let design = Self { n_a, n_b };
        design.validate()?;
        Ok(design)
    }

    /// The 1/1 design: one outcome per group per block.
    pub const fn paired() -> Self {
        Self { n_a: 1, n_b: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_a == 0 || self.n_b == 0 {
            return Err(invalid(format!(
                "block design needs n_a >= 1 and n_b >= 1, got ({}, {})",
                self.n_a, self.n_b
            )));
        }
        Ok(())
    }

    /// Total outcomes per block.
    pub fn n(&self) -> usize {
        self.n_a + self.n_b
    }

    /// Group-size ratio `n_b / n_a`.
    pub fn kappa(&self) -> f64 {
        self.n_b as f64 / self.n_a as f64
    }

    /// Mixture weight `n_a / n` of group a in the null mixture.
    pub fn weight_a(&self) -> f64 {
        self.n_a as f64 / self.n() as f64
    }

    pub fn weight_b(&self) -> f64 {
        self.n_b as f64 / self.n() as f64
    }

    pub fn size(&self, group: Group) -> usize {
        match group {
            Group::A => self.n_a,
            Group::B => self.n_b,
        }
    }
}

impl Default for BlockDesign {
    fn default() -> Self {
        Self::paired()
    }
}

/// One completed block of binary outcomes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub ys_a: Vec<bool>,
    pub ys_b: Vec<bool>,
}

impl Block {
    pub fn new(ys_a: Vec<bool>, ys_b: Vec<bool>) -> Self {
        Self { ys_a, ys_b }
    }

    /// Builds a block from 0/1 integers, rejecting anything else.
    pub fn from_bits(ys_a: &[u8], ys_b: &[u8]) -> Result<Self> {
        let conv = |ys: &[u8]| -> Result<Vec<bool>> {
            ys.iter()
                .map(|&y| match y {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(invalid(format!("outcome must be 0 or 1, got {other}"))),
                })
                .collect()
        };
        Ok(Self::new(conv(ys_a)?, conv(ys_b)?))
    }

    pub fn successes_a(&self) -> u64 {
        self.ys_a.iter().filter(|&&y| y).count() as u64
    }

    pub fn successes_b(&self) -> u64 {
        self.ys_b.iter().filter(|&&y| y).count() as u64
    }

    pub fn check_design(&self, design: &BlockDesign) -> Result<()> {
        if self.ys_a.len() != design.n_a || self.ys_b.len() != design.n_b {
            return Err(invalid(format!(
                "block has ({}, {}) outcomes but the design is ({}, {})",
                self.ys_a.len(),
                self.ys_b.len(),
                design.n_a,
                design.n_b
            )));
        }
        Ok(())
    }
}

/// A simple alternative `(theta_a, theta_b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlternativePoint {
    pub theta_a: f64,
    pub theta_b: f64,
}

impl AlternativePoint {
    pub fn new(theta_a: f64, theta_b: f64) -> Result<Self> {
        let p = Self { theta_a, theta_b };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("theta_a", self.theta_a), ("theta_b", self.theta_b)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }

    /// The null point induced by the alternative: `(n_a/n) theta_a + (n_b/n) theta_b`.
    pub fn null_point(&self, design: &BlockDesign) -> f64 {
        design.weight_a() * self.theta_a + design.weight_b() * self.theta_b
    }
}

/// Independent beta priors on the two group rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPriorConfig {
    pub alpha_a: f64,
    pub beta_a: f64,
    pub alpha_b: f64,
    pub beta_b: f64,
}

impl BetaPriorConfig {
    /// Default hyperparameter for all four beta parameters.
    pub const DEFAULT_GAMMA: f64 = 0.18;

    pub fn new(alpha_a: f64, beta_a: f64, alpha_b: f64, beta_b: f64) -> Result<Self> {
        let cfg = Self {
            alpha_a,
            beta_a,
            alpha_b,
            beta_b,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// All four hyperparameters set to `gamma`.
    pub fn symmetric(gamma: f64) -> Result<Self> {
        Self::new(gamma, gamma, gamma, gamma)
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.alpha_a, self.beta_a, self.alpha_b, self.beta_b];
        if vals.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(invalid(format!(
                "beta hyperparameters must be positive and finite, got {vals:?}"
            )));
        }
        Ok(())
    }
}

impl Default for BetaPriorConfig {
    fn default() -> Self {
        let g = Self::DEFAULT_GAMMA;
        Self {
            alpha_a: g,
            beta_a: g,
            alpha_b: g,
            beta_b: g,
        }
    }
}

/// Success and trial counts per group over completed blocks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamState {
    pub u_a: u64,
    pub t_a: u64,
    pub u_b: u64,
    pub t_b: u64,
    /// Completed blocks.
    pub j: u64,
}

impl StreamState {
    pub fn absorb(&mut self, block: &Block) {
        self.u_a += block.successes_a();
        self.t_a += block.ys_a.len() as u64;
        self.u_b += block.successes_b();
        self.t_b += block.ys_b.len() as u64;
        self.j += 1;
    }

    /// Total successes over both groups.
    pub fn u(&self) -> u64 {
        self.u_a + self.u_b
    }

    pub fn check_design(&self, design: &BlockDesign) -> crate::Result<()> {
        let ok = self.u_a <= self.t_a
            && self.u_b <= self.t_b
            && self.t_a == self.j * design.n_a as u64
            && self.t_b == self.j * design.n_b as u64;
        if !ok {
            return Err(invalid(format!(
                "stream state {self:?} is inconsistent with design ({}, {})",
                design.n_a, design.n_b
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn design_rejects_empty_groups() {
        assert!(BlockDesign::new(0, 1).is_err());
        assert!(BlockDesign::new(1, 0).is_err());
        let d = BlockDesign::new(2, 3).unwrap();
        assert_eq!(d.n(), 5);
        assert!((d.kappa() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn block_bits_validation() {
        assert!(Block::from_bits(&[0, 2], &[1]).is_err());
        let b = Block::from_bits(&[0, 1, 1], &[1]).unwrap();
        assert_eq!(b.successes_a(), 2);
        assert_eq!(b.successes_b(), 1);
        assert!(b.check_design(&BlockDesign::new(3, 1).unwrap()).is_ok());
        assert!(b.check_design(&BlockDesign::paired()).is_err());
    }

    #[test]
    fn alternative_bounds() {
        assert!(AlternativePoint::new(-0.1, 0.5).is_err());
        assert!(AlternativePoint::new(0.5, 1.1).is_err());
        let p = AlternativePoint::new(0.2, 0.6).unwrap();
        let d = BlockDesign::new(2, 1).unwrap();
        assert!((p.null_point(&d) - (2.0 * 0.2 + 0.6) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn beta_prior_positivity() {
        assert!(BetaPriorConfig::symmetric(0.0).is_err());
        assert!(BetaPriorConfig::new(1.0, 1.0, f64::NAN, 1.0).is_err());
        assert_eq!(BetaPriorConfig::default(), BetaPriorConfig::symmetric(0.18).unwrap());
    }

    #[test]
    fn state_tracks_counts() {
        let mut s = StreamState::default();
        s.absorb(&Block::from_bits(&[1, 0], &[1]).unwrap());
        s.absorb(&Block::from_bits(&[1, 1], &[0]).unwrap());
        assert_eq!((s.u_a, s.t_a, s.u_b, s.t_b, s.j), (3, 4, 1, 2, 2));
        assert!(s.check_design(&BlockDesign::new(2, 1).unwrap()).is_ok());
        assert!(s.check_design(&BlockDesign::paired()).is_err());
    }
}

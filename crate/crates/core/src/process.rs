//! The running test martingale over completed blocks.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::evalue::{log_e_from_counts, posterior_means};
use crate::model::{AlternativePoint, BetaPriorConfig, Block, BlockDesign, Group, StreamState};
use crate::restricted::{
    grid_posterior_means, grid_posterior_update, point_alternative_from_rate, Divergence, RestrictedPrior,
    RestrictionConfig,
};

/// Serializable description of how the alternative is chosen for each block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// A fixed alternative point.
    Simple(AlternativePoint),
    /// Independent beta priors, plugged in through their posterior means.
    Beta(BetaPriorConfig),
    /// Independent Beta(gamma, gamma) priors on both groups.
    SymmetricBeta { gamma: f64 },
    /// Grid prior on a restricted alternative, or a point alternative when
    /// `control_rate` is set.
    Restricted(RestrictionConfig),
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::SymmetricBeta {
            gamma: BetaPriorConfig::DEFAULT_GAMMA,
        }
    }
}

impl ModelSpec {
    pub fn build(&self) -> Result<AlternativeModel> {
        Ok(match self {
            ModelSpec::Simple(p) => {
                p.validate()?;
                AlternativeModel::SimplePoint(*p)
            }
            ModelSpec::Beta(cfg) => {
                cfg.validate()?;
                AlternativeModel::BayesBeta(*cfg)
            }
            ModelSpec::SymmetricBeta { gamma } => AlternativeModel::BayesBeta(BetaPriorConfig::symmetric(*gamma)?),
            ModelSpec::Restricted(cfg) => match cfg.control_rate {
                Some(rate) => AlternativeModel::PointFromRate {
                    control_rate: rate,
                    divergence: cfg.divergence,
                    delta: cfg.delta,
                    point: point_alternative_from_rate(rate, cfg.divergence, cfg.delta)?,
                },
                None => {
                    let prior = cfg.build_prior()?;
                    AlternativeModel::BayesRestricted {
                        posterior: prior.clone(),
                        prior,
                    }
                }
            },
        })
    }

    /// Short human-readable label, used for file names and report keys.
    pub fn label(&self) -> String {
        match self {
            ModelSpec::Simple(p) => format!("simple_{}_{}", p.theta_a, p.theta_b),
            ModelSpec::Beta(c) => format!("beta_{}_{}_{}_{}", c.alpha_a, c.beta_a, c.alpha_b, c.beta_b),
            ModelSpec::SymmetricBeta { gamma } => format!("beta_gamma_{gamma}"),
            ModelSpec::Restricted(c) => {
                let div = match c.divergence {
                    Divergence::Difference => "difference",
                    Divergence::LogOddsRatio => "log_odds",
                };
                match c.control_rate {
                    Some(rate) => format!("point_{div}_{}_rate_{rate}", c.delta),
                    None => format!("restricted_{div}_{}", c.delta),
                }
            }
        }
    }
}

/// Runtime state of the alternative.
#[derive(Debug, Clone)]
pub enum AlternativeModel {
    SimplePoint(AlternativePoint),
    BayesBeta(BetaPriorConfig),
    BayesRestricted {
        prior: RestrictedPrior,
        posterior: RestrictedPrior,
    },
    PointFromRate {
        control_rate: f64,
        divergence: Divergence,
        delta: f64,
        point: AlternativePoint,
    },
}

/// Ville decision at level `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub reject: bool,
    /// `1 / alpha`.
    pub threshold: f64,
    pub e_value: f64,
}

/// Validates `alpha` in (0, 1] and returns the decision for an e-value given in log space.
pub fn decide_log(log_e: f64, alpha: f64) -> Result<Decision> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let threshold = 1.0 / alpha;
    let e_value = log_e.exp();
    Ok(Decision {
        reject: e_value >= threshold,
        threshold,
        e_value,
    })
}

/// Buffered observations that do not yet form a complete block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pending {
    pub a: usize,
    pub b: usize,
}

/// Exportable view of a process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessSnapshot {
    pub design: BlockDesign,
    pub model: ModelSpec,
    pub state: StreamState,
    pub log_e: f64,
    pub e_value: f64,
    pub trajectory: Vec<(u64, f64)>,
    pub pending: Pending,
}

/// The e-process: product of block e-values over completed blocks.
///
/// Each block is scored with the alternative learned from earlier blocks
/// only; the block's own outcomes update the model afterwards.
#[derive(Debug, Clone)]
pub struct EvidenceProcess {
    design: BlockDesign,
    spec: ModelSpec,
    model: AlternativeModel,
    state: StreamState,
    log_e: f64,
    trajectory: Vec<(u64, f64)>,
    pending_a: VecDeque<bool>,
    pending_b: VecDeque<bool>,
}

impl EvidenceProcess {
    pub fn new(design: BlockDesign, spec: ModelSpec) -> Result<Self> {
        design.validate()?;
        let model = spec.build()?;
        Ok(Self {
            design,
            spec,
            model,
            state: StreamState::default(),
            log_e: 0.0,
            trajectory: Vec::new(),
            pending_a: VecDeque::new(),
            pending_b: VecDeque::new(),
        })
    }

    pub fn design(&self) -> &BlockDesign {
        &self.design
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn model(&self) -> &AlternativeModel {
        &self.model
    }

    pub fn state(&self) -> &StreamState {
        &self.state
    }

    pub fn log_e(&self) -> f64 {
        self.log_e
    }

    pub fn e_value(&self) -> f64 {
        self.log_e.exp()
    }

    pub fn blocks_completed(&self) -> u64 {
        self.state.j
    }

    /// `(block index, log_e)` after each completed block.
    pub fn trajectory(&self) -> &[(u64, f64)] {
        &self.trajectory
    }

    pub fn pending(&self) -> Pending {
        Pending {
            a: self.pending_a.len(),
            b: self.pending_b.len(),
        }
    }

    /// The alternative point and null point the next block will be scored with.
    pub fn next_alternative(&self) -> (AlternativePoint, f64) {
        let alt = match &self.model {
            AlternativeModel::SimplePoint(p) | AlternativeModel::PointFromRate { point: p, .. } => *p,
            AlternativeModel::BayesBeta(prior) => posterior_means(prior, &self.state, &self.design).alternative(),
            AlternativeModel::BayesRestricted { posterior, .. } => {
                let (theta_a, theta_b) = grid_posterior_means(posterior);
                AlternativePoint { theta_a, theta_b }
            }
        };
        let theta_0 = alt.null_point(&self.design);
        (alt, theta_0)
    }

    /// Scores a block of the given success counts, then learns from it.
    /// Returns the block's log e-value.
    pub(crate) fn update_with_counts(&mut self, k_a: u64, k_b: u64) -> Result<f64> {
        let (n_a, n_b) = (self.design.n_a as u64, self.design.n_b as u64);
        debug_assert!(k_a <= n_a && k_b <= n_b);
        let (alt, theta_0) = self.next_alternative();
        let block_log_e = log_e_from_counts(k_a, n_a, k_b, n_b, &alt, theta_0)?;

        let mut state = self.state;
        state.u_a += k_a;
        state.t_a += n_a;
        state.u_b += k_b;
        state.t_b += n_b;
        state.j += 1;
        if let AlternativeModel::BayesRestricted { prior, posterior } = &mut self.model {
            *posterior = grid_posterior_update(prior, &state)?;
        }
        self.state = state;
        self.log_e += block_log_e;
        self.trajectory.push((state.j, self.log_e));
        Ok(block_log_e)
    }

    /// Adds one completed block. Returns the block's log e-value.
    pub fn update_with_block(&mut self, block: &Block) -> Result<f64> {
        block.check_design(&self.design)?;
        self.update_with_counts(block.successes_a(), block.successes_b())
    }

    /// Buffers one observation and scores every block it completes.
    /// Returns the number of blocks completed by this call.
    pub fn observe(&mut self, group: Group, y: bool) -> Result<usize> {
        match group {
            Group::A => self.pending_a.push_back(y),
            Group::B => self.pending_b.push_back(y),
        }
        let mut completed = 0;
        while self.pending_a.len() >= self.design.n_a && self.pending_b.len() >= self.design.n_b {
            let ys_a: Vec<bool> = self.pending_a.iter().take(self.design.n_a).copied().collect();
            let ys_b: Vec<bool> = self.pending_b.iter().take(self.design.n_b).copied().collect();
            self.update_with_block(&Block::new(ys_a, ys_b))?;
            self.pending_a.drain(..self.design.n_a);
            self.pending_b.drain(..self.design.n_b);
            completed += 1;
        }
        Ok(completed)
    }

    pub fn decide(&self, alpha: f64) -> Result<Decision> {
        decide_log(self.log_e, alpha)
    }

    pub fn snapshot(&self) -> ProcessSnapshot {
        ProcessSnapshot {
            design: self.design,
            model: self.spec.clone(),
            state: self.state,
            log_e: self.log_e,
            e_value: self.e_value(),
            trajectory: self.trajectory.clone(),
            pending: self.pending(),
        }
    }
}

//! Seeded Monte-Carlo experiments: type-I error under optional stopping,
//! sample sizes for a target power, the SWEPIS replay and growth estimates.
//!
//! Every replication draws its uniforms from its own ChaCha stream
//! (`seed`, stream = replication index), so results do not depend on the
//! number of worker threads, and two arms run with the same seed see the same
//! underlying draws.

use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fisher_exact_one_sided, ContingencyTable};
use crate::error::{invalid, Error, Result};
use crate::model::{AlternativePoint, BlockDesign};
use crate::numeric::mean_and_se;
use crate::process::{EvidenceProcess, ModelSpec};
use crate::restricted::{d_inverse, Divergence, RestrictionConfig};

/// Number of blocks in the SWEPIS replay.
pub const SWEPIS_BLOCKS: u64 = 1380;
/// Group-b events in the SWEPIS replay; the last one is pinned to the final block.
pub const SWEPIS_EVENTS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Type1,
    Power,
    Swepis,
    Growth,
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "type1" => Ok(Scenario::Type1),
            "power" => Ok(Scenario::Power),
            "swepis" => Ok(Scenario::Swepis),
            "growth" => Ok(Scenario::Growth),
            other => Err(invalid(format!("unknown scenario {other:?}"))),
        }
    }
}

/// Settings for the sample-size search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowerSettings {
    pub target_power: f64,
    /// Effect size in the chosen divergence. Without it, only the generator point is used.
    pub divergence: Divergence,
    pub delta: Option<f64>,
    /// Control rates to search over; empty means a 0.1-step grid over the divergence domain.
    pub theta_a_grid: Vec<f64>,
}

impl Default for PowerSettings {
    fn default() -> Self {
        Self {
            target_power: 0.8,
            divergence: Divergence::Difference,
            delta: None,
            theta_a_grid: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub scenario: Scenario,
    pub replications: usize,
    /// Blocks per replication; for power runs, the ceiling on the searched sample size.
    pub max_blocks: u64,
    pub alpha: f64,
    pub design: BlockDesign,
    /// True `(theta_a, theta_b)` used to generate the data.
    pub generator: AlternativePoint,
    pub models: Vec<ModelSpec>,
    /// Also track Fisher's test recomputed on the cumulative table after every block.
    pub fisher: bool,
    /// Stop a replication at its first rejection.
    pub stop_on_reject: bool,
    pub seed: u64,
    pub power: PowerSettings,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Type1,
            replications: 1000,
            max_blocks: 1000,
            alpha: 0.05,
            design: BlockDesign::paired(),
            generator: AlternativePoint {
                theta_a: 0.1,
                theta_b: 0.1,
            },
            models: vec![ModelSpec::default()],
            fisher: false,
            stop_on_reject: true,
            seed: 0,
            power: PowerSettings::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(invalid("replications must be >= 1"));
        }
        if self.max_blocks == 0 {
            return Err(invalid("max_blocks must be >= 1"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(invalid(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        self.design.validate()?;
        self.generator.validate()?;
        for m in &self.models {
            m.build()?;
        }
        Ok(())
    }

    fn threshold(&self) -> f64 {
        1.0 / self.alpha
    }
}

/// Per-replication outcome of one method.
#[derive(Debug, Clone, Copy, PartialEq)]
struct RunOutcome {
    crossing: Option<u64>,
    blocks_run: u64,
    final_log_e: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingSummary {
    pub mean: f64,
    pub se: f64,
    /// 10%, 25%, 50%, 75% and 90% quantiles.
    pub quantiles: [u64; 5],
}

/// Results for one method across all replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub label: String,
    /// Fraction of replications rejected at or before each block (index 0 is block 1).
    pub rejection_rate: Vec<f64>,
    pub se: Vec<f64>,
    pub stopping_time: StoppingSummary,
    /// First rejection block per replication.
    pub crossings: Vec<Option<u64>>,
    /// Log e-value where each replication stopped; empty for Fisher.
    pub final_log_e: Vec<f64>,
    pub final_e_mean: Option<f64>,
    pub final_e_se: Option<f64>,
}

impl MethodResult {
    fn from_outcomes(label: String, m: u64, outcomes: &[RunOutcome], has_e: bool) -> Self {
        let r = outcomes.len() as f64;
        let mut hits = vec![0u64; m as usize];
        for o in outcomes {
            if let Some(c) = o.crossing {
                hits[(c - 1) as usize] += 1;
            }
        }
        let mut acc = 0u64;
        let mut rejection_rate = Vec::with_capacity(hits.len());
        let mut se = Vec::with_capacity(hits.len());
        for h in hits {
            acc += h;
            let p = acc as f64 / r;
            rejection_rate.push(p);
            se.push((p * (1.0 - p) / r).sqrt());
        }

        let mut stops: Vec<u64> = outcomes.iter().map(|o| o.crossing.unwrap_or(o.blocks_run)).collect();
        let (sum, sum_sq) = stops
            .iter()
            .fold((0.0, 0.0), |(s, q), &t| (s + t as f64, q + (t as f64) * (t as f64)));
        let (mean, stop_se) = mean_and_se(sum, sum_sq, stops.len());
        stops.sort_unstable();
        let q = |p: f64| stops[((p * stops.len() as f64).ceil() as usize).clamp(1, stops.len()) - 1];

        let (final_log_e, final_e_mean, final_e_se) = if has_e {
            let logs: Vec<f64> = outcomes.iter().map(|o| o.final_log_e).collect();
            let (s, sq) = logs.iter().fold((0.0, 0.0), |(s, q), l| {
                let e = l.exp();
                (s + e, q + e * e)
            });
            let (m, se) = mean_and_se(s, sq, logs.len());
            (logs, Some(m), Some(se))
        } else {
            (Vec::new(), None, None)
        };

        Self {
            label,
            rejection_rate,
            se,
            stopping_time: StoppingSummary {
                mean,
                se: stop_se,
                quantiles: [q(0.1), q(0.25), q(0.5), q(0.75), q(0.9)],
            },
            crossings: outcomes.iter().map(|o| o.crossing).collect(),
            final_log_e,
            final_e_mean,
            final_e_se,
        }
    }

    /// Rejection rate and its standard error at the last block.
    pub fn final_rate(&self) -> (f64, f64) {
        (
            *self.rejection_rate.last().unwrap_or(&0.0),
            *self.se.last().unwrap_or(&0.0),
        )
    }

    /// Writes `block,rejection_rate,se` rows.
    pub fn write_curve_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Internal(e.to_string());
        w.write_record(["block", "rejection_rate", "se"]).map_err(csv_err)?;
        for (i, (p, s)) in self.rejection_rate.iter().zip(&self.se).enumerate() {
            w.write_record([(i + 1).to_string(), p.to_string(), s.to_string()])
                .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Internal(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub config: SimConfig,
    pub methods: Vec<MethodResult>,
}

impl SimResult {
    pub fn method(&self, label: &str) -> Option<&MethodResult> {
        self.methods.iter().find(|m| m.label == label)
    }

    /// Writes `result.json` and one `<label>.csv` curve per method into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        write_outputs(dir, self, &self.methods)
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::Internal(e.to_string())
}

fn write_outputs<T: Serialize>(dir: &Path, result: &T, methods: &[MethodResult]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err)?;
    let json = serde_json::to_vec_pretty(result).map_err(|e| Error::Internal(e.to_string()))?;
    std::fs::write(dir.join("result.json"), json).map_err(io_err)?;
    for m in methods {
        let f = std::fs::File::create(dir.join(format!("{}.csv", m.label))).map_err(io_err)?;
        m.write_curve_csv(std::io::BufWriter::new(f))?;
    }
    Ok(())
}

pub const FISHER_LABEL: &str = "fisher";

/// Random source for one replication.
pub fn replication_rng(seed: u64, replication: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication as u64);
    rng
}

/// Block success counts for `m` blocks, thresholding uniforms at the true rates.
fn draw_counts(rng: &mut ChaCha8Rng, design: &BlockDesign, truth: &AlternativePoint, m: u64) -> Vec<(u64, u64)> {
    (0..m)
        .map(|_| {
            let k_a = (0..design.n_a).filter(|_| rng.gen::<f64>() < truth.theta_a).count() as u64;
            let k_b = (0..design.n_b).filter(|_| rng.gen::<f64>() < truth.theta_b).count() as u64;
            (k_a, k_b)
        })
        .collect()
}

fn run_model(
    spec: &ModelSpec,
    design: &BlockDesign,
    counts: &[(u64, u64)],
    threshold: f64,
    stop_on_reject: bool,
) -> Result<RunOutcome> {
    let mut process = EvidenceProcess::new(*design, spec.clone())?;
    let mut crossing = None;
    for &(k_a, k_b) in counts {
        process.update_with_counts(k_a, k_b)?;
        if crossing.is_none() && process.e_value() >= threshold {
            crossing = Some(process.blocks_completed());
            if stop_on_reject {
                break;
            }
        }
    }
    Ok(RunOutcome {
        crossing,
        blocks_run: process.blocks_completed(),
        final_log_e: process.log_e(),
    })
}

fn run_fisher(design: &BlockDesign, counts: &[(u64, u64)], alpha: f64) -> RunOutcome {
    let mut table = ContingencyTable::default();
    let mut crossing = None;
    let mut j = 0;
    for &(k_a, k_b) in counts {
        j += 1;
        table.n_a1 += k_a;
        table.n_a0 += design.n_a as u64 - k_a;
        table.n_b1 += k_b;
        table.n_b0 += design.n_b as u64 - k_b;
        if fisher_exact_one_sided(&table) < alpha {
            crossing = Some(j);
            break;
        }
    }
    RunOutcome {
        crossing,
        blocks_run: j,
        final_log_e: f64::NAN,
    }
}

/// Runs all methods on `replications` streams generated by `draw`.
fn run_methods(
    config: &SimConfig,
    m: u64,
    draw: impl Fn(&mut ChaCha8Rng) -> Vec<(u64, u64)> + Sync,
) -> Result<Vec<MethodResult>> {
    let threshold = config.threshold();
    let per_rep: Vec<(Vec<RunOutcome>, Option<RunOutcome>)> = (0..config.replications)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replication_rng(config.seed, rep);
            let counts = draw(&mut rng);
            let models = config
                .models
                .iter()
                .map(|spec| run_model(spec, &config.design, &counts, threshold, config.stop_on_reject))
                .collect::<Result<Vec<_>>>()?;
            let fisher = config.fisher.then(|| run_fisher(&config.design, &counts, config.alpha));
            Ok((models, fisher))
        })
        .collect::<Result<_>>()?;

    let mut methods = Vec::new();
    for (i, spec) in config.models.iter().enumerate() {
        let outcomes: Vec<RunOutcome> = per_rep.iter().map(|(o, _)| o[i]).collect();
        methods.push(MethodResult::from_outcomes(spec.label(), m, &outcomes, true));
    }
    if config.fisher {
        let outcomes: Vec<RunOutcome> = per_rep.iter().filter_map(|(_, f)| *f).collect();
        methods.push(MethodResult::from_outcomes(FISHER_LABEL.to_string(), m, &outcomes, false));
    }
    Ok(methods)
}

/// Type-I error of every configured method under aggressive optional stopping.
pub fn simulate_type1(config: &SimConfig) -> Result<SimResult> {
    config.validate()?;
    if config.generator.theta_a != config.generator.theta_b {
        return Err(invalid(format!(
            "type-I simulation needs theta_a = theta_b, got {:?}",
            config.generator
        )));
    }
    let methods = run_methods(config, config.max_blocks, |rng| {
        draw_counts(rng, &config.design, &config.generator, config.max_blocks)
    })?;
    Ok(SimResult {
        config: config.clone(),
        methods,
    })
}

/// Sample size search at one true point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerPoint {
    pub truth: AlternativePoint,
    /// Smallest `m` whose power under stopping at any block up to `m` reaches the target.
    pub worst_case_m: Option<u64>,
    /// Mean of `min(first rejection, worst_case_m)`.
    pub expected_stopping_time: Option<f64>,
    pub power_at_ceiling: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerResult {
    pub label: String,
    pub target_power: f64,
    pub ceiling: u64,
    pub points: Vec<PowerPoint>,
    /// Largest `worst_case_m` over the grid; `None` when some point never reaches the target.
    pub worst_case_m: Option<u64>,
    /// Expected stopping time at the grid point attaining `worst_case_m`.
    pub expected_stopping_time: Option<f64>,
}

/// Smallest `m` in `1..=ceiling` with empirical power at least `target`, by
/// binary search over the (monotone) power curve.
pub fn min_blocks_for_power(crossings: &[Option<u64>], target: f64, ceiling: u64) -> Option<u64> {
    let mut times: Vec<u64> = crossings.iter().filter_map(|c| *c).collect();
    times.sort_unstable();
    let r = crossings.len() as f64;
    let power = |m: u64| times.partition_point(|&t| t <= m) as f64 / r;
    if power(ceiling) < target {
        return None;
    }
    let (mut lo, mut hi) = (1u64, ceiling);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if power(mid) >= target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Some(lo)
}

fn power_grid(settings: &PowerSettings, generator: &AlternativePoint) -> Result<Vec<AlternativePoint>> {
    let Some(delta) = settings.delta else {
        return Ok(vec![*generator]);
    };
    let grid: Vec<f64> = if settings.theta_a_grid.is_empty() {
        let (lo, hi) = settings.divergence.domain(delta);
        (1..10)
            .map(|i| i as f64 / 10.0)
            .filter(|&t| t > lo + 1e-12 && t < hi - 1e-12)
            .collect()
    } else {
        settings.theta_a_grid.clone()
    };
    if grid.is_empty() {
        return Err(invalid(format!("no control rates available for delta = {delta}")));
    }
    grid.into_iter()
        .map(|ta| {
            Ok(AlternativePoint {
                theta_a: ta,
                theta_b: d_inverse(settings.divergence, delta, ta)?,
            })
        })
        .collect()
}

/// Worst-case and expected sample sizes for the target power, per model.
pub fn simulate_power(config: &SimConfig) -> Result<Vec<PowerResult>> {
    config.validate()?;
    let s = &config.power;
    if !(s.target_power > 0.0 && s.target_power < 1.0) {
        return Err(invalid(format!("target power must lie in (0, 1), got {}", s.target_power)));
    }
    let points = power_grid(s, &config.generator)?;
    let ceiling = config.max_blocks;
    let mut per_point = Vec::with_capacity(points.len());
    for truth in &points {
        let methods = run_methods(config, ceiling, |rng| draw_counts(rng, &config.design, truth, ceiling))?;
        per_point.push(methods);
    }

    let mut results = Vec::new();
    for (i, spec) in config.models.iter().enumerate() {
        let mut out = Vec::with_capacity(points.len());
        for (truth, methods) in points.iter().zip(&per_point) {
            let method = &methods[i];
            let worst_case_m = min_blocks_for_power(&method.crossings, s.target_power, ceiling);
            let expected_stopping_time = worst_case_m.map(|m_star| {
                let total: u64 = method.crossings.iter().map(|c| c.map_or(m_star, |t| t.min(m_star))).sum();
                total as f64 / method.crossings.len() as f64
            });
            out.push(PowerPoint {
                truth: *truth,
                worst_case_m,
                expected_stopping_time,
                power_at_ceiling: method.final_rate().0,
            });
        }
        let worst = if out.iter().all(|p| p.worst_case_m.is_some()) {
            out.iter().max_by_key(|p| p.worst_case_m)
        } else {
            None
        };
        results.push(PowerResult {
            label: spec.label(),
            target_power: s.target_power,
            ceiling,
            worst_case_m: worst.and_then(|p| p.worst_case_m),
            expected_stopping_time: worst.and_then(|p| p.expected_stopping_time),
            points: out,
        });
    }
    Ok(results)
}

/// Log odds ratio of `(0.1, 0.15)`.
pub fn type1_log_odds_delta() -> f64 {
    Divergence::LogOddsRatio.apply(0.1, 0.15)
}

/// The e-process variants of the type-I experiment: an unrestricted beta
/// prior, grid priors on difference and log-odds restrictions, and the point
/// alternative `(0.1, 0.15)`, all with beta parameters 1/2.
pub fn type1_models() -> Vec<ModelSpec> {
    let restricted = |div, delta| RestrictionConfig {
        alpha: 0.5,
        beta: 0.5,
        ..RestrictionConfig::new(div, delta)
    };
    vec![
        ModelSpec::SymmetricBeta { gamma: 0.5 },
        ModelSpec::Restricted(restricted(Divergence::Difference, 0.05)),
        ModelSpec::Restricted(restricted(Divergence::LogOddsRatio, type1_log_odds_delta())),
        ModelSpec::Restricted(restricted(Divergence::Difference, 0.05).with_control_rate(0.1)),
    ]
}

/// The four model specs compared in the SWEPIS replay.
pub fn swepis_models() -> Vec<ModelSpec> {
    vec![
        ModelSpec::default(),
        ModelSpec::Restricted(RestrictionConfig::new(Divergence::Difference, 0.00318)),
        ModelSpec::Restricted(RestrictionConfig::new(Divergence::LogOddsRatio, std::f64::consts::LN_2)),
        ModelSpec::Restricted(RestrictionConfig::new(Divergence::Difference, 0.00318).with_control_rate(0.0001)),
    ]
}

/// One SWEPIS-shaped stream: group a never has an event; group b has five
/// events at uniformly chosen blocks among the first 1379 and one at block 1380.
pub fn swepis_stream(rng: &mut ChaCha8Rng) -> Vec<(u64, u64)> {
    let last = SWEPIS_BLOCKS as usize;
    let mut counts = vec![(0u64, 0u64); last];
    for i in sample(rng, last - 1, SWEPIS_EVENTS - 1) {
        counts[i].1 = 1;
    }
    counts[last - 1].1 = 1;
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwepisResult {
    pub config: SimConfig,
    pub methods: Vec<MethodResult>,
    /// Per method, fraction of replications rejected before the final block.
    pub stopped_before_final_block: Vec<f64>,
}

impl SwepisResult {
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        write_outputs(dir, self, &self.methods)
    }
}

/// Permutation replay of the SWEPIS stream with stopping at `E >= 1/alpha`.
/// Uses the four standard specs when `config.models` is empty.
pub fn simulate_swepis(config: &SimConfig) -> Result<SwepisResult> {
    let mut config = config.clone();
    if config.models.is_empty() {
        config.models = swepis_models();
    }
    config.design = BlockDesign::paired();
    config.max_blocks = SWEPIS_BLOCKS;
    config.validate()?;
    let methods = run_methods(&config, SWEPIS_BLOCKS, swepis_stream)?;
    let stopped_before_final_block = methods
        .iter()
        .map(|m| {
            let n = m.crossings.iter().filter(|c| matches!(c, Some(t) if *t < SWEPIS_BLOCKS)).count();
            n as f64 / m.crossings.len() as f64
        })
        .collect();
    Ok(SwepisResult {
        config,
        methods,
        stopped_before_final_block,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthEstimate {
    /// Monte-Carlo mean of `log E` after `m` blocks.
    pub mean_log_e: f64,
    pub se: f64,
}

fn final_log_es(
    spec: &ModelSpec,
    design: &BlockDesign,
    truth: &AlternativePoint,
    m: u64,
    replications: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if m == 0 || replications == 0 {
        return Err(invalid("m and replications must be >= 1"));
    }
    truth.validate()?;
    (0..replications)
        .into_par_iter()
        .map(|rep| {
            let counts = draw_counts(&mut replication_rng(seed, rep), design, truth, m);
            run_model(spec, design, &counts, f64::INFINITY, false).map(|o| o.final_log_e)
        })
        .collect()
}

fn summarize(values: &[f64]) -> GrowthEstimate {
    let (s, sq) = values.iter().fold((0.0, 0.0), |(s, q), v| (s + v, q + v * v));
    let (mean_log_e, se) = mean_and_se(s, sq, values.len());
    GrowthEstimate { mean_log_e, se }
}

/// Monte-Carlo estimate of `E[log S]` after `m` blocks under `truth`, without stopping.
pub fn estimate_growth(
    spec: &ModelSpec,
    design: &BlockDesign,
    truth: &AlternativePoint,
    m: u64,
    replications: usize,
    seed: u64,
) -> Result<GrowthEstimate> {
    Ok(summarize(&final_log_es(spec, design, truth, m, replications, seed)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthComparison {
    pub first: GrowthEstimate,
    pub second: GrowthEstimate,
    /// Mean of the per-replication differences `first - second`.
    pub difference: f64,
    /// Standard error of the paired differences.
    pub paired_se: f64,
}

impl GrowthComparison {
    /// `sqrt(se_1^2 + se_2^2)`, ignoring the pairing.
    pub fn combined_se(&self) -> f64 {
        self.first.se.hypot(self.second.se)
    }
}

/// Growth of two specs on the same simulated streams.
pub fn compare_growth(
    first: &ModelSpec,
    second: &ModelSpec,
    design: &BlockDesign,
    truth: &AlternativePoint,
    m: u64,
    replications: usize,
    seed: u64,
) -> Result<GrowthComparison> {
    let a = final_log_es(first, design, truth, m, replications, seed)?;
    let b = final_log_es(second, design, truth, m, replications, seed)?;
    let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let d = summarize(&diffs);
    Ok(GrowthComparison {
        first: summarize(&a),
        second: summarize(&b),
        difference: d.mean_log_e,
        paired_se: d.se,
    })
}

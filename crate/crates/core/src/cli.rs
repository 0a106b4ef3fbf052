//! Command-line interface. JSON goes to stdout, diagnostics to stderr.
//!
//! Exit codes: 0 completed, 1 error, 2 rejected (`run` stopped at the threshold).

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::baselines::{
    fisher_exact_one_sided, gd_expectation_check, ContingencyTable, ExpectationScheme, DEFAULT_POISSON_TRUNCATION,
};
use crate::error::{invalid, Error, Result};
use crate::model::{AlternativePoint, BetaPriorConfig, BlockDesign};
use crate::observation::read_observations;
use crate::process::{EvidenceProcess, ModelSpec, Pending};
use crate::restricted::{Divergence, RestrictionConfig, DEFAULT_GRID_PRECISION};
use crate::service::{serve, AppState};
use crate::sim::{
    compare_growth, estimate_growth, simulate_power, simulate_swepis, simulate_type1, type1_models, PowerSettings,
    Scenario, SimConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_REJECTED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "safe2x2", version, about = "Anytime-valid tests for two Bernoulli streams")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stream JSON Lines observations through an e-process.
    Run(RunArgs),
    /// Run a Monte-Carlo experiment.
    Simulate(SimulateArgs),
    /// One-sided Fisher exact test on a 2x2 table.
    Fisher(FisherArgs),
    /// Null expectation of a Gunel-Dickey Bayes factor.
    GdCheck(GdCheckArgs),
    /// Start the HTTP monitoring service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DivergenceArg {
    Difference,
    LogOdds,
}

impl From<DivergenceArg> for Divergence {
    fn from(d: DivergenceArg) -> Self {
        match d {
            DivergenceArg::Difference => Divergence::Difference,
            DivergenceArg::LogOdds => Divergence::LogOddsRatio,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DesignArgs {
    /// Group-a outcomes per block.
    #[arg(long = "na", default_value_t = 1)]
    pub n_a: usize,
    /// Group-b outcomes per block.
    #[arg(long = "nb", default_value_t = 1)]
    pub n_b: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Beta prior parameter used for all four hyperparameters.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, value_enum, requires = "delta")]
    pub divergence: Option<DivergenceArg>,
    /// Minimal effect size of the restricted alternative.
    #[arg(long, requires = "divergence", allow_hyphen_values = true)]
    pub delta: Option<f64>,
    /// Known control rate; turns the restriction into a single point alternative.
    #[arg(long, requires = "delta")]
    pub control_rate: Option<f64>,
    #[arg(long, requires = "delta")]
    pub grid_precision: Option<f64>,
}

impl ModelArgs {
    fn is_set(&self) -> bool {
        self.gamma.is_some() || self.divergence.is_some()
    }

    fn spec(&self) -> ModelSpec {
        let gamma = self.gamma.unwrap_or(BetaPriorConfig::DEFAULT_GAMMA);
        match (self.divergence, self.delta) {
            (Some(div), Some(delta)) => ModelSpec::Restricted(RestrictionConfig {
                divergence: div.into(),
                delta,
                grid_precision: self.grid_precision.unwrap_or(DEFAULT_GRID_PRECISION),
                alpha: gamma,
                beta: gamma,
                control_rate: self.control_rate,
            }),
            _ => ModelSpec::SymmetricBeta { gamma },
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub design: DesignArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// JSON Lines input; stdin when omitted.
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(value_parser = parse_scenario)]
    pub scenario: Scenario,
    #[command(flatten)]
    pub design: DesignArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Group-a rate of the generator (and group-b rate unless --theta-b is given).
    #[arg(long, default_value_t = 0.1)]
    pub theta: f64,
    #[arg(long)]
    pub theta_b: Option<f64>,
    /// Blocks per replication (power: search ceiling).
    #[arg(long, default_value_t = 1000)]
    pub m: u64,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also track Fisher's test (type1 tracks it by default).
    #[arg(long)]
    pub fisher: bool,
    /// Power search: effect size of the generator grid.
    #[arg(long, allow_hyphen_values = true)]
    pub effect: Option<f64>,
    #[arg(long, value_enum, default_value = "difference")]
    pub effect_divergence: DivergenceArg,
    #[arg(long, value_delimiter = ',')]
    pub theta_a_grid: Vec<f64>,
    #[arg(long, default_value_t = 0.8)]
    pub target_power: f64,
    /// Growth: second beta parameter to compare against on the same streams.
    #[arg(long)]
    pub compare_gamma: Option<f64>,
    /// Full configuration as JSON; overrides the other flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for result.json and per-method CSV curves.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_scenario(s: &str) -> std::result::Result<Scenario, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Clone, Args)]
pub struct FisherArgs {
    pub n_a1: u64,
    pub n_a0: u64,
    pub n_b1: u64,
    pub n_b0: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Poisson,
    IndepMultinomial,
    SimpleE,
}

#[derive(Debug, Clone, Args)]
pub struct GdCheckArgs {
    #[arg(long, value_enum)]
    pub scheme: SchemeArg,
    /// Poisson rate for all four cells.
    #[arg(long, default_value_t = 1.0)]
    pub rate: f64,
    /// Poisson rates (a1,a0,b1,b0); overrides --rate.
    #[arg(long, value_delimiter = ',', num_args = 4)]
    pub rates: Option<Vec<f64>>,
    #[arg(long, default_value_t = DEFAULT_POISSON_TRUNCATION)]
    pub truncation: u64,
    #[arg(long, default_value_t = 0.5)]
    pub theta: f64,
    #[arg(long = "na", default_value_t = 10)]
    pub n_a: u64,
    #[arg(long = "nb", default_value_t = 10)]
    pub n_b: u64,
    /// simple-e scheme: alternative point.
    #[arg(long, default_value_t = 0.3)]
    pub theta_a: f64,
    #[arg(long, default_value_t = 0.7)]
    pub theta_b: f64,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, env = "SAFE2X2_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    /// Directory for per-session JSON Lines logs, replayed on start.
    #[arg(long)]
    pub persist: Option<PathBuf>,
    /// Allowed CORS origin; any origin when omitted.
    #[arg(long)]
    pub allow_origin: Option<String>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with<I, T>(args: I, stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    match execute(cli.command, stdin, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_ERROR
        }
    }
}

fn print_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    writeln!(out, "{s}").map_err(|e| Error::Internal(e.to_string()))
}

fn execute(cmd: Command, stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Run(args) => run(&args, stdin, stdout),
        Command::Simulate(args) => simulate(&args, stdout, stderr),
        Command::Fisher(a) => {
            let table = ContingencyTable::new(a.n_a1, a.n_a0, a.n_b1, a.n_b0);
            print_json(stdout, &json!({ "table": table, "p": fisher_exact_one_sided(&table) }))?;
            Ok(EXIT_OK)
        }
        Command::GdCheck(a) => {
            let scheme = match a.scheme {
                SchemeArg::Poisson => {
                    let rates = match &a.rates {
                        Some(r) => [r[0], r[1], r[2], r[3]],
                        None => [a.rate; 4],
                    };
                    ExpectationScheme::Poisson {
                        rates,
                        truncation: a.truncation,
                    }
                }
                SchemeArg::IndepMultinomial => ExpectationScheme::IndepMultinomial {
                    theta: a.theta,
                    n_a: a.n_a,
                    n_b: a.n_b,
                },
                SchemeArg::SimpleE => ExpectationScheme::SimpleE {
                    alternative: AlternativePoint::new(a.theta_a, a.theta_b)?,
                    n_a: a.n_a,
                    n_b: a.n_b,
                },
            };
            let report = gd_expectation_check(&scheme)?;
            print_json(stdout, &json!({ "scheme": scheme, "value": report.value, "omitted_mass": report.omitted_mass }))?;
            Ok(EXIT_OK)
        }
        Command::Serve(a) => {
            let state = match &a.persist {
                Some(dir) => AppState::with_persistence(dir)?,
                None => AppState::new(),
            };
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Internal(e.to_string()))?;
            rt.block_on(serve(
                SocketAddr::new(a.host, a.port),
                Arc::new(state),
                a.allow_origin.as_deref(),
            ))?;
            Ok(EXIT_OK)
        }
    }
}

#[derive(Debug, Serialize)]
struct BlockLine {
    block: u64,
    log_e: f64,
}

#[derive(Debug, Serialize)]
struct RunReport {
    n_a: usize,
    n_b: usize,
    model: ModelSpec,
    observations_read: usize,
    blocks: Vec<BlockLine>,
    pending: Pending,
    log_e: f64,
    e_value: f64,
    alpha: f64,
    threshold: f64,
    reject: bool,
    /// Rejected before the input was exhausted.
    stopped_early: bool,
}

fn run(args: &RunArgs, stdin: &mut dyn BufRead, stdout: &mut dyn Write) -> Result<i32> {
    let design = BlockDesign::new(args.design.n_a, args.design.n_b)?;
    let alpha = args.design.alpha;
    crate::process::decide_log(0.0, alpha)?;
    let mut process = EvidenceProcess::new(design, args.model.spec())?;

    let mut file_reader;
    let reader: &mut dyn BufRead = match &args.input {
        Some(path) => {
            let f = File::open(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
            file_reader = BufReader::new(f);
            &mut file_reader
        }
        None => stdin,
    };

    let mut read = 0;
    let mut rejected = false;
    let mut observations = read_observations(reader);
    for obs in observations.by_ref() {
        let obs = obs?;
        read += 1;
        if process.observe(obs.group, obs.outcome())? > 0 && process.decide(alpha)?.reject {
            rejected = true;
            break;
        }
    }
    let stopped_early = rejected && observations.next().is_some();

    let decision = process.decide(alpha)?;
    let report = RunReport {
        n_a: design.n_a,
        n_b: design.n_b,
        model: process.spec().clone(),
        observations_read: read,
        blocks: process
            .trajectory()
            .iter()
            .map(|&(block, log_e)| BlockLine { block, log_e })
            .collect(),
        pending: process.pending(),
        log_e: process.log_e(),
        e_value: decision.e_value,
        alpha,
        threshold: decision.threshold,
        reject: decision.reject,
        stopped_early,
    };
    print_json(stdout, &report)?;
    Ok(if decision.reject { EXIT_REJECTED } else { EXIT_OK })
}

fn sim_config(args: &SimulateArgs) -> Result<SimConfig> {
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let mut cfg: SimConfig = serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        cfg.scenario = args.scenario;
        return Ok(cfg);
    }
    let models = if args.model.is_set() {
        vec![args.model.spec()]
    } else if args.scenario == Scenario::Type1 {
        type1_models()
    } else if args.scenario == Scenario::Swepis {
        Vec::new()
    } else {
        vec![ModelSpec::default()]
    };
    Ok(SimConfig {
        scenario: args.scenario,
        replications: args.reps,
        max_blocks: args.m,
        alpha: args.design.alpha,
        design: BlockDesign::new(args.design.n_a, args.design.n_b)?,
        generator: AlternativePoint::new(args.theta, args.theta_b.unwrap_or(args.theta))?,
        models,
        fisher: args.fisher || args.scenario == Scenario::Type1,
        stop_on_reject: true,
        seed: args.seed,
        power: PowerSettings {
            target_power: args.target_power,
            divergence: args.effect_divergence.into(),
            delta: args.effect,
            theta_a_grid: args.theta_a_grid.clone(),
        },
    })
}

fn simulate(args: &SimulateArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    let cfg = sim_config(args)?;
    let io = |e: std::io::Error| Error::Internal(e.to_string());
    match cfg.scenario {
        Scenario::Type1 => {
            let res = simulate_type1(&cfg)?;
            if let Some(dir) = &args.out {
                res.write_to_dir(dir)?;
            }
            let summary: Vec<_> = res
                .methods
                .iter()
                .map(|m| {
                    let (rate, se) = m.final_rate();
                    json!({ "label": m.label, "rejection_rate": rate, "se": se })
                })
                .collect();
            print_json(stdout, &json!({ "scenario": "type1", "blocks": cfg.max_blocks, "methods": summary }))?;
        }
        Scenario::Power => {
            let res = simulate_power(&cfg)?;
            if let Some(dir) = &args.out {
                std::fs::create_dir_all(dir).map_err(io)?;
                let text = serde_json::to_vec_pretty(&res).map_err(|e| Error::Internal(e.to_string()))?;
                std::fs::write(dir.join("result.json"), text).map_err(io)?;
            }
            print_json(stdout, &json!({ "scenario": "power", "results": res }))?;
        }
        Scenario::Swepis => {
            let res = simulate_swepis(&cfg)?;
            if let Some(dir) = &args.out {
                res.write_to_dir(dir)?;
            }
            let summary: Vec<_> = res
                .methods
                .iter()
                .zip(&res.stopped_before_final_block)
                .map(|(m, frac)| {
                    json!({
                        "label": m.label,
                        "stopped_before_final_block": frac,
                        "stopping_time": m.stopping_time,
                        "final_e_mean": m.final_e_mean,
                    })
                })
                .collect();
            print_json(stdout, &json!({ "scenario": "swepis", "methods": summary }))?;
        }
        Scenario::Growth => {
            let spec = cfg.models.first().cloned().unwrap_or_default();
            let value = match args.compare_gamma {
                Some(g) => {
                    let other = ModelSpec::SymmetricBeta { gamma: g };
                    let c = compare_growth(&spec, &other, &cfg.design, &cfg.generator, cfg.max_blocks, cfg.replications, cfg.seed)?;
                    json!({ "scenario": "growth", "model": spec, "compare": other, "result": c, "combined_se": c.combined_se() })
                }
                None => {
                    let g = estimate_growth(&spec, &cfg.design, &cfg.generator, cfg.max_blocks, cfg.replications, cfg.seed)?;
                    json!({ "scenario": "growth", "model": spec, "result": g })
                }
            };
            if let Some(dir) = &args.out {
                std::fs::create_dir_all(dir).map_err(io)?;
                let text = serde_json::to_vec_pretty(&value).map_err(|e| Error::Internal(e.to_string()))?;
                std::fs::write(dir.join("result.json"), text).map_err(io)?;
            }
            print_json(stdout, &value)?;
        }
    }
    if let Some(dir) = &args.out {
        let _ = writeln!(stderr, "wrote results to {}", dir.display());
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str], input: &str) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = main_with(
            std::iter::once("safe2x2").chain(args.iter().copied()),
            &mut input.as_bytes(),
            &mut out,
            &mut err,
        );
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn run_on_empty_input() {
        let (code, out, _) = call(&["run"], "");
        assert_eq!(code, EXIT_OK);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["e_value"], 1.0);
        assert_eq!(v["reject"], false);
    }

    #[test]
    fn delta_without_divergence_is_a_usage_error() {
        let (code, out, err) = call(&["run", "--delta", "0.1"], "");
        assert_eq!(code, EXIT_ERROR);
        assert!(out.is_empty());
        assert!(!err.is_empty());
        let (code, _, _) = call(&["run", "--control-rate", "0.1"], "");
        assert_eq!(code, EXIT_ERROR);
    }

    #[test]
    fn help_exits_zero() {
        let (code, _, err) = call(&["--help"], "");
        assert_eq!(code, EXIT_OK);
        assert!(err.contains("simulate"));
    }

    #[test]
    fn malformed_line_names_line_number() {
        let (code, _, err) = call(&["run"], "{\"group\":\"a\",\"y\":1}\n{\"group\":\"a\",\"y\":3}\n");
        assert_eq!(code, EXIT_ERROR);
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn rejection_exits_two_and_stops_reading() {
        let mut input = String::new();
        for _ in 0..40 {
            input.push_str("{\"group\":\"a\",\"y\":0}\n{\"group\":\"b\",\"y\":1}\n");
        }
        let (code, out, _) = call(&["run", "--gamma", "0.18"], &input);
        assert_eq!(code, EXIT_REJECTED);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["reject"], true);
        assert_eq!(v["stopped_early"], true);
        assert!(v["observations_read"].as_u64().unwrap() < 80);
    }

    #[test]
    fn fisher_command() {
        let (code, out, _) = call(&["fisher", "0", "1381", "6", "1373"], "");
        assert_eq!(code, EXIT_OK);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert!((v["p"].as_f64().unwrap() - 0.015).abs() < 0.002);
    }

    #[test]
    fn gd_check_command() {
        let (code, out, _) = call(&["gd-check", "--scheme", "indep-multinomial", "--theta", "0.5"], "");
        assert_eq!(code, EXIT_OK);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert!(v["value"].as_f64().unwrap() > 1.0);
        let (code, _, _) = call(&["gd-check", "--scheme", "poisson", "--truncation", "0"], "");
        assert_eq!(code, EXIT_ERROR);
    }
}

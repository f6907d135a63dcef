//! Command-line frontend.
//!
//! Exit codes: 0 success, 1 output could not be written, 2 invalid input,
//! 3 missing or unusable artifact, 4 a simulation trial failed,
//! 5 a verification check failed.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use qflqg_core::quadrature::QuadratureConfig;
use qflqg_core::quantizer::QuantizerBank;
use qflqg_core::selection::{export_milp, C0Breakdown};
use qflqg_core::simulate::{run_trial, trial_rng, OfflinePlan, SimulationConfig};
use qflqg_core::{ScenarioModel, SimulationError};
use serde_json::{json, Value};

use crate::artifacts::{load_artifacts, write_artifacts, write_json, write_text, ArtifactError, RunManifest};
use crate::formats::{self, InputError};
use crate::outputs::{coefficients_csv, read_schedule_csv, schedule_csv, trajectory_csv};
use crate::parallel::par_monte_carlo;
use crate::verify::{self, Fault, VerifyOptions};

#[derive(Debug, Parser)]
#[command(name = "qflqg", version, about = "LQG control over a rate-limited channel with selectable quantizers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a scenario and bank and write the offline tables.
    Synth(SynthArgs),
    /// Compute the optimal quantizer schedule from synth artifacts.
    Schedule(ScheduleArgs),
    /// Monte Carlo evaluation of a schedule.
    Simulate(SimulateArgs),
    /// Cross-check the pipeline against independent oracles.
    Verify(VerifyArgs),
    /// Write the selection problem as an LP file.
    ExportMilp(ScheduleArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Scenario JSON.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Quantizer bank JSON.
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Replace the horizon in the scenario file.
    #[arg(long, allow_hyphen_values = true)]
    pub horizon_override: Option<i64>,
    /// Replace the channel bit-rate in the bank file.
    #[arg(long)]
    pub bit_rate: Option<u32>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    /// Where results are written.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Directory holding synth artifacts (defaults to --out).
    #[arg(long)]
    pub artifacts: Option<PathBuf>,
    /// Bank replacing the stored one; partitions must match.
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Replace the channel bit-rate; delays are recomputed.
    #[arg(long)]
    pub bit_rate: Option<u32>,
    /// Also write milp.lp.
    #[arg(long)]
    pub emit_lp: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Directory holding synth artifacts (defaults to --out); ignored with --scenario.
    #[arg(long)]
    pub artifacts: Option<PathBuf>,
    /// Schedule CSV with a theta_star or theta column (quantizers numbered from 1).
    #[arg(long, conflicts_with = "constant")]
    pub schedule: Option<PathBuf>,
    /// Use quantizer I (numbered from 1 in delay order) at every stage.
    #[arg(long, value_name = "I")]
    pub constant: Option<usize>,
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Write trajectory CSVs for the first K trials.
    #[arg(long, value_name = "K", default_value_t = 0)]
    pub trajectories: usize,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Scenario and bank to check; a random instance is generated when omitted.
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Trials for the sampling checks.
    #[arg(long, default_value_t = 2000)]
    pub trials: usize,
    /// Horizon of the generated instance.
    #[arg(long, default_value_t = 5)]
    pub horizon: usize,
    /// Largest number of schedules the brute-force check enumerates.
    #[arg(long, default_value_t = 1e6)]
    pub max_sequences: f64,
    /// Also write verify.json here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

/// A failed command: message plus process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl From<InputError> for CliError {
    fn from(e: InputError) -> Self {
        Self::new(2, e.to_string())
    }
}

impl From<ArtifactError> for CliError {
    fn from(e: ArtifactError) -> Self {
        let code = match e {
            ArtifactError::Write { .. } => 1,
            ArtifactError::Missing(_) | ArtifactError::Corrupt { .. } => 3,
        };
        Self::new(code, e.to_string())
    }
}

impl From<SimulationError> for CliError {
    fn from(e: SimulationError) -> Self {
        let code = match e {
            SimulationError::Schedule(_) | SimulationError::NoTrials => 2,
            _ => 4,
        };
        Self::new(code, e.to_string())
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Schedule(a) => schedule(&a, false),
        Command::ExportMilp(a) => schedule(&a, true),
        Command::Simulate(a) => simulate(&a),
        Command::Verify(a) => run_verify(&a),
    }
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    path.as_deref().ok_or_else(|| CliError::new(2, format!("{flag} is required")))
}

fn load_inputs(input: &InputArgs) -> Result<(ScenarioModel, QuantizerBank), CliError> {
    let model = formats::load_scenario(required(&input.scenario, "--scenario")?, input.horizon_override)?;
    let bank = formats::load_bank(required(&input.bank, "--bank")?, input.bit_rate)?;
    Ok((model, bank))
}

fn build_plan(model: &ScenarioModel, bank: &QuantizerBank) -> Result<OfflinePlan, CliError> {
    OfflinePlan::build(model, bank, &QuadratureConfig::default()).map_err(|e| CliError::new(2, e.to_string()))
}

fn c0_value(c0: &C0Breakdown) -> Value {
    json!({ "constant": c0.constant, "reduction": c0.reduction, "price": c0.price, "total": c0.total() })
}

fn one_based(theta: &[usize]) -> Vec<usize> {
    theta.iter().map(|i| i + 1).collect()
}

fn synth(args: &SynthArgs) -> Result<(), CliError> {
    let (model, bank) = load_inputs(&args.input)?;
    let plan = build_plan(&model, &bank)?;
    let mut manifest = RunManifest::new("synth", &args.out)
        .with_input("scenario", required(&args.input.scenario, "--scenario")?)
        .with_input("bank", required(&args.input.bank, "--bank")?)
        .param("horizon", model.horizon())
        .param("bit_rate", bank.bit_rate());
    if let Some(h) = args.input.horizon_override {
        manifest = manifest.param("horizon_override", h);
    }
    write_artifacts(&args.out, &manifest, &plan.model, &plan.bank, &plan.riccati, &plan.stats, &plan.moments)?;
    eprintln!("P_0 ={}", plan.riccati.p[0]);
    println!("synth: T={} n={} m={} p={} quantizers={} delays={:?}", model.horizon(), model.state_dim(), model.input_dim(), model.output_dim(), bank.len(), bank.delays());
    println!("synth: wrote artifacts to {}", args.out.display());
    Ok(())
}

fn load_dir(dir: &Path, bank: &Option<PathBuf>, bit_rate: Option<u32>) -> Result<(OfflinePlan, String), CliError> {
    let replacement = match bank {
        Some(path) => Some(formats::load_bank(path, bit_rate)?),
        None => None,
    };
    let mut art = load_artifacts(dir, replacement)?;
    if bank.is_none() {
        if let Some(rb) = bit_rate {
            art.bank = art.bank.with_bit_rate(rb).map_err(|e| CliError::new(2, e.to_string()))?;
            art = load_artifacts(dir, Some(art.bank))?;
        }
    }
    let hash = art.synth_manifest_sha256.clone();
    Ok((OfflinePlan::assemble(art.model, art.bank, art.riccati, art.stats, art.moments), hash))
}

fn schedule(args: &ScheduleArgs, lp_only: bool) -> Result<(), CliError> {
    let dir = args.artifacts.as_deref().unwrap_or(&args.out);
    let (plan, synth_hash) = load_dir(dir, &args.bank, args.bit_rate)?;
    let command = if lp_only { "export-milp" } else { "schedule" };
    let mut manifest = RunManifest::new(command, &args.out)
        .param("artifacts", dir.display())
        .param("synth_manifest_sha256", &synth_hash)
        .param("bit_rate", plan.bank.bit_rate());
    if let Some(b) = &args.bank {
        manifest = manifest.with_input("bank", b);
    }
    let hash = manifest.hash();
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::new(1, format!("{}: {e}", args.out.display())))?;
    let sched = &plan.schedule;
    if lp_only || args.emit_lp {
        let lp = format!("\\ manifest_sha256={hash}\n{}", export_milp(&sched.c));
        write_text(&args.out.join("milp.lp"), &lp)?;
    }
    if !lp_only {
        write_text(&args.out.join("schedule.csv"), &schedule_csv(sched, &hash))?;
        write_text(&args.out.join("coefficients.csv"), &coefficients_csv(sched, &plan.bank, &hash))?;
        let summary = json!({
            "manifest_sha256": hash,
            "bit_rate": plan.bank.bit_rate(),
            "quantizers": plan.bank.quantizers().iter().enumerate().map(|(i, q)| json!({
                "number": i + 1,
                "file_index": q.index,
                "levels": q.levels(),
                "delay": plan.bank.delays()[i],
                "price": q.price,
            })).collect::<Vec<_>>(),
            "theta_star": one_based(&sched.theta_star),
            "c0": c0_value(&sched.c0),
            "control_cost": sched.control_cost,
            "j_star": sched.j_star,
        });
        write_json(&args.out.join("schedule.json"), &summary)?;
        println!("schedule: theta* = {:?}", one_based(&sched.theta_star));
        println!("schedule: C0 = {} (price part {}), J* = {}", sched.c0.total(), sched.c0.price, sched.j_star);
    }
    write_json(&args.out.join(manifest.file_name()), &manifest)?;
    Ok(())
}

fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let (plan, mut manifest) = if args.input.scenario.is_some() {
        let (model, bank) = load_inputs(&args.input)?;
        let manifest = RunManifest::new("simulate", &args.out)
            .with_input("scenario", required(&args.input.scenario, "--scenario")?)
            .with_input("bank", required(&args.input.bank, "--bank")?);
        (build_plan(&model, &bank)?, manifest)
    } else {
        if args.input.horizon_override.is_some() {
            return Err(CliError::new(2, "--horizon-override needs --scenario; artifacts are tied to their horizon"));
        }
        let dir = args.artifacts.as_deref().unwrap_or(&args.out);
        let (plan, synth_hash) = load_dir(dir, &args.input.bank, args.input.bit_rate)?;
        let manifest = RunManifest::new("simulate", &args.out)
            .param("artifacts", dir.display())
            .param("synth_manifest_sha256", synth_hash);
        (plan, manifest)
    };
    let horizon = plan.horizon();
    let theta = match (&args.schedule, args.constant) {
        (Some(path), _) => Some(read_schedule_csv(path).map_err(|e| CliError::new(2, e.to_string()))?),
        (None, Some(i)) if i >= 1 && i <= plan.bank.len() => Some(vec![i - 1; horizon]),
        (None, Some(i)) => return Err(CliError::new(2, format!("--constant {i}: quantizers are numbered 1..={}", plan.bank.len()))),
        (None, None) => None,
    };
    if let Some(path) = &args.schedule {
        manifest = manifest.param("schedule", path.display());
    }
    if let Some(i) = args.constant {
        manifest = manifest.param("constant", i);
    }
    manifest.master_seed = Some(args.seed);
    let manifest = manifest.param("trials", args.trials).param("bit_rate", plan.bank.bit_rate()).param("horizon", horizon);
    let hash = manifest.hash();

    let config = SimulationConfig { schedule: theta.clone(), ..SimulationConfig::new(args.trials, args.seed) };
    let outcome = par_monte_carlo(&plan, &config)?;
    let report = &outcome.report;
    let optimal = &plan.schedule;
    let mut value = json!({
        "manifest_sha256": hash,
        "trials": report.trials,
        "master_seed": args.seed,
        "horizon": horizon,
        "schedule": one_based(&report.schedule),
        "empirical_mean": report.empirical_mean,
        "empirical_stderr": report.empirical_stderr,
        "theoretical": report.theoretical,
        "z_score": report.z_score(),
        "control_cost": report.control_cost,
        "c0": c0_value(&report.c0),
        "breakdown": {
            "state": report.breakdown.state,
            "input": report.breakdown.input,
            "price": report.breakdown.price,
        },
    });
    if theta.is_some() {
        // the optimal schedule minimizes C₀, so its theoretical cost is a lower bound
        let excess = report.theoretical - optimal.j_star;
        value["dominance"] = json!({
            "optimal_schedule": one_based(&optimal.theta_star),
            "optimal_theoretical": optimal.j_star,
            "schedule_theoretical": report.theoretical,
            "excess": excess,
            "optimal_dominates": excess >= -1e-9 * optimal.j_star.abs().max(1.0),
        });
    }
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::new(1, format!("{}: {e}", args.out.display())))?;
    write_json(&args.out.join("report.json"), &value)?;
    let used = theta.as_deref().unwrap_or(&optimal.theta_star);
    for trial in 0..args.trajectories.min(args.trials) {
        let rec = run_trial(&plan, used, trial, &mut trial_rng(args.seed, trial))
            .map_err(|e| CliError::new(4, e.to_string()))?;
        write_text(&args.out.join(format!("trajectory_{trial}.csv")), &trajectory_csv(&rec, &hash))?;
    }
    write_json(&args.out.join(manifest.file_name()), &manifest)?;
    match report.empirical_stderr {
        Some(se) => println!(
            "simulate: {} trials, empirical {} ± {se}, theoretical {} (z = {:.2})",
            report.trials,
            report.empirical_mean,
            report.theoretical,
            report.z_score().unwrap_or(f64::NAN)
        ),
        None => println!("simulate: 1 trial, cost {}, theoretical {}", report.empirical_mean, report.theoretical),
    }
    Ok(())
}

fn run_verify(args: &VerifyArgs) -> Result<(), CliError> {
    let fault = match args.inject_fault.as_deref() {
        None => None,
        Some("ntilde") => Some(Fault::NTilde),
        Some(other) => return Err(CliError::new(2, format!("unknown fault {other}"))),
    };
    let (model, bank) = if args.input.scenario.is_some() || args.input.bank.is_some() {
        load_inputs(&args.input)?
    } else {
        verify::random_instance(args.seed, args.horizon)
    };
    let options = VerifyOptions {
        seed: args.seed,
        trials: args.trials.max(2),
        max_sequences: args.max_sequences,
        quadrature: QuadratureConfig::default(),
        fault,
    };
    let report = verify::verify(&model, &bank, &options).map_err(|e| match e {
        verify::VerifyError::Simulation(s) => CliError::from(s),
        other => CliError::new(2, other.to_string()),
    })?;
    for check in &report.checks {
        println!("{check}");
    }
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out).map_err(|e| CliError::new(1, format!("{}: {e}", out.display())))?;
        let checks: Vec<Value> = report
            .checks
            .iter()
            .map(|c| json!({ "name": c.name, "status": format!("{:?}", c.status).to_lowercase(), "detail": c.detail }))
            .collect();
        write_json(&out.join("verify.json"), &json!({ "seed": args.seed, "passed": report.passed(), "checks": checks }))?;
    }
    match report.first_failure() {
        Some(c) => Err(CliError::new(5, format!("verification failed: {}", c.name))),
        None => {
            println!("verify: all checks passed");
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use qflqg_core::estimator::EstimatorError;

    #[test]
    fn trial_failures_map_to_exit_4_with_the_trial() {
        let err = CliError::from(SimulationError::Estimator {
            trial: 17,
            source: EstimatorError::Desync { stage: 3, reason: "test" },
        });
        assert_eq!(err.code, 4);
        assert!(err.message.contains("trial 17"));
        assert_eq!(CliError::from(SimulationError::NoTrials).code, 2);
        assert_eq!(CliError::from(ArtifactError::Missing(PathBuf::from("x"))).code, 3);
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from(["qflqg", "simulate", "--horizon-override", "20", "--trials", "5", "--seed", "3"]).unwrap();
        match cli.command {
            Command::Simulate(a) => {
                assert_eq!(a.input.horizon_override, Some(20));
                assert_eq!((a.trials, a.seed), (5, 3));
            }
            other => panic!("parsed {other:?}"),
        }
        assert!(Cli::try_parse_from(["qflqg", "simulate", "--schedule", "s.csv", "--constant", "1"]).is_err());
    }
}

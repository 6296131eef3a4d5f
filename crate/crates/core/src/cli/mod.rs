//! Command implementations behind the `ccopf` binary.
//!
//! Every command writes only inside `--out` and appends one record to
//! `manifest.json` there, listing the files it produced.

mod manifest;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::acpf::{
    constraint_values, generation, pf_mismatch, solve_pf, Dispatch, Network, VoltageState,
};
use crate::baseline::{evaluate_baseline, OpfSettings};
use crate::caseio::read_case;
use crate::ccsopf::{evaluate, split_samples, train, Metrics, TrainConfig};
use crate::policy::{forward, PolicyMode, PolicyParams};
use crate::{Error, Result};

pub use manifest::{sha256_file, RunManifest};

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ccopf", version, about = "Chance-constrained AC OPF with neural dispatch policies")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// MATPOWER case file.
    #[arg(long, global = true)]
    pub case: Option<PathBuf>,
    /// Training configuration (`.toml` or `.json`).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; created if missing.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<PolicyMode>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyKind {
    Dnn,
    Baseline,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy; writes checkpoint.json, history.csv, epochs.csv.
    Train,
    /// Score a policy on the seeded test split; writes metrics_<policy>.json/.md.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "dnn")]
        policy: PolicyKind,
        /// Outer round budget of the baseline solver.
        #[arg(long)]
        max_outer: Option<usize>,
        /// Inner iteration budget of the baseline solver.
        #[arg(long)]
        max_inner: Option<usize>,
    },
    /// Tabulate metrics files side by side; writes comparison.csv/.md.
    Compare {
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
    },
    /// One power flow at nominal load; writes pf.json.
    Pf {
        /// Use the policy's dispatch instead of the midpoint of the setpoint box.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Parse(_) => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

/// Parse `args` (program name first), run the command and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Train => cmd_train(&cli.global),
        Command::Eval {
            checkpoint,
            policy,
            max_outer,
            max_inner,
        } => {
            let mut settings = OpfSettings::default();
            if let Some(n) = max_outer {
                settings.max_outer = *n;
            }
            if let Some(n) = max_inner {
                settings.max_inner = *n;
            }
            cmd_eval(&cli.global, checkpoint.as_deref(), *policy, &settings)
        }
        Command::Compare { metrics } => cmd_compare(&cli.global, metrics),
        Command::Pf { checkpoint } => cmd_pf(&cli.global, checkpoint.as_deref()),
    }
}

fn load_network(global: &GlobalArgs) -> Result<(Network, PathBuf), CliError> {
    let path = global
        .case
        .clone()
        .ok_or_else(|| CliError::usage("--case is required"))?;
    if !path.is_file() {
        return Err(CliError::usage(format!(
            "case file not found: {}",
            path.display()
        )));
    }
    let net = Network::new(read_case(&path)?)?;
    Ok((net, path))
}

/// Config file (or defaults) with command-line overrides applied.
fn resolve_config(global: &GlobalArgs) -> Result<TrainConfig, CliError> {
    let mut cfg = match &global.config {
        Some(path) if !path.is_file() => {
            return Err(CliError::usage(format!(
                "config file not found: {}",
                path.display()
            )))
        }
        Some(path) => TrainConfig::from_file(path)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = global.mode {
        cfg.mode = mode;
    }
    if let Some(alpha) = global.alpha {
        cfg.alpha = alpha;
    }
    if let Some(epochs) = global.epochs {
        cfg.epochs = epochs;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Writes files into the output directory and remembers their names.
struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        std::fs::write(self.root.join(name), contents)?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn finish(self, manifest: RunManifest) -> Result<()> {
        manifest.with_outputs(self.written).append_to(&self.root)
    }
}

fn cmd_train(global: &GlobalArgs) -> Result<(), CliError> {
    let started = manifest::now();
    let (net, case_path) = load_network(global)?;
    let cfg = resolve_config(global)?;
    let mut out = OutDir::create(&global.out)?;

    let outcome = train(&net, &cfg)?;
    out.write("checkpoint.json", &outcome.params.to_json()?)?;
    out.write("history.csv", &outcome.history.iterations_csv())?;
    out.write("epochs.csv", &outcome.history.epochs_csv())?;

    if let Some(last) = outcome.history.epochs.last() {
        println!(
            "trained {} policy on {}: last epoch cost {:.2}, max violation {:.1}%",
            cfg.mode,
            net.case.name,
            last.mean_cost,
            100.0 * last.max_violation
        );
    }
    let manifest = RunManifest::new("train", started, serde_json::to_value(&cfg).map_err(Error::from)?)
        .with_case(&case_path)?
        .with_seed(cfg.seed);
    out.finish(manifest)?;
    Ok(())
}

fn cmd_eval(
    global: &GlobalArgs,
    checkpoint: Option<&Path>,
    policy: PolicyKind,
    settings: &OpfSettings,
) -> Result<(), CliError> {
    let started = manifest::now();
    let (net, case_path) = load_network(global)?;
    let cfg = resolve_config(global)?;
    let split = split_samples(&net.case, cfg.radius, cfg.n_train, cfg.n_test, cfg.seed);

    #[derive(Serialize)]
    struct Snapshot<'a> {
        train: &'a TrainConfig,
        #[serde(skip_serializing_if = "Option::is_none")]
        baseline: Option<&'a OpfSettings>,
        #[serde(skip_serializing_if = "Option::is_none")]
        checkpoint: Option<String>,
        #[serde(skip_serializing_if = "Option::is_none")]
        checkpoint_sha256: Option<String>,
    }

    let (metrics, snapshot) = match policy {
        PolicyKind::Dnn => {
            let path = checkpoint
                .ok_or_else(|| CliError::usage("--checkpoint is required for --policy dnn"))?;
            if !path.is_file() {
                return Err(CliError::usage(format!(
                    "checkpoint not found: {}",
                    path.display()
                )));
            }
            let params = PolicyParams::load(path)?;
            let metrics = evaluate(&net, &params, &split.test, &cfg.pf)?;
            let snapshot = Snapshot {
                train: &cfg,
                baseline: None,
                checkpoint: Some(path.display().to_string()),
                checkpoint_sha256: Some(sha256_file(path)?),
            };
            (metrics, serde_json::to_value(snapshot).map_err(Error::from)?)
        }
        PolicyKind::Baseline => {
            let metrics = evaluate_baseline(&net, &split.test, settings)?;
            let snapshot = Snapshot {
                train: &cfg,
                baseline: Some(settings),
                checkpoint: None,
                checkpoint_sha256: None,
            };
            (metrics, serde_json::to_value(snapshot).map_err(Error::from)?)
        }
    };

    let mut out = OutDir::create(&global.out)?;
    let stem = format!("metrics_{}", metrics.policy);
    out.write(&format!("{stem}.json"), &metrics.to_json()?)?;
    out.write(&format!("{stem}.md"), &metrics.to_markdown())?;
    print!("{}", metrics.to_markdown());

    let manifest = RunManifest::new("eval", started, snapshot)
        .with_case(&case_path)?
        .with_seed(cfg.seed);
    out.finish(manifest)?;
    Ok(())
}

/// CSV and markdown tables with one row per metrics file.
pub fn comparison_tables(rows: &[Metrics]) -> (String, String) {
    let mut csv = String::from("policy,case,samples,max_violation_pct,average_cost,pf_failures,eval_time_s\n");
    let mut md = String::from(
        "| policy | case | samples | max violation [%] | average cost [$] | PF failures | eval time [s] |\n\
         |---|---|---|---|---|---|---|\n",
    );
    for m in rows {
        let cost_csv = m.average_cost.map_or(String::new(), |c| c.to_string());
        let cost_md = m.average_cost.map_or("n/a".to_string(), |c| format!("{c:.2}"));
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            m.policy, m.case, m.n_samples, m.max_violation_pct, cost_csv, m.pf_failures, m.eval_time_s
        ));
        md.push_str(&format!(
            "| {} | {} | {} | {:.2} | {} | {} | {:.3} |\n",
            m.policy, m.case, m.n_samples, m.max_violation_pct, cost_md, m.pf_failures, m.eval_time_s
        ));
    }
    (csv, md)
}

fn cmd_compare(global: &GlobalArgs, files: &[PathBuf]) -> Result<(), CliError> {
    let started = manifest::now();
    if files.is_empty() {
        return Err(CliError::usage("compare needs at least one metrics file"));
    }
    let mut rows = Vec::with_capacity(files.len());
    for path in files {
        let text = std::fs::read_to_string(path).map_err(|e| CliError {
            code: EXIT_RUNTIME,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        rows.push(Metrics::from_json(&text).map_err(|e| CliError {
            code: EXIT_RUNTIME,
            message: format!("{}: {e}", path.display()),
        })?);
    }
    let (csv, md) = comparison_tables(&rows);
    let mut out = OutDir::create(&global.out)?;
    out.write("comparison.csv", &csv)?;
    out.write("comparison.md", &md)?;
    print!("{md}");

    let inputs: Vec<String> = files.iter().map(|p| p.display().to_string()).collect();
    let manifest = RunManifest::new("compare", started, serde_json::json!({ "inputs": inputs }));
    out.finish(manifest)?;
    Ok(())
}

#[derive(Serialize)]
struct PfReport {
    case: String,
    dispatch: Dispatch,
    state: VoltageState,
    /// Active output of every generator in case order, p.u.
    generation: Vec<f64>,
    cost: f64,
    mismatch_inf: f64,
    max_residual: f64,
    violated: Vec<String>,
}

fn cmd_pf(global: &GlobalArgs, checkpoint: Option<&Path>) -> Result<(), CliError> {
    let started = manifest::now();
    let (net, case_path) = load_network(global)?;
    let cfg = resolve_config(global)?;
    let phi = net.case.nominal_loads();
    let dispatch = match checkpoint {
        Some(path) => {
            let params = PolicyParams::load(path)?;
            params.check_network(&net.index)?;
            forward(&params, &phi)?
        }
        None => Dispatch::midpoint(&net.index),
    };
    let state = solve_pf(&net, &dispatch, &phi, None, &cfg.pf)?;
    let y = constraint_values(&net, &state, &phi);
    let violated = y
        .violated()
        .enumerate()
        .filter(|(_, v)| *v)
        .map(|(i, _)| net.layout.rows[i].label(&net.case, &net.index))
        .collect();
    let report = PfReport {
        case: net.case.name.clone(),
        generation: generation(&net, &dispatch, &state, &phi),
        cost: net.cost(&dispatch, &state, &phi),
        mismatch_inf: pf_mismatch(&net, &state, &dispatch, &phi)
            .iter()
            .fold(0.0, |m, r| m.max(r.abs())),
        max_residual: y.residuals().into_iter().fold(f64::NEG_INFINITY, f64::max),
        violated,
        dispatch,
        state,
    };
    println!(
        "{}: cost {:.2}, mismatch {:.2e}, {} violated constraints",
        report.case,
        report.cost,
        report.mismatch_inf,
        report.violated.len()
    );
    let mut out = OutDir::create(&global.out)?;
    out.write("pf.json", &serde_json::to_string_pretty(&report).map_err(Error::from)?)?;
    let manifest = RunManifest::new("pf", started, serde_json::to_value(cfg.pf).map_err(Error::from)?)
        .with_case(&case_path)?;
    out.finish(manifest)?;
    Ok(())
}

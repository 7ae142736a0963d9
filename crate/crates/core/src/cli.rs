//! Command-line surface: argument parsing, run manifests and output files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::criteria::{conditional_batch_draws, conditional_summaries, Criterion, McStatus};
use crate::error::{Error, Result};
use crate::mcmc::{
    fit, fit_report, read_draws_csv, summarize, write_draws_csv, McmcConfig, PosteriorSample,
};
use crate::model::{qq_points, ModelKind, PriorSpec, SurveyData};
use crate::qmra::QmraSpec;
use crate::risk::{rpr, rr_grid, write_grid_csv, write_series_csv, MonteCarloPlan};
use crate::rng::{label, Seed};
use crate::synth::{generate, GroundTruth};
use crate::{ingest, svg};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(
    name = "batchrisk",
    version,
    about = "Carcass-survey evidence synthesis and batch criterion risk evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Root seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true, env = "BATCHRISK_THREADS")]
    pub threads: Option<usize>,
    /// Validate inputs and configuration without writing outputs.
    #[arg(long, global = true)]
    pub dry_run: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the hierarchical model to survey data.
    Fit(FitArgs),
    /// Batch posterior conditional on the outcome of a criterion.
    McEval(McEvalArgs),
    /// Risk measures over a set of criteria.
    RrGrid(RrGridArgs),
    /// Simulate survey data from known parameters.
    Synth(SynthArgs),
    /// Normal Q-Q points of log concentrations.
    Qq(QqArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum PriorVariance {
    /// Gamma(0.001, 0.001) on the precisions.
    Gamma,
    /// Uniform(0, upper) on the standard deviations.
    UniformSd,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_enum, default_value = "combined")]
    pub model: ModelKind,
    /// Baseline survey CSV.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Positive-batch summaries CSV.
    #[arg(long)]
    pub summaries: Option<PathBuf>,
    /// JSON with optional `mcmc` and `priors` objects; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub prior_variance: Option<PriorVariance>,
    /// Upper bound of the uniform prior on standard deviations.
    #[arg(long, default_value_t = 10.0)]
    pub sd_upper: f64,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long, default_value = "fit_out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct McEvalArgs {
    /// Draws CSV written by `fit`.
    #[arg(long)]
    pub posterior: PathBuf,
    /// Criterion as n/c/m, m in cfu/g.
    #[arg(long, default_value = "5/1/1000")]
    pub criterion: String,
    #[arg(long, value_enum, default_value = "not_applied")]
    pub status: McStatus,
    /// Batches simulated per posterior draw.
    #[arg(long, default_value_t = 40)]
    pub batches: usize,
    #[arg(long, default_value = "mc_eval_out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Measure {
    /// Per-draw RR with every summary column.
    Rr,
    /// Relative posterior risk only.
    Rpr,
}

#[derive(Debug, Args)]
pub struct RrGridArgs {
    #[arg(long)]
    pub posterior: PathBuf,
    /// Comma-separated n/c/m list, or "standard" for the 20-cell grid.
    #[arg(long, default_value = "standard")]
    pub criteria: String,
    /// Contaminated batches per draw.
    #[arg(long, default_value_t = 40)]
    pub l: usize,
    /// Servings per batch.
    #[arg(long, default_value_t = 10)]
    pub m: usize,
    /// Serving-chain JSON; the bundled default is used otherwise.
    #[arg(long)]
    pub qmra: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "rr")]
    pub measure: Measure,
    /// Most draws plotted per criterion.
    #[arg(long, default_value_t = 1000)]
    pub max_points: usize,
    #[arg(long, default_value = "rr_grid_out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Use the calibrated default truth.
    #[arg(long, conflicts_with = "truth")]
    pub calibrated_default: bool,
    /// Use the calibrated truth with 10,000 baseline and 200 summaries batches.
    #[arg(long, conflicts_with_all = ["truth", "calibrated_default"])]
    pub calibrated_large: bool,
    /// Ground-truth JSON.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value = "synth_out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QqArgs {
    #[arg(long, required_unless_present = "summaries")]
    pub baseline: Option<PathBuf>,
    /// Uses the batch means.
    #[arg(long, conflicts_with = "baseline")]
    pub summaries: Option<PathBuf>,
    #[arg(long, default_value = "qq_out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: Vec<InputDigest>,
    pub version: String,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct FitConfig {
    #[serde(default)]
    mcmc: Option<McmcConfig>,
    #[serde(default)]
    priors: Option<PriorSpec>,
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::io(path, e)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn digest(path: &Path) -> Result<InputDigest> {
    let bytes = std::fs::read(path).map_err(|e| io(path, e))?;
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io(path, e))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| io(path, e))?;
    w.flush().map_err(|e| io(path, e))
}

/// Collects outputs of one command and writes its manifest last.
struct Run {
    command: &'static str,
    seed: u64,
    config: serde_json::Value,
    inputs: Vec<InputDigest>,
    out: PathBuf,
    outputs: Vec<String>,
    started: Instant,
}

impl Run {
    fn new(command: &'static str, seed: u64, config: serde_json::Value, out: &Path) -> Self {
        Run {
            command,
            seed,
            config,
            inputs: Vec::new(),
            out: out.to_path_buf(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(digest(path)?);
        Ok(())
    }

    fn prepare(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out).map_err(|e| io(&self.out, e))
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    fn finish(self) -> Result<RunManifest> {
        let canonical = serde_json::to_vec(&(self.command, self.seed, &self.config))?;
        let manifest = RunManifest {
            command: self.command.to_string(),
            config_hash: sha256_hex(&canonical),
            config: self.config,
            seed: self.seed,
            inputs: self.inputs,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            outputs: self.outputs,
        };
        write_json(&self.out.join(MANIFEST_FILE), &manifest)?;
        Ok(manifest)
    }
}

fn parse_criteria(text: &str) -> Result<Vec<Criterion>> {
    if text.trim().eq_ignore_ascii_case("standard") {
        return Ok(Criterion::standard_grid());
    }
    text.split(',').map(|s| s.trim().parse()).collect()
}

fn read_posterior(path: &Path) -> Result<PosteriorSample> {
    read_draws_csv(open(path)?, &path.display().to_string())
}

fn cmd_fit(cli: &Cli, a: &FitArgs) -> Result<()> {
    let file_cfg: FitConfig = match &a.config {
        Some(p) => serde_json::from_reader(open(p)?)?,
        None => FitConfig::default(),
    };
    let mut cfg = file_cfg.mcmc.unwrap_or_default();
    cfg.seed = cli.seed;
    if let Some(v) = a.iterations {
        cfg.n_iterations = v;
    }
    if let Some(v) = a.burnin {
        cfg.n_burnin = v;
    }
    if let Some(v) = a.thin {
        cfg.thin = v;
    }
    if let Some(v) = a.chains {
        cfg.n_chains = v;
    }
    cfg.validate()?;
    let priors = match a.prior_variance {
        Some(PriorVariance::UniformSd) => PriorSpec::uniform_sd(a.sd_upper),
        Some(PriorVariance::Gamma) => PriorSpec::default(),
        None => file_cfg.priors.unwrap_or_default(),
    };
    priors.validate()?;

    let mut data = SurveyData::default();
    if a.model.uses_baseline() {
        let p = a.baseline.as_ref().ok_or_else(|| {
            Error::InvalidConfig(format!("--baseline is required for --model {:?}", a.model))
        })?;
        data.baseline = Some(ingest::read_baseline_file(p)?);
    }
    if a.model.uses_summaries() {
        let p = a.summaries.as_ref().ok_or_else(|| {
            Error::InvalidConfig(format!("--summaries is required for --model {:?}", a.model))
        })?;
        data.summaries = Some(ingest::read_summaries_file(p)?);
    }
    let config = serde_json::json!({ "model": a.model, "mcmc": cfg, "priors": priors });
    let mut run = Run::new("fit", cli.seed, config, &a.out);
    let used = [
        a.baseline.as_ref().filter(|_| a.model.uses_baseline()),
        a.summaries.as_ref().filter(|_| a.model.uses_summaries()),
        a.config.as_ref(),
    ];
    for p in used.into_iter().flatten() {
        run.input(p)?;
    }
    if cli.dry_run {
        eprintln!(
            "fit: inputs valid; {} draws per chain would be kept",
            cfg.draws_per_chain()
        );
        return Ok(());
    }

    let sample = fit(a.model, &data, &priors, &cfg)?;
    run.prepare()?;
    let p = run.path("draws.csv");
    write_draws_csv(create(&p)?, &sample)?;
    let p = run.path("summary.json");
    write_json(
        &p,
        &serde_json::json!({ "model": a.model, "parameters": summarize(&sample) }),
    )?;
    let p = run.path("diagnostics.json");
    write_json(&p, &fit_report(&sample))?;
    for w in sample.warnings() {
        eprintln!("warning: {w}");
    }
    run.finish()?;
    Ok(())
}

fn cmd_mc_eval(cli: &Cli, a: &McEvalArgs) -> Result<()> {
    let crit: Criterion = a.criterion.parse()?;
    let posterior = read_posterior(&a.posterior)?;
    let config = serde_json::json!({
        "criterion": crit.to_string(),
        "status": a.status,
        "batches_per_draw": a.batches,
    });
    let mut run = Run::new("mc-eval", cli.seed, config, &a.out);
    run.input(&a.posterior)?;
    if cli.dry_run {
        eprintln!("mc-eval: {} draws, criterion {crit}", posterior.len());
        return Ok(());
    }
    let mut rng = Seed::new(cli.seed).child(label::CONDITIONAL).rng();
    let draws = conditional_batch_draws(&posterior, a.status, &crit, a.batches, &mut rng)?;
    let report = conditional_summaries(&draws, &posterior)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    run.prepare()?;
    let p = run.path("conditional.json");
    write_json(&p, &report)?;
    run.finish()?;
    Ok(())
}

fn cmd_rr_grid(cli: &Cli, a: &RrGridArgs) -> Result<()> {
    let criteria = parse_criteria(&a.criteria)?;
    let plan = MonteCarloPlan::new(a.l, a.m)?;
    let spec = match &a.qmra {
        Some(p) => QmraSpec::from_file(p)?,
        None => QmraSpec::default(),
    };
    let posterior = read_posterior(&a.posterior)?;
    let config = serde_json::json!({
        "criteria": criteria.iter().map(ToString::to_string).collect::<Vec<_>>(),
        "plan": plan,
        "qmra": spec,
        "measure": a.measure,
        "max_points": a.max_points,
    });
    let mut run = Run::new("rr-grid", cli.seed, config, &a.out);
    run.input(&a.posterior)?;
    if let Some(p) = &a.qmra {
        run.input(p)?;
    }
    if cli.dry_run {
        eprintln!(
            "rr-grid: {} draws, {} criteria",
            posterior.len(),
            criteria.len()
        );
        return Ok(());
    }
    let mut rng = Seed::new(cli.seed).child(label::RISK).rng();
    run.prepare()?;
    match a.measure {
        Measure::Rr => {
            let grid = rr_grid(&posterior, &criteria, plan, &spec, &mut rng)?;
            for c in &grid.cells {
                if let Some(e) = &c.error {
                    eprintln!("warning: {}: {e}", c.criterion);
                }
            }
            let p = run.path("grid.csv");
            write_grid_csv(create(&p)?, &grid.cells)?;
            let p = run.path("series.csv");
            write_series_csv(create(&p)?, &grid)?;
            let p = run.path("scatter.svg");
            let mut w = create(&p)?;
            w.write_all(svg::scatter_svg(&grid, a.max_points).as_bytes())
                .and_then(|_| w.flush())
                .map_err(|e| io(&p, e))?;
        }
        Measure::Rpr => {
            let p = run.path("rpr.csv");
            let mut w = csv::Writer::from_writer(create(&p)?);
            w.write_record(["n", "c", "m", "rpr"])?;
            for crit in &criteria {
                let mut r = Seed::from_rng(&mut rng).rng();
                let v = rpr(&posterior, crit, plan, &spec, &mut r)?;
                w.write_record([
                    crit.n.to_string(),
                    crit.c.to_string(),
                    crit.m.to_string(),
                    v.to_string(),
                ])?;
            }
            w.flush().map_err(|e| io(&p, e))?;
        }
    }
    run.finish()?;
    Ok(())
}

fn cmd_synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let truth = if a.calibrated_large {
        GroundTruth::calibrated_large()
    } else if let Some(p) = &a.truth {
        serde_json::from_reader(open(p)?)?
    } else if a.calibrated_default {
        GroundTruth::calibrated_default()
    } else {
        return Err(Error::InvalidConfig(
            "give --truth, --calibrated-default or --calibrated-large".into(),
        ));
    };
    truth.validate()?;
    let mut run = Run::new("synth", cli.seed, serde_json::to_value(&truth)?, &a.out);
    if let Some(p) = &a.truth {
        run.input(p)?;
    }
    if cli.dry_run {
        eprintln!("synth: truth valid");
        return Ok(());
    }
    let data = generate(&truth, cli.seed)?;
    run.prepare()?;
    let p = run.path("baseline.csv");
    ingest::write_baseline(create(&p)?, &data.baseline)?;
    let p = run.path("summaries.csv");
    ingest::write_summaries(create(&p)?, &data.summaries)?;
    let p = run.path("truth.json");
    write_json(
        &p,
        &serde_json::json!({ "truth": truth, "retries": data.retries }),
    )?;
    run.finish()?;
    Ok(())
}

fn cmd_qq(cli: &Cli, a: &QqArgs) -> Result<()> {
    let (path, values) = if let Some(p) = &a.baseline {
        (
            p,
            ingest::read_baseline_file(p)?.log_concentrations().to_vec(),
        )
    } else {
        let p = a.summaries.as_ref().expect("clap requires one input");
        let s = ingest::read_summaries_file(p)?;
        (p, s.batches().iter().map(|b| b.mean_log).collect())
    };
    let points = qq_points(&values)?;
    let mut run = Run::new(
        "qq",
        cli.seed,
        serde_json::json!({ "n": values.len() }),
        &a.out,
    );
    run.input(path)?;
    if cli.dry_run {
        eprintln!("qq: {} values", values.len());
        return Ok(());
    }
    run.prepare()?;
    let p = run.path("qq.csv");
    let mut w = csv::Writer::from_writer(create(&p)?);
    w.write_record(["theoretical", "sample"])?;
    for (t, s) in points {
        w.write_record([t.to_string(), s.to_string()])?;
    }
    w.flush().map_err(|e| io(&p, e))?;
    run.finish()?;
    Ok(())
}

/// Run a parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidConfig("--threads must be at least 1".into()));
        }
        // a second initialization in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match &cli.command {
        Command::Fit(a) => cmd_fit(cli, a),
        Command::McEval(a) => cmd_mc_eval(cli, a),
        Command::RrGrid(a) => cmd_rr_grid(cli, a),
        Command::Synth(a) => cmd_synth(cli, a),
        Command::Qq(a) => cmd_qq(cli, a),
    }
}

/// 0 success, 1 numerical failure, 2 input or configuration error.
pub fn exit_code(result: &Result<()>) -> u8 {
    match result {
        Ok(()) => 0,
        Err(e) if e.is_numerical() => 1,
        Err(_) => 2,
    }
}

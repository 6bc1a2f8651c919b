//! Command-line front end: certify, verify, run and export the pendulum and
//! custom scenarios. Every command writes into a fresh timestamped directory
//! holding the resolved config, the original config and its outputs.
//!
//! Exit codes: 0 all checks pass, 1 a check failed, 2 configuration error,
//! 3 runtime failure.

pub mod config;
pub mod report;
pub mod scenario;
pub mod verify;

use clap::{Args, Parser, Subcommand, ValueEnum};
use config::{Overrides, ScenarioConfig};
use report::{campaign_checks, Report, RunSummary};
use scenario::Scenario;
use serde::Serialize;
use sha2::{Digest, Sha256};
use slff_core::hybrid::{write_arc, ArcFormat, Termination};
use slff_core::pendulum::{run_campaign, simulate_run};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("check failed: {0}")]
    Check(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) => 1,
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(
    name = "slff",
    version,
    about = "Synergistic hybrid feedback scenarios"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Certify, build the controller, run the Monte-Carlo campaign and check it.
    Run(CommonArgs),
    /// Run the audit suite (gradients, damping, gap, candidate conditions).
    Verify(CommonArgs),
    /// Certify the synergy constant and write the certificate.
    Certify(CommonArgs),
    /// Simulate one run of the campaign and write its arc.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Scenario configuration (TOML).
    pub config: PathBuf,
    /// Parent of the timestamped run directory.
    #[arg(long, env = "SLFF_OUT_DIR", default_value = "runs")]
    pub out: PathBuf,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub horizon_t: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for ArcFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => ArcFormat::Csv,
            FormatArg::Json => ArcFormat::Json,
        }
    }
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Campaign run index to simulate.
    #[arg(long, default_value_t = 0)]
    pub run: usize,
    /// Overrides `campaign.arc_format`.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

/// Where a command left its outputs, and whether its checks passed.
#[derive(Debug)]
pub struct Outcome {
    pub dir: PathBuf,
    pub pass: bool,
}

/// A loaded config after flag overrides, with its hash.
pub struct Prepared {
    pub cfg: ScenarioConfig,
    pub source: String,
    pub resolved: String,
    pub sha256: String,
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn prepare(args: &CommonArgs) -> Result<Prepared, CliError> {
    let (mut cfg, source) = ScenarioConfig::load(&args.config)?;
    cfg.apply(&Overrides {
        seed: args.seed,
        horizon_t: args.horizon_t,
        samples: args.samples,
    })?;
    if args.jobs == Some(0) {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    let resolved = cfg.to_toml();
    let sha256 = sha256_hex(&resolved);
    Ok(Prepared {
        cfg,
        source,
        resolved,
        sha256,
    })
}

/// Creates `<base>/<UTC time>-<command>-<scenario>`, adding a counter when
/// the name is taken, and copies the configs in.
pub fn create_run_dir(base: &Path, command: &str, p: &Prepared) -> Result<PathBuf, CliError> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
    let stem = format!("{stamp}-{command}-{}", p.cfg.scenario.as_str());
    std::fs::create_dir_all(base).map_err(|e| io_error(base, e))?;
    let mut dir = base.join(&stem);
    let mut k = 1;
    while dir.exists() {
        k += 1;
        dir = base.join(format!("{stem}-{k}"));
    }
    std::fs::create_dir(&dir).map_err(|e| io_error(&dir, e))?;
    write(&dir.join("config.toml"), &p.resolved)?;
    write(&dir.join("source.toml"), &p.source)?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn with_jobs<T: Send>(
    jobs: Option<usize>,
    f: impl FnOnce() -> Result<T, CliError> + Send,
) -> Result<T, CliError> {
    match jobs {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Runtime(e.to_string()))?
            .install(f),
    }
}

fn print_checks(report: &Report) {
    for c in &report.checks {
        let tag = if c.pass { "PASS" } else { "FAIL" };
        if c.detail.is_empty() {
            println!("[{tag}] {} (margin {:.3e})", c.name, c.margin);
        } else {
            println!("[{tag}] {}: {} (margin {:.3e})", c.name, c.detail, c.margin);
        }
        if let (false, Some(w)) = (c.pass, &c.witness) {
            println!("    witness: q = {}, z = {:?}", w.q, w.z.as_slice());
        }
    }
}

fn extension(f: ArcFormat) -> &'static str {
    match f {
        ArcFormat::Csv => "csv",
        ArcFormat::Json => "json",
    }
}

pub fn cmd_run(args: &CommonArgs) -> Result<Outcome, CliError> {
    let p = prepare(args)?;
    let dir = create_run_dir(&args.out, "run", &p)?;
    let cfg = &p.cfg;
    let report = with_jobs(args.jobs, || {
        let scenario = Scenario::build(cfg)?;
        let sys = scenario.closed_loop();
        let opts = scenario::campaign_options(cfg);
        let campaign = run_campaign(sys, &opts);
        let arcs = dir.join("arcs");
        let n_arcs = cfg.campaign.export_arcs.min(opts.runs);
        if n_arcs > 0 {
            std::fs::create_dir_all(&arcs).map_err(|e| io_error(&arcs, e))?;
        }
        let names = sys.manifold().component_names();
        for i in 0..n_arcs {
            let (_, arc) =
                simulate_run(sys, &opts, i).map_err(|e| CliError::Runtime(e.to_string()))?;
            let fmt = cfg.campaign.arc_format;
            let path = arcs.join(format!("run_{i:04}.{}", extension(fmt)));
            write_arc(&arc, &names, fmt, &path).map_err(|e| CliError::Runtime(e.to_string()))?;
        }
        let checks = campaign_checks(&campaign, scenario.is_smoothed());
        let pass = checks.iter().all(|c| c.pass);
        let report = Report {
            command: "run".into(),
            scenario: cfg.scenario,
            seed: cfg.seed,
            config_sha256: p.sha256.clone(),
            certification: Some(scenario.certificate()),
            constants: scenario.constants(),
            runs: campaign
                .runs
                .iter()
                .map(|r| RunSummary::new(r, &opts))
                .collect(),
            checks,
            pass,
        };
        let failed = campaign
            .runs
            .iter()
            .find(|r| matches!(r.termination, Termination::IntegrationFailure(_)));
        Ok((report, failed.map(|r| (r.index, r.termination.clone()))))
    });
    let (report, failure) = report?;
    write(&dir.join("report.json"), &report.to_json())?;
    print_checks(&report);
    if let Some((i, t)) = failure {
        return Err(CliError::Runtime(format!(
            "run {i} ended with {t:?}; see {}",
            dir.display()
        )));
    }
    Ok(Outcome {
        dir,
        pass: report.pass,
    })
}

pub fn cmd_verify(args: &CommonArgs) -> Result<Outcome, CliError> {
    let p = prepare(args)?;
    let dir = create_run_dir(&args.out, "verify", &p)?;
    let suite = with_jobs(args.jobs, || verify::run_suite(&p.cfg))?;
    let pass = suite.checks.iter().all(|c| c.pass);
    let report = Report {
        command: "verify".into(),
        scenario: p.cfg.scenario,
        seed: p.cfg.seed,
        config_sha256: p.sha256.clone(),
        certification: suite.certification,
        constants: suite.constants,
        runs: Vec::new(),
        checks: suite.checks,
        pass,
    };
    write(&dir.join("verify.json"), &report.to_json())?;
    print_checks(&report);
    Ok(Outcome { dir, pass })
}

#[derive(Serialize)]
struct CertificateArtifact<'a> {
    scenario: config::ScenarioId,
    seed: u64,
    config_sha256: &'a str,
    certification: scenario::CertificateSummary,
}

pub fn cmd_certify(args: &CommonArgs) -> Result<Outcome, CliError> {
    let p = prepare(args)?;
    let dir = create_run_dir(&args.out, "certify", &p)?;
    let cert = with_jobs(args.jobs, || match p.cfg.scenario {
        config::ScenarioId::Custom => Ok(scenario::build_custom(&p.cfg)?.certificate),
        _ => {
            let (_, family) = scenario::certify_pendulum(&p.cfg)?;
            Ok(family.certificate.as_ref().expect("certified").into())
        }
    })?;
    println!(
        "c = {:.6} (β = {}, minimum gap {:.6} over {} samples, {} seeds per mode)",
        cert.c, cert.beta, cert.min_gap, cert.sample_count, cert.seeds_per_mode
    );
    let artifact = CertificateArtifact {
        scenario: p.cfg.scenario,
        seed: p.cfg.seed,
        config_sha256: &p.sha256,
        certification: cert,
    };
    let text = serde_json::to_string_pretty(&artifact).expect("certificate serializes");
    write(&dir.join("certificate.json"), &text)?;
    Ok(Outcome { dir, pass: true })
}

pub fn cmd_export(args: &ExportArgs) -> Result<Outcome, CliError> {
    let p = prepare(&args.common)?;
    if args.run >= p.cfg.campaign.samples {
        return Err(CliError::Config(format!(
            "--run {} is outside the campaign of {} samples",
            args.run, p.cfg.campaign.samples
        )));
    }
    let dir = create_run_dir(&args.common.out, "export", &p)?;
    let fmt: ArcFormat = args.format.map_or(p.cfg.campaign.arc_format, Into::into);
    let path = dir.join(format!("run_{:04}.{}", args.run, extension(fmt)));
    with_jobs(args.common.jobs, || {
        let scenario = Scenario::build(&p.cfg)?;
        let sys = scenario.closed_loop();
        let opts = scenario::campaign_options(&p.cfg);
        let (_, arc) =
            simulate_run(sys, &opts, args.run).map_err(|e| CliError::Runtime(e.to_string()))?;
        write_arc(&arc, &sys.manifold().component_names(), fmt, &path)
            .map_err(|e| CliError::Runtime(e.to_string()))
    })?;
    println!("wrote {}", path.display());
    Ok(Outcome { dir, pass: true })
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Certify(a) => cmd_certify(a),
        Command::Export(a) => cmd_export(a),
    };
    match result {
        Ok(o) => {
            println!("outputs in {}", o.dir.display());
            if o.pass {
                0
            } else {
                eprintln!("one or more checks failed");
                1
            }
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn argument_definitions_are_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn export_flags_parse() {
        let cli = Cli::try_parse_from([
            "slff", "export", "a.toml", "--run", "4", "--format", "json", "--jobs", "2",
        ])
        .unwrap();
        let Command::Export(a) = cli.command else {
            panic!("expected export");
        };
        assert_eq!(a.run, 4);
        assert!(matches!(a.format, Some(FormatArg::Json)));
        assert_eq!(a.common.jobs, Some(2));
    }

    #[test]
    fn digest_of_known_input() {
        assert_eq!(
            sha256_hex("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(CliError::Check(String::new()).exit_code(), 1);
        assert_eq!(CliError::Config(String::new()).exit_code(), 2);
        assert_eq!(CliError::Runtime(String::new()).exit_code(), 3);
    }

    #[test]
    fn zero_jobs_is_a_config_error() {
        let dir = std::env::temp_dir().join(format!("slff-jobs-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.toml");
        std::fs::write(&path, "scenario = \"pendulum_backstep\"\n").unwrap();
        let args = CommonArgs {
            config: path,
            out: dir.clone(),
            jobs: Some(0),
            seed: None,
            horizon_t: None,
            samples: None,
        };
        assert!(matches!(prepare(&args), Err(CliError::Config(_))));
        std::fs::remove_dir_all(dir).unwrap();
    }
}

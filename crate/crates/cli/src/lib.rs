//! Command-line driver for the `mfg-core` solvers: configuration, run
//! manifests and CSV export.

pub mod commands;
pub mod config;
pub mod output;
pub mod verify;

use clap::{Parser, Subcommand};
use config::RunConfig;
use mfg_core::MfgError;
use output::RunManifest;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_NON_CONVERGENCE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "mfg", version, about = "Mean field games with common noise on a binomial tree")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration; shipped defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory; overrides `output_dir`.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Single deterministic HJB solve.
    SolveHjb,
    /// Backward stochastic HJB on the noise tree.
    SolveBshjb,
    /// Forward Fokker-Planck solve with a fixed drift.
    SolveFp,
    /// Coupled fixed point.
    SolveMfg,
    /// Full invariant battery.
    Verify,
    /// Stability and refinement sweeps.
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SolveHjb => "solve-hjb",
            Command::SolveBshjb => "solve-bshjb",
            Command::SolveFp => "solve-fp",
            Command::SolveMfg => "solve-mfg",
            Command::Verify => "verify",
            Command::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Failure {
    pub code: i32,
    pub module: &'static str,
    pub kind: String,
    pub message: String,
}

fn kind_of(e: &MfgError) -> (&'static str, i32) {
    match e {
        MfgError::InvalidArgument(_) => ("invalid-argument", EXIT_VALIDATION),
        MfgError::Configuration(_) => ("configuration", EXIT_VALIDATION),
        MfgError::Cfl { .. } => ("cfl", EXIT_VALIDATION),
        MfgError::RadiusTooSmall { .. } => ("radius-too-small", EXIT_VALIDATION),
        MfgError::StructuralAssumption(_) => ("structural-assumption", EXIT_VALIDATION),
        MfgError::DomainTooSmall { .. } => ("domain-too-small", EXIT_VALIDATION),
        MfgError::UnsupportedMode(_) => ("unsupported-mode", EXIT_VALIDATION),
        MfgError::NumericalBlowup { .. } => ("numerical-blowup", EXIT_NUMERICAL),
        MfgError::SchemeFailure(_) => ("scheme-failure", EXIT_NUMERICAL),
        MfgError::NonConvergence { .. } => ("non-convergence", EXIT_NON_CONVERGENCE),
        MfgError::AtNode { source, .. } => kind_of(source),
    }
}

impl Failure {
    pub fn core(module: &'static str, e: MfgError) -> Self {
        let (kind, code) = kind_of(&e);
        Failure { code, module, kind: kind.into(), message: e.to_string() }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Failure { code: EXIT_VALIDATION, module: "cli-io", kind: "configuration".into(), message: msg.into() }
    }

    pub fn io(e: std::io::Error) -> Self {
        Failure { code: EXIT_NUMERICAL, module: "cli-io", kind: "io".into(), message: e.to_string() }
    }

    pub fn invariants(module: &'static str, failed: &[String]) -> Self {
        Failure {
            code: EXIT_NUMERICAL,
            module,
            kind: "invariant".into(),
            message: format!("invariant suites failed: {}", failed.join(", ")),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::io(e)
    }
}

/// State shared by the commands: the validated config, the output directory
/// and the manifest under construction.
pub struct Run {
    pub cfg: RunConfig,
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

impl Run {
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        let started = Instant::now();
        let out = f(self);
        self.manifest.time(name, started.elapsed().as_secs_f64());
        out
    }

    pub fn record(&mut self, suite: &str, passed: bool, detail: String, seconds: f64) {
        log::info!("{} {suite}: {detail}", if passed { "PASS" } else { "FAIL" });
        self.manifest.pass_table.push(output::SuiteRow { suite: suite.into(), passed, detail, seconds });
    }

    pub fn file(&mut self, p: std::io::Result<PathBuf>) -> Result<(), Failure> {
        let p = p?;
        self.manifest.file(&p);
        Ok(())
    }

    /// Fails with exit code 3 when any suite of the pass table failed.
    pub fn check_table(&self, module: &'static str) -> Result<(), Failure> {
        let failed: Vec<String> = self.manifest.pass_table.iter().filter(|r| !r.passed).map(|r| r.suite.clone()).collect();
        if failed.is_empty() {
            Ok(())
        } else {
            Err(Failure::invariants(module, &failed))
        }
    }
}

fn init_logging() -> Result<(), String> {
    let level = match std::env::var("MFG_LOG").as_deref() {
        Err(_) | Ok("info") => log::LevelFilter::Info,
        Ok("quiet") => log::LevelFilter::Off,
        Ok("debug") => log::LevelFilter::Debug,
        Ok(other) => return Err(format!("MFG_LOG = '{other}' is not one of quiet, info, debug")),
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    Ok(())
}

fn finish(manifest: &mut RunManifest, dir: &Path, result: Result<(), Failure>) -> i32 {
    let code = match &result {
        Ok(()) => EXIT_OK,
        Err(f) => f.code,
    };
    manifest.exit_code = code;
    manifest.status = if code == EXIT_OK { "ok".into() } else { "failed".into() };
    if let Err(f) = result {
        eprintln!("error [{}] {}: {}", f.module, f.kind, f.message);
        manifest.error = Some(output::ErrorRecord { module: f.module.into(), kind: f.kind, message: f.message });
    }
    if let Err(e) = std::fs::create_dir_all(dir).and_then(|_| manifest.write(dir)) {
        eprintln!("error [cli-io] io: cannot write manifest to {}: {e}", dir.display());
        return if code == EXIT_OK { EXIT_NUMERICAL } else { code };
    }
    code
}

/// Parses the configuration, runs `cli.command` and writes the manifest.
/// Returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let command = cli.command;
    let loaded = match &cli.config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    };
    let mut cfg = match loaded {
        Ok(c) => c,
        Err(msg) => {
            let dir = cli.output.clone().unwrap_or_else(|| PathBuf::from("mfg-run"));
            let mut m = RunManifest::new(command.name(), serde_json::Value::Null, 0, cli.seed.unwrap_or(0));
            return finish(&mut m, &dir, Err(Failure::config(msg)));
        }
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.output {
        cfg.output_dir = Some(o.to_string_lossy().into_owned());
    }
    let dir = PathBuf::from(cfg.output_dir.clone().unwrap_or_else(|| "mfg-run".into()));
    let workers = cli.workers.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let echo = serde_json::to_value(&cfg).unwrap_or(serde_json::Value::Null);
    let mut manifest = RunManifest::new(command.name(), echo, workers, cfg.seed);

    if let Err(msg) = init_logging() {
        return finish(&mut manifest, &dir, Err(Failure::config(msg)));
    }
    if let Err(msg) = cfg.validate() {
        return finish(&mut manifest, &dir, Err(Failure::config(msg)));
    }
    if workers == 0 {
        return finish(&mut manifest, &dir, Err(Failure::config("--workers must be >= 1")));
    }
    if let Err(e) = std::fs::create_dir_all(&dir) {
        return finish(&mut manifest, &dir, Err(Failure::io(e)));
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(p) => p,
        Err(e) => return finish(&mut manifest, &dir, Err(Failure::config(format!("cannot start {workers} workers: {e}")))),
    };
    log::info!("{} with {workers} workers, output in {}", command.name(), dir.display());

    let mut run = Run { cfg, dir: dir.clone(), manifest };
    let started = Instant::now();
    let result = pool.install(|| match command {
        Command::SolveHjb => commands::solve_hjb(&mut run),
        Command::SolveBshjb => commands::solve_bshjb(&mut run),
        Command::SolveFp => commands::solve_fp(&mut run),
        Command::SolveMfg => commands::solve_mfg(&mut run),
        Command::Verify => verify::verify(&mut run),
        Command::Sweep => commands::sweep(&mut run),
    });
    run.manifest.time("total", started.elapsed().as_secs_f64());
    finish(&mut run.manifest, &dir, result)
}

//! The `vhi` command line: hypothesis audits, contact simulations, small
//! abstract instances and manifest replay.
//!
//! Exit codes: 0 success, 1 numerical or gate failure, 2 usage or parse
//! error.

pub mod manifest;
pub mod output;
pub mod simulate;
pub mod toy;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use manifest::{sha256_hex, Overrides, RunManifest, MANIFEST_FILE};
use simulate::RunOptions;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{}:{line}:{column}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("gate failed: {0}")]
    Gate(String),
    #[error("{0}")]
    Numerical(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("replay differs from the manifest: {0}")]
    Mismatch(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Parse { .. } => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    March,
    Picard,
    #[default]
    Both,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::March => "march",
            Mode::Picard => "picard",
            Mode::Both => "both",
        }
    }

    fn parse(s: &str) -> Result<Self, CliError> {
        <Mode as ValueEnum>::from_str(s, false).map_err(|_| CliError::Usage(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Parser)]
#[command(name = "vhi", version, about = "History-dependent variational-hemivariational inequality solver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Audit the hypotheses of a contact scenario; exit 0 iff all gates pass.
    Audit(AuditArgs),
    /// Audit and solve a contact scenario, writing CSV and summary outputs.
    Simulate(SimulateArgs),
    /// Solve one of the small abstract instances and print its certificates.
    Toy(ToyArgs),
    /// Re-run a manifest and compare artifact checksums.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Overrides the scenario's audit seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "vhi-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Both)]
    pub mode: Mode,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "vhi-out")]
    pub out: PathBuf,
    /// Refinement study: also solve with the step halved 1..=K times.
    #[arg(long, default_value_t = 0)]
    pub halve_dt: u32,
    /// Overrides the inner, outer and fixed-point tolerances.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Stop after the audit.
    #[arg(long)]
    pub audit_only: bool,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    /// Instance name; an unknown name lists the available ones.
    pub name: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Also write the report and a manifest to this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Where to write the repeated outputs; defaults to `replay/` next to
    /// the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command, stdout: &mut dyn Write) -> Result<(), CliError> {
    let say = |out: &mut dyn Write, s: String| {
        let _ = writeln!(out, "{s}");
    };
    match cmd {
        Command::Audit(a) => {
            let opts = RunOptions {
                scenario: a.scenario,
                mode: Mode::Both,
                seed: a.seed,
                out: a.out,
                halve_dt: 0,
                tol: None,
                audit_only: true,
            };
            simulate::run(&opts, "audit")?;
            say(stdout, format!("all gates pass; report in {}", opts.out.join("audit.toml").display()));
        }
        Command::Simulate(s) => {
            let opts = RunOptions {
                scenario: s.scenario,
                mode: s.mode,
                seed: s.seed,
                out: s.out,
                halve_dt: s.halve_dt,
                tol: s.tol,
                audit_only: s.audit_only,
            };
            let m = simulate::run(&opts, "simulate")?;
            say(stdout, format!("wrote {} files to {}", m.artifacts.len(), opts.out.display()));
        }
        Command::Toy(t) => {
            let text = toy_command(&t.name, t.seed, t.tol, t.out.as_deref())?;
            say(stdout, text);
        }
        Command::Replay(r) => {
            let n = replay(&r.manifest, r.out.as_deref())?;
            say(stdout, format!("replay reproduced {n} artifacts byte for byte"));
        }
    }
    Ok(())
}

fn toy_command(name: &str, seed: u64, tol: Option<f64>, out: Option<&Path>) -> Result<String, CliError> {
    let rep = toy::run_toy(name, seed, tol)?;
    let text = toml::to_string(&rep).map_err(|e| CliError::Io(e.to_string()))?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let file = format!("toy-{name}.toml");
        let mut m = RunManifest {
            command: "toy".into(),
            scenario: None,
            scenario_sha256: None,
            instance: Some(name.into()),
            overrides: Overrides {
                tol,
                ..Default::default()
            },
            seed,
            out: dir.to_path_buf(),
            artifacts: Default::default(),
        };
        fs::write(dir.join(&file), &text).map_err(|e| CliError::io(dir, e))?;
        m.record(dir, &[file])?;
        m.write(dir)?;
    }
    Ok(text)
}

/// Repeats the run described by a manifest into a fresh directory and
/// compares every recorded checksum. Returns the number of artifacts.
pub fn replay(manifest_path: &Path, out: Option<&Path>) -> Result<usize, CliError> {
    let m = RunManifest::read(manifest_path)?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| {
        manifest_path.parent().unwrap_or(Path::new(".")).join("replay")
    });
    if out.join(MANIFEST_FILE) == manifest_path {
        return Err(CliError::Usage("replay output must differ from the original run".into()));
    }
    let fresh = match m.command.as_str() {
        "audit" | "simulate" => {
            let scenario = m.scenario.clone().ok_or_else(|| CliError::Usage("manifest lacks a scenario".into()))?;
            let text = fs::read(&scenario).map_err(|e| CliError::Usage(format!("{}: {e}", scenario.display())))?;
            if Some(sha256_hex(&text)) != m.scenario_sha256 {
                return Err(CliError::Usage(format!("{} changed since the manifest was written", scenario.display())));
            }
            let o = &m.overrides;
            let opts = RunOptions {
                scenario,
                mode: Mode::parse(o.mode.as_deref().unwrap_or("both"))?,
                seed: Some(m.seed),
                out: out.clone(),
                halve_dt: o.halve_dt,
                tol: o.tol,
                audit_only: o.audit_only,
            };
            match simulate::run(&opts, &m.command) {
                Ok(r) => r,
                // a gate failure is reproducible too; compare what was written
                Err(CliError::Gate(_)) => RunManifest::read(&out.join(MANIFEST_FILE))?,
                Err(e) => return Err(e),
            }
        }
        "toy" => {
            let name = m.instance.clone().ok_or_else(|| CliError::Usage("manifest lacks an instance".into()))?;
            toy_command(&name, m.seed, m.overrides.tol, Some(&out))?;
            RunManifest::read(&out.join(MANIFEST_FILE))?
        }
        other => return Err(CliError::Usage(format!("unknown command {other:?} in manifest"))),
    };
    if fresh.artifacts != m.artifacts {
        let mut diffs = Vec::new();
        for (k, v) in &m.artifacts {
            if fresh.artifacts.get(k) != Some(v) {
                diffs.push(k.clone());
            }
        }
        for k in fresh.artifacts.keys() {
            if !m.artifacts.contains_key(k) {
                diffs.push(k.clone());
            }
        }
        return Err(CliError::Mismatch(diffs.join(", ")));
    }
    Ok(m.artifacts.len())
}

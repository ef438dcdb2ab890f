use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use kbarrier::cegis::CegisOutcome;
use kbarrier::config::{CaseStudyConfig, BUILTIN_NAMES};
use kbarrier::dynamics::write_states_csv;
use kbarrier::safety::KbcSpec;
use kbarrier::verifier::{self, Verdict};
use kbarrier::{Error, Expr, Tape};

/// Synthesis and verification of k-inductive barrier certificates from a
/// single trajectory.
#[derive(Parser)]
#[command(name = "kbarrier", version)]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll the truth or data-driven model and write a CSV trajectory.
    Simulate {
        #[command(flatten)]
        config: ConfigArg,
        /// Number of steps (default: the configured trajectory length).
        #[arg(long)]
        steps: Option<usize>,
        /// Initial state, comma separated (default: the configured x0).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
        /// Roll the data-driven model instead of the truth model.
        #[arg(long)]
        data_driven: bool,
        /// Output file (default: stdout).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run the full pipeline; writes report.json, certificate.expr and
    /// certificate.json.
    Synthesize {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(short, long, default_value = ".")]
        output_dir: PathBuf,
    },
    /// Verify a stored certificate and print the verdict as JSON.
    Verify {
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        overrides: KbcOverrides,
        /// Certificate in expression text format.
        #[arg(long)]
        certificate: PathBuf,
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Evaluate a certificate on a uniform grid over X (2-D only).
    Grid {
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        overrides: KbcOverrides,
        #[arg(long)]
        certificate: PathBuf,
        #[arg(long, default_value_t = 201)]
        resolution: usize,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Print a builtin configuration as JSON.
    ShowConfig {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(BUILTIN_NAMES))]
        name: String,
    },
}

#[derive(Args)]
struct ConfigArg {
    /// Builtin config name or path to a JSON config.
    #[arg(short, long)]
    config: String,
}

#[derive(Args)]
struct KbcOverrides {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
}

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RANK: u8 = 3;
const EXIT_EXHAUSTED: u8 = 4;
const EXIT_TERMINATED: u8 = 5;
const EXIT_DIVERGED: u8 = 6;

/// Failure with a specific exit code.
#[derive(Debug)]
struct Exit(u8, String);

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.1)
    }
}

impl std::error::Error for Exit {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(Exit(code, _)) = err.downcast_ref::<Exit>() {
        return *code;
    }
    match err.downcast_ref::<Error>() {
        Some(
            Error::InsufficientSamples { .. }
            | Error::PersistencyOfExcitation { .. }
            | Error::RightInverseResidual { .. },
        ) => EXIT_RANK,
        Some(Error::Diverged { .. }) => EXIT_DIVERGED,
        Some(
            Error::InvalidConfig(_)
            | Error::Json(_)
            | Error::Parse { .. }
            | Error::DimensionMismatch { .. }
            | Error::VarOutOfRange { .. }
            | Error::MissingReplacement { .. }
            | Error::EmptyRegionMask { .. },
        ) => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}

fn load_config(arg: &ConfigArg) -> anyhow::Result<CaseStudyConfig> {
    if BUILTIN_NAMES.contains(&arg.config.as_str()) {
        return Ok(CaseStudyConfig::builtin(&arg.config)?);
    }
    let text = fs::read_to_string(&arg.config)
        .with_context(|| format!("reading config {}", arg.config))
        .map_err(|e| Exit(EXIT_CONFIG, format!("{e:#}")))?;
    Ok(CaseStudyConfig::from_json(&text)?)
}

fn load_certificate(path: &Path) -> anyhow::Result<Expr> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.trim().parse::<Expr>()?)
}

fn kbc_for(cfg: &CaseStudyConfig, o: &KbcOverrides) -> anyhow::Result<KbcSpec> {
    let k = o.k.unwrap_or(cfg.kbc.k());
    let eps = o.epsilon.unwrap_or(cfg.kbc.epsilon());
    Ok(KbcSpec::new(k, eps)?)
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Prints to stdout, treating a closed pipe as success.
fn emit(text: &str) -> anyhow::Result<()> {
    match writeln!(io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn simulate(
    cfg: &CaseStudyConfig,
    steps: Option<usize>,
    x0: Option<Vec<f64>>,
    data_driven: bool,
    out: Option<&Path>,
) -> anyhow::Result<()> {
    let steps = steps.unwrap_or(cfg.trajectory_length);
    let x0 = x0.unwrap_or_else(|| cfg.x0.clone());
    if x0.len() != cfg.spec.dim() {
        bail!(Exit(
            EXIT_CONFIG,
            format!("x0 has {} entries, expected {}", x0.len(), cfg.spec.dim())
        ));
    }
    let mut states = vec![x0];
    if data_driven {
        let (_, model) = cfg.build_model()?;
        for i in 0..steps {
            let next = model.step(&states[i])?;
            states.push(next);
        }
    } else {
        let truth = cfg.truth_model()?;
        for i in 0..steps {
            let next = truth.step(&states[i])?;
            states.push(next);
        }
    }
    let mut w = output(out)?;
    write_states_csv(&mut w, &states)?;
    w.flush()?;
    Ok(())
}

fn synthesize(mut cfg: CaseStudyConfig, seed: u64, delta: Option<f64>, dir: &Path) -> anyhow::Result<()> {
    if let Some(d) = delta {
        cfg.cegis.delta = d;
    }
    cfg.validate()?;
    let report = cfg.synthesize(seed)?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    let certificate = report.params.to_expr();
    fs::write(dir.join("certificate.expr"), format!("{certificate}\n"))?;
    let t = &cfg.cegis.train;
    let sidecar = serde_json::json!({
        "k": cfg.kbc.k(),
        "epsilon": cfg.kbc.epsilon(),
        "eta": [t.eta1, t.eta2, t.eta3, t.eta4],
        "seed": seed,
        "iterations": report.iterations,
        "outcome": report.outcome,
    });
    fs::write(dir.join("certificate.json"), serde_json::to_string_pretty(&sidecar)? + "\n")?;
    match report.outcome {
        CegisOutcome::Verified => {
            emit(&format!("verified after {} iteration(s)", report.iterations))
        }
        CegisOutcome::Terminated => {
            let exhausted = matches!(
                report.records.last().map(|r| &r.verdict),
                Some(Verdict::Exhausted { .. })
            );
            let why = report.diagnostic.clone().unwrap_or_default();
            let code = if exhausted { EXIT_EXHAUSTED } else { EXIT_TERMINATED };
            bail!(Exit(code, format!("not verified: {why}")))
        }
    }
}

fn verify(cfg: &CaseStudyConfig, cert: &Path, o: &KbcOverrides, delta: Option<f64>) -> anyhow::Result<()> {
    let b = load_certificate(cert)?;
    let kbc = kbc_for(cfg, o)?;
    let (_, model) = cfg.build_model()?;
    let task = cfg.verification_task(&model, b, Some(kbc), delta)?;
    let outcome = verifier::verify(&task)?;
    emit(&serde_json::to_string_pretty(&outcome)?)?;
    if matches!(outcome.verdict, Verdict::Exhausted { .. }) {
        bail!(Exit(EXIT_EXHAUSTED, "verifier exhausted its box budget".into()));
    }
    Ok(())
}

fn grid(
    cfg: &CaseStudyConfig,
    cert: &Path,
    o: &KbcOverrides,
    resolution: usize,
    out: Option<&Path>,
) -> anyhow::Result<()> {
    if cfg.spec.dim() != 2 {
        bail!(Exit(EXIT_CONFIG, "grid export supports only 2-dimensional systems".into()));
    }
    if resolution < 2 {
        bail!(Exit(EXIT_CONFIG, "resolution must be at least 2".into()));
    }
    let b = load_certificate(cert)?;
    let lambda = kbc_for(cfg, o)?.lambda();
    let tape = Tape::compile(std::slice::from_ref(&b));
    let x = cfg.spec.state_space();
    let coord = |d: usize, i: usize| {
        let iv = x.get(d);
        iv.lo() + iv.width() * i as f64 / (resolution - 1) as f64
    };
    let flag = |v: bool| u8::from(v);
    let mut w = output(out)?;
    writeln!(w, "x1,x2,B,in_initial,in_unsafe,b_le_0,b_le_lambda")?;
    let mut scratch = Vec::new();
    for i in 0..resolution {
        for j in 0..resolution {
            let p = [coord(0, i), coord(1, j)];
            tape.eval_point_with(&p, &mut scratch)?;
            let v = scratch[tape.output_slot(0)];
            writeln!(
                w,
                "{:?},{:?},{:?},{},{},{},{}",
                p[0],
                p[1],
                v,
                flag(cfg.spec.initial().contains(&p)),
                flag(cfg.spec.unsafe_set().contains(&p)),
                flag(v <= 0.0),
                flag(v <= lambda)
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            steps,
            x0,
            data_driven,
            output,
        } => simulate(&load_config(&config)?, steps, x0, data_driven, output.as_deref()),
        Command::Synthesize {
            config,
            seed,
            delta,
            output_dir,
        } => synthesize(load_config(&config)?, seed, delta, &output_dir),
        Command::Verify {
            config,
            overrides,
            certificate,
            delta,
        } => verify(&load_config(&config)?, &certificate, &overrides, delta),
        Command::Grid {
            config,
            overrides,
            certificate,
            resolution,
            output,
        } => grid(&load_config(&config)?, &certificate, &overrides, resolution, output.as_deref()),
        Command::ShowConfig { name } => {
            emit(&CaseStudyConfig::builtin(&name)?.to_json())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

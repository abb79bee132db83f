use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use ckalab_cli::{compare, vectors};
use ckalab_core::bundle::Bundle;
use ckalab_sim::{MetricsReport, RunOutput, Scenario};
use clap::{Parser, Subcommand, ValueEnum};

/// Exit status for a config that fails to parse or validate.
const EXIT_CONFIG: u8 = 2;
/// Exit status when the fixture directory is absent.
const EXIT_NO_FIXTURES: u8 = 3;

#[derive(Parser)]
#[command(
    name = "ckalab",
    version,
    about = "Group key agreement vs session handshakes over delay-tolerant links"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write its metrics and event log.
    Run {
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "CKA_LAB_OUT", default_value = "out")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Run two scenarios and print their metrics side by side.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the table as comparison.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check (or regenerate) the golden fixtures.
    Vectors {
        #[arg(long, conflicts_with = "write", required_unless_present = "write")]
        check: bool,
        #[arg(long)]
        write: bool,
        #[arg(default_value = "vectors")]
        dir: PathBuf,
    },
    /// Encode a bundle given as JSON into its binary form.
    Encode {
        input: PathBuf,
        /// Output file; hex goes to stdout when absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Decode a binary bundle and print it as JSON.
    Decode {
        input: PathBuf,
        /// The input file holds hex text rather than raw bytes.
        #[arg(long)]
        hex: bool,
    },
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 1, error }
    }
}

type Outcome = Result<(), Failure>;

fn load(path: &Path) -> Result<Scenario, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(|e| Failure {
            code: EXIT_CONFIG,
            error: e,
        })?;
    Scenario::from_toml(&text).map_err(|e| Failure {
        code: EXIT_CONFIG,
        error: anyhow::Error::new(e).context(format!("invalid scenario {}", path.display())),
    })
}

fn simulate(scenario: &Scenario, seed: Option<u64>) -> RunOutput {
    let seed = seed.unwrap_or(scenario.config.seed);
    ckalab_sim::run(scenario, scenario.config.duration(), seed)
}

fn write_file(path: &Path, contents: &[u8]) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn run(config: &Path, seed: Option<u64>, out: &Path, format: Format) -> Outcome {
    let scenario = load(config)?;
    let result = simulate(&scenario, seed);
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let (name, body) = match format {
        Format::Json => ("metrics.json", result.metrics.to_json()),
        Format::Csv => ("metrics.csv", result.metrics.to_csv()),
    };
    write_file(&out.join(name), body.as_bytes())?;
    write_file(&out.join("eventlog.ndjson"), result.log.to_ndjson().as_bytes())?;
    print_summary(&result.metrics);
    println!(
        "wrote {} and {}",
        out.join(name).display(),
        out.join("eventlog.ndjson").display()
    );
    Ok(())
}

fn print_summary(m: &MetricsReport) {
    println!("{} (policy {}, seed {})", m.scenario, m.policy, m.seed);
    for f in &m.flows {
        let ttfpb = f.ttfpb_s.map(compare::fmt_num).unwrap_or_else(|| "undelivered".into());
        println!("  flow {} {}->{}: ttfpb_s {}", f.flow, f.from, f.to, ttfpb);
    }
    let t = &m.totals;
    println!(
        "  delivered {}/{}  handshakes {}/{}  commits {}  welcomes {}",
        t.delivered, t.created, t.handshakes_completed, t.handshakes_attempted, t.commits, t.welcomes
    );
}

fn compare_cmd(a: &Path, b: &Path, seed: Option<u64>, out: Option<&Path>) -> Outcome {
    let (sa, sb) = (load(a)?, load(b)?);
    let (ra, rb) = (simulate(&sa, seed), simulate(&sb, seed));
    let (na, nb) = (&ra.metrics.scenario, &rb.metrics.scenario);
    let (na, nb) = if na == nb {
        (format!("{na} (a)"), format!("{nb} (b)"))
    } else {
        (na.clone(), nb.clone())
    };
    let rows = compare::compare(&ra.metrics, &rb.metrics);
    print!("{}", compare::render(&na, &nb, &rows));
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        write_file(&dir.join("comparison.csv"), compare::to_csv(&na, &nb, &rows).as_bytes())?;
    }
    Ok(())
}

fn vectors_cmd(check: bool, dir: &Path) -> Outcome {
    if !check {
        let n = vectors::write(dir).map_err(anyhow::Error::new)?;
        println!("wrote {n} fixtures to {}", dir.display());
        return Ok(());
    }
    let bad = vectors::check(dir).map_err(|e| Failure {
        code: match e {
            vectors::VectorError::MissingDir(_) => EXIT_NO_FIXTURES,
            _ => 1,
        },
        error: e.into(),
    })?;
    if bad.is_empty() {
        println!("all {} fixtures match", vectors::fixtures().len());
        return Ok(());
    }
    for m in &bad {
        eprintln!("mismatch: {m}");
    }
    Err(anyhow::anyhow!("{} of {} fixtures do not match", bad.len(), vectors::fixtures().len()).into())
}

fn encode(input: &Path, output: Option<&Path>) -> Outcome {
    let text = fs::read_to_string(input).with_context(|| format!("cannot read {}", input.display()))?;
    let bundle: Bundle = serde_json::from_str(&text).with_context(|| format!("{} is not a bundle", input.display()))?;
    let bytes = bundle.encode();
    match output {
        Some(path) => write_file(path, &bytes)?,
        None => println!("{}", hex::encode(bytes)),
    }
    Ok(())
}

fn decode(input: &Path, is_hex: bool) -> Outcome {
    let raw = fs::read(input).with_context(|| format!("cannot read {}", input.display()))?;
    let bytes = if is_hex {
        let text = String::from_utf8(raw).context("hex input is not text")?;
        hex::decode(text.trim()).context("input is not valid hex")?
    } else {
        raw
    };
    let bundle = Bundle::decode(&bytes).with_context(|| format!("{} is not a bundle", input.display()))?;
    println!("{}", serde_json::to_string_pretty(&bundle).expect("bundle serialises"));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run {
            config,
            seed,
            out,
            format,
        } => run(config, *seed, out, *format),
        Command::Compare { a, b, seed, out } => compare_cmd(a, b, *seed, out.as_deref()),
        Command::Vectors { check, dir, .. } => vectors_cmd(*check, dir),
        Command::Encode { input, output } => encode(input, output.as_deref()),
        Command::Decode { input, hex } => decode(input, *hex),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("ckalab: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

//! `mixtv`: total variation distance between mixtures of product
//! distributions.
//!
//! Every command prints one JSON report on stdout and a short human summary
//! on stderr. Exit codes: 0 success, 2 usage error, 3 invalid input,
//! 4 size guard tripped.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use mixtv::coupling::CouplingDag;
use mixtv::estimator::{approximate_tv_with_dag, EstimatorConfig};
use mixtv::oracle::{generate_3cnf_instance, random_instance, CnfFormula, Family};
use mixtv::{brute_force_tv, exact_subcube_tv, Error, Instance, InstanceDocument};
use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

const DEFAULT_MAX_STATES: usize = 5_000_000;

#[derive(Parser, Debug)]
#[command(
    name = "mixtv",
    version,
    about = "TV distance between mixtures of product distributions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// (1 ± ε) Monte Carlo estimate via the recursive coupling.
    Approx(ApproxArgs),
    /// Exact distance for mixtures of Boolean subcubes.
    ExactSubcube(InputArgs),
    /// Exhaustive distance (at most 2^24 configurations).
    Brute(InputArgs),
    /// Size and discrepancy of the coupling graph.
    CouplingStats(StatsArgs),
    /// Generate instances.
    #[command(subcommand)]
    Gen(GenCommand),
}

#[derive(Args, Debug)]
struct InputArgs {
    /// Instance JSON file.
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args, Debug)]
struct ApproxArgs {
    #[arg(long)]
    input: PathBuf,
    /// Relative error target.
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use this many samples instead of ⌈100/(γε²)⌉.
    #[arg(long)]
    samples: Option<u64>,
    /// Replace the worst-case γ = (4nq)^-(k1+k2-1).
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, env = "MIXTV_WORKERS", default_value_t = 1)]
    workers: usize,
    /// Independent runs; the median is reported.
    #[arg(long, default_value_t = 1)]
    repetitions: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_STATES)]
    max_states: usize,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long)]
    input: PathBuf,
    /// Write the full state graph as JSON here.
    #[arg(long)]
    dump: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MAX_STATES)]
    max_states: usize,
}

#[derive(Subcommand, Debug)]
enum GenCommand {
    /// Random pair of mixtures (flat Dirichlet, or random subcubes).
    Random {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        q: usize,
        #[arg(long)]
        k1: usize,
        #[arg(long)]
        k2: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        subcube: bool,
        /// Also write the bare instance document here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Subcube instance whose distance encodes the model count of a 3-CNF.
    FromCnf {
        #[arg(long)]
        dimacs: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

struct Outcome {
    digest: String,
    result: Value,
    warnings: Vec<String>,
    summary: String,
}

fn read_file(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n")
        .map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))
}

/// Recursively sorts object keys so that the digest ignores layout.
fn canonical(value: &Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let mut out = Map::new();
            for k in keys {
                out.insert(k.clone(), canonical(&map[k]));
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.iter().map(canonical).collect()),
        other => other.clone(),
    }
}

fn digest_of(value: &Value) -> String {
    let text = serde_json::to_string(&canonical(value)).expect("serializable");
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn load_instance(path: &Path) -> Result<(Instance, String), Failure> {
    let text = read_file(path)?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
    let doc: InstanceDocument =
        serde_json::from_value(value.clone()).map_err(|e| Error::Parse(e.to_string()))?;
    Ok((doc.validate()?, digest_of(&value)))
}

fn to_value(value: &impl Serialize) -> Value {
    serde_json::to_value(value).expect("serializable")
}

fn run_approx(args: &ApproxArgs) -> Result<Outcome, Failure> {
    let (inst, digest) = load_instance(&args.input)?;
    let mut config = EstimatorConfig::new(args.epsilon, args.seed);
    config.gamma_override = args.gamma;
    config.samples_override = args.samples;
    config.workers = args.workers;
    config.repetitions = args.repetitions;

    let mut warnings = Vec::new();
    if args.gamma.is_some() {
        warnings.push(
            "gamma override in effect: the 99% guarantee holds only if D_TV / Pr[X != Y] >= gamma"
                .into(),
        );
    }
    if args.samples.is_some() {
        warnings.push("sample-count override in effect: the 99% guarantee no longer follows from m = 100/(gamma eps^2)".into());
    }
    let started = Instant::now();
    let dag = CouplingDag::build(&inst.p, &inst.q, args.max_states)?;
    let est = approximate_tv_with_dag(&dag, &config)?;
    let summary = format!(
        "estimate {:.6} (discrepancy {:.6}, fbar {:.6}, {} samples) in {:.2?}",
        est.estimate,
        est.discrepancy,
        est.fbar,
        est.samples,
        started.elapsed()
    );
    let mut result = to_value(&est);
    result["epsilon"] = json!(args.epsilon);
    result["workers"] = json!(args.workers);
    Ok(Outcome {
        digest,
        result,
        warnings,
        summary,
    })
}

fn run_exact(args: &InputArgs) -> Result<Outcome, Failure> {
    let (inst, digest) = load_instance(&args.input)?;
    let started = Instant::now();
    let tv = exact_subcube_tv(&inst.p, &inst.q)?;
    Ok(Outcome {
        digest,
        result: json!({"tv": tv, "n": inst.p.n(), "k1": inst.p.k(), "k2": inst.q.k()}),
        warnings: Vec::new(),
        summary: format!("exact tv {tv:.12} in {:.2?}", started.elapsed()),
    })
}

fn run_brute(args: &InputArgs) -> Result<Outcome, Failure> {
    let (inst, digest) = load_instance(&args.input)?;
    let started = Instant::now();
    let tv = brute_force_tv(&inst.p, &inst.q)?;
    Ok(Outcome {
        digest,
        result: json!({"tv": tv}),
        warnings: Vec::new(),
        summary: format!("brute-force tv {tv:.12} in {:.2?}", started.elapsed()),
    })
}

fn run_stats(args: &StatsArgs) -> Result<Outcome, Failure> {
    let (inst, digest) = load_instance(&args.input)?;
    let started = Instant::now();
    let dag = CouplingDag::build(&inst.p, &inst.q, args.max_states)?;
    let stats = dag.stats();
    if let Some(path) = &args.dump {
        write_json(path, &dag.dump())?;
    }
    Ok(Outcome {
        digest,
        summary: format!(
            "{} states (bound {}), {} transitions, discrepancy {:.6} in {:.2?}",
            stats.states,
            stats.state_bound,
            stats.transitions,
            stats.discrepancy,
            started.elapsed()
        ),
        result: to_value(&stats),
        warnings: Vec::new(),
    })
}

fn run_gen(cmd: &GenCommand) -> Result<Outcome, Failure> {
    match cmd {
        GenCommand::Random {
            n,
            q,
            k1,
            k2,
            seed,
            subcube,
            output,
        } => {
            let family = if *subcube {
                Family::Subcube
            } else {
                Family::General
            };
            let (p, q) = random_instance(*n, *q, *k1, *k2, *seed, family)?;
            let doc = Instance::new(p, q)?.to_document();
            if let Some(path) = output {
                write_json(path, &doc)?;
            }
            let instance = to_value(&doc);
            Ok(Outcome {
                digest: digest_of(&instance),
                result: json!({"family": family, "instance": instance}),
                warnings: Vec::new(),
                summary: format!("generated {family:?} instance n={n} k1={k1} k2={k2}"),
            })
        }
        GenCommand::FromCnf { dimacs, output } => {
            let formula = CnfFormula::from_dimacs(&read_file(dimacs)?)?;
            let red = generate_3cnf_instance(&formula)?;
            let doc = Instance::new(red.p, red.q)?.to_document();
            if let Some(path) = output {
                write_json(path, &doc)?;
            }
            let instance = to_value(&doc);
            Ok(Outcome {
                digest: digest_of(&instance),
                result: json!({
                    "predicted_tv": red.predicted_tv,
                    "variables": formula.variables,
                    "clauses": formula.clauses.len(),
                    "padded_variables": red.padded_variables,
                    "padded_models": red.padded_models,
                    "instance": instance,
                }),
                warnings: Vec::new(),
                summary: format!(
                    "reduction instance on n={} with predicted tv {}",
                    red.padded_variables + 1,
                    red.predicted_tv
                ),
            })
        }
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::ShapeMismatch(_) => "shape_mismatch",
        Error::NotAProbability { .. } => "not_a_probability",
        Error::NormalizationError { .. } => "normalization_error",
        Error::NoActiveComponent { .. } => "no_active_component",
        Error::ZeroDiscrepancy => "zero_discrepancy",
        Error::RatioAboveOne { .. } => "ratio_above_one",
        Error::ZeroDenominator(_) => "zero_denominator",
        Error::NotASubcube { .. } => "not_a_subcube",
        Error::WrongAlphabet(_) => "wrong_alphabet",
        Error::TooLarge(_) => "too_large",
        Error::NotThreeCnf(_) => "not_three_cnf",
        Error::InvalidParameter(_) => "invalid_parameter",
        Error::Parse(_) => "parse_error",
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let outcome = match &cli.command {
        Command::Approx(a) => run_approx(a),
        Command::ExactSubcube(a) => run_exact(a),
        Command::Brute(a) => run_brute(a),
        Command::CouplingStats(a) => run_stats(a),
        Command::Gen(g) => run_gen(g),
    };
    match outcome {
        Ok(out) => {
            let mut report = Map::new();
            report.insert("command".into(), json!(argv[1..]));
            report.insert("instance_digest".into(), json!(out.digest));
            report.insert("warnings".into(), json!(out.warnings));
            report.insert("result".into(), out.result);
            let text = serde_json::to_string_pretty(&Value::Object(report)).expect("serializable");
            // A closed pipe downstream is not an error of ours.
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            eprintln!("{}", out.summary);
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(message)) => {
            eprintln!("{}", json!({"error": "usage", "message": message}));
            ExitCode::from(2)
        }
        Err(Failure::Lib(e)) => {
            eprintln!(
                "{}",
                json!({"error": error_kind(&e), "message": e.to_string()})
            );
            match e {
                Error::TooLarge(_) => ExitCode::from(4),
                _ => ExitCode::from(3),
            }
        }
    }
}

//! `detprep` command-line tool.
//!
//! Exit codes: 0 success, 1 I/O or input error, 2 synthesis infeasible,
//! 3 global search stopped by the budget (partial result written),
//! 4 single-fault check violations.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use detprep::protocol::{assemble, DetFtProtocol, MetricsRow, SynthOptions};
use detprep::sim::{estimate_ler, exhaustive_single_fault_check, fit_scaling, NoiseModel, SimOptions, SimResult};
use detprep::{catalog, CssCode, Error, ReductionMode};

const EXIT_INPUT: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_PARTIAL: u8 = 3;
const EXIT_VIOLATIONS: u8 = 4;

#[derive(Parser)]
#[command(name = "detprep", version, about = "Deterministic fault-tolerant |0> preparation for small CSS codes")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Reduction {
    State,
    Code,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a protocol and write JSON, circuit text and a metrics row.
    Synth {
        /// Catalog name or path to a code JSON file.
        code: String,
        #[arg(long)]
        global: bool,
        /// Global search budget in seconds.
        #[arg(long)]
        budget: Option<f64>,
        #[arg(long, value_enum, default_value = "state")]
        reduction: Reduction,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run the exhaustive single-fault check on a protocol file.
    Check { protocol: PathBuf },
    /// Estimate logical error rates under uniform depolarizing noise.
    Simulate {
        protocol: PathBuf,
        /// Comma-separated physical error rates.
        #[arg(long, value_delimiter = ',', default_value = "0.001,0.003,0.01")]
        p: Vec<f64>,
        #[arg(long, default_value_t = 1_000_000)]
        shots: u64,
        /// Stop a point early once this many logical errors are seen.
        #[arg(long)]
        target_errors: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Inspect the built-in codes.
    Codes {
        #[command(subcommand)]
        action: CodesAction,
    },
}

#[derive(Subcommand)]
enum CodesAction {
    List,
    Show { code: String },
}

struct Failure(u8, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Infeasible(_) | Error::Unsupported(_) => EXIT_INFEASIBLE,
            Error::NotFaultTolerant(_) => EXIT_VIOLATIONS,
            _ => EXIT_INPUT,
        };
        Failure(code, e.to_string())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure(EXIT_INPUT, format!("{}: {e}", path.display()))
}

fn load_code(arg: &str) -> Result<CssCode, Failure> {
    let path = Path::new(arg);
    if path.exists() {
        let s = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        return Ok(CssCode::from_json_str(&s)?);
    }
    Ok(catalog::get(arg)?)
}

fn load_protocol(path: &Path) -> Result<DetFtProtocol, Failure> {
    let s = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(DetFtProtocol::from_json_str(&s)?)
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn synth(code: &str, global: bool, budget: Option<f64>, reduction: Reduction, out: &Path) -> Result<u8, Failure> {
    let code = load_code(code)?;
    let opts = SynthOptions {
        global,
        budget_ms: budget.map(|s| (s.max(0.0) * 1000.0) as u64),
        reduction: match reduction {
            Reduction::State => ReductionMode::State,
            Reduction::Code => ReductionMode::Code,
        },
        ..SynthOptions::default()
    };
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let p = assemble(&code, opts)?;
    let m = p.metrics()?;
    let file = |ext: &str| out.join(format!("{}.{ext}", code.name));
    write(&file("json"), &p.to_json_string()?)?;
    write(&file("circuit.txt"), &p.circuit_text()?)?;
    write(&file("metrics.csv"), &format!("{}\n{}\n", MetricsRow::CSV_HEADER, m.csv_row(&code)))?;
    println!("{code:?}");
    println!("layers: {}", p.layers.len());
    println!("row: {}", m.layer_fields().join(","));
    println!("total ancillas {}, total CNOTs {}", m.sum_anc, m.sum_cnot);
    println!("mean correction ancillas {:.3}, CNOTs {:.3}", m.mean_anc, m.mean_cnot);
    println!("wrote {}", file("{json,circuit.txt,metrics.csv}").display());
    if p.truncated {
        eprintln!("budget exhausted; best protocol so far written");
        return Ok(EXIT_PARTIAL);
    }
    Ok(0)
}

fn check(path: &Path) -> Result<u8, Failure> {
    let p = load_protocol(path)?;
    let v = exhaustive_single_fault_check(&p)?;
    if v.is_empty() {
        println!("{}: no single fault violates fault tolerance", p.code.name);
        return Ok(0);
    }
    println!("{}: {} violations", p.code.name, v.len());
    for x in &v {
        println!("  {x}");
    }
    Ok(EXIT_VIOLATIONS)
}

fn simulate(path: &Path, ps: &[f64], opts: SimOptions, out: &Path) -> Result<u8, Failure> {
    let p = load_protocol(path)?;
    let mut results: Vec<SimResult> = Vec::new();
    for &x in ps {
        results.push(estimate_ler(&p, NoiseModel::uniform(x)?, opts)?);
    }
    let mut csv = String::from("p,shots,errors,ler,ci\n");
    println!("{:>10} {:>10} {:>8} {:>12} {:>12}", "p", "shots", "errors", "ler", "ci");
    for r in &results {
        csv.push_str(&format!("{},{},{},{},{}\n", r.p, r.shots, r.errors, r.ler, r.ci));
        println!("{:>10} {:>10} {:>8} {:>12.4e} {:>12.4e}", r.p, r.shots, r.errors, r.ler, r.ci);
    }
    let slope = match fit_scaling(&results) {
        Ok(s) => {
            println!("slope {s:.3}");
            Some(s)
        }
        Err(e) => {
            eprintln!("warning: slope omitted: {e}");
            None
        }
    };
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let file = |ext: &str| out.join(format!("{}.sim.{ext}", p.code.name));
    write(&file("csv"), &csv)?;
    let json = serde_json::json!({ "code": p.code.name, "seed": opts.seed, "results": results, "slope": slope });
    write(&file("json"), &serde_json::to_string_pretty(&json).expect("plain values serialize"))?;
    Ok(0)
}

fn codes(action: &CodesAction) -> Result<u8, Failure> {
    match action {
        CodesAction::List => {
            for name in catalog::NAMES {
                let c = catalog::get(name)?;
                println!("{} [[{},{},{}]]", c.name, c.n, c.k, c.d);
            }
        }
        CodesAction::Show { code } => {
            let c = load_code(code)?;
            println!("{} [[{},{},{}]]", c.name, c.n, c.k, c.d);
            for (label, m) in [("X", &c.hx), ("Z", &c.hz)] {
                for r in m.rows() {
                    let s: String = (0..c.n).map(|q| if r.get(q) { label } else { "I" }).collect();
                    println!("{s}");
                }
            }
            for (label, m) in [("X_L", &c.lx), ("Z_L", &c.lz)] {
                for r in m.rows() {
                    println!("{label} {r}");
                }
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INPUT);
        }
    }
    let r = match &cli.command {
        Command::Synth { code, global, budget, reduction, out } => synth(code, *global, *budget, *reduction, out),
        Command::Check { protocol } => check(protocol),
        Command::Simulate { protocol, p, shots, target_errors, seed, out } => {
            let opts = SimOptions { max_shots: *shots, target_errors: *target_errors, seed: *seed, ..SimOptions::default() };
            simulate(protocol, p, opts, out)
        }
        Command::Codes { action } => codes(action),
    };
    match r {
        Ok(c) => ExitCode::from(c),
        Err(Failure(c, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(c)
        }
    }
}

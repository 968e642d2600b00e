use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hdgoc::assembly::{assemble, condense_all, recover_all, solve};
use hdgoc::convergence::{check_refinements, compute_errors, run_study, FIELD_NAMES};
use hdgoc::problem::{parse_example_name, validate_assumptions};
use hdgoc::verify::{run_suite, SuiteConfig};
use hdgoc::{build_structured_mesh, builtin_example, make_basis, HdgError};

#[derive(Parser, Debug)]
#[command(
    name = "hdgoc",
    version,
    about = "HDG solver for distributed optimal control of convection-diffusion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve once and print errors and the trace-system residual.
    Solve(RunArgs),
    /// Run a convergence study over a list of refinements.
    Study(RunArgs),
    /// Run the identity and oracle suite on small meshes.
    Verify(RunArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Markdown,
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    /// Built-in example: 1, 2, 3 or example1..example3 (verify accepts a list).
    #[arg(long)]
    example: Option<String>,
    /// Polynomial degree (verify accepts a comma-separated list).
    #[arg(long)]
    k: Option<String>,
    /// Cells per axis, comma-separated for studies.
    #[arg(long)]
    n: Option<String>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Omit wall-clock timings so output is reproducible byte for byte.
    #[arg(long)]
    deterministic: bool,
    /// Upper bound on worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Plain-text key=value file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the mesh to this file (solve only).
    #[arg(long)]
    dump_mesh: Option<PathBuf>,
    /// Write the condensed system in coordinate format (solve only).
    #[arg(long)]
    dump_system: Option<PathBuf>,
    /// Random samples per identity check (verify only).
    #[arg(long)]
    samples: Option<usize>,
    /// Seed for random samples (verify only).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Solve,
    Study,
    Verify,
}

#[derive(Debug)]
struct RunConfig {
    mode: Mode,
    examples: Vec<usize>,
    degrees: Vec<usize>,
    ns: Vec<usize>,
    output: Option<PathBuf>,
    format: Format,
    deterministic: bool,
    threads: Option<usize>,
    samples: usize,
    seed: u64,
    dump_mesh: Option<PathBuf>,
    dump_system: Option<PathBuf>,
}

fn parse_list<T: std::str::FromStr>(key: &str, s: &str) -> Result<Vec<T>, HdgError> {
    s.split(',')
        .map(|t| t.trim())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<T>()
                .map_err(|_| HdgError::Config(format!("invalid value '{t}' for {key}")))
        })
        .collect()
}

fn parse_examples(s: &str) -> Result<Vec<usize>, HdgError> {
    if s.trim() == "all" {
        return Ok(vec![1, 2, 3]);
    }
    s.split(',').map(parse_example_name).collect()
}

fn parse_bool(key: &str, s: &str) -> Result<bool, HdgError> {
    match s.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(HdgError::Config(format!(
            "invalid value '{other}' for {key}"
        ))),
    }
}

/// Read `key = value` lines; `#` starts a comment.
fn read_config_file(path: &PathBuf) -> Result<Vec<(String, String)>, HdgError> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            HdgError::Config(format!(
                "{}:{}: expected key=value",
                path.display(),
                lineno + 1
            ))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn resolve(mode: Mode, args: RunArgs) -> Result<RunConfig, HdgError> {
    let mut example = None;
    let mut k = None;
    let mut n = None;
    let mut format = None;
    let mut output = None;
    let mut deterministic = false;
    let mut threads = None;
    let mut samples = None;
    let mut seed = None;
    if let Some(path) = &args.config {
        for (key, value) in read_config_file(path)? {
            match key.as_str() {
                "example" => example = Some(value),
                "k" => k = Some(value),
                "n" => n = Some(value),
                "format" => {
                    format = Some(
                        Format::from_str(&value, true)
                            .map_err(|_| HdgError::Config(format!("invalid format '{value}'")))?,
                    )
                }
                "output" => output = Some(PathBuf::from(value)),
                "deterministic" => deterministic = parse_bool(&key, &value)?,
                "threads" => {
                    threads = Some(
                        parse_list::<usize>(&key, &value)?
                            .first()
                            .copied()
                            .unwrap_or(0),
                    )
                }
                "samples" => {
                    samples = Some(
                        parse_list::<usize>(&key, &value)?
                            .first()
                            .copied()
                            .unwrap_or(0),
                    )
                }
                "seed" => {
                    seed = Some(
                        parse_list::<u64>(&key, &value)?
                            .first()
                            .copied()
                            .unwrap_or(0),
                    )
                }
                other => {
                    return Err(HdgError::Config(format!(
                        "unknown configuration key '{other}'"
                    )))
                }
            }
        }
    }
    let example = args.example.or(example);
    let k = args.k.or(k);
    let n = args.n.or(n);

    let examples = match (&example, mode) {
        (Some(e), _) => parse_examples(e)?,
        (None, Mode::Verify) => vec![1, 2, 3],
        (None, _) => vec![1],
    };
    let degrees = match (&k, mode) {
        (Some(k), _) => parse_list::<usize>("k", k)?,
        (None, Mode::Verify) => vec![0, 1],
        (None, _) => vec![1],
    };
    let ns = match (&n, mode) {
        (Some(n), _) => parse_list::<usize>("n", n)?,
        (None, Mode::Study) => vec![4, 8, 16],
        (None, Mode::Solve) => vec![8],
        (None, Mode::Verify) => Vec::new(),
    };
    if mode != Mode::Verify {
        if examples.len() != 1 {
            return Err(HdgError::Config(
                "solve and study take a single example".into(),
            ));
        }
        if degrees.len() != 1 {
            return Err(HdgError::Config(
                "solve and study take a single degree".into(),
            ));
        }
        check_refinements(&ns)?;
    }
    if mode == Mode::Solve && ns.len() != 1 {
        return Err(HdgError::Config("solve takes a single n".into()));
    }
    if mode == Mode::Verify && ns.len() > 1 {
        return Err(HdgError::Config("verify takes a single n".into()));
    }
    if ns.contains(&0) {
        return Err(HdgError::ZeroCells);
    }
    let threads = args.threads.or(threads);
    if threads == Some(0) {
        return Err(HdgError::Config("threads must be positive".into()));
    }
    Ok(RunConfig {
        mode,
        examples,
        degrees,
        ns,
        output: args.output.or(output),
        format: args.format.or(format).unwrap_or(Format::Csv),
        deterministic: args.deterministic || deterministic,
        threads,
        samples: args.samples.or(samples).unwrap_or(50),
        seed: args.seed.or(seed).unwrap_or(7),
        dump_mesh: args.dump_mesh,
        dump_system: args.dump_system,
    })
}

fn emit(cfg: &RunConfig, text: &str) -> Result<(), HdgError> {
    match &cfg.output {
        Some(path) => fs::write(path, text)?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn run_solve(cfg: &RunConfig) -> Result<(), HdgError> {
    let id = cfg.examples[0];
    let k = cfg.degrees[0];
    let n = cfg.ns[0];
    let start = Instant::now();
    let spec = builtin_example(id)?;
    let mesh = build_structured_mesh(spec.dim, n)?;
    if let Some(path) = &cfg.dump_mesh {
        mesh.write_dump(BufWriter::new(File::create(path)?))?;
    }
    validate_assumptions(&spec, &mesh, k)?;
    let basis = make_basis(spec.dim, k)?;
    let factors = condense_all(&mesh, &spec, &basis)?;
    let system = assemble(&mesh, &basis, &factors)?;
    if let Some(path) = &cfg.dump_system {
        system.write_coordinate(BufWriter::new(File::create(path)?))?;
    }
    let trace = solve(&system)?;
    let residual = if system.is_empty() {
        0.0
    } else {
        system.relative_residual(&trace)
    };
    let fields = recover_all(&mesh, &factors, &trace, &system.numbering, spec.gamma)?;
    let errors = compute_errors(&mesh, &basis, &spec, &fields)?;

    let mut out = String::new();
    writeln!(out, "example{id} k={k} n={n}").unwrap();
    writeln!(out, "elements {}", mesh.n_elements()).unwrap();
    writeln!(out, "trace_unknowns {}", system.len()).unwrap();
    writeln!(out, "nonzeros {}", system.nnz()).unwrap();
    for (name, e) in FIELD_NAMES.iter().zip(errors.as_array()) {
        writeln!(out, "err_{name} {e:.6e}").unwrap();
    }
    writeln!(out, "relative_residual {residual:.3e}").unwrap();
    if !cfg.deterministic {
        writeln!(out, "seconds {:.3}", start.elapsed().as_secs_f64()).unwrap();
    }
    emit(cfg, &out)
}

fn run_study_mode(cfg: &RunConfig) -> Result<(), HdgError> {
    let id = cfg.examples[0];
    let k = cfg.degrees[0];
    let spec = builtin_example(id)?;
    let coarsest = build_structured_mesh(spec.dim, cfg.ns[0])?;
    validate_assumptions(&spec, &coarsest, k)?;
    let report = run_study(&format!("example{id}"), &spec, k, &cfg.ns)?;
    let text = match cfg.format {
        Format::Csv => report.to_csv(),
        Format::Markdown => report.to_markdown(),
    };
    emit(cfg, &text)?;
    if !cfg.deterministic {
        for r in &report.records {
            eprintln!(
                "n={} unknowns={} residual={:.2e} seconds={:.2}",
                r.n, r.n_trace_unknowns, r.relative_residual, r.seconds
            );
        }
    }
    Ok(())
}

fn run_verify(cfg: &RunConfig) -> Result<bool, HdgError> {
    let report = run_suite(&SuiteConfig {
        examples: cfg.examples.clone(),
        degrees: cfg.degrees.clone(),
        samples: cfg.samples,
        seed: cfg.seed,
        n: cfg.ns.first().copied(),
    })?;
    emit(cfg, &report.to_text())?;
    Ok(report.failed() == 0)
}

fn configure_threads(threads: Option<usize>) -> Result<(), HdgError> {
    #[cfg(feature = "parallel")]
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| HdgError::Config(e.to_string()))?;
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

fn exit_for(err: &HdgError) -> ExitCode {
    if err.is_numerical() {
        eprintln!("numerical failure: {err}");
        ExitCode::from(2)
    } else {
        eprintln!("error: {err}");
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (mode, args) = match cli.command {
        Command::Solve(a) => (Mode::Solve, a),
        Command::Study(a) => (Mode::Study, a),
        Command::Verify(a) => (Mode::Verify, a),
    };
    let cfg = match resolve(mode, args) {
        Ok(cfg) => cfg,
        Err(e) => return exit_for(&e),
    };
    if let Err(e) = configure_threads(cfg.threads) {
        return exit_for(&e);
    }
    let result = match cfg.mode {
        Mode::Solve => run_solve(&cfg).map(|_| true),
        Mode::Study => run_study_mode(&cfg).map(|_| true),
        Mode::Verify => run_verify(&cfg),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("numerical failure: verification checks failed");
            ExitCode::from(2)
        }
        Err(e) => exit_for(&e),
    }
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use icmeas::bundle::{self, monitor_bundle, replay};
use icmeas::error::HarnessError;
use icmeas::formats;
use icmeas::pipeline::{self, build_dists, build_observable, compare_schemes, run_experiment};
use icmeas::report::Format;
use icmeas::ExperimentConfig;
use icmeas_core::qdt::InputState;
use icmeas_core::Basis;

/// Randomized IC-POVM estimation experiments with readout noise and detector tomography.
#[derive(Parser)]
#[command(name = "icmeas", version)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write one bundle per repetition.
    Run(RunArgs),
    /// Run a CS/LBCS config pair on identical systems and tabulate errors.
    Compare(CompareArgs),
    /// Simulate a standalone detector tomography batch, or fit counts from a table.
    Qdt(QdtArgs),
    /// Per-job readout drift series from a bundle's shot stream.
    Monitor(MonitorArgs),
    /// Replay a bundle's estimates from its raw files.
    Report(ReportArgs),
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repetitions: Option<usize>,
    /// Number of settings S.
    #[arg(long)]
    settings: Option<usize>,
    /// Shots per setting T.
    #[arg(long)]
    shots: Option<u32>,
}

impl Overrides {
    fn apply(&self, c: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(r) = self.repetitions {
            c.repetitions = r;
        }
        if let Some(s) = self.settings {
            c.plan.settings = s;
        }
        if let Some(t) = self.shots {
            c.plan.shots = t;
        }
    }
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    /// Output directory (overrides `output_dir`).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Exit with status 3 if any repetition's primary estimate is off by more than K standard errors.
    #[arg(long, value_name = "K")]
    max_sigma: Option<f64>,
}

#[derive(Args)]
struct CompareArgs {
    first: PathBuf,
    second: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    /// Write the table here instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct QdtArgs {
    config: PathBuf,
    /// Shots per QDT circuit for the simulated batch.
    #[arg(long, default_value_t = 100_000)]
    shots: u64,
    #[arg(long)]
    seed: Option<u64>,
    /// Fit this `qubit,input,basis,outcome,count` table instead of simulating.
    #[arg(long)]
    counts: Option<PathBuf>,
    /// Directory for the fitted POVM and the counts table.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct MonitorArgs {
    bundle: PathBuf,
    #[arg(long, default_value_t = 0)]
    qubit: usize,
    #[arg(long, default_value = "Z")]
    basis: String,
    #[arg(long, default_value_t = 0)]
    outcome: u8,
    /// QDT input prepared in the monitored qubit's state (0, 1, +, +y); adds the consistency table.
    #[arg(long)]
    input: Option<String>,
}

#[derive(Args)]
struct ReportArgs {
    bundle: PathBuf,
    #[arg(long, default_value = "csv")]
    format: String,
    /// Append the error-vs-shots curve table (csv only).
    #[arg(long)]
    curves: bool,
}

fn load(path: &Path, overrides: Option<&Overrides>) -> Result<ExperimentConfig, HarnessError> {
    let mut c = ExperimentConfig::load(path)?;
    if let Some(o) = overrides {
        o.apply(&mut c);
    }
    c.validate()?;
    Ok(c)
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<(), HarnessError> {
    match path {
        Some(p) => fs::write(p, text).map_err(HarnessError::io(p)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(args: RunArgs) -> Result<(), HarnessError> {
    let mut config = load(&args.config, Some(&args.overrides))?;
    if let Some(o) = args.output {
        config.output_dir = Some(o);
    }
    let root = config.output_dir();
    let result = run_experiment(&config)?;
    bundle::write_run(&result, &root)?;
    let summary = fs::read_to_string(root.join("summary.csv")).map_err(HarnessError::io(root.join("summary.csv")))?;
    print!("{summary}");
    log::info!("bundles written to {}", root.display());
    if let Some(k) = args.max_sigma {
        for rep in &result.repetitions {
            let e = rep.primary(&config);
            let err = (e.report.mean - result.setup.reference).abs();
            let se = e.report.standard_error.unwrap_or(f64::NAN);
            if !(err <= k * se) {
                return Err(HarnessError::Threshold(format!(
                    "repetition {}: `{}` error {err:e} exceeds {k} x std_err {se:e}",
                    rep.index, e.label
                )));
            }
        }
    }
    Ok(())
}

fn compare(args: CompareArgs) -> Result<(), HarnessError> {
    let first = load(&args.first, Some(&args.overrides))?;
    let second = load(&args.second, Some(&args.overrides))?;
    let table = compare_schemes(&first, &second)?;
    write_or_print(args.output.as_deref(), &table.csv())?;
    eprintln!(
        "{} has the smaller standard error in {} of {} repetitions",
        second.scheme.kind.as_str(),
        table.second_wins(),
        table.rows.len()
    );
    Ok(())
}

fn qdt(args: QdtArgs) -> Result<(), HarnessError> {
    let mut config = load(&args.config, None)?;
    if let Some(s) = args.seed {
        config.seed = s;
    }
    let (data, recoveries, distances) = match &args.counts {
        Some(path) => {
            let obs = build_observable(&config)?;
            let dists = build_dists(&config, &obs)?;
            let text = fs::read_to_string(path).map_err(HarnessError::io(path))?;
            let data = formats::parse_tomography(&text, &dists).map_err(|e| HarnessError::Format {
                path: path.clone(),
                line: e.line,
                message: e.message,
            })?;
            let recoveries = pipeline::recover_counts(&config, &data)?;
            (data, recoveries, None)
        }
        None => {
            let fit = pipeline::run_qdt(&config, args.shots)?;
            let d = fit.distances();
            (fit.data, fit.recoveries, Some(d))
        }
    };
    let mut table = String::from("qubit,iterations,converged,max_trace_distance\n");
    for (q, r) in recoveries.iter().enumerate() {
        let d = distances.as_ref().map(|d| d[q]);
        table.push_str(&format!("{q},{},{},{}\n", r.iterations, r.converged, formats::opt(d)));
    }
    print!("{table}");
    if let Some(dir) = &args.output {
        fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
        let povm = formats::write_povm(recoveries.iter().map(|r| &r.povm));
        fs::write(dir.join("povm_qdt.txt"), povm).map_err(HarnessError::io(dir.join("povm_qdt.txt")))?;
        fs::write(dir.join("qdt.csv"), formats::write_tomography(&data)).map_err(HarnessError::io(dir.join("qdt.csv")))?;
    }
    Ok(())
}

fn monitor(args: MonitorArgs) -> Result<(), HarnessError> {
    let basis = match args.basis.to_ascii_uppercase().as_str() {
        "X" => Basis::X,
        "Y" => Basis::Y,
        "Z" => Basis::Z,
        other => return Err(HarnessError::Usage(format!("unknown basis `{other}`"))),
    };
    if args.outcome > 1 {
        return Err(HarnessError::Usage("outcome must be 0 or 1".into()));
    }
    let input = match &args.input {
        Some(l) => Some(InputState::from_label(l).ok_or_else(|| HarnessError::Usage(format!("unknown QDT input `{l}`")))?),
        None => None,
    };
    print!("{}", monitor_bundle(&args.bundle, args.qubit, basis, args.outcome, input)?);
    Ok(())
}

fn report(args: ReportArgs) -> Result<(), HarnessError> {
    let format: Format = args.format.parse()?;
    let doc = replay(&args.bundle)?;
    match format {
        Format::Csv => {
            print!("{}", doc.report_csv());
            if args.curves {
                print!("\n{}", doc.curve_csv());
            }
        }
        Format::Json => print!("{}", doc.json()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let outcome = match cli.command {
        Command::Run(a) => run(a),
        Command::Compare(a) => compare(a),
        Command::Qdt(a) => qdt(a),
        Command::Monitor(a) => monitor(a),
        Command::Report(a) => report(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

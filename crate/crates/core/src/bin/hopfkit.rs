use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hopfkit::gallery;
use hopfkit::hopf::Mode;
use hopfkit::odeint::Trajectory;
use hopfkit::problem::{execute, Overrides, ProblemFile};
use hopfkit::report::Report;
use hopfkit::selftest::{self, DEFAULT_SEED};
use hopfkit::Error;

const INPUT_ERROR: u8 = 3;

#[derive(Parser)]
#[command(name = "hopfkit", version, about = "Numerical checks for higher-order Hopf lemmas")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a problem file and emit a JSON report.
    Run(RunArgs),
    /// Run the gallery and the randomized property suites.
    Selftest {
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        gallery_only: bool,
        #[arg(long)]
        quiet: bool,
    },
    /// Inspect the built-in example gallery.
    Gallery {
        #[command(subcommand)]
        action: GalleryAction,
    },
}

#[derive(Subcommand)]
enum GalleryAction {
    /// List case ids with expected verdicts.
    List,
    /// Run one case, or all of them when no id is given.
    Run { id: Option<String> },
    /// Print a case as a problem file.
    Export { id: String },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Direct,
    Chain,
}

#[derive(clap::Args)]
struct RunArgs {
    problem: PathBuf,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Trajectory CSV; several trajectories get their name inserted before the extension.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

fn input_error(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(INPUT_ERROR)
}

fn is_input_error(e: &Error) -> bool {
    matches!(e, Error::Parse(_) | Error::Argument(_) | Error::Capability(_))
}

fn csv_path(base: &Path, name: &str, count: usize) -> PathBuf {
    if count == 1 {
        return base.to_path_buf();
    }
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("trajectory");
    let file = match base.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}.{name}.{ext}"),
        None => format!("{stem}.{name}"),
    };
    base.with_file_name(file)
}

fn write_csvs(base: &Path, trajectories: &[(String, std::sync::Arc<Trajectory>)]) -> std::io::Result<()> {
    for (name, t) in trajectories {
        let file = fs::File::create(csv_path(base, name, trajectories.len()))?;
        t.write_csv(std::io::BufWriter::new(file))?;
    }
    Ok(())
}

fn run(args: RunArgs) -> ExitCode {
    let text = match fs::read_to_string(&args.problem) {
        Ok(t) => t,
        Err(e) => return input_error(format!("{}: {e}", args.problem.display())),
    };
    let mut problem = match ProblemFile::from_json(&text) {
        Ok(p) => p,
        Err(e) => return input_error(e),
    };
    Overrides {
        grid: args.grid,
        step: args.step,
        tol: args.tol,
        mode: args.mode.map(|m| match m {
            ModeArg::Direct => Mode::Direct,
            ModeArg::Chain => Mode::Chain,
        }),
        seed: args.seed,
    }
    .apply(&mut problem);
    if let Err(e) = problem.validate() {
        return input_error(e);
    }
    let report = match execute(&problem) {
        Ok(out) => {
            if let Some(base) = &args.csv {
                if let Err(e) = write_csvs(base, &out.trajectories) {
                    return input_error(format!("{}: {e}", base.display()));
                }
            }
            Report::new(&problem, out.report)
        }
        Err(e) if is_input_error(&e) => return input_error(e),
        Err(e) => Report::from_error(&problem, &e),
    };
    let json = report.to_json();
    match &args.out {
        Some(path) => {
            if let Err(e) = fs::write(path, json + "\n") {
                return input_error(format!("{}: {e}", path.display()));
            }
        }
        None => println!("{json}"),
    }
    if !args.quiet {
        eprintln!("{}: {}", report.verdict.checker, report.status());
    }
    ExitCode::from(report.status().exit_code() as u8)
}

fn run_selftest(seed: u64, gallery_only: bool, quiet: bool) -> ExitCode {
    let summary = selftest::run(seed, gallery_only);
    for s in &summary.suites {
        if !quiet {
            println!(
                "{:<30} {:>5} passed {:>3} failed  {:.2}s",
                s.name, s.passed, s.failed, s.seconds
            );
        }
        for f in &s.failures {
            println!("  {f}");
        }
    }
    println!("seed {}: {} passed, {} failed", seed, summary.passed(), summary.failed());
    if summary.ok() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn run_gallery(action: GalleryAction) -> ExitCode {
    match action {
        GalleryAction::List => {
            let mut out = std::io::stdout().lock();
            for c in gallery::cases() {
                if writeln!(out, "{:<28} {:<16} {}", c.id, c.expected.as_str(), c.title).is_err() {
                    break;
                }
            }
            ExitCode::SUCCESS
        }
        GalleryAction::Export { id } => match gallery::find(&id) {
            Some(c) => {
                println!("{}", c.problem.to_json());
                ExitCode::SUCCESS
            }
            None => input_error(format!("no gallery case {id:?}")),
        },
        GalleryAction::Run { id: Some(id) } => {
            let Some(c) = gallery::find(&id) else {
                return input_error(format!("no gallery case {id:?}"));
            };
            match gallery::run_case(&c) {
                Ok((o, verdict)) => {
                    println!("{}", Report::new(&c.problem, verdict).to_json());
                    eprintln!("{}: expected {}, got {}", o.id, o.expected, o.status);
                    if o.matched {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::FAILURE
                    }
                }
                Err(e) => {
                    eprintln!("{id}: error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        GalleryAction::Run { id: None } => {
            let mut ok = true;
            for (c, r) in gallery::cases().iter().zip(gallery::run_all()) {
                match r {
                    Ok(o) => {
                        ok &= o.matched;
                        let mark = if o.matched { "ok" } else { "MISMATCH" };
                        println!("{:<28} {:<16} {mark}", o.id, o.status.as_str());
                    }
                    Err(e) => {
                        ok = false;
                        println!("{:<28} error: {e}", c.id);
                    }
                }
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("HOPFKIT_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { INPUT_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    configure_threads();
    match cli.command {
        Command::Run(args) => run(args),
        Command::Selftest {
            seed,
            gallery_only,
            quiet,
        } => run_selftest(seed, gallery_only, quiet),
        Command::Gallery { action } => run_gallery(action),
    }
}

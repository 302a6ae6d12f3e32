use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use latentlab::experiments::{self, diagnostic, run_dir, run_id, Experiment};
use latentlab::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "latentlab", version, about = "Run latent-variable recommendation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the experiment registry.
    List,
    /// Run one experiment and write results.csv and summary.json.
    Run {
        experiment: String,
        /// JSON config; the bundled default is used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output root; results land in <out>/<experiment>/<run-id>/.
        #[arg(long)]
        out: PathBuf,
        /// Worker threads.
        #[arg(long, env = "LATENTLAB_THREADS")]
        threads: Option<usize>,
    },
}

fn valid_names() -> String {
    Experiment::ALL.iter().map(|e| e.name()).collect::<Vec<_>>().join(", ")
}

fn run(name: &str, config: Option<PathBuf>, out: PathBuf, threads: Option<usize>) -> ExitCode {
    let Some(experiment) = Experiment::from_name(name) else {
        eprintln!("unknown experiment {name:?}; valid names: {}", valid_names());
        return ExitCode::from(EXIT_CONFIG);
    };
    let text = match &config {
        Some(path) => match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("cannot read config {}: {e}", path.display());
                return ExitCode::from(EXIT_CONFIG);
            }
        },
        None => experiment.default_config().to_string(),
    };
    let resolved = match experiment.resolve(&text) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("cannot start {n} worker threads: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    }
    let fail = |e: &Error| {
        let diag = diagnostic(name, e);
        eprintln!("{}", serde_json::to_string_pretty(&diag).expect("diagnostic serializes"));
        let dir = run_dir(&out, experiment, &run_id(experiment, &resolved));
        if fs::create_dir_all(&dir).is_ok() {
            let _ = fs::write(dir.join("diagnostic.json"), format!("{diag:#}\n"));
        }
        ExitCode::from(EXIT_RUNTIME)
    };
    let result = match experiments::run(experiment, &text) {
        Ok(r) => r,
        Err(e @ Error::Config { .. }) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_CONFIG);
        }
        Err(e) => return fail(&e),
    };
    match experiments::write_run(&out, &result) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::List => {
            for e in Experiment::ALL {
                println!("{:<28} {}", e.name(), e.description());
            }
            ExitCode::SUCCESS
        }
        Command::Run { experiment, config, out, threads } => run(&experiment, config, out, threads),
    }
}

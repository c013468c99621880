use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gde_cli::config::{parse_override, Sources};
use gde_cli::experiments::ExperimentRegistry;
use gde_cli::{gradcheck, run, Result};

#[derive(Parser)]
#[command(name = "gde", version, about = "Graph neural differential equation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// INI config file or a run manifest.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Experiment name, overriding run.experiment.
    #[arg(short, long)]
    experiment: Option<String>,
    /// Comma-separated seeds, overriding run.seeds.
    #[arg(long)]
    seeds: Option<String>,
    /// Output directory, overriding run.out_dir.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Override any key, e.g. `--set train.epochs=50`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads for seeds; 0 picks one per core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

impl RunArgs {
    fn sources(&self) -> Result<Sources> {
        let mut s = match &self.config {
            Some(p) => run::load_sources(p)?,
            None => Sources::default(),
        }
        .with_env();
        if let Some(e) = &self.experiment {
            s = s.set("run.experiment", e);
        }
        if let Some(seeds) = &self.seeds {
            s = s.set("run.seeds", seeds);
        }
        if let Some(o) = &self.out {
            s = s.set("run.out_dir", o.display().to_string());
        }
        for kv in &self.set {
            let (k, v) = parse_override(kv)?;
            s = s.set(k, v);
        }
        Ok(s)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the datasets of every seed.
    Generate(RunArgs),
    /// Train and evaluate every model for every seed.
    Train(RunArgs),
    /// Re-evaluate the checkpoints of a finished run.
    Eval {
        run_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Render SVG figures for a finished run.
    Plot { run_dir: PathBuf },
    /// Compare reverse-mode gradients with finite differences.
    Gradcheck,
    /// Train with the built-in preset of an experiment and plot.
    Reproduce {
        experiment: String,
        /// Single seed replacing the preset's seed list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// List the config keys of an experiment with their defaults.
    Keys { experiment: Option<String> },
}

fn print_files(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn keys(name: Option<&str>) -> Result<()> {
    let reg = ExperimentRegistry::global();
    let Some(name) = name else {
        for n in reg.names() {
            println!("{n}");
        }
        return Ok(());
    };
    let exp = reg.get(name)?;
    let mut section = "";
    for k in exp.schema() {
        let (sec, key) = k.key.split_once('.').expect("keys are section.key");
        if sec != section {
            println!("[{sec}]");
            section = sec;
        }
        println!("{key} = {:<24} # {}", k.default, k.help);
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Generate(args) => {
            let (exp, settings) = run::resolve(&args.sources()?)?;
            let dir = run::generate(exp, &settings, args.threads)?;
            println!("data in {}", dir.display());
        }
        Command::Train(args) => {
            let (exp, settings) = run::resolve(&args.sources()?)?;
            let dir = run::train(exp, &settings, args.threads)?;
            println!("run in {}", dir.display());
        }
        Command::Eval { run_dir, threads } => {
            let path = run::evaluate(&run_dir, threads)?;
            println!("wrote {}", path.display());
        }
        Command::Plot { run_dir } => print_files(&run::plot(&run_dir)?),
        Command::Gradcheck => {
            let mut ok = true;
            for c in gradcheck::run_all()? {
                let verdict = if c.passed() { "ok" } else { "FAILED" };
                println!("{:<28} relative error {:.3e}  {verdict}", c.name, c.rel_err);
                ok &= c.passed();
            }
            return Ok(ok);
        }
        Command::Reproduce {
            experiment,
            seed,
            out,
            threads,
        } => {
            let dir = run::reproduce(&experiment, seed, out.as_deref().map(Path::new), threads)?;
            println!("run in {}", dir.display());
        }
        Command::Keys { experiment } => keys(experiment.as_deref())?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flowlab_core::config::ExperimentConfig;
use flowlab_core::eval::build_target;
use flowlab_core::theory::{self, TheoryOptions};
use flowlab_core::trainer::{dataset_from_checkpoint, run_experiment, SUMMARY_FILE};
use flowlab_core::{par, Error, Exec};

#[derive(Parser)]
#[command(name = "flowlab", version, about = "Train and evaluate GFlowNets on enumerable MDPs")]
struct Cli {
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a TOML config and write metrics, summary and checkpoint.
    Train {
        config: PathBuf,
        /// Output directory, overriding `[output] directory`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the credit-assignment checks and print a pass/fail table.
    Theory {
        /// Largest row for the Pascal-row bound.
        #[arg(long, default_value_t = 30)]
        nmax: u32,
        /// Largest string length for the counting checks.
        #[arg(long, default_value_t = 8)]
        count_max: u32,
        /// Urn trials per placement.
        #[arg(long, default_value_t = 2000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
        /// Feed a setting with two shared longest substrings.
        #[arg(long, hide = true)]
        violate: bool,
    },
    /// Enumerate the target distribution and write target.csv.
    Target {
        config: PathBuf,
        /// Output file, default `<output directory>/target.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the observed terminals stored in a checkpoint as CSV.
    DumpX {
        checkpoint: PathBuf,
        /// Config the checkpoint was trained with.
        #[arg(long)]
        config: PathBuf,
        /// Output file, default `X.csv` next to the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Error(Error),
    Checks(Vec<String>),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        "io" | "config" | "parse" => 2,
        "budget" => 3,
        _ => 1,
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn train(config: &Path, out: Option<PathBuf>, exec: Exec) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(config)?;
    let dir = out.unwrap_or_else(|| PathBuf::from(&cfg.output.directory));
    let res = run_experiment(&cfg, Some(&dir), exec)?;
    let s = &res.summary;
    println!("rounds        {}", cfg.train.rounds);
    println!("target mean   {:.6}", s.target_mean_reward);
    if let Some(r) = s.final_rel_mean_error {
        println!("rel error     {r:.3}%");
    }
    if let Some(tv) = s.final_exact_tv {
        println!("exact tv      {tv:.6}");
    }
    println!("|X|           {}", s.n_seen);
    println!("skipped steps {}", s.skipped_steps);
    println!("wrote {}", dir.join(SUMMARY_FILE).display());
    Ok(())
}

fn target(config: &Path, out: Option<PathBuf>, exec: Exec) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(config)?;
    let env = cfg.env.build()?;
    let reward = cfg.reward.build(&env)?;
    let t = build_target(&env, &reward, cfg.budget(), exec)?;
    let path = match out {
        Some(p) => p,
        None => {
            let dir = PathBuf::from(&cfg.output.directory);
            std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            dir.join("target.csv")
        }
    };
    let file = std::fs::File::create(&path).map_err(io_err(&path))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "terminal,reward,p*").map_err(io_err(&path))?;
    for i in 0..t.len() {
        writeln!(w, "{},{},{}", env.label(&t.terminals[i]), t.rewards[i], t.probs[i]).map_err(io_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;

    println!("terminals   {}", t.len());
    println!("Z           {}", t.z);
    println!("target mean {}", t.target_mean);
    let levels = t.reward_levels();
    println!("reward levels {}", levels.len());
    let mut cum = 0.0;
    let show = levels.len() <= 12;
    for (i, (r, p)) in levels.iter().enumerate() {
        cum += p;
        if show || i < 5 || i + 5 >= levels.len() {
            println!("  R <= {r:<12} P = {cum:.6}");
        } else if i == 5 {
            println!("  ...");
        }
    }
    println!("wrote {} ({} rows)", path.display(), t.len());
    Ok(())
}

fn dump_x(checkpoint: &Path, config: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(config)?;
    let env = cfg.env.build()?;
    let text = std::fs::read_to_string(checkpoint).map_err(io_err(checkpoint))?;
    let data = dataset_from_checkpoint(&env, &text)?;
    let path = out.unwrap_or_else(|| checkpoint.with_file_name("X.csv"));
    data.write_csv(&env, &path)?;
    println!("wrote {} ({} terminals)", path.display(), data.len());
    Ok(())
}

fn run_theory(opts: &TheoryOptions, json: bool) -> Result<(), Failure> {
    let results = theory::run_all(opts);
    if json {
        println!("{}", serde_json::to_string_pretty(&results).map_err(Error::from)?);
    } else {
        let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
        for r in &results {
            println!("{:width$}  {}  {}", r.name, if r.passed { "PASS" } else { "FAIL" }, r.detail);
        }
    }
    let failed: Vec<String> = results.iter().filter(|r| !r.passed).map(|r| r.name.clone()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Checks(failed))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Ok(v) = std::env::var("FLOWLAB_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                par::init_threads(n);
            }
            _ => {
                eprintln!("error[config]: FLOWLAB_THREADS must be a positive integer, got {v:?}");
                return ExitCode::from(2);
            }
        }
    }
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    let res = match cli.command {
        Command::Train { config, out } => train(&config, out, exec),
        Command::Target { config, out } => target(&config, out, exec),
        Command::DumpX { checkpoint, config, out } => dump_x(&checkpoint, &config, out),
        Command::Theory {
            nmax,
            count_max,
            trials,
            seed,
            json,
            violate,
        } => run_theory(
            &TheoryOptions {
                n_max: nmax,
                count_max,
                trials,
                seed,
                violate,
                exec,
            },
            json,
        ),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Error(e)) => {
            eprintln!("error[{}]: {}", e.kind(), e.to_string().replace('\n', " "));
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Checks(names)) => {
            eprintln!("error[theory]: failed checks: {}", names.join(", "));
            ExitCode::from(1)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use metaxb::cli::{self, ExperimentConfig, XiSource, EXIT_SELFTEST};
use metaxb::eval::EvalBudget;
use metaxb::selftest::{self, Fault};

#[derive(Parser)]
#[command(version, about = "Cross-validation conformal prediction with meta-learned initializations")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the meta-training tasks as JSON files.
    GenTasks(Common),
    /// Meta-train the initialization.
    MetaTrain(Common),
    /// Evaluate coverage and set size on held-out tasks.
    Eval {
        #[command(flatten)]
        common: Common,
        /// `random` or a path to an xi.json file.
        #[arg(long, default_value = "random")]
        xi: XiSource,
        /// Also report per-bucket coverage.
        #[arg(long)]
        conditional: bool,
        /// `<datasets>x<tests>`; overrides the configured budget.
        #[arg(long)]
        budget: Option<EvalBudget>,
    },
    /// Paired comparison of evaluation outputs against the first one.
    Compare {
        /// Evaluation output directories (or report.json files).
        #[arg(required = true, num_args = 2..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the oracle suites.
    Selftest {
        /// Negative control: flip-audit, quantile-rank or gradient-scale.
        #[arg(long)]
        inject_fault: Option<Fault>,
    },
}

fn load(c: &Common) -> metaxb::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn run(cmd: Command) -> metaxb::Result<i32> {
    match cmd {
        Command::GenTasks(c) => {
            let paths = cli::cmd_gen_tasks(&load(&c)?)?;
            println!("wrote {} task files", paths.len());
        }
        Command::MetaTrain(c) => {
            let cfg = load(&c)?;
            let out = cli::cmd_meta_train(&cfg)?;
            if let (Some(first), Some(last)) = (out.trace.first(), out.trace.last()) {
                println!("loss {:.4} -> {:.4} after {} iterations", first.loss, last.loss, out.trace.len());
            }
            println!("wrote {}", cfg.out.join("xi.json").display());
        }
        Command::Eval { common, xi, conditional, budget } => {
            let mut cfg = load(&common)?;
            if let Some(b) = budget {
                cfg.eval.budget = b;
            }
            let r = cli::cmd_eval(&cfg, &xi, conditional)?;
            let s = &r.summary;
            println!(
                "coverage mean {:.4} (p25 {:.4}, p50 {:.4}, p75 {:.4})",
                s.mean_coverage, s.coverage.p25, s.coverage.p50, s.coverage.p75
            );
            println!(
                "inefficiency mean {:.4} (p25 {:.4}, p50 {:.4}, p75 {:.4})",
                s.mean_inefficiency, s.inefficiency.p25, s.inefficiency.p50, s.inefficiency.p75
            );
        }
        Command::Compare { inputs, out } => {
            for c in cli::cmd_compare(&inputs, &out)? {
                println!(
                    "{} vs {}: median inefficiency diff {:.4}, median coverage diff {:.4}, ratio {:.4}",
                    c.b, c.a, c.inefficiency_diff.p50, c.coverage_diff.p50, c.median_inefficiency_ratio
                );
            }
        }
        Command::Selftest { inject_fault } => {
            let r = selftest::run(inject_fault)?;
            print!("{r}");
            if !r.passed() {
                return Ok(EXIT_SELFTEST);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}

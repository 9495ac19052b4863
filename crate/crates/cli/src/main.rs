use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qmcfem::driver::output::{reference_summary, summary, write_csv, write_run};
use qmcfem::driver::{adaptive_run, fem_convergence, qmc_convergence, reference_ratio, ProblemKind, RunConfig};
use qmcfem::qmc::LatticeRule;
use qmcfem::{Error, Execution};

/// Adaptive QMC-FEM ratio estimation for Bayesian inversion and risk-averse
/// optimal control.
#[derive(Parser)]
#[command(name = "qmcfem", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run every batch on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output` in the config, default `out`).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Bayesian inversion.
    Bip {
        #[command(subcommand)]
        action: RunAction,
    },
    /// Optimal control under the entropic risk measure.
    Ocp {
        #[command(subcommand)]
        action: RunAction,
    },
    /// Monte Carlo reference ratio for an inversion config.
    Reference {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Manufactured-solution ladder on uniformly refined meshes.
    FemConvergence {
        #[arg(long, default_value_t = 4)]
        refinements: usize,
        #[arg(long, default_value = "out")]
        output: PathBuf,
    },
    /// Product-integrand ladder over lattice levels.
    QmcConvergence {
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 6)]
        m_min: u32,
        #[arg(long, default_value_t = 14)]
        m_max: u32,
        #[arg(long, default_value_t = 17)]
        m_ref: u32,
        #[arg(long, default_value = "out")]
        output: PathBuf,
    },
    /// Generating vectors in a portable text format.
    Lattice {
        #[command(subcommand)]
        action: LatticeAction,
    },
}

#[derive(Subcommand)]
enum RunAction {
    /// Run the adaptive loop.
    Run {
        #[command(flatten)]
        run: RunArgs,
        /// Also compute the Monte Carlo reference (inversion only) and
        /// record realized errors.
        #[arg(long)]
        with_reference: bool,
    },
}

#[derive(Subcommand)]
enum LatticeAction {
    /// Construct levels `0..=m_max` for the weights of a config and write them.
    Export {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "bip")]
        problem: String,
        #[arg(long, default_value_t = 10)]
        m_max: u32,
        #[arg(long)]
        output: PathBuf,
    },
    /// Read an exported rule and print its levels; optionally dump points.
    Import {
        file: PathBuf,
        /// Write the points of this level as CSV to stdout.
        #[arg(long)]
        points: Option<u32>,
    },
}

fn load(path: Option<&Path>) -> qmcfem::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn output_dir(args: &RunArgs, cfg: &RunConfig) -> PathBuf {
    args.output.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

fn run_adaptive(kind: ProblemKind, args: &RunArgs, with_reference: bool, exec: Execution) -> qmcfem::Result<i32> {
    let mut cfg = load(args.config.as_deref())?;
    cfg.problem = kind;
    let reference = if with_reference { Some(reference_ratio(&cfg, exec)?) } else { None };
    let outcome = adaptive_run(&cfg, reference.as_ref().map(|r| r.ratio), exec)?;
    let dir = output_dir(args, &cfg);
    write_run(&dir, &outcome, reference.as_ref())?;
    print!("{}", summary(&outcome, reference.as_ref()));
    println!("output = {}", dir.display());
    Ok(outcome.status.exit_code())
}

fn execute(cli: &Cli) -> qmcfem::Result<i32> {
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    match &cli.command {
        Command::Bip { action: RunAction::Run { run, with_reference } } => {
            run_adaptive(ProblemKind::Bip, run, *with_reference, exec)
        }
        Command::Ocp { action: RunAction::Run { run, with_reference } } => {
            if *with_reference {
                return Err(Error::Config("the Monte Carlo reference is defined for inversion runs".into()));
            }
            run_adaptive(ProblemKind::Ocp, run, false, exec)
        }
        Command::Reference { run } => {
            let cfg = load(run.config.as_deref())?;
            let r = reference_ratio(&cfg, exec)?;
            let text = reference_summary(&r);
            let dir = output_dir(run, &cfg);
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("reference.txt"), &text)?;
            print!("{text}");
            Ok(0)
        }
        Command::FemConvergence { refinements, output } => {
            let c = fem_convergence(*refinements, exec)?;
            std::fs::create_dir_all(output)?;
            write_csv(&output.join("fem_convergence.csv"), &c.rows)?;
            println!("rate_l2 = {}\nrate_h1 = {}", c.rate_l2, c.rate_h1);
            println!("efficiency_spread_h1 = {}", c.spread(|r| r.eff_h1));
            println!("efficiency_spread_l2 = {}", c.spread(|r| r.eff_l2));
            Ok(0)
        }
        Command::QmcConvergence { dim, m_min, m_max, m_ref, output } => {
            if m_min > m_max || m_max >= m_ref {
                return Err(Error::Config(format!("need m_min <= m_max < m_ref, got {m_min}, {m_max}, {m_ref}")));
            }
            let c = qmc_convergence(*dim, *m_min, *m_max, *m_ref, exec)?;
            std::fs::create_dir_all(output)?;
            write_csv(&output.join("qmc_convergence.csv"), &c.rows)?;
            println!("z_ref = {}\nrate = {}", c.z_ref, c.rate);
            for m in [m_max - 1, *m_max] {
                if let Some(r) = c.difference_ratio(m) {
                    println!("difference_ratio_{m} = {r}");
                }
            }
            Ok(0)
        }
        Command::Lattice { action: LatticeAction::Export { config, problem, m_max, output } } => {
            let cfg = load(config.as_deref())?;
            let kind = match problem.as_str() {
                "bip" => ProblemKind::Bip,
                "ocp" => ProblemKind::Ocp,
                other => return Err(Error::Config(format!("unknown problem '{other}', expected bip or ocp"))),
            };
            let coeff = cfg.coefficient.build()?;
            let rule = LatticeRule::construct(cfg.qmc.weights(&coeff, kind), *m_max)?;
            rule.export(BufWriter::new(File::create(output)?))?;
            println!("wrote levels 0..={m_max} (s = {}) to {}", rule.dim(), output.display());
            Ok(0)
        }
        Command::Lattice { action: LatticeAction::Import { file, points } } => {
            let rule = LatticeRule::import(BufReader::new(File::open(file)?))?;
            println!("s = {}", rule.dim());
            println!("max_level = {}", rule.max_level().map_or("none".into(), |m| m.to_string()));
            if let Some(m) = points {
                let pts = rule.points(*m)?;
                for p in pts.iter() {
                    let row: Vec<String> = p.iter().map(f64::to_string).collect();
                    println!("{}", row.join(","));
                }
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.threads {
        Some(n) => qmcfem::par::with_threads(n, || execute(&cli)),
        None => execute(&cli),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, Error::Config(_)) { 3 } else { 1 })
        }
    }
}

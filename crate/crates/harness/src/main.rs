use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use vortexmf::config::ExperimentConfig;
use vortexmf::error::{HarnessError, Result};
use vortexmf::{init_threads, io, ito, run, sweep, verify};

#[derive(Parser)]
#[command(name = "vortexmf", version, about = "Stochastic point-vortex mean-field experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every particle count of a config and write record.json and energy.csv.
    Run(RunArgs),
    /// Run and tabulate the convergence table into sweep.csv.
    Sweep(RunArgs),
    /// Compare mean energy increments with the predicted drift.
    ItoCheck(RunArgs),
    /// Run a named verification suite.
    Verify {
        /// One of the suite names, or `all`.
        suite: String,
        #[arg(long)]
        quiet: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    realizations: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = Some(out.clone());
        }
        if let Some(r) = self.realizations {
            cfg.realizations = r;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(HarnessError::UnknownSuite(name)) => {
            eprintln!("error: unknown suite {name:?}; expected one of {}", verify::SUITES.join(", "));
            ExitCode::from(2)
        }
        Err(e @ HarnessError::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run(args) => {
            let cfg = args.load()?;
            let record = run::run_coupled(&cfg)?;
            if !args.quiet {
                for r in &record.runs {
                    let last = r.stats.last();
                    println!(
                        "N={} dt={:.3e} excluded={}/{} final E<F>={:.6e}",
                        r.n,
                        r.dt,
                        r.excluded,
                        r.realizations.len(),
                        last.map_or(f64::NAN, |s| s.mean_reg)
                    );
                }
            }
            Ok(if record.failed() { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        Command::Sweep(args) => {
            let cfg = args.load()?;
            let (record, rows) = sweep::sweep(&cfg)?;
            if !args.quiet {
                println!("N\tt\tE<F>\ths\tenvelope\tadmissible");
                for r in &rows {
                    println!(
                        "{}\t{:.4}\t{:.6e}\t{}\t{:.6e}\t{}",
                        r.n,
                        r.t,
                        r.e_reg,
                        r.hs.map_or("-".to_string(), |h| format!("{h:.6e}")),
                        r.envelope,
                        r.admissible
                    );
                }
            }
            Ok(if record.failed() { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        Command::ItoCheck(args) => {
            let cfg = args.load()?;
            let report = ito::ito_residual_check(&cfg)?;
            if let Some(dir) = &cfg.out_dir {
                std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io(e.to_string()))?;
                io::write_json(&dir.join("ito.json"), &report)?;
            }
            if !args.quiet {
                println!("N={} R={} eps={:.4e} predicted drift={:.6e}", report.n, report.realizations, report.eps, report.terms.total());
                let t = &report.terms;
                println!("terms: drift {:.4e} ito drift {:.4e} second order {:.4e} quadratic variation {:.4e}", t.drift, t.ito_drift, t.second_order, t.quadratic_variation);
                println!("delta\tmean\tstderr\tpredicted\tresidual");
                for r in &report.rows {
                    println!("{:.3e}\t{:.6e}\t{:.3e}\t{:.6e}\t{:.3e}", r.delta, r.mean_increment, r.stderr, r.predicted, r.residual);
                }
                match report.order {
                    Some(p) => println!("residual order {p:.3}"),
                    None => println!("residual order undefined"),
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { suite, quiet } => {
            let names: Vec<&str> = if suite == "all" { verify::SUITES.to_vec() } else { vec![suite.as_str()] };
            let mut all_passed = true;
            for name in names {
                let report = verify::verify(name)?;
                if !quiet {
                    for line in &report.table {
                        println!("{line}");
                    }
                    for c in &report.checks {
                        println!("[{}] {}: {:.3e} (limit {:.1e})", if c.passed { "pass" } else { "FAIL" }, c.name, c.value, c.limit);
                    }
                }
                println!("{}: {} in {:.1}s", report.suite, if report.passed() { "pass" } else { "FAIL" }, report.seconds);
                if let Some(c) = report.first_failure() {
                    println!("first failing check: {} = {:.3e} > {:.1e}", c.name, c.value, c.limit);
                    all_passed = false;
                }
            }
            Ok(if all_passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}

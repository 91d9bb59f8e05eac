use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use coded_flows::cli::{
    genie_inter_table, genie_intra_table, hd_batch_table, parse_objective, simulate_table, Baseline, ResultTable,
    Scenario, SimTarget, Sweep, CONFIG_ENV,
};
use coded_flows::Error;

#[derive(Parser)]
#[command(name = "coded-flows", version, about = "Energy-delay analysis of coded flows on a two-hop erasure line network")]
struct Cli {
    /// Scenario file (key=value lines); defaults to the file named by CODED_FLOWS_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Genie-aided full-duplex scheme with coding across sessions.
    GenieInter {
        /// key=start:stop:step
        #[arg(long)]
        sweep: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Genie-aided full-duplex scheme with per-session coding at S2.
    GenieIntra {
        #[arg(long)]
        sweep: Option<String>,
        /// Probability of scheduling flow 1 (overrides Ps in the scenario).
        #[arg(long, conflicts_with = "solve_fair")]
        ps: Option<f64>,
        /// Solve for the split that equalizes the two end-to-end delays.
        #[arg(long)]
        solve_fair: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Half-duplex batch scheme with searched burst tables.
    HdBatch {
        /// Comma-separated list of time, energy, product.
        #[arg(long)]
        objective: Option<String>,
        #[arg(long)]
        sweep: Option<String>,
        /// arq or genie; may be repeated.
        #[arg(long)]
        baseline: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo run next to the analytical values.
    Simulate {
        /// genie-inter, genie-intra, hd-online, hd-batch or arq.
        #[arg(long)]
        model: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(table: &ResultTable, out: Option<&PathBuf>) -> Result<(), Error> {
    let csv = table.to_csv();
    match out {
        Some(p) => std::fs::write(p, csv)?,
        None => std::io::stdout().lock().write_all(csv.as_bytes())?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool, Error> {
    let mut sc = Scenario::load(cli.config.as_deref())?;
    let sweep = |s: &Option<String>| s.as_deref().map(Sweep::parse).transpose();
    match cli.cmd {
        Cmd::GenieInter { sweep: s, out } => {
            let t = genie_inter_table(&sc, sweep(&s)?.as_ref())?;
            emit(&t, out.as_ref())?;
        }
        Cmd::GenieIntra {
            sweep: s,
            ps,
            solve_fair,
            out,
        } => {
            if let Some(v) = ps {
                sc.set("Ps", &v.to_string())?;
            }
            let t = genie_intra_table(&sc, sweep(&s)?.as_ref(), solve_fair)?;
            emit(&t, out.as_ref())?;
        }
        Cmd::HdBatch {
            objective,
            sweep: s,
            baseline,
            out,
        } => {
            let objectives = match objective {
                Some(list) => list.split(',').map(|o| parse_objective(o.trim())).collect::<Result<Vec<_>, _>>()?,
                None => Vec::new(),
            };
            let baselines = baseline.iter().map(|b| Baseline::parse(b)).collect::<Result<Vec<_>, _>>()?;
            let t = hd_batch_table(&sc, sweep(&s)?.as_ref(), &objectives, &baselines)?;
            emit(&t, out.as_ref())?;
        }
        Cmd::Simulate { model, out } => {
            let (t, unstable) = simulate_table(&sc, SimTarget::parse(&model)?)?;
            emit(&t, out.as_ref())?;
            return Ok(unstable);
        }
    }
    Ok(false)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("coded-flows: simulation flagged an unstable configuration");
            ExitCode::from(4)
        }
        Err(e) => {
            eprintln!("coded-flows: {e}");
            if let Error::Config(_) = e {
                eprintln!("(scenario defaults can be supplied through {CONFIG_ENV})");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

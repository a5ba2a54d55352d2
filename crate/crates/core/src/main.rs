use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use freqctl::controller::{ControlMode, Controller};
use freqctl::dynamics::compute_equilibrium;
use freqctl::harness::{
    emit_plot_data, format_g9, load_scenario, run_experiment, write_artifacts, RunMode,
};
use freqctl::network::Region;
use freqctl::optimizer::{assemble_qp, build_phi_cvx};
use freqctl::reference::rollout_reference;

const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(
    name = "freqctl",
    version,
    about = "Transient frequency control simulations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a scenario (`builtin:ieee39` for the bundled case).
    Validate { scenario: PathBuf },
    /// Print the equilibrium for the initial and the settled injections.
    Equilibrium { scenario: PathBuf },
    /// Run a scenario and write trajectory, region input and summary files.
    Simulate {
        scenario: PathBuf,
        #[arg(long, default_value = "distributed")]
        mode: RunMode,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Disable warm starts between recomputations.
        #[arg(long)]
        cold: bool,
    },
    /// Select columns of a trajectory CSV.
    PlotData {
        csv: PathBuf,
        /// Comma-separated column names, e.g. omega_30,omega_31.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        cols: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the whole-network horizon problem at the initial state as
    /// sparse triplets (`P.txt`, `A.txt`) and vectors (`q.txt`, `l.txt`, `u.txt`).
    DumpQp {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { scenario } => match load_scenario(&scenario) {
            Ok(s) => {
                println!(
                    "{}: ok ({} buses, {} lines, {} controlled, {} constrained, {} regions)",
                    s.name,
                    s.model.n_buses(),
                    s.model.n_lines(),
                    s.model.controlled().len(),
                    s.model.constrained().len(),
                    s.regions.len()
                );
                ExitCode::SUCCESS
            }
            Err(e) => fail(EXIT_VALIDATION, e),
        },
        Command::Equilibrium { scenario } => {
            let s = match load_scenario(&scenario) {
                Ok(s) => s,
                Err(e) => return fail(EXIT_VALIDATION, e),
            };
            for (name, p) in [
                ("initial", s.signal.at(0.0)),
                ("settled", s.signal.settled()),
            ] {
                match compute_equilibrium(&s.model, &p, &s.initial.f) {
                    Ok(eq) => {
                        println!("[{name}]");
                        println!("omega = {}", format_g9(eq.omega));
                        let flows: Vec<String> = eq.f.iter().map(|&v| format_g9(v)).collect();
                        println!("f = [{}]", flows.join(", "));
                    }
                    Err(e) => return fail(EXIT_RUNTIME, e),
                }
            }
            ExitCode::SUCCESS
        }
        Command::Simulate {
            scenario,
            mode,
            t_end,
            out,
            cold,
        } => {
            let s = match load_scenario(&scenario) {
                Ok(s) => s,
                Err(e) => return fail(EXIT_VALIDATION, e),
            };
            let experiment = match run_experiment(&s, mode, t_end, cold.then_some(false)) {
                Ok(x) => x,
                Err(e) => return fail(EXIT_RUNTIME, e),
            };
            match write_artifacts(&s, &experiment, &out) {
                Ok(paths) => {
                    for p in paths {
                        println!("{}", p.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(EXIT_RUNTIME, e),
            }
        }
        Command::PlotData { csv, cols, out } => {
            let text = match std::fs::read_to_string(&csv) {
                Ok(t) => t,
                Err(e) => return fail(EXIT_VALIDATION, format!("{}: {e}", csv.display())),
            };
            let data = match emit_plot_data(&text, &cols) {
                Ok(d) => d,
                Err(e) => return fail(EXIT_VALIDATION, e),
            };
            match out {
                Some(path) => match std::fs::write(&path, data) {
                    Ok(()) => ExitCode::SUCCESS,
                    Err(e) => fail(EXIT_RUNTIME, format!("{}: {e}", path.display())),
                },
                None => {
                    print!("{data}");
                    ExitCode::SUCCESS
                }
            }
        }
        Command::DumpQp { scenario, out } => {
            let s = match load_scenario(&scenario) {
                Ok(s) => s,
                Err(e) => return fail(EXIT_VALIDATION, e),
            };
            let config = s.config(ControlMode::Centralized);
            if let Err(e) = Controller::new(&s.model, &config) {
                return fail(EXIT_VALIDATION, e);
            }
            let model = Region::whole(&s.model).subnetwork().clone();
            let forecast = config
                .forecast
                .forecast(&s.signal, 0.0, config.horizon, config.period);
            let reference = match rollout_reference(
                &model,
                &s.initial,
                &forecast,
                &config.gains,
                config.horizon,
                config.period,
            ) {
                Ok(r) => r,
                Err(e) => return fail(EXIT_RUNTIME, e),
            };
            let phi = build_phi_cvx(&model, &reference.trajectory);
            let mpc = match assemble_qp(
                &model,
                &s.initial,
                &forecast.columns,
                &phi,
                &config.weights,
                config.period,
                config.condense.select(&model, config.horizon),
            ) {
                Ok(m) => m,
                Err(e) => return fail(EXIT_RUNTIME, e),
            };
            match mpc.problem.write_triplets(&out) {
                Ok(()) => {
                    println!(
                        "{} variables, {} constraints ({:?}) written to {}",
                        mpc.problem.n_vars(),
                        mpc.problem.n_rows(),
                        mpc.formulation,
                        out.display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => fail(EXIT_RUNTIME, e),
            }
        }
    }
}

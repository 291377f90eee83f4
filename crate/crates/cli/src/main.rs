use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde_json::json;

use twinloc::metrics::{detect_convergence, DEFAULT_EPS_ORIENT, DEFAULT_EPS_POS, DEFAULT_WINDOW};
use twinloc::scenario::{generate_cube_scenario, parse_scenario, read_trace, run, CubeNoise};
use twinloc::ScenarioError;

/// Pose localization of leader-follower networks from direction measurements.
#[derive(Parser)]
#[command(name = "twinloc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a scenario file.
    Validate { file: PathBuf },
    /// Simulate a scenario, write the trace as CSV and print a JSON summary.
    Run {
        file: PathBuf,
        #[arg(long, default_value = "trace.csv")]
        out: PathBuf,
    },
    /// Print the eight-agent cube scenario.
    GenCube {
        #[arg(long, default_value_t = 5.0)]
        side: f64,
        /// Noise amplitude in degrees; enables noise.
        #[arg(long, requires = "noise_freq_hz")]
        noise_theta0_deg: Option<f64>,
        #[arg(long, requires = "noise_theta0_deg")]
        noise_freq_hz: Option<f64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Write here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize convergence from a trace file.
    Report {
        trace: PathBuf,
        #[arg(long, default_value_t = DEFAULT_EPS_ORIENT)]
        eps_orient: f64,
        #[arg(long, default_value_t = DEFAULT_EPS_POS)]
        eps_pos: f64,
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        window: f64,
    },
}

const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = match err.downcast_ref::<ScenarioError>() {
                Some(ScenarioError::Parse { .. } | ScenarioError::Validation(_)) => EXIT_VALIDATION,
                Some(ScenarioError::Integrator(_)) => EXIT_NUMERICAL,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}

fn execute(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Validate { file } => {
            let text = read(&file)?;
            let s = parse_scenario(&text)?;
            println!(
                "{}: valid ({} agents, {} leaders, {} edges)",
                file.display(),
                s.names.len(),
                s.model.topology.leaders().len(),
                s.doc.edges.len()
            );
        }
        Command::Run { file, out } => {
            let s = parse_scenario(&read(&file)?)?;
            let f = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            let summary = run(&s, BufWriter::new(f))?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::GenCube {
            side,
            noise_theta0_deg,
            noise_freq_hz,
            seed,
            out,
        } => {
            anyhow::ensure!(side > 0.0, "--side must be positive");
            let noise = noise_theta0_deg.zip(noise_freq_hz).map(|(d, f)| CubeNoise {
                theta0: d.to_radians(),
                freq: f,
            });
            let text = generate_cube_scenario(side, seed, noise).to_json();
            match out {
                Some(path) => {
                    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?
                }
                None => io::stdout().write_all(text.as_bytes())?,
            }
        }
        Command::Report {
            trace,
            eps_orient,
            eps_pos,
            window,
        } => {
            let f = File::open(&trace).with_context(|| format!("opening {}", trace.display()))?;
            let (names, records) = read_trace(f)?;
            let times = detect_convergence(&records, eps_orient, eps_pos, window);
            let last = records.last();
            let followers: Vec<_> = names
                .iter()
                .enumerate()
                .map(|(k, n)| {
                    let fin = last.map(|r| &r.followers[k]);
                    json!({
                        "agent": n,
                        "converged_at": times.get(k).copied().flatten(),
                        "final_orientation_error": fin.map(|f| f.orientation_error),
                        "final_position_error": fin.map(|f| f.position_error),
                    })
                })
                .collect();
            let report = json!({
                "records": records.len(),
                "duration": last.map(|r| r.t),
                "all_converged": !times.is_empty() && times.iter().all(Option::is_some),
                "followers": followers,
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn read(path: &PathBuf) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use paxsim::runner::{self, RunError};
use paxsim::scenario::{self, Scenario};

#[derive(Parser)]
#[command(name = "paxsim", version, about = "Paxos architecture and flow-control simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and write its CSV bundle.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: the scenario's `out`, else `./out`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the base scenario once per kill time and print the downtime table.
    Sweep {
        #[arg(long)]
        base: PathBuf,
        #[arg(long, value_delimiter = ',')]
        kill_times: Vec<f64>,
        #[arg(long, value_enum)]
        steering: OnOff,
        /// Measure the peak first and cap the load at this fraction of it.
        #[arg(long)]
        load_fraction: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure saturated throughput of a configuration.
    Peak {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print a shipped preset as a scenario file.
    Preset {
        /// Preset name; omit to list all names.
        name: Option<String>,
    },
}

fn load(path: &PathBuf, seed: Option<u64>) -> Result<Scenario, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut s = scenario::parse(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(s)
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<ExitCode, String> {
    let cli = Cli::parse();
    let err = |e: RunError| e.to_string();
    match cli.cmd {
        Cmd::Run {
            scenario,
            seed,
            out,
        } => {
            let s = load(&scenario, seed)?;
            let dir = out
                .or_else(|| s.out.clone().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("out"));
            let o = runner::run(&s).map_err(err)?;
            runner::write_bundle(&o, &dir).map_err(|e| format!("{}: {e}", dir.display()))?;
            print!("{}", runner::summary_csv(&o));
            if o.passed() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("audit failed:");
                for v in &o.violations {
                    eprintln!("  t={} {}", v.t, v.what);
                }
                Ok(ExitCode::from(1))
            }
        }
        Cmd::Sweep {
            base,
            kill_times,
            steering,
            load_fraction,
            seed,
            out,
        } => {
            let mut s = load(&base, seed)?;
            if let Some(frac) = load_fraction {
                let peak = runner::measure_peak(&s).map_err(err)?;
                s.load_cap_mbps = Some(frac * peak);
                eprintln!("peak {peak:.3} Mb/s, cap {:.3} Mb/s", frac * peak);
            }
            let rows = runner::sweep_kill_times(&s, &kill_times, matches!(steering, OnOff::On))
                .map_err(err)?;
            let table = runner::sweep_csv(&rows);
            match out {
                Some(p) => std::fs::write(&p, table).map_err(|e| format!("{}: {e}", p.display()))?,
                None => print!("{table}"),
            }
            Ok(if rows.iter().all(|r| r.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Cmd::Peak { base, seed } => {
            let s = load(&base, seed)?;
            let peak = runner::measure_peak(&s).map_err(err)?;
            println!("{peak:.6}");
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Preset { name } => {
            match name {
                None => {
                    for n in scenario::preset_names() {
                        println!("{n}");
                    }
                }
                Some(n) => {
                    let s = scenario::preset(&n).ok_or_else(|| format!("unknown preset `{n}`"))?;
                    print!("{}", scenario::render(&s));
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

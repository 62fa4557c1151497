//! `swarmstage` command line.
//!
//! Exit status: 0 on success, 1 when a command fails at run time, 2 on a
//! usage error.

use std::ffi::OsString;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::localization::calibration::read_ranges_csv;
use crate::localization::{calibrate_anchors, CalibrationConfig, Venue};
use crate::orchestrator::{replay_figure, run, serve, Figure, PerformanceScript, ResolvedScript};

pub const DEFAULT_PORT: u16 = 8765;

#[derive(Debug, Parser)]
#[command(name = "swarmstage", version, about = "Stage and simulate robot swarm performances")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scripted performance and write its trace directory.
    Run {
        script: PathBuf,
        /// Overrides the seed in the script.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "trace")]
        out: PathBuf,
    },
    /// Serve a manual performance to operator consoles over WebSocket.
    Serve {
        script: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Estimate anchor positions from pairwise ranges (CSV `a,b,range_m`).
    Calibrate {
        ranges: PathBuf,
        #[arg(long, default_value = "anchors.toml")]
        out: PathBuf,
        /// Range noise standard deviation (m).
        #[arg(long, default_value_t = 0.02)]
        sigma: f64,
        /// Surveyed anchor heights (m), comma separated in anchor order.
        #[arg(long, value_delimiter = ',')]
        heights: Option<Vec<f64>>,
        #[arg(long, default_value_t = 6.0)]
        venue_width: f64,
        #[arg(long, default_value_t = 12.0)]
        venue_depth: f64,
    },
    /// Turn a trace into plot data for one figure.
    Export {
        trace: PathBuf,
        #[arg(long, value_enum)]
        figure: Figure,
        /// Defaults to `<trace>/plots`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Robot for the uwb figure; the first robot with UWB fixes if absent.
        #[arg(long)]
        robot: Option<u16>,
    },
}

/// CLI seed, then the script's, then the network section's.
pub fn effective_seed(cli: Option<u64>, resolved: &ResolvedScript) -> u64 {
    cli.or(resolved.script.seed).unwrap_or(resolved.script.net.seed)
}

fn execute(cmd: Command) -> Result<(), String> {
    match cmd {
        Command::Run { script, seed, out } => {
            let resolved = PerformanceScript::load(&script).map_err(|e| e.to_string())?;
            let seed = effective_seed(seed, &resolved);
            let manual = resolved.script.cues.iter().filter(|c| c.at.is_none()).count();
            if manual > 0 {
                log::warn!("{manual} manual cue(s) are ignored by `run`");
            }
            let trace = run(resolved, seed).map_err(|e| e.to_string())?;
            trace.write_dir(&out).map_err(|e| e.to_string())?;
            let s = trace.meta.stats;
            println!(
                "{}: {} robots, {:.1} s, seed {}, {} packets ({} lost), {} fixes, trace in {}",
                trace.meta.name,
                trace.meta.robots.len(),
                trace.meta.duration,
                seed,
                s.packets_published,
                s.packets_lost,
                s.fixes,
                out.display()
            );
            Ok(())
        }
        Command::Serve { script, port, seed } => {
            let resolved = PerformanceScript::load(&script).map_err(|e| e.to_string())?;
            let seed = effective_seed(seed, &resolved);
            let handle = serve(resolved, seed, port).map_err(|e| e.to_string())?;
            println!("listening on ws://{}", handle.local_addr());
            handle.wait();
            Ok(())
        }
        Command::Calibrate {
            ranges,
            out,
            sigma,
            heights,
            venue_width,
            venue_depth,
        } => {
            let f = File::open(&ranges).map_err(|e| io_message(&ranges, e))?;
            let (m, n) = read_ranges_csv(BufReader::new(f)).map_err(|e| e.to_string())?;
            let cfg = CalibrationConfig {
                range_sigma: sigma,
                heights,
                venue: Venue {
                    width: venue_width,
                    depth: venue_depth,
                },
                ..CalibrationConfig::default()
            };
            let cal = calibrate_anchors(&m, n, &cfg).map_err(|e| e.to_string())?;
            std::fs::write(&out, cal.constellation.to_toml_string()).map_err(|e| io_message(&out, e))?;
            println!(
                "{} anchors, residual rms {:.4} m after {} iterations, written to {}",
                n,
                cal.residual_rms,
                cal.iterations,
                out.display()
            );
            Ok(())
        }
        Command::Export {
            trace,
            figure,
            out,
            robot,
        } => {
            let out = out.unwrap_or_else(|| trace.join("plots"));
            let files = replay_figure(&trace, figure, &out, robot).map_err(|e| e.to_string())?;
            for f in files {
                println!("{}", f.display());
            }
            Ok(())
        }
    }
}

fn io_message(path: &Path, e: std::io::Error) -> String {
    match e.kind() {
        std::io::ErrorKind::NotFound => format!("{}: no such file", path.display()),
        _ => format!("{}: {e}", path.display()),
    }
}

pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(msg) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

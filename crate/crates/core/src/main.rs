use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use qkdsim::calibrate::{calibrate, default_anchors, FitOptions};
use qkdsim::config::{load_config, SystemConfig};
use qkdsim::montecarlo::{dump, simulate, SimOptions};
use qkdsim::protocol::{sift, write_sifted_key};
use qkdsim::sweep::{
    default_eta_grid, default_lengths, histogram_link, mc_row, run_bias_sweep, run_distance_sweep,
    run_histogram, Engine, SweepPoint,
};
use qkdsim::{Error, Result};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EngineArg {
    Analytic,
    Mc,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DumpFormat {
    Bin,
    Csv,
}

#[derive(Parser, Debug)]
#[command(name = "qkdsim", version, about = "GHz-clocked BB84 link simulator")]
struct Cli {
    /// Configuration file; the bundled reference configuration if omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Pulses per Monte Carlo run.
    #[arg(long, global = true, default_value_t = 10_000_000)]
    pulses: u64,
    #[arg(long, global = true, value_enum, default_value_t = EngineArg::Analytic)]
    engine: EngineArg,
    /// Output file; stdout if omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the Monte Carlo at the configured operating point and dump events.
    Simulate {
        #[arg(long)]
        length: Option<f64>,
        #[arg(long)]
        compensated: bool,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long, value_enum, default_value_t = DumpFormat::Bin)]
        format: DumpFormat,
        /// Also write the sifted key here.
        #[arg(long)]
        key: Option<PathBuf>,
    },
    /// Rates and QBER versus fiber length. A `c` suffix marks a compensated
    /// length, e.g. `--lengths 5.6,25.3,75.8c`.
    SweepDistance {
        #[arg(long, value_delimiter = ',')]
        lengths: Option<Vec<String>>,
    },
    /// Rates and QBER versus receiver efficiency (detector bias).
    SweepBias {
        #[arg(long)]
        length: Option<f64>,
        #[arg(long)]
        compensated: bool,
        #[arg(long, value_delimiter = ',')]
        etas: Option<Vec<f64>>,
    },
    /// Detector timing histogram, back-to-back at low light level.
    Histogram {
        #[arg(long, default_value_t = 1.0)]
        bin: f64,
    },
    /// Fit the calibration block to the reference measurements.
    Calibrate {
        #[arg(long, default_value_t = 400)]
        max_iterations: usize,
    },
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Error::io(p, e))?,
        )),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn io_at<T>(path: Option<&Path>, r: io::Result<T>) -> Result<T> {
    r.map_err(|e| Error::io(path.unwrap_or(Path::new("<stdout>")), e))
}

fn parse_lengths(items: &[String]) -> Result<Vec<SweepPoint>> {
    items
        .iter()
        .map(|s| {
            let s = s.trim();
            let (num, compensated) = match s.strip_suffix('c') {
                Some(n) => (n, true),
                None => (s, false),
            };
            let length_km = num
                .parse()
                .map_err(|_| Error::invalid("lengths", format!("cannot parse `{s}`")))?;
            Ok(SweepPoint {
                length_km,
                compensated,
            })
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => SystemConfig::default(),
    };
    let engine = match cli.engine {
        EngineArg::Analytic => Engine::Analytic,
        EngineArg::Mc => Engine::MonteCarlo,
    };
    let mc = SimOptions {
        pulses: cli.pulses,
        seed: cli.seed,
        ..SimOptions::default()
    };
    let out_path = cli.out.as_deref();

    match cli.command {
        Command::Simulate {
            length,
            compensated,
            eta,
            format,
            key,
        } => {
            let link = cfg.link_at(
                length.unwrap_or(cfg.channel.length_km),
                compensated || cfg.channel.compensated,
                eta.unwrap_or(cfg.receiver.eta_bob),
            );
            let sim = simulate(&link, &mc)?;
            if let Some(p) = out_path {
                let mut w = output(Some(p))?;
                io_at(
                    Some(p),
                    match format {
                        DumpFormat::Bin => dump::write_binary(&sim.tags, &mut w),
                        DumpFormat::Csv => dump::write_csv(&sim.tags, &mut w),
                    },
                )?;
                io_at(Some(p), w.flush())?;
            }
            if let Some(p) = key.as_deref() {
                let sifted = sift(&sim.alice, &sim.bob_bases, &sim.tags)?;
                let mut w = output(Some(p))?;
                io_at(
                    Some(p),
                    write_sifted_key(&sifted, &cfg.protocol_constants(), &mut w),
                )?;
                io_at(Some(p), w.flush())?;
            }
            let row = mc_row(&cfg, &link, &sim)?;
            println!("seed={} segments={}", sim.seed, sim.segments);
            println!("pulses={} tags={}", sim.pulses(), sim.tags.len());
            println!("raw_hz={:e}", row.rate.raw_rate_hz);
            println!("qber={:e}", row.rate.qber);
            println!("secure_hz={:e}", row.rate.secure_rate_hz);
        }
        Command::SweepDistance { lengths } => {
            let points = match lengths {
                Some(l) => parse_lengths(&l)?,
                None => default_lengths(),
            };
            let table = run_distance_sweep(&cfg, &points, engine, &mc)?;
            let mut w = output(out_path)?;
            io_at(out_path, table.write_csv(&mut w))?;
            io_at(out_path, w.flush())?;
        }
        Command::SweepBias {
            length,
            compensated,
            etas,
        } => {
            let point = SweepPoint {
                length_km: length.unwrap_or(cfg.channel.length_km),
                compensated: compensated || cfg.channel.compensated,
            };
            let grid = etas.unwrap_or_else(default_eta_grid);
            let table = run_bias_sweep(&cfg, point, &grid, engine, &mc)?;
            let mut w = output(out_path)?;
            io_at(out_path, table.write_csv(&mut w))?;
            io_at(out_path, w.flush())?;
            if let Some(best) = table.best() {
                eprintln!(
                    "optimum eta_bob={:e} secure_hz={:e}",
                    best.rate.eta_bob, best.rate.secure_rate_hz
                );
            }
        }
        Command::Histogram { bin } => {
            let report = run_histogram(&histogram_link(&cfg), &mc, bin)?;
            let mut w = output(out_path)?;
            io_at(out_path, report.histogram.write_csv(&mut w))?;
            io_at(out_path, w.flush())?;
            let stderr = io::stderr();
            io_at(None, report.write_summary(stderr.lock()))?;
        }
        Command::Calibrate { max_iterations } => {
            let opts = FitOptions {
                max_iterations,
                ..FitOptions::default()
            };
            let report = calibrate(&cfg, &default_anchors(), &opts)?;
            let mut w = output(out_path)?;
            io_at(
                out_path,
                w.write_all(report.config.to_config_string().as_bytes()),
            )?;
            io_at(out_path, w.flush())?;
            eprint!("{}", report.residual_table());
            eprintln!("iterations={} cost={:e}", report.iterations, report.cost);
            if !report.afterpulse_limit_ok() {
                eprintln!(
                    "warning: afterpulse probability {:.4} at 10% efficiency exceeds 0.06",
                    report.afterpulse_at_10pct
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

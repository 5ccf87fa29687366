//! `turbolora` command line: airtime arithmetic, scenario runs, reference
//! verification and trace post-processing.
//!
//! Exit codes: 0 success, 2 bad arguments or config, 3 I/O failure,
//! 4 transfer gave up before completing the image.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use turbolora::config::{self, ConfigError, ScenarioConfig};
use turbolora::node::TransferOutcome;
use turbolora::pgm::PgmError;
use turbolora::phy::{self, FrameParams, PhyError, RegionPolicy};
use turbolora::scenario::{self, ScenarioError};
use turbolora::time::SimDuration;
use turbolora::{reference_checks, Verdict};

/// Simulate one image split across N time-synchronized LoRa transmitters.
#[derive(Parser)]
#[command(name = "turbolora", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print airtime, off-time and duty-cycle figures for one frame setup
    Airtime(AirtimeArgs),
    /// Run a scenario config and write metrics, trace and image artifacts
    Run(RunArgs),
    /// Recompute the reference-transfer figures and grade each one
    ReferenceCheck,
    /// Reshape a trace.csv into gnuplot-ready time/frequency blocks
    TracePlotData(TraceArgs),
}

#[derive(Args)]
struct AirtimeArgs {
    /// Spreading factor, 7..=12
    #[arg(long, default_value_t = 7)]
    sf: u8,
    /// Bandwidth in Hz: 125000, 250000 or 500000
    #[arg(long, default_value_t = 125_000)]
    bandwidth_hz: u32,
    /// Coding rate index, 1..=4 for 4/5..4/8
    #[arg(long, default_value_t = 1)]
    coding_rate: u8,
    /// Payload length in bytes
    #[arg(long, default_value_t = 226)]
    payload_len: u8,
    /// Preamble length in symbols
    #[arg(long, default_value_t = 8)]
    preamble_symbols: u16,
    /// Send without the explicit PHY header
    #[arg(long)]
    implicit_header: bool,
    /// Send without the payload CRC
    #[arg(long)]
    no_crc: bool,
    /// Force the low-data-rate optimization bit on
    #[arg(long)]
    low_datarate_optimize: bool,
    /// Sleep between frames in seconds, for the cycle figures
    #[arg(long, default_value_t = 36.0)]
    sleep_s: f64,
    /// Region rule: eu868, us915, duty_cycle:<fraction> or dwell:<seconds>
    #[arg(long, default_value = "eu868")]
    region: String,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario config file, one `key = value` per line
    config: PathBuf,
    /// Independent replicas, seeded base, base+1, ...
    #[arg(long, default_value_t = 1)]
    replicas: u32,
    /// Override the seed from the config and TURBOLORA_SEED
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TraceArgs {
    /// A trace.csv written by `run`
    trace: PathBuf,
    /// Write here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Error plus the process exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }
}

impl From<PhyError> for Failure {
    fn from(e: PhyError) -> Self {
        Failure::usage(e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let code = match &e {
            ConfigError::Io(_) => 3,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        let code = match &e {
            ScenarioError::Io(_) | ScenarioError::Pgm(PgmError::Io(_)) => 3,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { code: 3, message: e.to_string() }
    }
}

/// Fixed-point with trailing zeros trimmed; exact for our ns-grained values.
fn dec(x: f64, max_decimals: usize) -> String {
    let s = format!("{x:.max_decimals$}");
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn cmd_airtime(a: &AirtimeArgs) -> Result<(), Failure> {
    let mut params = FrameParams::new(a.sf, a.bandwidth_hz, a.coding_rate)?
        .with_payload_len(a.payload_len)
        .with_preamble_symbols(a.preamble_symbols)
        .with_explicit_header(!a.implicit_header)
        .with_crc(!a.no_crc);
    if a.low_datarate_optimize {
        params = params.with_low_datarate_optimize(true);
    }
    let region = config::parse_region(&a.region)?;
    if !a.sleep_s.is_finite() || a.sleep_s < 0.0 {
        return Err(Failure::usage(format!("sleep_s {} must be finite and non-negative", a.sleep_s)));
    }
    let sleep = SimDuration::from_secs_f64(a.sleep_s);

    let symbol = phy::symbol_time(&params);
    let symbols = phy::payload_symbol_count(&params);
    let airtime = phy::frame_airtime(&params);
    println!("symbol time        {} ms", dec(symbol.as_millis_f64(), 6));
    println!("payload symbols    {symbols}");
    println!("frame airtime      {} ms", dec(airtime.as_millis_f64(), 6));

    match region {
        RegionPolicy::DutyCycle { fraction } => {
            let min_off = phy::min_off_time(airtime, &region)?;
            let sleep_effective = sleep.max(min_off);
            let cycle = airtime + sleep_effective;
            let duty = phy::duty_cycle(airtime, cycle)?;
            println!("duty-cycle cap     {}%", dec(100.0 * fraction, 6));
            println!("minimum off-time   {} s", dec(min_off.as_secs_f64(), 9));
            println!("effective sleep    {} s", dec(sleep_effective.as_secs_f64(), 9));
            println!("cycle period       {} s", dec(cycle.as_secs_f64(), 9));
            println!("duty cycle         {}%", dec(100.0 * duty, 6));
        }
        RegionPolicy::DwellTime { max_dwell } => {
            let ok = phy::check_dwell(airtime, &region)?;
            let cycle = airtime + sleep;
            let duty = phy::duty_cycle(airtime, cycle)?;
            println!("dwell limit        {} ms", dec(max_dwell.as_millis_f64(), 6));
            println!("dwell check        {}", if ok { "ok" } else { "exceeded" });
            println!("cycle period       {} s", dec(cycle.as_secs_f64(), 9));
            println!("duty cycle         {}%", dec(100.0 * duty, 6));
        }
    }
    Ok(())
}

fn cmd_run(a: &RunArgs) -> Result<(), Failure> {
    let mut cfg = ScenarioConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.set_seed(seed);
    } else if let Ok(v) = std::env::var("TURBOLORA_SEED") {
        let seed: u64 = v
            .parse()
            .map_err(|_| Failure::usage(format!("TURBOLORA_SEED {v:?} is not a 64-bit seed")))?;
        cfg.set_seed(seed);
    }

    let outcome = scenario::run_scenario(&cfg, a.replicas)?;
    let mut incomplete = 0usize;
    for (row, report) in outcome.rows.iter().zip(&outcome.reports) {
        let status = match report.outcome {
            TransferOutcome::Completed => "completed",
            TransferOutcome::RetryLimitExceeded => {
                incomplete += 1;
                "hit the retry limit"
            }
        };
        println!(
            "replica {} seed {}: {status}, {} cycles, {} retransmission rounds, \
             {} s simulated, duty {}%, mse {}",
            row.replica,
            row.seed,
            report.cycles,
            report.retransmission_rounds,
            dec(row.total_sim_seconds, 9),
            dec(100.0 * row.achieved_duty_cycle, 6),
            dec(row.image_mse_vs_source, 6),
        );
    }
    println!("metrics: {}", outcome.output_dir.join("metrics.csv").display());
    if incomplete > 0 {
        return Err(Failure {
            code: 4,
            message: format!("{incomplete} of {} replicas did not complete", outcome.rows.len()),
        });
    }
    Ok(())
}

fn cmd_reference_check() {
    let checks = reference_checks();
    let (mut pass, mut note, mut disc) = (0, 0, 0);
    for c in &checks {
        match c.verdict {
            Verdict::Pass => pass += 1,
            Verdict::Note => note += 1,
            Verdict::Discrepancy => disc += 1,
        }
        println!(
            "{:<12} {:<32} {:<18} published: {}",
            c.verdict.to_string(),
            c.name,
            c.computed,
            c.published
        );
        if c.verdict != Verdict::Pass {
            println!("{:<12} ^ {}", "", c.detail);
        }
    }
    println!("{} checks: {pass} pass, {note} notes, {disc} discrepancies", checks.len());
}

const TRACE_HEADER: &str = "time_s,freq_hz,device_id,packet_number,outcome,source";

/// Block order in the emitted gnuplot data.
const BLOCK_NAMES: [&str; 4] = ["delivered", "corrupt", "lost", "background"];

fn cmd_trace_plot_data(a: &TraceArgs) -> Result<(), Failure> {
    let text = fs::read_to_string(&a.trace)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(TRACE_HEADER) => {}
        _ => {
            return Err(Failure::usage(format!(
                "{} does not start with the trace header {TRACE_HEADER:?}",
                a.trace.display()
            )))
        }
    }

    let mut blocks: [Vec<String>; 4] = Default::default();
    for (index, line) in lines.enumerate() {
        let n = index + 2;
        let fields: Vec<&str> = line.split(',').collect();
        let [time, freq_hz, device, packet, outcome, source] = fields[..] else {
            return Err(Failure::usage(format!("line {n}: expected 6 fields, got {}", fields.len())));
        };
        let time: f64 = time
            .parse()
            .map_err(|_| Failure::usage(format!("line {n}: bad time {time:?}")))?;
        let freq_hz: u64 = freq_hz
            .parse()
            .map_err(|_| Failure::usage(format!("line {n}: bad frequency {freq_hz:?}")))?;
        let block = match (source, outcome) {
            ("background", _) => 3,
            ("turbo", "delivered") => 0,
            ("turbo", "corrupt") => 1,
            ("turbo", "lost") => 2,
            _ => {
                return Err(Failure::usage(format!(
                    "line {n}: unknown outcome/source {outcome:?}/{source:?}"
                )))
            }
        };
        blocks[block].push(format!(
            "{} {} {device} {packet}",
            dec(time, 9),
            dec(freq_hz as f64 / 1e6, 6)
        ));
    }

    let mut out = String::new();
    out.push_str("# columns: time_s frequency_mhz device_id packet_number\n");
    out.push_str("# gnuplot index 0=delivered 1=corrupt 2=lost 3=background\n");
    for (block, name) in blocks.iter().zip(BLOCK_NAMES) {
        out.push_str(&format!("# {name} ({} points)\n", block.len()));
        for line in block {
            out.push_str(line);
            out.push('\n');
        }
        // two blank lines end a gnuplot dataset
        out.push_str("\n\n");
    }

    match &a.out {
        Some(path) => fs::write(path, out)?,
        None => print!("{out}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Airtime(a) => cmd_airtime(a),
        Command::Run(a) => cmd_run(a),
        Command::ReferenceCheck => {
            cmd_reference_check();
            Ok(())
        }
        Command::TracePlotData(a) => cmd_trace_plot_data(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

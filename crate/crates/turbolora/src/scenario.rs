//! Scenario runner: wires image, node, medium and gateway together for one
//! or more independent replicas and writes the output artifacts.
//!
//! Per replica: `trace.csv` (one line per resolved transmission),
//! `progress_###.pgm` (reconstruction state per round) and `final.pgm`.
//! A single `metrics.csv` at the top of the output directory carries one
//! row per replica. Everything is a pure function of (config, seed).

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::codec::ImageMatrix;
use crate::config::ScenarioConfig;
use crate::gateway::{Gateway, GatewayError};
use crate::ids::{DeviceId, TransferId};
use crate::medium::{Medium, MediumError, TraceRecord};
use crate::node::{self, NodeError, TransferEvent, TransferReport};
use crate::pgm::{self, PgmError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config names no input image")]
    MissingImage,
    #[error("replica count must be at least 1")]
    ZeroReplicas,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Pgm(#[from] PgmError),
    #[error(transparent)]
    Transfer(#[from] NodeError),
    #[error(transparent)]
    Medium(#[from] MediumError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// One line of metrics.csv.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub scenario_id: String,
    pub replica: u32,
    pub seed: u64,
    pub total_sim_seconds: f64,
    pub cycles: u32,
    pub retransmission_rounds: u32,
    pub frames_good: u64,
    pub frames_corrupt: u64,
    pub frames_lost: u64,
    pub achieved_duty_cycle: f64,
    pub throughput_bytes_per_s: f64,
    pub image_mse_vs_source: f64,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str = "scenario_id,replica,seed,total_sim_seconds,cycles,\
        retransmission_rounds,frames_good,frames_corrupt,frames_lost,achieved_duty_cycle,\
        throughput_bytes_per_s,image_mse_vs_source";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.scenario_id,
            self.replica,
            self.seed,
            sig6(self.total_sim_seconds),
            self.cycles,
            self.retransmission_rounds,
            self.frames_good,
            self.frames_corrupt,
            self.frames_lost,
            sig6(self.achieved_duty_cycle),
            sig6(self.throughput_bytes_per_s),
            sig6(self.image_mse_vs_source),
        )
    }
}

/// Format with six significant digits, plain decimal notation.
pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).clamp(0, 17) as usize;
    format!("{x:.decimals$}")
}

/// Results of every replica plus where the artifacts went.
pub struct ScenarioOutcome {
    pub rows: Vec<MetricsRow>,
    pub reports: Vec<TransferReport>,
    pub output_dir: PathBuf,
}

fn write_trace_line(w: &mut impl Write, r: &TraceRecord) -> io::Result<()> {
    writeln!(
        w,
        "{},{},{},{},{},{}",
        r.time,
        r.frequency_hz,
        r.device_id,
        r.packet_number,
        r.outcome.as_str(),
        r.source.as_str()
    )
}

fn run_replica(
    cfg: &ScenarioConfig,
    image: &ImageMatrix,
    replica: u32,
    dir: &Path,
) -> Result<(MetricsRow, TransferReport), ScenarioError> {
    fs::create_dir_all(dir)?;
    let seed = cfg.seed().wrapping_add(replica as u64);
    let mut medium_cfg = cfg.medium.clone();
    medium_cfg.seed = seed;
    let mut node_cfg = cfg.node.clone();
    node_cfg.seed = seed;

    let mut medium = Medium::new(&cfg.channels, medium_cfg)?;
    let mut gateway = Gateway::new(
        TransferId(1),
        image.rows() as u16,
        (1..=cfg.node.n_devices as u8).map(DeviceId),
        cfg.crc_numbering,
    )?;

    let mut trace = BufWriter::new(File::create(dir.join("trace.csv"))?);
    writeln!(trace, "time_s,freq_hz,device_id,packet_number,outcome,source")?;

    // The event callback cannot return errors, so the first I/O failure is
    // parked here and re-raised after the transfer.
    let mut deferred: Option<ScenarioError> = None;
    let report = node::run_transfer(
        image,
        &node_cfg,
        &cfg.channels,
        &mut medium,
        &mut gateway,
        |event| {
            if deferred.is_some() {
                return;
            }
            let result = match event {
                TransferEvent::Delivery(record) => {
                    write_trace_line(&mut trace, &record).map_err(ScenarioError::from)
                }
                TransferEvent::Progress(p) => {
                    let path = dir.join(format!("progress_{:03}.pgm", p.round));
                    pgm::write_pgm(&path, &p.image).map_err(ScenarioError::from)
                }
            };
            if let Err(e) = result {
                deferred = Some(e);
            }
        },
    )?;
    if let Some(e) = deferred {
        return Err(e);
    }
    trace.flush()?;
    pgm::write_pgm(&dir.join("final.pgm"), &report.image)?;

    let total_s = report.total_time.as_secs_f64();
    let payload_bytes = (image.rows() * (image.cols() + 1)) as f64;
    let row = MetricsRow {
        scenario_id: cfg.scenario_label(),
        replica,
        seed,
        total_sim_seconds: total_s,
        cycles: report.cycles,
        retransmission_rounds: report.retransmission_rounds,
        frames_good: report.frames_good,
        frames_corrupt: report.frames_corrupt,
        frames_lost: report.frames_lost,
        achieved_duty_cycle: report.achieved_duty_cycle,
        throughput_bytes_per_s: if total_s > 0.0 { payload_bytes / total_s } else { 0.0 },
        image_mse_vs_source: report.image.mse(image).expect("snapshot matches source shape"),
    };
    Ok((row, report))
}

/// Run the configured scenario. With `replicas` > 1, each replica gets
/// seed base+k and its own `replica_###/` artifact directory; metrics rows
/// are merged into one file at the top.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    replicas: u32,
) -> Result<ScenarioOutcome, ScenarioError> {
    if replicas == 0 {
        return Err(ScenarioError::ZeroReplicas);
    }
    let image_path = cfg.image_path.as_ref().ok_or(ScenarioError::MissingImage)?;
    let image = pgm::read_pgm(image_path)?;
    if image.rows() > 255 || image.cols() > 254 {
        return Err(NodeError::ImageTooLarge { rows: image.rows(), cols: image.cols() }.into());
    }
    fs::create_dir_all(&cfg.output_dir)?;

    let results: Vec<(MetricsRow, TransferReport)> = if replicas == 1 {
        vec![run_replica(cfg, &image, 0, &cfg.output_dir)?]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..replicas)
                .map(|k| {
                    let image = &image;
                    let dir = cfg.output_dir.join(format!("replica_{k:03}"));
                    scope.spawn(move || run_replica(cfg, image, k, &dir))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("replica thread panicked"))
                .collect::<Result<Vec<_>, ScenarioError>>()
        })?
    };

    let mut metrics = BufWriter::new(File::create(cfg.output_dir.join("metrics.csv"))?);
    writeln!(metrics, "{}", MetricsRow::CSV_HEADER)?;
    for (row, _) in &results {
        writeln!(metrics, "{}", row.csv_line())?;
    }
    metrics.flush()?;

    let (rows, reports) = results.into_iter().unzip();
    Ok(ScenarioOutcome { rows, reports, output_dir: cfg.output_dir.clone() })
}

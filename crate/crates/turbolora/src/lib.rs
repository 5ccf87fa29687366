//! TurboLoRa: split one payload across N time-synchronized LoRa
//! transmitters on distinct frequencies, and simulate the whole path from
//! end node to gateway.
//!
//! A duty-cycle-limited LoRa device may only occupy its channel a fraction
//! of the time (1 % in ITU Region 1), so a single transmitter moves a
//! 225x225 grayscale image in hours. Firing N transmitters simultaneously
//! on N channels divides that time by roughly N; a standard concentrator
//! hears all of them at once. This crate models that system as a
//! deterministic discrete-event simulation:
//!
//! - [`phy`]: LoRa airtime arithmetic and regional compliance (duty cycle,
//!   dwell time), nanosecond-exact.
//! - [`codec`]: image <-> indexed row frames, round-robin distribution over
//!   devices, reassembly with zero-fill for damaged rows.
//! - [`medium`]: multi-channel radio with time-frequency collision
//!   detection, seeded corruption/loss, and Poisson background traffic.
//! - [`node`]: the synchronized transmitter bank, its sleep schedule, NACK
//!   retransmissions, and the end-to-end transfer driver.
//! - [`gateway`]: frame filtering, CRC bookkeeping, NACK construction and
//!   image snapshots.
//! - [`config`] / [`scenario`]: flat-file experiment configuration and the
//!   artifact-writing runner (metrics.csv, trace.csv, PGM outputs).
//!
//! All randomness flows from one 64-bit seed through purpose-split ChaCha
//! streams, so every artifact is a pure function of (config, seed).

pub mod checks;
pub mod codec;
pub mod config;
pub mod gateway;
pub mod ids;
pub mod medium;
pub mod node;
pub mod pgm;
pub mod phy;
pub mod scenario;
pub mod time;

pub use checks::{reference_checks, ReferenceCheck, Verdict};
pub use codec::{
    decode_frame_payload, devectorize, encode_frame_payload, plan_chunks, reassemble, vectorize,
    ChunkPlan, CodecError, DamageReport, FrameStatus, ImageMatrix, PayloadVector, ReceivedFrame,
    RowRecord,
};
pub use config::{parse_region, ConfigError, ScenarioConfig};
pub use gateway::{
    CrcNumbering, Frame, Gateway, GatewayError, IntakeEvent, IntakeVerdict, TransferSession,
};
pub use ids::{DeviceId, PacketNumber, TransferId};
pub use medium::{
    generate_background, ChannelPlan, DeliveryOutcome, Medium, MediumConfig, MediumError, Outcome,
    TraceRecord, Transmission, TxSource,
};
pub use node::{
    run_transfer, DevicePhase, DeviceState, Node, NodeConfig, NodeError, ProgressSnapshot,
    TransferEvent, TransferOutcome, TransferReport, TransferState,
};
pub use pgm::{decode_pgm, encode_pgm, read_pgm, write_pgm, PgmError};
pub use phy::{
    check_dwell, duty_cycle, frame_airtime, min_off_time, payload_symbol_count, symbol_time,
    FrameParams, PhyError, RegionPolicy,
};
pub use scenario::{run_scenario, sig6, MetricsRow, ScenarioError, ScenarioOutcome};
pub use time::{SimDuration, SimTime};

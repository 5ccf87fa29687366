//! Discrete-event multi-channel radio medium.
//!
//! Transmissions are queued with their full time extent known up front, so
//! collision flags are settled incrementally at schedule time: two frames
//! collide iff they share frequency and spreading factor and their
//! closed-open time intervals overlap. `resolve` then hands back everything
//! that has finished by the given instant, classified as Delivered, Corrupt
//! or Lost.
//!
//! Randomness is split into independent ChaCha streams per purpose (one per
//! channel for background arrivals, one for corruption, one for loss), so
//! toggling one knob never shifts another's draws. Corruption and loss
//! uniforms are drawn when a frame is scheduled, which makes outcomes
//! independent of how callers partition their `resolve` windows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::gateway::Frame;
use crate::ids::{DeviceId, PacketNumber, TransferId};
use crate::time::{SimDuration, SimTime};

const CORRUPT_STREAM: u64 = 1;
const LOSS_STREAM: u64 = 2;
const CHANNEL_STREAM_BASE: u64 = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MediumError {
    #[error("transmission starts at {start} before current time {now}")]
    ScheduleInPast { start: SimTime, now: SimTime },
    #[error("transmission airtime must be positive")]
    ZeroAirtime,
    #[error("resolve window {window} precedes current time {now}")]
    WindowInPast { window: SimTime, now: SimTime },
    #[error("channel plan needs at least one frequency")]
    EmptyChannelPlan,
    #[error("duplicate frequency {0} Hz in channel plan")]
    DuplicateFrequency(u32),
    #[error("{name} = {value} outside [0, 1]")]
    Probability { name: &'static str, value: f64 },
    #[error("background rate must be finite and non-negative, got {0}")]
    BackgroundRate(f64),
    #[error("background airtime range must satisfy 0 < min <= max")]
    BackgroundAirtimeRange,
}

/// Ordered set of distinct center frequencies shared by node and gateway.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelPlan {
    frequencies_hz: Vec<u32>,
    bandwidth_hz: u32,
}

impl ChannelPlan {
    pub fn new(frequencies_hz: Vec<u32>, bandwidth_hz: u32) -> Result<Self, MediumError> {
        if frequencies_hz.is_empty() {
            return Err(MediumError::EmptyChannelPlan);
        }
        let mut seen = std::collections::BTreeSet::new();
        for &f in &frequencies_hz {
            if !seen.insert(f) {
                return Err(MediumError::DuplicateFrequency(f));
            }
        }
        Ok(ChannelPlan { frequencies_hz, bandwidth_hz })
    }

    /// The eight 125 kHz uplink channels a standard EU868 concentrator
    /// listens to simultaneously.
    pub fn eu868_default() -> Self {
        ChannelPlan {
            frequencies_hz: vec![
                868_100_000,
                868_300_000,
                868_500_000,
                867_100_000,
                867_300_000,
                867_500_000,
                867_700_000,
                867_900_000,
            ],
            bandwidth_hz: 125_000,
        }
    }

    pub fn len(&self) -> usize {
        self.frequencies_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies_hz.is_empty()
    }

    pub fn frequencies(&self) -> &[u32] {
        &self.frequencies_hz
    }

    pub fn frequency(&self, channel: usize) -> Option<u32> {
        self.frequencies_hz.get(channel).copied()
    }

    pub fn bandwidth_hz(&self) -> u32 {
        self.bandwidth_hz
    }
}

/// Who put a frame on the air.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxSource {
    TurboNode,
    Background,
}

impl TxSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            TxSource::TurboNode => "turbo",
            TxSource::Background => "background",
        }
    }
}

/// One frame in flight, with its full time extent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transmission {
    pub source: TxSource,
    pub device_id: DeviceId,
    pub transfer_id: TransferId,
    pub packet_number: PacketNumber,
    pub payload: Vec<u8>,
    pub frequency_hz: u32,
    pub spreading_factor: u8,
    pub start_time: SimTime,
    pub airtime: SimDuration,
}

impl Transmission {
    pub fn end_time(&self) -> SimTime {
        self.start_time + self.airtime
    }

    fn overlaps(&self, other: &Transmission) -> bool {
        self.start_time < other.end_time() && other.start_time < self.end_time()
    }

    fn collides_with(&self, other: &Transmission) -> bool {
        self.frequency_hz == other.frequency_hz
            && self.spreading_factor == other.spreading_factor
            && self.overlaps(other)
    }
}

/// Knobs for the random part of the channel model.
#[derive(Debug, Clone, PartialEq)]
pub struct MediumConfig {
    /// Poisson arrival rate of foreign frames, per channel per second.
    pub background_rate_per_s: f64,
    pub background_airtime_range: (SimDuration, SimDuration),
    pub random_corrupt_prob: f64,
    pub random_loss_prob: f64,
    pub seed: u64,
}

impl Default for MediumConfig {
    fn default() -> Self {
        MediumConfig {
            background_rate_per_s: 0.1,
            background_airtime_range: (
                SimDuration::from_millis(40),
                SimDuration::from_millis(400),
            ),
            random_corrupt_prob: 0.05,
            random_loss_prob: 0.01,
            seed: 0,
        }
    }
}

impl MediumConfig {
    /// A silent, lossless medium: no background, no random damage.
    pub fn lossless(seed: u64) -> Self {
        MediumConfig {
            background_rate_per_s: 0.0,
            random_corrupt_prob: 0.0,
            random_loss_prob: 0.0,
            seed,
            ..MediumConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), MediumError> {
        for (name, value) in [
            ("random_corrupt_prob", self.random_corrupt_prob),
            ("random_loss_prob", self.random_loss_prob),
        ] {
            if !(0.0..=1.0).contains(&value) || value.is_nan() {
                return Err(MediumError::Probability { name, value });
            }
        }
        if !self.background_rate_per_s.is_finite() || self.background_rate_per_s < 0.0 {
            return Err(MediumError::BackgroundRate(self.background_rate_per_s));
        }
        let (lo, hi) = self.background_airtime_range;
        if lo.is_zero() || hi < lo {
            return Err(MediumError::BackgroundAirtimeRange);
        }
        Ok(())
    }
}

/// How a frame fared once its airtime elapsed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Delivered,
    Corrupt,
    Lost,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Delivered => "delivered",
            Outcome::Corrupt => "corrupt",
            Outcome::Lost => "lost",
        }
    }
}

/// A resolved transmission with its verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct DeliveryOutcome {
    pub transmission: Transmission,
    pub outcome: Outcome,
    /// True when the verdict came from a same-channel same-SF overlap.
    pub collided: bool,
}

impl DeliveryOutcome {
    /// The frame as the gateway sees it; None if it was lost in the air.
    /// Corrupt frames keep their payload bytes: the simulated CRC flag
    /// marks damage without destroying the content.
    pub fn frame(&self) -> Option<Frame> {
        match self.outcome {
            Outcome::Lost => None,
            outcome => Some(Frame {
                device_id: self.transmission.device_id,
                transfer_id: self.transmission.transfer_id,
                packet_number: self.transmission.packet_number,
                payload: self.transmission.payload.clone(),
                crc_ok: outcome == Outcome::Delivered,
                rx_time: self.transmission.end_time(),
                frequency_hz: self.transmission.frequency_hz,
            }),
        }
    }

    pub fn trace_record(&self) -> TraceRecord {
        TraceRecord {
            time: self.transmission.end_time(),
            frequency_hz: self.transmission.frequency_hz,
            device_id: self.transmission.device_id,
            packet_number: self.transmission.packet_number,
            outcome: self.outcome,
            source: self.transmission.source,
        }
    }
}

/// One line of the delivery trace: the data behind a received-frequencies
/// versus time scatter plot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    pub time: SimTime,
    pub frequency_hz: u32,
    pub device_id: DeviceId,
    pub packet_number: PacketNumber,
    pub outcome: Outcome,
    pub source: TxSource,
}

struct Pending {
    seq: u64,
    tx: Transmission,
    collided: bool,
    corrupt_draw: f64,
    loss_draw: f64,
}

/// Per-channel Poisson process, materialized lazily so extending the
/// horizon continues the same arrival sequence.
struct BackgroundChannel {
    rng: ChaCha12Rng,
    frequency_hz: u32,
    next_arrival: Option<SimTime>,
}

impl BackgroundChannel {
    fn new(seed: u64, channel: usize, frequency_hz: u32, rate: f64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(CHANNEL_STREAM_BASE + channel as u64);
        let mut ch = BackgroundChannel { rng, frequency_hz, next_arrival: None };
        if rate > 0.0 {
            ch.next_arrival = Some(SimTime::ZERO + ch.draw_gap(rate));
        }
        ch
    }

    fn draw_gap(&mut self, rate: f64) -> SimDuration {
        let exp = Exp::new(rate).expect("validated rate");
        SimDuration::from_secs_f64(exp.sample(&mut self.rng))
    }

    /// All arrivals up to and including `until`, advancing internal state.
    fn take_until(&mut self, until: SimTime, cfg: &MediumConfig) -> Vec<Transmission> {
        let mut out = Vec::new();
        let (lo, hi) = cfg.background_airtime_range;
        let span = hi.as_secs_f64() - lo.as_secs_f64();
        while let Some(at) = self.next_arrival {
            if at > until {
                break;
            }
            let sf: u8 = self.rng.random_range(7..=12);
            let airtime = SimDuration::from_secs_f64(
                lo.as_secs_f64() + self.rng.random_range(0.0..1.0) * span,
            );
            let device = DeviceId(self.rng.random_range(128..=255));
            out.push(Transmission {
                source: TxSource::Background,
                device_id: device,
                transfer_id: TransferId(0),
                packet_number: PacketNumber(0),
                payload: Vec::new(),
                frequency_hz: self.frequency_hz,
                spreading_factor: sf,
                start_time: at,
                airtime,
            });
            self.next_arrival = Some(at + self.draw_gap(cfg.background_rate_per_s));
        }
        out
    }
}

/// Foreign traffic over a fixed horizon, one Poisson process per channel,
/// reproducible from the seed alone.
pub fn generate_background(
    horizon: SimDuration,
    plan: &ChannelPlan,
    cfg: &MediumConfig,
) -> Result<Vec<Transmission>, MediumError> {
    cfg.validate()?;
    let mut all = Vec::new();
    for (index, &freq) in plan.frequencies().iter().enumerate() {
        let mut ch = BackgroundChannel::new(cfg.seed, index, freq, cfg.background_rate_per_s);
        all.extend(ch.take_until(SimTime::ZERO + horizon, cfg));
    }
    all.sort_by_key(|tx| (tx.start_time, tx.frequency_hz));
    Ok(all)
}

/// The shared radio. Single owner; replicas each build their own.
pub struct Medium {
    cfg: MediumConfig,
    now: SimTime,
    seq: u64,
    pending: Vec<Pending>,
    channels: Vec<BackgroundChannel>,
    corrupt_rng: ChaCha12Rng,
    loss_rng: ChaCha12Rng,
}

impl Medium {
    pub fn new(plan: &ChannelPlan, cfg: MediumConfig) -> Result<Self, MediumError> {
        cfg.validate()?;
        let channels = plan
            .frequencies()
            .iter()
            .enumerate()
            .map(|(i, &f)| BackgroundChannel::new(cfg.seed, i, f, cfg.background_rate_per_s))
            .collect();
        let mut corrupt_rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        corrupt_rng.set_stream(CORRUPT_STREAM);
        let mut loss_rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        loss_rng.set_stream(LOSS_STREAM);
        Ok(Medium {
            cfg,
            now: SimTime::ZERO,
            seq: 0,
            pending: Vec::new(),
            channels,
            corrupt_rng,
            loss_rng,
        })
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Queue a frame. Collision flags against everything already queued are
    /// settled here; frames resolved earlier cannot overlap a new one
    /// because their end lies at or before the current time.
    pub fn schedule(&mut self, tx: Transmission) -> Result<(), MediumError> {
        if tx.start_time < self.now {
            return Err(MediumError::ScheduleInPast { start: tx.start_time, now: self.now });
        }
        if tx.airtime.is_zero() {
            return Err(MediumError::ZeroAirtime);
        }
        let (corrupt_draw, loss_draw) = match tx.source {
            TxSource::TurboNode => (
                self.corrupt_rng.random_range(0.0..1.0),
                self.loss_rng.random_range(0.0..1.0),
            ),
            // Background frames are damaged only by collisions; they never
            // consume corruption or loss draws, so their presence does not
            // shift the node frames' randomness.
            TxSource::Background => (1.0, 1.0),
        };
        let mut collided = false;
        for other in &mut self.pending {
            if tx.collides_with(&other.tx) {
                collided = true;
                other.collided = true;
            }
        }
        self.pending.push(Pending {
            seq: self.seq,
            tx,
            collided,
            corrupt_draw,
            loss_draw,
        });
        self.seq += 1;
        Ok(())
    }

    fn schedule_background_until(&mut self, until: SimTime) {
        if self.cfg.background_rate_per_s <= 0.0 {
            return;
        }
        let cfg = self.cfg.clone();
        let mut arrivals = Vec::new();
        for ch in &mut self.channels {
            arrivals.extend(ch.take_until(until, &cfg));
        }
        arrivals.sort_by_key(|tx| (tx.start_time, tx.frequency_hz));
        for tx in arrivals {
            // Earlier windows already consumed every arrival <= now.
            debug_assert!(tx.start_time >= self.now);
            self.schedule(tx).expect("background schedule is never in the past");
        }
    }

    /// Deliver everything that finishes by `window_end`, in reception
    /// order, and advance the clock.
    pub fn resolve(&mut self, window_end: SimTime) -> Result<Vec<DeliveryOutcome>, MediumError> {
        if window_end < self.now {
            return Err(MediumError::WindowInPast { window: window_end, now: self.now });
        }
        // Materialize background first so late-arriving foreign frames can
        // still collide with frames resolved in this very window.
        self.schedule_background_until(window_end);

        let mut done: Vec<Pending> = Vec::new();
        let mut keep: Vec<Pending> = Vec::new();
        for p in self.pending.drain(..) {
            if p.tx.end_time() <= window_end {
                done.push(p);
            } else {
                keep.push(p);
            }
        }
        self.pending = keep;
        done.sort_by_key(|p| (p.tx.end_time(), p.seq));
        self.now = window_end;

        let cfg = &self.cfg;
        Ok(done
            .into_iter()
            .map(|p| {
                let outcome = if p.collided {
                    Outcome::Corrupt
                } else if p.loss_draw < cfg.random_loss_prob {
                    Outcome::Lost
                } else if p.corrupt_draw < cfg.random_corrupt_prob {
                    Outcome::Corrupt
                } else {
                    Outcome::Delivered
                };
                DeliveryOutcome { transmission: p.tx, outcome, collided: p.collided }
            })
            .collect())
    }
}

//! Gateway session logic: filter foreign traffic, sort good from CRC-bad,
//! build NACK lists, and hand completed (or partial) sessions to the codec
//! for reassembly.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::codec::{self, CodecError, DamageReport, FrameStatus, ImageMatrix, ReceivedFrame};
use crate::ids::{DeviceId, PacketNumber, TransferId};
use crate::time::SimTime;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("expected packet count must be at least 1")]
    ZeroExpectedCount,
    #[error("allow-list must name at least one device")]
    EmptyAllowList,
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// A frame as it reaches the gateway radio front end.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub device_id: DeviceId,
    pub transfer_id: TransferId,
    /// Global 1-based packet number; equals the row index it carries.
    pub packet_number: PacketNumber,
    /// Index byte followed by row data.
    pub payload: Vec<u8>,
    pub crc_ok: bool,
    pub rx_time: SimTime,
    pub frequency_hz: u32,
}

/// Whether a CRC-failed frame still yields a readable packet number.
///
/// Optimistic assumes the header survives corruption, so the number lands
/// in the bad-CRC set. Strict discards it, letting gap detection pick the
/// row up as missing. Either way the NACK union is the same.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CrcNumbering {
    #[default]
    Optimistic,
    Strict,
}

/// Classification of one received frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntakeVerdict {
    /// New good frame stored.
    Stored,
    /// Identical good frame seen before; no state change.
    Duplicate,
    /// CRC-failed; its number joins the bad-CRC set.
    BadCrcRecorded,
    /// CRC-failed and the number was not read (strict mode, or the row is
    /// already held good); covered by gap detection instead.
    BadCrcDiscarded,
    /// Foreign traffic, filtered out.
    Ignored,
}

/// One non-ignored intake, kept for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IntakeEvent {
    pub rx_time: SimTime,
    pub device_id: DeviceId,
    pub packet_number: PacketNumber,
    pub verdict: IntakeVerdict,
}

/// Book-keeping for one image transfer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferSession {
    transfer_id: TransferId,
    expected_count: u16,
    good: BTreeMap<PacketNumber, Vec<u8>>,
    bad_crc: BTreeSet<PacketNumber>,
    timeline: Vec<IntakeEvent>,
    rounds: u32,
}

impl TransferSession {
    pub fn transfer_id(&self) -> TransferId {
        self.transfer_id
    }

    pub fn expected_count(&self) -> u16 {
        self.expected_count
    }

    pub fn good_count(&self) -> usize {
        self.good.len()
    }

    pub fn bad_crc(&self) -> &BTreeSet<PacketNumber> {
        &self.bad_crc
    }

    pub fn timeline(&self) -> &[IntakeEvent] {
        &self.timeline
    }

    pub fn rounds(&self) -> u32 {
        self.rounds
    }

    pub fn is_complete(&self) -> bool {
        self.good.len() == self.expected_count as usize
    }
}

/// Single-transfer gateway: allow-list filter plus session state.
#[derive(Debug, Clone)]
pub struct Gateway {
    allowed_devices: BTreeSet<DeviceId>,
    numbering: CrcNumbering,
    session: TransferSession,
}

impl Gateway {
    pub fn new(
        transfer_id: TransferId,
        expected_count: u16,
        devices: impl IntoIterator<Item = DeviceId>,
        numbering: CrcNumbering,
    ) -> Result<Self, GatewayError> {
        if expected_count == 0 {
            return Err(GatewayError::ZeroExpectedCount);
        }
        let allowed_devices: BTreeSet<DeviceId> = devices.into_iter().collect();
        if allowed_devices.is_empty() {
            return Err(GatewayError::EmptyAllowList);
        }
        Ok(Gateway {
            allowed_devices,
            numbering,
            session: TransferSession {
                transfer_id,
                expected_count,
                good: BTreeMap::new(),
                bad_crc: BTreeSet::new(),
                timeline: Vec::new(),
                rounds: 0,
            },
        })
    }

    pub fn session(&self) -> &TransferSession {
        &self.session
    }

    /// Mark the start of a NACK/retransmission round.
    pub fn note_round(&mut self) {
        self.session.rounds += 1;
    }

    /// Classify one frame. Never rejects; every input gets a verdict.
    pub fn intake(&mut self, frame: &Frame) -> IntakeVerdict {
        if frame.transfer_id != self.session.transfer_id
            || !self.allowed_devices.contains(&frame.device_id)
        {
            return IntakeVerdict::Ignored;
        }
        let verdict = if frame.crc_ok {
            match self.session.good.get(&frame.packet_number) {
                Some(existing) => {
                    debug_assert_eq!(existing, &frame.payload, "conflicting good frames");
                    IntakeVerdict::Duplicate
                }
                None => {
                    self.session.good.insert(frame.packet_number, frame.payload.clone());
                    // A good copy supersedes any earlier bad-CRC sighting.
                    self.session.bad_crc.remove(&frame.packet_number);
                    IntakeVerdict::Stored
                }
            }
        } else {
            let readable = self.numbering == CrcNumbering::Optimistic
                && !self.session.good.contains_key(&frame.packet_number);
            if readable {
                self.session.bad_crc.insert(frame.packet_number);
                IntakeVerdict::BadCrcRecorded
            } else {
                IntakeVerdict::BadCrcDiscarded
            }
        };
        self.session.timeline.push(IntakeEvent {
            rx_time: frame.rx_time,
            device_id: frame.device_id,
            packet_number: frame.packet_number,
            verdict,
        });
        verdict
    }

    /// Packets still wanted: bad-CRC numbers plus gap-detected missing
    /// ones. Empty exactly when the session is complete.
    pub fn build_nack(&self) -> BTreeSet<PacketNumber> {
        let mut nack = self.session.bad_crc.clone();
        for n in 1..=self.session.expected_count {
            let p = PacketNumber(n);
            if !self.session.good.contains_key(&p) {
                nack.insert(p);
            }
        }
        nack
    }

    /// Current image state: good rows copied through, everything else
    /// zero-filled and reported as damage.
    pub fn snapshot_image(
        &self,
        rows: usize,
        cols: usize,
    ) -> Result<(ImageMatrix, DamageReport), GatewayError> {
        let mut frames: Vec<ReceivedFrame> = Vec::with_capacity(self.session.good.len());
        for (number, payload) in &self.session.good {
            let record = codec::decode_frame_payload(payload)?;
            debug_assert_eq!(record.row_index, number.0);
            frames.push(ReceivedFrame {
                row_index: record.row_index,
                data: record.data,
                status: FrameStatus::Good,
            });
        }
        for number in &self.session.bad_crc {
            frames.push(ReceivedFrame {
                row_index: number.0,
                data: Vec::new(),
                status: FrameStatus::Corrupt,
            });
        }
        Ok(codec::reassemble(&frames, rows, cols)?)
    }
}

//! Deterministic transformation between a grayscale image matrix and
//! index-prefixed frames distributed over N devices, and the inverse with
//! zero-fill for missing or corrupt frames.
//!
//! Each image row becomes one frame payload: a single index byte (1-based
//! row number) followed by the row's pixels. A 225x225 image therefore
//! travels as 225 frames of 226 bytes.

use std::collections::{BTreeMap, BTreeSet};

use crate::ids::{DeviceId, PacketNumber};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("pixel buffer holds {pixels} bytes, expected {rows}x{cols}")]
    Dimensions { rows: usize, cols: usize, pixels: usize },
    #[error("image must have at least one row and one column")]
    EmptyImage,
    #[error("row index {row_index} outside 1..={rows}")]
    RowIndexOutOfRange { row_index: u16, rows: usize },
    #[error("row index {0} does not fit the one-byte frame index")]
    RowIndexTooLarge(u16),
    #[error("row index 0 is invalid; indices are 1-based")]
    RowIndexZero,
    #[error("row {row_index} carries {got} bytes, expected {expected}")]
    RowLength { row_index: u16, expected: usize, got: usize },
    #[error("conflicting good frames for row {row_index}")]
    ConflictingDuplicate { row_index: u16 },
    #[error("frame payload is empty")]
    EmptyPayload,
    #[error("device count {0} outside 1..=255")]
    DeviceCount(usize),
    #[error("record {got} found where row {expected} was expected")]
    NonContiguous { expected: u16, got: u16 },
}

/// A 2-D grayscale image, row-major, one byte per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageMatrix {
    rows: usize,
    cols: usize,
    pixels: Vec<u8>,
}

impl ImageMatrix {
    pub fn new(rows: usize, cols: usize, pixels: Vec<u8>) -> Result<Self, CodecError> {
        if rows == 0 || cols == 0 {
            return Err(CodecError::EmptyImage);
        }
        if rows * cols != pixels.len() {
            return Err(CodecError::Dimensions {
                rows,
                cols,
                pixels: pixels.len(),
            });
        }
        Ok(ImageMatrix { rows, cols, pixels })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// Row by 0-based index.
    pub fn row(&self, index: usize) -> &[u8] {
        &self.pixels[index * self.cols..(index + 1) * self.cols]
    }

    /// Mean squared pixel error against another image of the same shape.
    pub fn mse(&self, other: &ImageMatrix) -> Option<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return None;
        }
        let sum: f64 = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| {
                let d = *a as f64 - *b as f64;
                d * d
            })
            .sum();
        Some(sum / self.pixels.len() as f64)
    }
}

/// One image row tagged with its 1-based index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowRecord {
    pub row_index: u16,
    pub data: Vec<u8>,
}

/// The row-serialized form of an image: records 1..=rows in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PayloadVector {
    records: Vec<RowRecord>,
}

impl PayloadVector {
    pub fn records(&self) -> &[RowRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Total size once every record is serialized: rows * (cols + 1).
    pub fn serialized_len(&self) -> usize {
        self.records.iter().map(|r| r.data.len() + 1).sum()
    }
}

/// Assignment of records to devices, batch by batch. Within a batch every
/// device carries at most one record; all devices transmit the batch
/// simultaneously.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkPlan {
    n_devices: usize,
    frame_payload_bytes: usize,
    batches: Vec<Vec<(DeviceId, RowRecord)>>,
}

impl ChunkPlan {
    pub fn n_devices(&self) -> usize {
        self.n_devices
    }

    /// Serialized bytes per frame: cols + 1 index byte.
    pub fn frame_payload_bytes(&self) -> usize {
        self.frame_payload_bytes
    }

    pub fn batch_count(&self) -> usize {
        self.batches.len()
    }

    pub fn batch(&self, index: usize) -> &[(DeviceId, RowRecord)] {
        &self.batches[index]
    }

    pub fn batches(&self) -> &[Vec<(DeviceId, RowRecord)>] {
        &self.batches
    }

    /// Bytes moved by one full batch: n_devices * frame_payload_bytes.
    pub fn full_batch_bytes(&self) -> usize {
        self.n_devices * self.frame_payload_bytes
    }

    /// The device that carries a given packet, and its record.
    pub fn record_for(&self, packet: PacketNumber) -> Option<(DeviceId, &RowRecord)> {
        if packet.0 == 0 {
            return None;
        }
        let ordinal = packet.0 as usize - 1;
        let (batch, slot) = (ordinal / self.n_devices, ordinal % self.n_devices);
        self.batches.get(batch).and_then(|b| b.get(slot)).map(|(d, r)| (*d, r))
    }
}

/// Per-row report of what zero-fill had to cover.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DamageReport {
    /// Rows for which no frame arrived at all, ascending.
    pub missing: Vec<u16>,
    /// Rows for which only CRC-failed frames arrived, ascending.
    pub corrupt: Vec<u16>,
}

impl DamageReport {
    pub fn is_empty(&self) -> bool {
        self.missing.is_empty() && self.corrupt.is_empty()
    }

    /// All zero-filled rows, ascending.
    pub fn damaged_rows(&self) -> Vec<u16> {
        let mut all: Vec<u16> = self.missing.iter().chain(&self.corrupt).copied().collect();
        all.sort_unstable();
        all
    }
}

/// CRC verdict attached to a received frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameStatus {
    Good,
    Corrupt,
}

/// Reassembly input: one received frame reduced to what the decoder needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceivedFrame {
    pub row_index: u16,
    pub data: Vec<u8>,
    pub status: FrameStatus,
}

/// Reshape a matrix into its index-prefixed row records.
pub fn vectorize(image: &ImageMatrix) -> PayloadVector {
    let records = (0..image.rows())
        .map(|r| RowRecord {
            row_index: (r + 1) as u16,
            data: image.row(r).to_vec(),
        })
        .collect();
    PayloadVector { records }
}

/// Inverse of [`vectorize`]: records 1..=rows back into a matrix.
pub fn devectorize(vector: &PayloadVector, cols: usize) -> Result<ImageMatrix, CodecError> {
    let mut pixels = Vec::with_capacity(vector.len() * cols);
    for (k, record) in vector.records().iter().enumerate() {
        let expected = (k + 1) as u16;
        if record.row_index != expected {
            return Err(CodecError::NonContiguous {
                expected,
                got: record.row_index,
            });
        }
        if record.data.len() != cols {
            return Err(CodecError::RowLength {
                row_index: record.row_index,
                expected: cols,
                got: record.data.len(),
            });
        }
        pixels.extend_from_slice(&record.data);
    }
    ImageMatrix::new(vector.len(), cols, pixels)
}

/// Distribute records over devices round-robin: batch b assigns record
/// (b-1)*n + d to device d (both 1-based). The last batch may be partial.
pub fn plan_chunks(vector: &PayloadVector, n_devices: usize) -> Result<ChunkPlan, CodecError> {
    if n_devices == 0 || n_devices > 255 {
        return Err(CodecError::DeviceCount(n_devices));
    }
    let frame_payload_bytes = vector
        .records()
        .first()
        .map(|r| r.data.len() + 1)
        .unwrap_or(0);
    let batches = vector
        .records()
        .chunks(n_devices)
        .map(|chunk| {
            chunk
                .iter()
                .enumerate()
                .map(|(slot, record)| (DeviceId(slot as u8 + 1), record.clone()))
                .collect()
        })
        .collect();
    Ok(ChunkPlan {
        n_devices,
        frame_payload_bytes,
        batches,
    })
}

/// Serialize one record: index byte first, then the row data.
pub fn encode_frame_payload(record: &RowRecord) -> Result<Vec<u8>, CodecError> {
    if record.row_index == 0 {
        return Err(CodecError::RowIndexZero);
    }
    if record.row_index > 255 {
        return Err(CodecError::RowIndexTooLarge(record.row_index));
    }
    let mut bytes = Vec::with_capacity(record.data.len() + 1);
    bytes.push(record.row_index as u8);
    bytes.extend_from_slice(&record.data);
    Ok(bytes)
}

/// Inverse of [`encode_frame_payload`].
pub fn decode_frame_payload(bytes: &[u8]) -> Result<RowRecord, CodecError> {
    match bytes.split_first() {
        None => Err(CodecError::EmptyPayload),
        Some((0, _)) => Err(CodecError::RowIndexZero),
        Some((&index, data)) => Ok(RowRecord {
            row_index: index as u16,
            data: data.to_vec(),
        }),
    }
}

/// Rebuild the image from whatever frames arrived. Rows with a good frame
/// are copied through; rows that are missing or only ever arrived with a
/// bad CRC are filled with zeros and listed in the damage report.
///
/// Identical duplicate good frames are accepted idempotently; good frames
/// that disagree on the same row are a protocol violation.
pub fn reassemble(
    frames: &[ReceivedFrame],
    rows: usize,
    cols: usize,
) -> Result<(ImageMatrix, DamageReport), CodecError> {
    if rows == 0 || cols == 0 {
        return Err(CodecError::EmptyImage);
    }
    let mut good: BTreeMap<u16, &[u8]> = BTreeMap::new();
    let mut corrupt: BTreeSet<u16> = BTreeSet::new();
    for frame in frames {
        if frame.row_index == 0 || frame.row_index as usize > rows {
            return Err(CodecError::RowIndexOutOfRange {
                row_index: frame.row_index,
                rows,
            });
        }
        match frame.status {
            FrameStatus::Good => {
                if frame.data.len() != cols {
                    return Err(CodecError::RowLength {
                        row_index: frame.row_index,
                        expected: cols,
                        got: frame.data.len(),
                    });
                }
                if let Some(existing) = good.get(&frame.row_index) {
                    if *existing != frame.data.as_slice() {
                        return Err(CodecError::ConflictingDuplicate {
                            row_index: frame.row_index,
                        });
                    }
                } else {
                    good.insert(frame.row_index, &frame.data);
                }
            }
            FrameStatus::Corrupt => {
                corrupt.insert(frame.row_index);
            }
        }
    }
    // A good copy supersedes any corrupt sighting of the same row.
    corrupt.retain(|idx| !good.contains_key(idx));

    let mut pixels = vec![0u8; rows * cols];
    for (idx, data) in &good {
        let start = (*idx as usize - 1) * cols;
        pixels[start..start + cols].copy_from_slice(data);
    }
    let missing = (1..=rows as u16)
        .filter(|idx| !good.contains_key(idx) && !corrupt.contains(idx))
        .collect();
    let report = DamageReport {
        missing,
        corrupt: corrupt.into_iter().collect(),
    };
    Ok((ImageMatrix::new(rows, cols, pixels)?, report))
}

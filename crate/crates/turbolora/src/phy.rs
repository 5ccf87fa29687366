//! LoRa physical-layer arithmetic: symbol time, frame airtime, and
//! regional duty-cycle / dwell-time compliance.
//!
//! Airtime follows the standard Semtech SX127x formula. With the reference
//! frame (226-byte payload, SF7, 125 kHz, CR 4/5, 8 preamble symbols,
//! explicit header, CRC on) it yields 338 payload symbols and 358.656 ms
//! on air, matching the published TurboLoRa figures.

use crate::time::SimDuration;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhyError {
    #[error("spreading factor {0} outside 7..=12")]
    SpreadingFactor(u8),
    #[error("bandwidth {0} Hz not one of 125000, 250000, 500000")]
    Bandwidth(u32),
    #[error("coding rate index {0} outside 1..=4")]
    CodingRate(u8),
    #[error("duty-cycle fraction {0} outside (0, 1]")]
    DutyCycleFraction(f64),
    #[error("dwell limit must be positive")]
    DwellLimit,
    #[error("operation requires a {expected} region policy")]
    PolicyKind { expected: &'static str },
    #[error("cycle period {period_s} s shorter than airtime {airtime_s} s")]
    PeriodShorterThanAirtime { airtime_s: f64, period_s: f64 },
    #[error("airtime must be positive")]
    ZeroAirtime,
}

const VALID_BANDWIDTHS_HZ: [u32; 3] = [125_000, 250_000, 500_000];

/// Radio parameters of one over-the-air frame.
///
/// Invariants (enforced at construction): SF in 7..=12, bandwidth one of
/// 125/250/500 kHz, coding rate index in 1..=4 (meaning 4/(4+CR)). The
/// payload length is a `u8`, so the 255-byte single-transmitter limit is
/// enforced by the type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameParams {
    spreading_factor: u8,
    bandwidth_hz: u32,
    coding_rate_index: u8,
    preamble_symbols: u16,
    explicit_header: bool,
    crc_enabled: bool,
    low_datarate_optimize: bool,
    payload_len_bytes: u8,
}

impl Default for FrameParams {
    /// The reference TurboLoRa frame: 226 bytes, SF7, 125 kHz, CR 4/5,
    /// 8 preamble symbols, explicit header, CRC on, no LDRO.
    fn default() -> Self {
        FrameParams {
            spreading_factor: 7,
            bandwidth_hz: 125_000,
            coding_rate_index: 1,
            preamble_symbols: 8,
            explicit_header: true,
            crc_enabled: true,
            low_datarate_optimize: false,
            payload_len_bytes: 226,
        }
    }
}

impl FrameParams {
    pub fn new(spreading_factor: u8, bandwidth_hz: u32, coding_rate_index: u8) -> Result<Self, PhyError> {
        if !(7..=12).contains(&spreading_factor) {
            return Err(PhyError::SpreadingFactor(spreading_factor));
        }
        if !VALID_BANDWIDTHS_HZ.contains(&bandwidth_hz) {
            return Err(PhyError::Bandwidth(bandwidth_hz));
        }
        if !(1..=4).contains(&coding_rate_index) {
            return Err(PhyError::CodingRate(coding_rate_index));
        }
        Ok(FrameParams {
            spreading_factor,
            bandwidth_hz,
            coding_rate_index,
            ..FrameParams::default()
        })
    }

    pub fn with_spreading_factor(self, sf: u8) -> Result<Self, PhyError> {
        FrameParams::new(sf, self.bandwidth_hz, self.coding_rate_index).map(|p| FrameParams {
            spreading_factor: p.spreading_factor,
            ..self
        })
    }

    pub fn with_bandwidth(self, bandwidth_hz: u32) -> Result<Self, PhyError> {
        FrameParams::new(self.spreading_factor, bandwidth_hz, self.coding_rate_index)
            .map(|p| FrameParams {
                bandwidth_hz: p.bandwidth_hz,
                ..self
            })
    }

    pub fn with_coding_rate(self, coding_rate_index: u8) -> Result<Self, PhyError> {
        FrameParams::new(self.spreading_factor, self.bandwidth_hz, coding_rate_index)
            .map(|p| FrameParams {
                coding_rate_index: p.coding_rate_index,
                ..self
            })
    }

    pub fn with_payload_len(mut self, len: u8) -> Self {
        self.payload_len_bytes = len;
        self
    }

    pub fn with_preamble_symbols(mut self, n: u16) -> Self {
        self.preamble_symbols = n;
        self
    }

    pub fn with_explicit_header(mut self, on: bool) -> Self {
        self.explicit_header = on;
        self
    }

    pub fn with_crc(mut self, on: bool) -> Self {
        self.crc_enabled = on;
        self
    }

    pub fn with_low_datarate_optimize(mut self, on: bool) -> Self {
        self.low_datarate_optimize = on;
        self
    }

    pub fn spreading_factor(&self) -> u8 {
        self.spreading_factor
    }

    pub fn bandwidth_hz(&self) -> u32 {
        self.bandwidth_hz
    }

    pub fn coding_rate_index(&self) -> u8 {
        self.coding_rate_index
    }

    pub fn preamble_symbols(&self) -> u16 {
        self.preamble_symbols
    }

    pub fn explicit_header(&self) -> bool {
        self.explicit_header
    }

    pub fn crc_enabled(&self) -> bool {
        self.crc_enabled
    }

    pub fn low_datarate_optimize(&self) -> bool {
        self.low_datarate_optimize
    }

    pub fn payload_len_bytes(&self) -> u8 {
        self.payload_len_bytes
    }
}

/// Regional channel-access restriction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegionPolicy {
    /// A device may occupy a channel for at most this fraction of the time
    /// (ITU Region 1: 1 %).
    DutyCycle { fraction: f64 },
    /// One transmission may last at most this long (ITU Region 2: 400 ms).
    DwellTime { max_dwell: SimDuration },
}

impl RegionPolicy {
    /// EU 868 MHz policy: 1 % duty cycle.
    pub fn eu868() -> Self {
        RegionPolicy::DutyCycle { fraction: 0.01 }
    }

    /// US 915 MHz policy: 400 ms maximum dwell time.
    pub fn us915() -> Self {
        RegionPolicy::DwellTime {
            max_dwell: SimDuration::from_millis(400),
        }
    }

    pub fn duty_cycle(fraction: f64) -> Result<Self, PhyError> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(PhyError::DutyCycleFraction(fraction));
        }
        Ok(RegionPolicy::DutyCycle { fraction })
    }

    pub fn dwell_time(max_dwell: SimDuration) -> Result<Self, PhyError> {
        if max_dwell.is_zero() {
            return Err(PhyError::DwellLimit);
        }
        Ok(RegionPolicy::DwellTime { max_dwell })
    }
}

/// Duration of one LoRa symbol: 2^SF / bandwidth.
///
/// Exact in nanoseconds for every valid bandwidth (1e9 divides evenly by
/// 125/250/500 kHz).
pub fn symbol_time(params: &FrameParams) -> SimDuration {
    let ns_per_chip = 1_000_000_000 / params.bandwidth_hz as u64;
    SimDuration::from_nanos((1u64 << params.spreading_factor) * ns_per_chip)
}

/// Number of payload symbols after the preamble, per the Semtech formula:
///
/// n = 8 + max(ceil((8*PL - 4*SF + 28 + 16*CRC - 20*H) / (4*(SF - 2*DE))) * (CR + 4), 0)
///
/// with H = 0 for explicit header, CRC = 1 when the payload CRC is on and
/// DE = 1 when low-data-rate optimization is on.
pub fn payload_symbol_count(params: &FrameParams) -> u32 {
    let pl = params.payload_len_bytes as i64;
    let sf = params.spreading_factor as i64;
    let crc = params.crc_enabled as i64;
    let h = !params.explicit_header as i64;
    let de = params.low_datarate_optimize as i64;
    let cr = params.coding_rate_index as i64;

    let num = 8 * pl - 4 * sf + 28 + 16 * crc - 20 * h;
    let den = 4 * (sf - 2 * de);
    debug_assert!(den > 0);
    let ceil = num.div_euclid(den) + i64::from(num.rem_euclid(den) != 0);
    let coded = (ceil * (cr + 4)).max(0);
    (8 + coded) as u32
}

/// Total frame duration: (preamble_symbols + 4.25 + payload symbols) * T_sym.
///
/// Computed in quarter symbols so the result is an exact nanosecond count.
pub fn frame_airtime(params: &FrameParams) -> SimDuration {
    let t_sym_ns = symbol_time(params).as_nanos();
    debug_assert_eq!(t_sym_ns % 4, 0);
    let quarter_symbols =
        4 * params.preamble_symbols as u64 + 17 + 4 * payload_symbol_count(params) as u64;
    SimDuration::from_nanos(t_sym_ns / 4 * quarter_symbols)
}

/// Minimum silence after a transmission under a duty-cycle policy:
/// airtime * (1/fraction - 1), rounded up to the next nanosecond so the
/// resulting occupancy never exceeds the allowed fraction.
pub fn min_off_time(airtime: SimDuration, policy: &RegionPolicy) -> Result<SimDuration, PhyError> {
    match policy {
        RegionPolicy::DutyCycle { fraction } => {
            let off_ns = airtime.as_nanos() as f64 * ((1.0 - fraction) / fraction);
            Ok(SimDuration::from_nanos(off_ns.ceil() as u64))
        }
        RegionPolicy::DwellTime { .. } => Err(PhyError::PolicyKind {
            expected: "duty-cycle",
        }),
    }
}

/// Fraction of `cycle_period` occupied by `airtime`.
pub fn duty_cycle(airtime: SimDuration, cycle_period: SimDuration) -> Result<f64, PhyError> {
    if airtime.is_zero() {
        return Err(PhyError::ZeroAirtime);
    }
    if cycle_period < airtime {
        return Err(PhyError::PeriodShorterThanAirtime {
            airtime_s: airtime.as_secs_f64(),
            period_s: cycle_period.as_secs_f64(),
        });
    }
    Ok(airtime.as_nanos() as f64 / cycle_period.as_nanos() as f64)
}

/// Whether one transmission of `airtime` satisfies a dwell-time policy.
/// The boundary is inclusive: exactly the limit is compliant.
pub fn check_dwell(airtime: SimDuration, policy: &RegionPolicy) -> Result<bool, PhyError> {
    match policy {
        RegionPolicy::DwellTime { max_dwell } => Ok(airtime <= *max_dwell),
        RegionPolicy::DutyCycle { .. } => Err(PhyError::PolicyKind {
            expected: "dwell-time",
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent transcription of the payload symbol formula, evaluated
    /// in floating point. Kept deliberately separate from the integer
    /// implementation above.
    fn oracle_symbols(pl: u8, sf: u8, cr: u8, crc: bool, explicit: bool, de: bool) -> u32 {
        let num = 8.0 * pl as f64 - 4.0 * sf as f64
            + 28.0
            + 16.0 * crc as u8 as f64
            - 20.0 * (!explicit) as u8 as f64;
        let den = 4.0 * (sf as f64 - 2.0 * de as u8 as f64);
        let coded = ((num / den).ceil() * (cr as f64 + 4.0)).max(0.0);
        8 + coded as u32
    }

    fn params(pl: u8, sf: u8, cr: u8, crc: bool, explicit: bool, de: bool) -> FrameParams {
        FrameParams::new(sf, 125_000, cr)
            .unwrap()
            .with_payload_len(pl)
            .with_crc(crc)
            .with_explicit_header(explicit)
            .with_low_datarate_optimize(de)
    }

    #[test]
    fn symbol_time_reference_values() {
        // SF7 / 125 kHz: 1.024 ms (published figure rounds to 1.02 ms)
        assert_eq!(
            symbol_time(&FrameParams::default()).as_nanos(),
            1_024_000
        );
        let sf12 = FrameParams::default().with_spreading_factor(12).unwrap();
        assert_eq!(symbol_time(&sf12).as_nanos(), 32_768_000);
        let wide = FrameParams::default().with_bandwidth(250_000).unwrap();
        assert_eq!(symbol_time(&wide).as_nanos(), 512_000);
    }

    #[test]
    fn reference_frame_has_338_symbols() {
        assert_eq!(payload_symbol_count(&FrameParams::default()), 338);
    }

    #[test]
    fn empty_payload_clamps_to_eight_symbols() {
        let p = FrameParams::default().with_payload_len(0).with_crc(false);
        assert_eq!(payload_symbol_count(&p), 8);
    }

    #[test]
    fn symbol_count_sf12_ldro() {
        // Frozen from the independent formula transcription.
        assert_eq!(payload_symbol_count(&params(51, 12, 1, true, true, true)), 63);
    }

    #[test]
    fn reference_frame_airtime() {
        // (8 + 4.25 + 338) * 1.024 ms = 358.656 ms; published figure 358.7 ms
        let a = frame_airtime(&FrameParams::default());
        assert_eq!(a.as_nanos(), 358_656_000);
        assert!((a.as_millis_f64() - 358.7).abs() < 0.1);
    }

    #[test]
    fn minimum_frame_airtime() {
        // (8 + 4.25 + 8) * 1.024 ms
        let p = FrameParams::default().with_payload_len(0).with_crc(false);
        assert_eq!(frame_airtime(&p).as_nanos(), 20_736_000);
    }

    #[test]
    fn airtime_sf8_frozen_value() {
        // Frozen from the independent formula transcription: 625.152 ms.
        let p = FrameParams::default().with_spreading_factor(8).unwrap();
        assert_eq!(frame_airtime(&p).as_nanos(), 625_152_000);
    }

    #[test]
    fn oracle_equivalence_exhaustive() {
        // Full domain sweep against the independent transcription.
        for sf in 7..=12u8 {
            for cr in 1..=4u8 {
                for flags in 0..8u8 {
                    let (crc, explicit, de) =
                        (flags & 1 != 0, flags & 2 != 0, flags & 4 != 0);
                    for pl in 0..=255u8 {
                        let got = payload_symbol_count(&params(pl, sf, cr, crc, explicit, de));
                        let want = oracle_symbols(pl, sf, cr, crc, explicit, de);
                        assert_eq!(
                            got, want,
                            "PL={pl} SF={sf} CR={cr} crc={crc} explicit={explicit} de={de}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn symbol_count_quantized_in_coded_steps() {
        for cr in 1..=4u8 {
            let mut prev = payload_symbol_count(&params(0, 7, cr, true, true, false));
            for pl in 1..=255u8 {
                let next = payload_symbol_count(&params(pl, 7, cr, true, true, false));
                let step = next - prev;
                assert!(
                    step == 0 || step == (cr as u32 + 4),
                    "PL={pl} CR={cr}: step {step}"
                );
                prev = next;
            }
        }
    }

    #[test]
    fn airtime_monotonic_in_payload_and_sf() {
        for cr in 1..=4u8 {
            for flags in 0..8u8 {
                let (crc, explicit, de) = (flags & 1 != 0, flags & 2 != 0, flags & 4 != 0);
                for sf in 7..=12u8 {
                    let mut prev = frame_airtime(&params(0, sf, cr, crc, explicit, de));
                    for pl in 1..=255u8 {
                        let next = frame_airtime(&params(pl, sf, cr, crc, explicit, de));
                        assert!(next >= prev, "airtime decreased at PL={pl} SF={sf}");
                        prev = next;
                    }
                }
                for sf in 7..=11u8 {
                    for pl in [0u8, 1, 51, 128, 226, 255] {
                        let lo = frame_airtime(&params(pl, sf, cr, crc, explicit, de));
                        let hi = frame_airtime(&params(pl, sf + 1, cr, crc, explicit, de));
                        assert!(hi > lo, "airtime not increasing SF{sf}->SF{} PL={pl}", sf + 1);
                    }
                }
            }
        }
    }

    #[test]
    fn min_off_time_reference() {
        // 0.358656 s * 99 = 35.506944 s. The published 35.64 s figure
        // rounds the airtime to 360 ms first (0.36 * 99).
        let airtime = frame_airtime(&FrameParams::default());
        let off = min_off_time(airtime, &RegionPolicy::eu868()).unwrap();
        assert!((off.as_secs_f64() - 35.506944).abs() < 1e-6);
    }

    #[test]
    fn min_off_time_edge_cases() {
        let duty = RegionPolicy::eu868();
        assert_eq!(min_off_time(SimDuration::ZERO, &duty).unwrap(), SimDuration::ZERO);
        let full = RegionPolicy::duty_cycle(1.0).unwrap();
        assert_eq!(
            min_off_time(SimDuration::from_millis(100), &full).unwrap(),
            SimDuration::ZERO
        );
        assert!(matches!(
            min_off_time(SimDuration::from_millis(100), &RegionPolicy::us915()),
            Err(PhyError::PolicyKind { .. })
        ));
    }

    #[test]
    fn duty_cycle_reference() {
        // One cycle of the reference schedule: 358.656 ms on air, 36 s asleep.
        let airtime = frame_airtime(&FrameParams::default());
        let period = airtime + SimDuration::from_secs(36);
        let d = duty_cycle(airtime, period).unwrap();
        assert!((d - 0.0098644).abs() < 1e-6);
        assert!(d < 0.01);
    }

    #[test]
    fn duty_cycle_edges() {
        let s = SimDuration::from_secs(1);
        assert_eq!(duty_cycle(s, SimDuration::from_secs(100)).unwrap(), 0.01);
        assert_eq!(duty_cycle(s, s).unwrap(), 1.0);
        assert!(matches!(
            duty_cycle(s, SimDuration::from_millis(999)),
            Err(PhyError::PeriodShorterThanAirtime { .. })
        ));
        assert!(matches!(
            duty_cycle(SimDuration::ZERO, s),
            Err(PhyError::ZeroAirtime)
        ));
    }

    #[test]
    fn duty_cycle_consistent_with_min_off_time() {
        for fraction in [0.001, 0.01, 0.1, 0.33, 1.0] {
            let policy = RegionPolicy::duty_cycle(fraction).unwrap();
            for airtime_ns in [1u64, 20_736_000, 358_656_000, 2_793_472_000] {
                let a = SimDuration::from_nanos(airtime_ns);
                let off = min_off_time(a, &policy).unwrap();
                let d = duty_cycle(a, a + off).unwrap();
                assert!(
                    d <= fraction * (1.0 + 1e-12),
                    "fraction {fraction}, airtime {airtime_ns} ns: duty {d}"
                );
            }
        }
    }

    #[test]
    fn dwell_verdicts() {
        let us = RegionPolicy::us915();
        assert!(check_dwell(SimDuration::from_nanos(358_656_000), &us).unwrap());
        assert!(check_dwell(SimDuration::from_millis(400), &us).unwrap());
        assert!(!check_dwell(SimDuration::from_millis(500), &us).unwrap());
        assert!(matches!(
            check_dwell(SimDuration::from_millis(100), &RegionPolicy::eu868()),
            Err(PhyError::PolicyKind { .. })
        ));
    }

    #[test]
    fn construction_rejects_invalid_parameters() {
        assert!(matches!(
            FrameParams::new(6, 125_000, 1),
            Err(PhyError::SpreadingFactor(6))
        ));
        assert!(matches!(
            FrameParams::new(13, 125_000, 1),
            Err(PhyError::SpreadingFactor(13))
        ));
        assert!(matches!(
            FrameParams::new(7, 200_000, 1),
            Err(PhyError::Bandwidth(200_000))
        ));
        assert!(matches!(
            FrameParams::new(7, 125_000, 0),
            Err(PhyError::CodingRate(0))
        ));
        assert!(matches!(
            FrameParams::new(7, 125_000, 5),
            Err(PhyError::CodingRate(5))
        ));
        assert!(RegionPolicy::duty_cycle(0.0).is_err());
        assert!(RegionPolicy::duty_cycle(1.5).is_err());
        assert!(RegionPolicy::dwell_time(SimDuration::ZERO).is_err());
    }
}

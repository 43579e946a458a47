//! Ceiling quantization of empirical means and differential messages.

use serde::{Deserialize, Serialize};

use super::CodecError;

/// Bits of precision for a statistic backed by `pulls` samples:
/// the smallest `b` with `b >= 1 + log2(pulls) / 2`.
pub fn precision_bits(pulls: u64) -> Result<u32, CodecError> {
    if pulls == 0 {
        return Err(CodecError::ZeroPulls);
    }
    // b - 1 = smallest c with 4^c >= pulls
    let mut c = 0u32;
    while c < 32 && (1u128 << (2 * c)) < pulls as u128 {
        c += 1;
    }
    Ok(c + 1)
}

/// A value on the grid `level / 2^bits`, `level <= 2^bits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuantizedMean {
    pub level: u64,
    pub bits: u32,
    pub pulls: u64,
}

impl QuantizedMean {
    pub fn value(&self) -> f64 {
        self.level as f64 / (1u64 << self.bits) as f64
    }

    /// Level of this value on the finer grid `2^-bits`.
    pub fn level_at(&self, bits: u32) -> Result<u64, CodecError> {
        if bits < self.bits {
            return Err(CodecError::PrecisionDecrease { from: self.bits, to: bits });
        }
        Ok(self.level << (bits - self.bits))
    }
}

/// Rounds `raw` up to the grid of `precision_bits(pulls)`, capped at 1.
pub fn quantize(raw: f64, pulls: u64) -> Result<QuantizedMean, CodecError> {
    if !(0.0..=1.0).contains(&raw) {
        return Err(CodecError::OutOfRange(raw));
    }
    let bits = precision_bits(pulls)?;
    let scale = (1u64 << bits) as f64;
    let level = ((raw * scale).ceil() as u64).min(1u64 << bits);
    Ok(QuantizedMean { level, bits, pulls })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    /// Whole value, fixed width `bits + 1`, no sign bit.
    Full,
    /// Sign bit followed by the magnitude with leading zeros stripped.
    Delta,
}

/// Change of a sender's quantized mean since its previous message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaMessage {
    pub encoding: Encoding,
    pub negative: bool,
    pub magnitude: u64,
    /// Grid the magnitude lives on.
    pub bits: u32,
}

fn bit_length(x: u64) -> u32 {
    64 - x.leading_zeros()
}

impl DeltaMessage {
    /// First message for a statistic: the value itself.
    pub fn full(current: &QuantizedMean) -> Self {
        DeltaMessage { encoding: Encoding::Full, negative: false, magnitude: current.level, bits: current.bits }
    }

    /// Payload bits excluding the sign.
    pub fn payload(&self) -> Vec<bool> {
        let width = match self.encoding {
            Encoding::Full => self.bits + 1,
            Encoding::Delta => bit_length(self.magnitude),
        };
        (0..width).rev().map(|i| (self.magnitude >> i) & 1 == 1).collect()
    }

    /// Everything that goes on the wire, in transmission order.
    pub fn wire_bits(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.bits as usize + 2);
        if self.encoding == Encoding::Delta {
            out.push(self.negative);
        }
        out.extend(self.payload());
        out
    }

    /// Number of transmitted data bits.
    pub fn wire_len(&self) -> usize {
        match self.encoding {
            Encoding::Full => self.bits as usize + 1,
            Encoding::Delta => 1 + bit_length(self.magnitude) as usize,
        }
    }

    /// Parses received bits. `bits` is the grid both ends agree on.
    pub fn from_wire(wire: &[bool], encoding: Encoding, bits: u32) -> Result<Self, CodecError> {
        let max = max_wire_len(encoding, bits);
        let (negative, payload) = match encoding {
            Encoding::Full => {
                if wire.len() != max {
                    return Err(CodecError::BadLength { got: wire.len(), max });
                }
                (false, wire)
            }
            Encoding::Delta => match wire.split_first() {
                Some((&s, rest)) if wire.len() <= max => (s, rest),
                _ => return Err(CodecError::BadLength { got: wire.len(), max }),
            },
        };
        let magnitude = payload.iter().fold(0u64, |acc, &b| (acc << 1) | u64::from(b));
        if encoding == Encoding::Delta && payload.first() == Some(&false) {
            return Err(CodecError::LeadingZero);
        }
        Ok(DeltaMessage { encoding, negative, magnitude, bits })
    }

    /// Applies this message to the receiver's copy of the previous value.
    pub fn reconstruct(&self, last: Option<&QuantizedMean>, pulls: u64) -> Result<QuantizedMean, CodecError> {
        let top = 1i128 << self.bits;
        let level = match (self.encoding, last) {
            (Encoding::Full, _) => self.magnitude as i128,
            (Encoding::Delta, Some(prev)) => {
                let base = prev.level_at(self.bits)? as i128;
                if self.negative {
                    base - self.magnitude as i128
                } else {
                    base + self.magnitude as i128
                }
            }
            (Encoding::Delta, None) => return Err(CodecError::MissingReference),
        };
        if !(0..=top).contains(&level) {
            return Err(CodecError::LevelOutOfRange { level: level as i64, bits: self.bits });
        }
        Ok(QuantizedMean { level: level as u64, bits: self.bits, pulls })
    }
}

/// Longest legal data section for a message on a `bits` grid.
pub fn max_wire_len(encoding: Encoding, bits: u32) -> usize {
    match encoding {
        Encoding::Full => bits as usize + 1,
        // magnitudes reach 2^bits, which takes bits + 1 digits
        Encoding::Delta => bits as usize + 2,
    }
}

/// Differential message from `last` to `current`; `Full` when there is no
/// previous value.
pub fn make_delta(current: &QuantizedMean, last: Option<&QuantizedMean>) -> Result<DeltaMessage, CodecError> {
    let Some(last) = last else {
        return Ok(DeltaMessage::full(current));
    };
    let prev = last.level_at(current.bits)? as i128;
    let diff = current.level as i128 - prev;
    Ok(DeltaMessage {
        encoding: Encoding::Delta,
        negative: diff < 0,
        magnitude: diff.unsigned_abs() as u64,
        bits: current.bits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent reference: smallest integer not below 1 + log2(t)/2,
    /// evaluated with floating point.
    fn bits_oracle(t: u64) -> u32 {
        (1.0 + (t as f64).log2() / 2.0).ceil() as u32
    }

    #[test]
    fn precision_matches_float_formula() {
        for t in 1..5000u64 {
            assert_eq!(precision_bits(t).unwrap(), bits_oracle(t), "t={t}");
        }
        assert_eq!(precision_bits(4).unwrap(), 2);
        assert_eq!(precision_bits(16).unwrap(), 3);
        assert_eq!(precision_bits(0), Err(CodecError::ZeroPulls));
    }

    #[test]
    fn quantize_examples() {
        let q = quantize(0.8125, 16).unwrap();
        assert_eq!((q.bits, q.value()), (3, 0.875));
        let q = quantize(0.3, 4).unwrap();
        assert_eq!((q.bits, q.value()), (2, 0.5));
        let q = quantize(1.0, 4).unwrap();
        assert_eq!((q.bits, q.value()), (2, 1.0));
        assert_eq!(quantize(1.5, 4), Err(CodecError::OutOfRange(1.5)));
        assert_eq!(quantize(0.5, 0), Err(CodecError::ZeroPulls));
    }

    fn q(value: f64, bits: u32) -> QuantizedMean {
        let level = value * (1u64 << bits) as f64;
        assert_eq!(level.fract(), 0.0);
        QuantizedMean { level: level as u64, bits, pulls: 1 }
    }

    #[test]
    fn delta_examples() {
        let d = make_delta(&q(0.625, 3), Some(&q(0.25, 3))).unwrap();
        assert!(!d.negative);
        assert_eq!(d.payload(), vec![true, true]);
        assert_eq!(d.wire_len(), 3);

        let d = make_delta(&q(0.5, 3), Some(&q(0.5, 3))).unwrap();
        assert!(!d.negative);
        assert!(d.payload().is_empty());
        assert_eq!(d.wire_bits(), vec![false]);

        let d = make_delta(&q(0.25, 3), Some(&q(0.75, 3))).unwrap();
        assert!(d.negative);
        assert_eq!(d.payload(), vec![true, false, false]);
    }

    #[test]
    fn full_message_has_fixed_width() {
        let cur = quantize(0.0, 1000).unwrap();
        let d = make_delta(&cur, None).unwrap();
        assert_eq!(d.encoding, Encoding::Full);
        assert_eq!(d.wire_len(), precision_bits(1000).unwrap() as usize + 1);
        assert_eq!(d.wire_bits().len(), d.wire_len());
        let cur = quantize(1.0, 1000).unwrap();
        assert!(make_delta(&cur, None).unwrap().wire_bits()[0]);
    }

    #[test]
    fn coarser_reference_is_rescaled() {
        let last = q(0.5, 2);
        let cur = q(0.5625, 4);
        let d = make_delta(&cur, Some(&last)).unwrap();
        assert_eq!(d.magnitude, 1);
        assert_eq!(d.reconstruct(Some(&last), 1).unwrap().level, cur.level);
        assert!(make_delta(&last, Some(&cur)).is_err());
    }

    #[test]
    fn malformed_wire_is_rejected() {
        assert!(DeltaMessage::from_wire(&[], Encoding::Delta, 3).is_err());
        assert_eq!(DeltaMessage::from_wire(&[false, false, true], Encoding::Delta, 3), Err(CodecError::LeadingZero));
        assert!(DeltaMessage::from_wire(&[true; 6], Encoding::Delta, 3).is_err());
        assert!(DeltaMessage::from_wire(&[true; 3], Encoding::Full, 3).is_err());
        let over = DeltaMessage { encoding: Encoding::Delta, negative: false, magnitude: 9, bits: 3 };
        assert!(over.reconstruct(Some(&q(0.5, 3)), 1).is_err());
    }

    proptest! {
        #[test]
        fn quantize_error_is_bounded(raw in 0.0f64..=1.0, pulls in 1u64..1_000_000) {
            let v = quantize(raw, pulls).unwrap();
            let step = 1.0 / (1u64 << v.bits) as f64;
            prop_assert!(v.value() >= raw);
            prop_assert!(v.value() - raw <= step);
            prop_assert!(step <= (1.0 / pulls as f64).sqrt());
        }

        #[test]
        fn wire_round_trip(bits in 1u32..20, a in any::<u64>(), b in any::<u64>(), coarser in 0u32..3) {
            let top = 1u64 << bits;
            let cur = QuantizedMean { level: a % (top + 1), bits, pulls: 9 };
            let lb = bits.saturating_sub(coarser).max(1);
            let last = QuantizedMean { level: b % ((1u64 << lb) + 1), bits: lb, pulls: 4 };
            for reference in [None, Some(&last)] {
                let d = make_delta(&cur, reference).unwrap();
                let wire = d.wire_bits();
                prop_assert_eq!(wire.len(), d.wire_len());
                prop_assert!(wire.len() <= max_wire_len(d.encoding, bits));
                let back = DeltaMessage::from_wire(&wire, d.encoding, bits).unwrap();
                prop_assert_eq!(back, d);
                prop_assert_eq!(back.reconstruct(reference, 9).unwrap(), cur);
            }
        }
    }
}

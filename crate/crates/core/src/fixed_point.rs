//! Bit-exact fixed-point and binary arithmetic.
//!
//! Raw codes are two's-complement integers with an implied binary point:
//! `value = raw * 2^-frac`. Conversions between precisions truncate toward
//! negative infinity and then saturate to the destination range. Binary
//! values use the code `1` for `+1` and `0` for `-1`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Widest supported operand format.
pub const MAX_BITS: u32 = 32;

/// Usable accumulator width in bits (signed).
pub const ACC_BITS: u32 = 48;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("total bits {0} outside 1..={MAX_BITS}")]
    TotalBits(u32),
    #[error("fractional bits {frac} must be below total bits {total}")]
    FracBits { total: u32, frac: u32 },
    #[error("binary format cannot carry fractional bits (got {0})")]
    BinaryFrac(u32),
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("accumulator overflow: |{0}| exceeds the {ACC_BITS}-bit range")]
pub struct AccumulatorOverflow(pub i128);

/// A signed fixed-point format with at least two bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FxFormat {
    total_bits: u8,
    frac_bits: u8,
}

impl FxFormat {
    pub fn new(total_bits: u32, frac_bits: u32) -> Result<Self, FormatError> {
        if !(2..=MAX_BITS).contains(&total_bits) {
            return Err(FormatError::TotalBits(total_bits));
        }
        if frac_bits >= total_bits {
            return Err(FormatError::FracBits {
                total: total_bits,
                frac: frac_bits,
            });
        }
        Ok(Self {
            total_bits: total_bits as u8,
            frac_bits: frac_bits as u8,
        })
    }

    pub fn total_bits(&self) -> u32 {
        self.total_bits as u32
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits as u32
    }

    pub fn min_raw(&self) -> i64 {
        -(1i64 << (self.total_bits - 1))
    }

    pub fn max_raw(&self) -> i64 {
        (1i64 << (self.total_bits - 1)) - 1
    }

    pub fn contains(&self, raw: i64) -> bool {
        (self.min_raw()..=self.max_raw()).contains(&raw)
    }

    /// Clamp an arbitrary integer code into the representable range.
    pub fn saturate(&self, raw: i128) -> i32 {
        raw.clamp(self.min_raw() as i128, self.max_raw() as i128) as i32
    }

    /// Weight of one least-significant bit.
    pub fn lsb(&self) -> f64 {
        (-(self.frac_bits as i32) as f64).exp2()
    }

    pub fn decode(&self, raw: i32) -> f64 {
        raw as f64 * self.lsb()
    }
}

impl fmt::Display for FxFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "fx{}.{}", self.total_bits, self.frac_bits)
    }
}

/// Either a fixed-point format or the 1-bit binary encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Precision {
    Binary,
    Fixed(FxFormat),
}

impl Precision {
    /// A total width of one bit selects the binary encoding.
    pub fn from_bits(total_bits: u32, frac_bits: u32) -> Result<Self, FormatError> {
        if total_bits == 1 {
            if frac_bits != 0 {
                return Err(FormatError::BinaryFrac(frac_bits));
            }
            return Ok(Precision::Binary);
        }
        FxFormat::new(total_bits, frac_bits).map(Precision::Fixed)
    }

    pub fn is_binary(&self) -> bool {
        matches!(self, Precision::Binary)
    }

    pub fn total_bits(&self) -> u32 {
        match self {
            Precision::Binary => 1,
            Precision::Fixed(f) => f.total_bits(),
        }
    }

    /// Fractional bits; binary values are integers (`±1`).
    pub fn frac_bits(&self) -> u32 {
        match self {
            Precision::Binary => 0,
            Precision::Fixed(f) => f.frac_bits(),
        }
    }

    pub fn fixed(&self) -> Option<FxFormat> {
        match self {
            Precision::Binary => None,
            Precision::Fixed(f) => Some(*f),
        }
    }

    pub fn contains(&self, raw: i64) -> bool {
        match self {
            Precision::Binary => raw == 0 || raw == 1,
            Precision::Fixed(f) => f.contains(raw),
        }
    }

    /// Arithmetic value of a raw code: `±1` for binary codes.
    pub fn signed_value(&self, raw: i32) -> i64 {
        match self {
            Precision::Binary => decode_bit(raw != 0),
            Precision::Fixed(_) => raw as i64,
        }
    }

    pub fn decode(&self, raw: i32) -> f64 {
        match self {
            Precision::Binary => decode_bit(raw != 0) as f64,
            Precision::Fixed(f) => f.decode(raw),
        }
    }

    /// Bytes per element in the fixed-point payload encoding; `None` for
    /// binary (bit-packed).
    pub fn storage_bytes(&self) -> Option<usize> {
        match self {
            Precision::Binary => None,
            Precision::Fixed(f) => Some(match f.total_bits() {
                0..=8 => 1,
                9..=16 => 2,
                _ => 4,
            }),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Precision::Binary => write!(f, "binary"),
            Precision::Fixed(fx) => fx.fmt(f),
        }
    }
}

/// Code `1` means `+1`, code `0` means `-1`.
pub fn decode_bit(bit: bool) -> i64 {
    if bit {
        1
    } else {
        -1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FxValue {
    pub raw: i32,
    pub fmt: FxFormat,
}

impl FxValue {
    pub fn value(&self) -> f64 {
        self.fmt.decode(self.raw)
    }
}

/// `raw = floor(x * 2^frac)`, saturated. NaN maps to zero.
pub fn quantize_real(x: f64, fmt: FxFormat) -> FxValue {
    let scaled = (x * (fmt.frac_bits() as f64).exp2()).floor();
    let raw = if scaled.is_nan() {
        0
    } else {
        scaled.clamp(fmt.min_raw() as f64, fmt.max_raw() as f64) as i32
    };
    FxValue { raw, fmt }
}

/// Re-align a code held at `2^-src_frac` to `dst`: arithmetic shift
/// (flooring on the way down), then saturate.
pub fn rescale(raw: i64, src_frac: i32, dst: FxFormat) -> FxValue {
    let shift = src_frac - dst.frac_bits() as i32;
    let wide = raw as i128;
    let aligned = if shift >= 0 {
        wide >> shift.min(127)
    } else {
        // |raw| < 2^63 and the shift is at most 32 + ACC_BITS, so i128 holds it.
        wide << (-shift).min(64)
    };
    FxValue {
        raw: dst.saturate(aligned),
        fmt: dst,
    }
}

/// Wide signed accumulator with an implicit scale of `2^-frac`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Accumulator {
    value: i64,
    frac: i32,
}

impl Accumulator {
    pub fn new(frac: i32) -> Self {
        Self { value: 0, frac }
    }

    pub fn value(&self) -> i64 {
        self.value
    }

    pub fn frac(&self) -> i32 {
        self.frac
    }

    fn commit(&mut self, next: i128) -> Result<(), AccumulatorOverflow> {
        let limit = 1i128 << (ACC_BITS - 1);
        if next < -limit || next >= limit {
            return Err(AccumulatorOverflow(next));
        }
        self.value = next as i64;
        Ok(())
    }

    /// `acc += a * w` on fixed-point operands.
    pub fn mac(&mut self, a: FxValue, w: FxValue) -> Result<(), AccumulatorOverflow> {
        debug_assert_eq!(
            self.frac,
            (a.fmt.frac_bits() + w.fmt.frac_bits()) as i32,
            "accumulator scale must match operand scales"
        );
        self.mac_raw(a.raw as i64, w.raw as i64)
    }

    pub fn mac_raw(&mut self, a: i64, w: i64) -> Result<(), AccumulatorOverflow> {
        self.commit(self.value as i128 + a as i128 * w as i128)
    }

    /// Add a term already at the accumulator scale (bias, popcount sums,
    /// sign-controlled activations).
    pub fn add(&mut self, term: i64) -> Result<(), AccumulatorOverflow> {
        self.commit(self.value as i128 + term as i128)
    }
}

/// Pack bits LSB-first into 64-bit words.
pub fn pack_bits<I: IntoIterator<Item = bool>>(bits: I) -> Vec<u64> {
    let mut words = Vec::new();
    for (i, bit) in bits.into_iter().enumerate() {
        if i % 64 == 0 {
            words.push(0);
        }
        if bit {
            *words.last_mut().unwrap() |= 1 << (i % 64);
        }
    }
    words
}

/// Mask selecting the first `n` bits.
pub fn low_mask(n: usize) -> Vec<u64> {
    let mut words = vec![u64::MAX; n / 64];
    if !n.is_multiple_of(64) {
        words.push((1u64 << (n % 64)) - 1);
    }
    words
}

/// `±1` dot product of two packed vectors over the first `n` elements:
/// `2 * popcount(!(a ^ w) & mask(n)) - n`.
pub fn xnor_popcount_dot(a: &[u64], w: &[u64], n: usize) -> i64 {
    xnor_popcount_masked(a, w, &low_mask(n))
}

/// As [`xnor_popcount_dot`], counting only the positions set in `mask`.
/// Positions outside the mask contribute zero.
pub fn xnor_popcount_masked(a: &[u64], w: &[u64], mask: &[u64]) -> i64 {
    let mut agree = 0i64;
    let mut valid = 0i64;
    for (i, &m) in mask.iter().enumerate() {
        let x = !(a.get(i).copied().unwrap_or(0) ^ w.get(i).copied().unwrap_or(0));
        agree += (x & m).count_ones() as i64;
        valid += m.count_ones() as i64;
    }
    2 * agree - valid
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activation {
    None,
    #[serde(rename = "ReLU")]
    Relu,
    BinarySign,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::None => "None",
            Activation::Relu => "ReLU",
            Activation::BinarySign => "BinarySign",
        }
    }
}

/// Apply the output stage to a finished accumulator and return the raw
/// output code. A binary destination always uses the threshold comparison
/// (`acc >= threshold` yields `+1`); fixed destinations rescale, after
/// clamping at zero for ReLU.
pub fn apply_activation(acc: &Accumulator, act: Activation, dst: Precision, threshold: i64) -> i32 {
    match dst {
        Precision::Binary => (acc.value() >= threshold) as i32,
        Precision::Fixed(fmt) => {
            let v = match act {
                Activation::Relu => acc.value().max(0),
                _ => acc.value(),
            };
            rescale(v, acc.frac(), fmt).raw
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;
    use proptest::prelude::*;

    fn fx(t: u32, f: u32) -> FxFormat {
        FxFormat::new(t, f).unwrap()
    }

    #[test]
    fn format_validation() {
        assert!(FxFormat::new(1, 0).is_err());
        assert!(FxFormat::new(33, 0).is_err());
        assert!(FxFormat::new(8, 8).is_err());
        assert_eq!(Precision::from_bits(1, 0).unwrap(), Precision::Binary);
        assert!(Precision::from_bits(1, 1).is_err());
        let f = fx(8, 4);
        assert_eq!((f.min_raw(), f.max_raw()), (-128, 127));
        assert_eq!(fx(32, 0).max_raw(), i32::MAX as i64);
    }

    #[test]
    fn quantize_examples() {
        let q = quantize_real(10.3, fx(8, 4));
        assert_eq!(q.raw, 127);
        assert_eq!(q.value(), 7.9375);
        let q = quantize_real(0.15, fx(8, 2));
        assert_eq!((q.raw, q.value()), (0, 0.0));
        let q = quantize_real(-0.15, fx(8, 2));
        assert_eq!((q.raw, q.value()), (-1, -0.25));
        assert_eq!(quantize_real(-1e9, fx(8, 2)).raw, -128);
        assert_eq!(quantize_real(f64::NAN, fx(8, 2)).raw, 0);
    }

    #[test]
    fn rescale_examples() {
        let v = rescale(25, 4, fx(8, 2));
        assert_eq!((v.raw, v.value()), (6, 1.5));
        let v = rescale(-25, 4, fx(8, 2));
        assert_eq!((v.raw, v.value()), (-7, -1.75));
        assert_eq!(rescale(4096, 4, fx(8, 4)).raw, 127);
        assert_eq!(rescale(3, 0, fx(8, 2)).raw, 12);
        assert_eq!(rescale(-3_000, 0, fx(8, 2)).raw, -128);
    }

    #[test]
    fn mac_examples() {
        let a = FxValue {
            raw: 3,
            fmt: fx(8, 4),
        };
        let w = FxValue {
            raw: 2,
            fmt: fx(8, 4),
        };
        let mut acc = Accumulator::new(8);
        acc.mac(a, w).unwrap();
        assert_eq!(acc.value(), 6);
        assert_eq!(acc.value() as f64 * (-8f64).exp2(), 0.0234375);
        acc.mac(
            FxValue {
                raw: -3,
                fmt: fx(8, 4),
            },
            w,
        )
        .unwrap();
        assert_eq!(acc.value(), 0);
    }

    #[test]
    fn accumulator_overflow_is_reported() {
        let mut acc = Accumulator::new(0);
        acc.add((1 << 47) - 1).unwrap();
        assert!(acc.add(1).is_err());
        assert_eq!(acc.value(), (1 << 47) - 1);
        let mut acc = Accumulator::new(0);
        assert!(acc.mac_raw(i32::MIN as i64, i32::MIN as i64).is_err());
    }

    #[test]
    fn xnor_examples() {
        // a = {+1,+1,-1}, w = {+1,-1,-1}
        let a = pack_bits([true, true, false]);
        let w = pack_bits([true, false, false]);
        assert_eq!(a, vec![0b011]);
        assert_eq!(w, vec![0b001]);
        assert_eq!(xnor_popcount_dot(&a, &w, 3), 1);
        let v = vec![0xdead_beef_0123_4567u64];
        assert_eq!(xnor_popcount_dot(&v, &v, 64), 64);
        assert_eq!(xnor_popcount_dot(&[], &[], 0), 0);
    }

    #[test]
    fn xnor_mask_excludes_positions() {
        let a = pack_bits([true, false, true]);
        let w = pack_bits([true, true, true]);
        // middle position masked out: (+1)(+1) + (+1)(+1)
        assert_eq!(xnor_popcount_masked(&a, &w, &[0b101]), 2);
    }

    #[test]
    fn activation_examples() {
        let fmt = fx(8, 2);
        let mut acc = Accumulator::new(4);
        acc.add(-17).unwrap();
        assert_eq!(
            apply_activation(&acc, Activation::Relu, Precision::Fixed(fmt), 0),
            0
        );
        let mut acc = Accumulator::new(0);
        acc.add(5).unwrap();
        assert_eq!(
            apply_activation(&acc, Activation::BinarySign, Precision::Binary, 5),
            1
        );
        assert_eq!(
            apply_activation(&acc, Activation::BinarySign, Precision::Binary, 6),
            0
        );
        let mut acc = Accumulator::new(4);
        acc.add(25).unwrap();
        assert_eq!(
            apply_activation(&acc, Activation::None, Precision::Fixed(fmt), 0),
            rescale(25, 4, fmt).raw
        );
    }

    #[test]
    fn xnor_exhaustive_small() {
        // widths up to 12 are covered by the acceptance suite
        for n in 0..=8usize {
            for a in 0u64..(1 << n) {
                for w in 0u64..(1 << n) {
                    let expect: i64 = (0..n)
                        .map(|i| decode_bit(a >> i & 1 == 1) * decode_bit(w >> i & 1 == 1))
                        .sum();
                    assert_eq!(xnor_popcount_dot(&[a], &[w], n), expect);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn quantize_monotone(x in -1e4f64..1e4, y in -1e4f64..1e4, t in 2u32..=32, f in 0u32..31) {
            let fmt = fx(t, f.min(t - 1));
            let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
            prop_assert!(quantize_real(lo, fmt).raw <= quantize_real(hi, fmt).raw);
        }

        #[test]
        fn truncation_bound(x in -100f64..100.0, t in 8u32..=32, f in 0u32..8) {
            let fmt = fx(t, f);
            let lo = fmt.min_raw() as f64 * fmt.lsb();
            let hi = fmt.max_raw() as f64 * fmt.lsb();
            prop_assume!(x >= lo && x <= hi);
            let q = quantize_real(x, fmt);
            prop_assert!((q.value() - x).abs() < fmt.lsb());
            prop_assert!(q.value() <= x);
        }

        #[test]
        fn rescale_idempotent(raw in -(1i64 << 46)..(1i64 << 46), src in 0i32..40, t in 2u32..=32, f in 0u32..31) {
            let fmt = fx(t, f.min(t - 1));
            let once = rescale(raw, src, fmt);
            let twice = rescale(once.raw as i64, fmt.frac_bits() as i32, fmt);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn mac_matches_bigint(pairs in proptest::collection::vec((any::<i16>(), any::<i16>()), 0..200)) {
            let mut acc = Accumulator::new(0);
            let mut reference = BigInt::from(0);
            for (a, w) in &pairs {
                acc.mac_raw(*a as i64, *w as i64).unwrap();
                reference += BigInt::from(*a) * BigInt::from(*w);
            }
            prop_assert_eq!(BigInt::from(acc.value()), reference);
        }

        #[test]
        fn xnor_matches_pm1(bits in proptest::collection::vec((any::<bool>(), any::<bool>()), 0..256)) {
            let a = pack_bits(bits.iter().map(|p| p.0));
            let w = pack_bits(bits.iter().map(|p| p.1));
            let expect: i64 = bits.iter().map(|(x, y)| decode_bit(*x) * decode_bit(*y)).sum();
            prop_assert_eq!(xnor_popcount_dot(&a, &w, bits.len()), expect);
        }
    }
}

//! Feature-map tensors and the NNTF container.
//!
//! Elements are stored channel-first: `c` fastest, then `x`, then `y`,
//! which is also the order they travel through the pipeline streams.
//! Container layout: `"NNTF"`, `u32` version, `u32` y, x, c, `u8` total
//! bits, `u8` frac bits, then the payload encoded as for weights.

use super::codec::{read_payload, write_payload, ContainerError, Reader};
use crate::fixed_point::{quantize_real, Precision};

pub const TENSOR_MAGIC: &[u8; 4] = b"NNTF";
pub const TENSOR_VERSION: u32 = 1;

/// Raw-coded tensor in a single precision.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tensor {
    height: usize,
    width: usize,
    channels: usize,
    prec: Precision,
    data: Vec<i32>,
}

impl Tensor {
    pub fn new(
        (height, width, channels): (usize, usize, usize),
        prec: Precision,
        data: Vec<i32>,
    ) -> Result<Self, ContainerError> {
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(ContainerError::ElementCount {
                layer: 0,
                what: "tensor element",
                expected: expected as u64,
                found: data.len() as u64,
            });
        }
        super::codec::check_range(prec, &data, "tensor element")?;
        Ok(Self {
            height,
            width,
            channels,
            prec,
            data,
        })
    }

    pub fn zeros(dims: (usize, usize, usize), prec: Precision) -> Self {
        Self {
            height: dims.0,
            width: dims.1,
            channels: dims.2,
            prec,
            data: vec![0; dims.0 * dims.1 * dims.2],
        }
    }

    /// `(y, x, c)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn precision(&self) -> Precision {
        self.prec
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> i32 {
        self.data[self.index(y, x, c)]
    }

    /// Store a raw code. The caller guarantees it fits the precision.
    pub fn set(&mut self, y: usize, x: usize, c: usize, raw: i32) {
        let i = self.index(y, x, c);
        self.data[i] = raw;
    }

    pub fn decode(&self) -> RealTensor {
        RealTensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&r| self.prec.decode(r)).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(TENSOR_MAGIC);
        out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
        for d in [self.height, self.width, self.channels] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(self.prec.total_bits() as u8);
        out.push(self.prec.frac_bits() as u8);
        write_payload(self.prec, &self.data, &mut out);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        let mut r = Reader::new(bytes);
        r.magic(TENSOR_MAGIC)?;
        let version = r.u32()?;
        if version != TENSOR_VERSION {
            return Err(ContainerError::BadVersion(version));
        }
        let height = r.u32()? as usize;
        let width = r.u32()? as usize;
        let channels = r.u32()? as usize;
        let total = r.u8()? as u32;
        let frac = r.u8()? as u32;
        let prec =
            Precision::from_bits(total, frac).map_err(|e| ContainerError::Format(e.to_string()))?;
        let data = read_payload(&mut r, prec, height * width * channels, "tensor element")?;
        r.finish()?;
        Ok(Self {
            height,
            width,
            channels,
            prec,
            data,
        })
    }
}

/// Real-valued tensor in the same element order as [`Tensor`].
#[derive(Debug, Clone, PartialEq)]
pub struct RealTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl RealTensor {
    pub fn zeros((height, width, channels): (usize, usize, usize)) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(y, x, c)]
    }

    /// Quantize into `prec`: binary takes the sign (zero maps to `+1`),
    /// fixed-point truncates and saturates.
    pub fn quantize(&self, prec: Precision) -> Tensor {
        let data = self
            .data
            .iter()
            .map(|&v| match prec {
                Precision::Binary => (v >= 0.0) as i32,
                Precision::Fixed(f) => quantize_real(v, f).raw,
            })
            .collect();
        Tensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            prec,
            data,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixed_point::FxFormat;
    use proptest::prelude::*;

    #[test]
    fn channel_first_index() {
        let t = Tensor::new((2, 2, 2), Precision::Binary, vec![0, 1, 1, 0, 0, 0, 1, 1]).unwrap();
        assert_eq!(t.index(0, 1, 0), 2);
        assert_eq!(t.index(1, 0, 1), 5);
        assert_eq!(t.get(1, 1, 1), 1);
    }

    #[test]
    fn rejects_corruption() {
        let fmt = Precision::Fixed(FxFormat::new(12, 3).unwrap());
        let t = Tensor::new((1, 2, 3), fmt, vec![-2048, 2047, 0, 1, -1, 7]).unwrap();
        let bytes = t.to_bytes();
        assert_eq!(bytes.len(), 4 + 4 + 12 + 2 + 12);
        assert_eq!(Tensor::from_bytes(&bytes).unwrap(), t);
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(
            Tensor::from_bytes(&bad),
            Err(ContainerError::BadMagic { .. })
        ));
        assert!(matches!(
            Tensor::from_bytes(&bytes[..bytes.len() - 1]),
            Err(ContainerError::Truncated { .. })
        ));
        let mut bad = bytes.clone();
        bad[20] = 40;
        assert!(matches!(
            Tensor::from_bytes(&bad),
            Err(ContainerError::Format(_))
        ));
    }

    proptest! {
        #[test]
        fn container_round_trip(
            dims in (1usize..5, 1usize..5, 1usize..5),
            bits in prop_oneof![Just(1u32), 2u32..=32],
            seed in any::<u64>(),
        ) {
            let prec = Precision::from_bits(bits, if bits > 1 { bits / 2 } else { 0 }).unwrap();
            let n = dims.0 * dims.1 * dims.2;
            let data: Vec<i32> = (0..n as u64)
                .map(|i| {
                    let h = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i * 0x1234_5677);
                    match prec {
                        Precision::Binary => (h >> 7 & 1) as i32,
                        Precision::Fixed(f) => {
                            let span = (f.max_raw() - f.min_raw() + 1) as u64;
                            (f.min_raw() + (h % span) as i64) as i32
                        }
                    }
                })
                .collect();
            let t = Tensor::new(dims, prec, data).unwrap();
            prop_assert_eq!(Tensor::from_bytes(&t.to_bytes()).unwrap(), t);
        }
    }
}

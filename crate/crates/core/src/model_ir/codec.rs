//! Little-endian byte helpers shared by the parameter and tensor containers.

use thiserror::Error;

use crate::fixed_point::Precision;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ContainerError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported version {0}")]
    BadVersion(u32),
    #[error("layer count mismatch: graph has {expected}, container has {found}")]
    LayerCount { expected: usize, found: usize },
    #[error("layer {layer}: {what} count mismatch: expected {expected}, found {found}")]
    ElementCount {
        layer: usize,
        what: &'static str,
        expected: u64,
        found: u64,
    },
    #[error("layer {layer}: flags {flags:#04x} disagree with the architecture")]
    Flags { layer: usize, flags: u8 },
    #[error("truncated input: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("{what} {index}: raw code {raw} not representable in {fmt}")]
    RawOutOfRange {
        what: String,
        index: usize,
        raw: i64,
        fmt: Precision,
    },
    #[error("invalid tensor format: {0}")]
    Format(String),
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    Dims {
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(ContainerError::Truncated {
                offset: self.pos,
                needed: n,
            }),
        }
    }

    pub fn u8(&mut self) -> Result<u8, ContainerError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, ContainerError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn i32(&mut self) -> Result<i32, ContainerError> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<(), ContainerError> {
        let found = self.take(4).map_err(|_| ContainerError::BadMagic {
            expected: String::from_utf8_lossy(expected).into_owned(),
            found: String::from_utf8_lossy(&self.bytes[self.pos..]).into_owned(),
        })?;
        if found != expected {
            return Err(ContainerError::BadMagic {
                expected: String::from_utf8_lossy(expected).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<(), ContainerError> {
        match self.bytes.len() - self.pos {
            0 => Ok(()),
            n => Err(ContainerError::TrailingBytes(n)),
        }
    }
}

/// Bytes occupied by `count` elements of `prec`.
pub(crate) fn payload_len(prec: Precision, count: usize) -> usize {
    match prec.storage_bytes() {
        None => count.div_ceil(8),
        Some(b) => count * b,
    }
}

/// Append raw codes: binary packed LSB-first and padded to a byte,
/// fixed-point as sign-extended little-endian integers of 1, 2 or 4 bytes.
pub(crate) fn write_payload(prec: Precision, raws: &[i32], out: &mut Vec<u8>) {
    match prec.storage_bytes() {
        None => {
            for chunk in raws.chunks(8) {
                let byte = chunk
                    .iter()
                    .enumerate()
                    .fold(0u8, |b, (i, &r)| b | (((r != 0) as u8) << i));
                out.push(byte);
            }
        }
        Some(1) => out.extend(raws.iter().map(|&r| r as i8 as u8)),
        Some(2) => raws
            .iter()
            .for_each(|&r| out.extend_from_slice(&(r as i16).to_le_bytes())),
        Some(_) => raws
            .iter()
            .for_each(|&r| out.extend_from_slice(&r.to_le_bytes())),
    }
}

pub(crate) fn read_payload(
    reader: &mut Reader<'_>,
    prec: Precision,
    count: usize,
    what: &str,
) -> Result<Vec<i32>, ContainerError> {
    let bytes = reader.take(payload_len(prec, count))?;
    let raws: Vec<i32> = match prec.storage_bytes() {
        None => (0..count)
            .map(|i| ((bytes[i / 8] >> (i % 8)) & 1) as i32)
            .collect(),
        Some(1) => bytes.iter().map(|&b| b as i8 as i32).collect(),
        Some(2) => bytes
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as i32)
            .collect(),
        Some(_) => bytes
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    check_range(prec, &raws, what)?;
    Ok(raws)
}

pub(crate) fn check_range(prec: Precision, raws: &[i32], what: &str) -> Result<(), ContainerError> {
    match raws.iter().position(|&r| !prec.contains(r as i64)) {
        None => Ok(()),
        Some(index) => Err(ContainerError::RawOutOfRange {
            what: what.to_string(),
            index,
            raw: raws[index] as i64,
            fmt: prec,
        }),
    }
}

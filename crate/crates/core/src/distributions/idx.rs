//! IDX container: `0x00 0x00 type ndim`, `ndim` big-endian u32 dimensions,
//! then the payload. Only the unsigned-byte type (0x08) is supported.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{write_atomic, Matrix};

const UBYTE: u8 = 0x08;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxFile {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Decoded contents of an IDX file.
#[derive(Clone, Debug, PartialEq)]
pub enum IdxData {
    /// `count x (rows * cols)` pixels scaled to `[0, 1]`.
    Images { rows: usize, cols: usize, pixels: Matrix },
    Labels(Vec<u8>),
}

impl IdxFile {
    pub fn new(dims: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 255 {
            return Err(Error::Validation(format!("IDX needs 1..=255 dimensions, got {}", dims.len())));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Validation(format!("IDX dims {dims:?} need {n} bytes, got {}", data.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn magic(&self) -> u32 {
        ((UBYTE as u32) << 8) | self.dims.len() as u32
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let fmt = |offset: usize, reason: String| Error::Format { offset, reason };
        if bytes.len() < 4 {
            return Err(fmt(0, format!("truncated header: {} bytes", bytes.len())));
        }
        if bytes[0] != 0 || bytes[1] != 0 || bytes[2] != UBYTE {
            return Err(fmt(
                0,
                format!("bad magic {:#010x}", u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])),
            ));
        }
        let ndim = bytes[3] as usize;
        if ndim == 0 {
            return Err(fmt(3, "zero dimensions".into()));
        }
        let header = 4 + 4 * ndim;
        if bytes.len() < header {
            return Err(fmt(bytes.len(), format!("truncated header: need {header} bytes")));
        }
        let dims: Vec<usize> = (0..ndim)
            .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize)
            .collect();
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| fmt(4, "dimension product overflows".into()))?;
        let have = bytes.len() - header;
        if have < n {
            return Err(fmt(bytes.len(), format!("truncated payload: need {n} bytes, have {have}")));
        }
        if have > n {
            return Err(fmt(header + n, format!("{} trailing bytes", have - n)));
        }
        Ok(Self {
            dims,
            data: bytes[header..].to_vec(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + self.data.len());
        out.extend_from_slice(&[0, 0, UBYTE, self.dims.len() as u8]);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        out.extend_from_slice(&self.data);
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn decode(&self) -> Result<IdxData> {
        match self.dims.as_slice() {
            &[_] => Ok(IdxData::Labels(self.data.clone())),
            &[count, rows, cols] => {
                let pixels = self.data.iter().map(|&b| b as f64 / 255.0).collect();
                Ok(IdxData::Images {
                    rows,
                    cols,
                    pixels: Matrix::from_vec(count, rows * cols, pixels)?,
                })
            }
            d => Err(Error::Format {
                offset: 3,
                reason: format!("expected images (3 dims) or labels (1 dim), got {} dims", d.len()),
            }),
        }
    }
}

/// Reads an image (`0x00000803`) or label (`0x00000801`) file.
pub fn load_idx(path: &Path) -> Result<IdxData> {
    IdxFile::parse(&fs::read(path)?)?.decode()
}

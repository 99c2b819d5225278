//! The FTNS tensor file format.
//!
//! Layout (all integers little-endian):
//!
//! | bytes        | field                         |
//! |--------------|-------------------------------|
//! | 4            | magic `FTNS`                  |
//! | 1            | version (1)                   |
//! | 1            | dtype (0 = f32)               |
//! | 1            | ndim (1..=4)                  |
//! | 4 × ndim     | dims, u32 each, all > 0       |
//! | 4 × ∏dims    | f32 payload, row-major        |

use std::fs;
use std::path::Path;

use inkspot_core::{Grid, Latent};
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"FTNS";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 0;
pub const MAX_NDIM: usize = 4;

/// Every way a byte buffer can fail to be a tensor file.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("bad magic {0:?}, expected \"FTNS\"")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("ndim {0} outside 1..=4")]
    BadRank(u8),
    #[error("dimension {axis} is zero")]
    ZeroDim { axis: usize },
    #[error("header truncated: need {needed} bytes, have {found}")]
    TruncatedHeader { needed: usize, found: usize },
    #[error("payload truncated: need {expected} bytes, have {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("{extra} trailing bytes after payload")]
    TrailingBytes { extra: usize },
    #[error("element count overflows")]
    Overflow,
    #[error("expected {expected}-D tensor, found dims {found:?}")]
    WrongRank { expected: usize, found: Vec<usize> },
}

/// A dense row-major f32 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self, FormatError> {
        check_dims(&dims)?;
        let n = element_count(&dims)?;
        if data.len() != n {
            return Err(FormatError::TruncatedPayload {
                expected: 4 * n,
                found: 4 * data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn into_grid(self) -> Result<Grid, FormatError> {
        match self.dims[..] {
            [h, w] => Ok(Grid::new(h, w, self.data).expect("dims checked")),
            _ => Err(FormatError::WrongRank {
                expected: 2,
                found: self.dims,
            }),
        }
    }

    pub fn into_latent(self) -> Result<Latent, FormatError> {
        match self.dims[..] {
            [c, h, w] => Ok(Latent::new(c, h, w, self.data).expect("dims checked")),
            _ => Err(FormatError::WrongRank {
                expected: 3,
                found: self.dims,
            }),
        }
    }
}

impl From<&Grid> for Tensor {
    fn from(g: &Grid) -> Self {
        Self {
            dims: vec![g.height(), g.width()],
            data: g.as_slice().to_vec(),
        }
    }
}

impl From<&Latent> for Tensor {
    fn from(z: &Latent) -> Self {
        let (c, h, w) = z.shape();
        Self {
            dims: vec![c, h, w],
            data: z.as_slice().to_vec(),
        }
    }
}

fn check_dims(dims: &[usize]) -> Result<(), FormatError> {
    if dims.is_empty() || dims.len() > MAX_NDIM {
        return Err(FormatError::BadRank(dims.len().min(255) as u8));
    }
    for (axis, &d) in dims.iter().enumerate() {
        if d == 0 {
            return Err(FormatError::ZeroDim { axis });
        }
        if u32::try_from(d).is_err() {
            return Err(FormatError::Overflow);
        }
    }
    Ok(())
}

fn element_count(dims: &[usize]) -> Result<usize, FormatError> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|n| n.checked_mul(4).is_some())
        .ok_or(FormatError::Overflow)
}

pub fn header_len(ndim: usize) -> usize {
    7 + 4 * ndim
}

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(header_len(t.dims.len()) + 4 * t.data.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&[VERSION, DTYPE_F32, t.dims.len() as u8]);
    for &d in &t.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Tensor, FormatError> {
    let truncated = |needed| FormatError::TruncatedHeader {
        needed,
        found: bytes.len(),
    };
    if bytes.len() < 7 {
        // Judge the magic on what is there before blaming length.
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(FormatError::BadMagic(bytes[..4].try_into().unwrap()));
        }
        return Err(truncated(7));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    if bytes[4] != VERSION {
        return Err(FormatError::UnsupportedVersion(bytes[4]));
    }
    if bytes[5] != DTYPE_F32 {
        return Err(FormatError::UnsupportedDtype(bytes[5]));
    }
    let ndim = bytes[6];
    if !(1..=MAX_NDIM as u8).contains(&ndim) {
        return Err(FormatError::BadRank(ndim));
    }
    let hlen = header_len(ndim as usize);
    if bytes.len() < hlen {
        return Err(truncated(hlen));
    }
    let dims: Vec<usize> = bytes[7..hlen]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    check_dims(&dims)?;
    let n = element_count(&dims)?;
    let payload = &bytes[hlen..];
    let expected = 4 * n;
    if payload.len() < expected {
        return Err(FormatError::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(FormatError::TrailingBytes {
            extra: payload.len() - expected,
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Tensor { dims, data })
}

/// I/O or format failure tied to a path.
#[derive(Debug, Error)]
pub enum TensorIoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Format {
        path: String,
        #[source]
        source: FormatError,
    },
}

pub fn read_tensor(path: &Path) -> Result<Tensor, TensorIoError> {
    let bytes = fs::read(path).map_err(|source| TensorIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes).map_err(|source| TensorIoError::Format {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<(), TensorIoError> {
    fs::write(path, encode(t)).map_err(|source| TensorIoError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_grid(path: &Path) -> Result<Grid, TensorIoError> {
    read_tensor(path)?
        .into_grid()
        .map_err(|source| TensorIoError::Format {
            path: path.display().to_string(),
            source,
        })
}

pub fn read_latent(path: &Path) -> Result<Latent, TensorIoError> {
    read_tensor(path)?
        .into_latent()
        .map_err(|source| TensorIoError::Format {
            path: path.display().to_string(),
            source,
        })
}

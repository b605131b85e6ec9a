//! Self-describing binary tensor files.
//!
//! Layout, all integers little-endian:
//!
//! | offset    | size      | field                                         |
//! |-----------|-----------|-----------------------------------------------|
//! | 0         | 4         | magic `b"MTSR"`                               |
//! | 4         | 1         | format version, `1`                           |
//! | 5         | 1         | dtype: `1` = f32, `2` = i32, `3` = f64        |
//! | 6         | 2         | `ndim` as u16, 1..=8                          |
//! | 8         | 8 * ndim  | dimensions as u64                             |
//! | 8+8*ndim  | ...       | payload, row-major, `product(shape)` elements |
//!
//! Feature maps are stored as f32 `[C, H, W]`, label maps as i32 `[H, W]`,
//! projection matrices as f64 `[C, C]` and affinity pairs as i32 `[N, 2]`.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::affinity::AffinityMatrix;
use crate::error::{MastError, Result};
use crate::feature::FeatureMap;

pub const MAGIC: &[u8; 4] = b"MTSR";
pub const VERSION: u8 = 1;
pub const MAX_NDIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    I32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::I32 => 2,
            DType::F64 => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(DType::F32),
            2 => Ok(DType::I32),
            3 => Ok(DType::F64),
            other => Err(MastError::UnsupportedDtype(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "float32",
            DType::I32 => "int32",
            DType::F64 => "float64",
        }
    }
}

/// Payload held in memory: floats are promoted to f64.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    Float(Vec<f64>),
    Int(Vec<i32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dtype: DType,
    shape: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn new(dtype: DType, shape: Vec<usize>, data: TensorData) -> Result<Self> {
        if shape.is_empty() {
            return Err(MastError::EmptyShape);
        }
        if shape.len() > MAX_NDIM {
            return Err(MastError::BadHeader(format!(
                "{} dimensions exceed {MAX_NDIM}",
                shape.len()
            )));
        }
        let count = element_count(&shape)?;
        let len = match (&data, dtype) {
            (TensorData::Float(v), DType::F32 | DType::F64) => v.len(),
            (TensorData::Int(v), DType::I32) => v.len(),
            _ => {
                return Err(MastError::InvalidConfig(format!(
                    "payload kind does not match dtype {}",
                    dtype.name()
                )))
            }
        };
        if len != count {
            return Err(MastError::ShapeMismatch(format!(
                "shape {shape:?} needs {count} elements, payload has {len}"
            )));
        }
        Ok(Self { dtype, shape, data })
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn from_feature_map(f: &FeatureMap) -> Self {
        Self {
            dtype: DType::F32,
            shape: vec![f.channels(), f.height(), f.width()],
            data: TensorData::Float(f.to_chw()),
        }
    }

    pub fn from_labels(height: usize, width: usize, labels: &[i32]) -> Result<Self> {
        Self::new(
            DType::I32,
            vec![height, width],
            TensorData::Int(labels.to_vec()),
        )
    }

    /// Stores a dense matrix row-major as f64.
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self {
            dtype: DType::F64,
            shape: vec![m.nrows(), m.ncols()],
            data: TensorData::Float(m.transpose().as_slice().to_vec()),
        }
    }

    pub fn from_affinity(a: &AffinityMatrix) -> Result<Self> {
        let mut flat = Vec::with_capacity(2 * a.pair_count());
        for &(i, j) in a.entries() {
            flat.push(to_i32(i)?);
            flat.push(to_i32(j)?);
        }
        Self::new(DType::I32, vec![a.pair_count(), 2], TensorData::Int(flat))
    }

    fn floats(&self) -> Result<&[f64]> {
        match &self.data {
            TensorData::Float(v) => Ok(v),
            TensorData::Int(_) => Err(MastError::UnsupportedDtype(self.dtype.code())),
        }
    }

    fn ints(&self) -> Result<&[i32]> {
        match &self.data {
            TensorData::Int(v) => Ok(v),
            TensorData::Float(_) => Err(MastError::UnsupportedDtype(self.dtype.code())),
        }
    }

    fn expect_rank(&self, rank: usize, what: &str) -> Result<()> {
        if self.shape.len() != rank {
            return Err(MastError::ShapeMismatch(format!(
                "{what} must have {rank} dimensions, found shape {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    /// `[C, H, W]` float tensor to a feature map with column index `y * W + x`.
    pub fn to_feature_map(&self) -> Result<FeatureMap> {
        self.expect_rank(3, "feature tensor")?;
        let (c, h, w) = (self.shape[0], self.shape[1], self.shape[2]);
        FeatureMap::from_chw(c, h, w, self.floats()?)
    }

    /// `[H, W]` int tensor to `(height, width, labels)`.
    pub fn to_labels(&self) -> Result<(usize, usize, Vec<i32>)> {
        self.expect_rank(2, "label map")?;
        Ok((self.shape[0], self.shape[1], self.ints()?.to_vec()))
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        self.expect_rank(2, "matrix")?;
        Ok(DMatrix::from_row_slice(
            self.shape[0],
            self.shape[1],
            self.floats()?,
        ))
    }

    pub fn to_affinity(&self, n_content: usize, n_style: usize) -> Result<AffinityMatrix> {
        self.expect_rank(2, "pair list")?;
        if self.shape[1] != 2 {
            return Err(MastError::ShapeMismatch(format!(
                "pair list must be [N, 2], found {:?}",
                self.shape
            )));
        }
        let ints = self.ints()?;
        let mut pairs = Vec::with_capacity(self.shape[0]);
        for p in ints.chunks_exact(2) {
            if p[0] < 0 || p[1] < 0 {
                return Err(MastError::ShapeMismatch(format!(
                    "negative pair index {p:?}"
                )));
            }
            pairs.push((p[0] as usize, p[1] as usize));
        }
        AffinityMatrix::new(n_content, n_style, pairs)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let count = element_count(&self.shape)?;
        let mut out = Vec::with_capacity(8 + 8 * self.shape.len() + count * self.dtype.size());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.dtype.code());
        out.extend_from_slice(&(self.shape.len() as u16).to_le_bytes());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match (&self.data, self.dtype) {
            (TensorData::Float(v), DType::F32) => {
                for (idx, &x) in v.iter().enumerate() {
                    // `as` rounds to nearest, ties to even.
                    let y = x as f32;
                    if !y.is_finite() {
                        return Err(MastError::NonFinite(format!(
                            "element {idx} ({x}) as float32"
                        )));
                    }
                    out.extend_from_slice(&y.to_le_bytes());
                }
            }
            (TensorData::Float(v), DType::F64) => {
                for (idx, &x) in v.iter().enumerate() {
                    if !x.is_finite() {
                        return Err(MastError::NonFinite(format!("element {idx}")));
                    }
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            (TensorData::Int(v), DType::I32) => {
                for &x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            _ => unreachable!("checked in Tensor::new"),
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(MastError::BadHeader(format!(
                "{} bytes is shorter than the header",
                bytes.len()
            )));
        }
        if &bytes[0..4] != MAGIC {
            return Err(MastError::BadHeader("missing magic".into()));
        }
        if bytes[4] != VERSION {
            return Err(MastError::BadHeader(format!(
                "unknown version {}",
                bytes[4]
            )));
        }
        let dtype = DType::from_code(bytes[5])?;
        let ndim = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
        if ndim == 0 {
            return Err(MastError::EmptyShape);
        }
        if ndim > MAX_NDIM {
            return Err(MastError::BadHeader(format!(
                "{ndim} dimensions exceed {MAX_NDIM}"
            )));
        }
        let header_len = 8 + 8 * ndim;
        if bytes.len() < header_len {
            return Err(MastError::BadHeader("dimension list is truncated".into()));
        }
        let shape = bytes[8..header_len]
            .chunks_exact(8)
            .map(|c| {
                let d = u64::from_le_bytes(c.try_into().expect("8-byte chunk"));
                usize::try_from(d)
                    .map_err(|_| MastError::BadHeader(format!("dimension {d} too large")))
            })
            .collect::<Result<Vec<_>>>()?;
        let count = element_count(&shape)?;
        let expected = count
            .checked_mul(dtype.size())
            .ok_or_else(|| MastError::BadHeader("payload size overflows".into()))?;
        let payload = &bytes[header_len..];
        if payload.len() < expected {
            return Err(MastError::TruncatedPayload {
                expected,
                found: payload.len(),
            });
        }
        if payload.len() > expected {
            return Err(MastError::BadHeader(format!(
                "{} trailing bytes after payload",
                payload.len() - expected
            )));
        }
        let data = match dtype {
            DType::F32 => TensorData::Float(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect(),
            ),
            DType::F64 => TensorData::Float(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            ),
            DType::I32 => TensorData::Int(
                payload
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            ),
        };
        Ok(Self { dtype, shape, data })
    }
}

fn element_count(shape: &[usize]) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| MastError::BadHeader(format!("shape {shape:?} overflows")))
}

fn to_i32(x: usize) -> Result<i32> {
    i32::try_from(x).map_err(|_| MastError::ShapeMismatch(format!("index {x} exceeds int32")))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| MastError::io(path, e))?;
    Tensor::decode(&bytes)
}

pub fn write_tensor(tensor: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = tensor.encode()?;
    fs::write(path, bytes).map_err(|e| MastError::io(path, e))
}

pub fn read_feature_map(path: impl AsRef<Path>) -> Result<FeatureMap> {
    read_tensor(path)?.to_feature_map()
}

pub fn write_feature_map(f: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    write_tensor(&Tensor::from_feature_map(f), path)
}

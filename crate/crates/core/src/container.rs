//! Self-describing binary container for dense, slided, compressed and
//! quantized-lifted tensors.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "SLSP"
//!      4     2  version (1)
//!      6     1  kind    0=dense 1=slided 2=compressed 3=quantized-lifted
//!      7     1  dtype   0=int8 1=int32 2=fp32 3=fp64 4=fp8e4m3
//!      8     8  pattern z, l, hw_m, hw_n as u16 (zeros for dense)
//!     16    16  shape   rows, cols as u64
//!     32     …  sections, each a u64 byte length followed by the bytes
//!    end     4  CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! All integers are little-endian. `cols` is the column count for dense and
//! slided tensors, windows per row for compressed ones and lifted codes per
//! row for quantized-lifted ones. Sections are: values; then metadata for
//! compressed tensors (bit-packed position codes); then scales for
//! quantized-lifted tensors (one fp32 per row). Quantized-lifted values are
//! the packed 32-bit words.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::activation::{QuantFormat, QuantizedLiftedActivation};
use crate::element::{DType, Element, Matrix};
use crate::error::Error as CoreError;
use crate::packer::SlidedMatrix;
use crate::pattern::{SparsityPattern, WindowPlan};
use crate::sparse::CompressedSparseMatrix;

pub const MAGIC: [u8; 4] = *b"SLSP";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a container (bad magic)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown tensor kind {0}")]
    UnknownKind(u8),
    #[error("unknown dtype {0}")]
    UnknownDtype(u8),
    #[error("container is truncated")]
    Truncated,
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("inconsistent container: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

type Result<T> = std::result::Result<T, ContainerError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Kind {
    Dense = 0,
    Slided = 1,
    Compressed = 2,
    QuantizedLifted = 3,
}

impl Kind {
    fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Kind::Dense,
            1 => Kind::Slided,
            2 => Kind::Compressed,
            3 => Kind::QuantizedLifted,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Dense => "dense",
            Kind::Slided => "slided",
            Kind::Compressed => "compressed",
            Kind::QuantizedLifted => "quantized-lifted",
        }
    }
}

/// Raw container: header fields plus undecoded sections.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Container {
    pub kind: Kind,
    pub dtype: DType,
    pub pattern: [u16; 4],
    pub shape: (u64, u64),
    pub sections: Vec<Vec<u8>>,
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let body: usize = self.sections.iter().map(|s| 8 + s.len()).sum();
        let mut out = Vec::with_capacity(HEADER_LEN + body + 4);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.kind as u8);
        out.push(self.dtype.code());
        for v in self.pattern {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.shape.0.to_le_bytes());
        out.extend_from_slice(&self.shape.1.to_le_bytes());
        for s in &self.sections {
            out.extend_from_slice(&(s.len() as u64).to_le_bytes());
            out.extend_from_slice(s);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN + 4 {
            return Err(if bytes.len() >= 4 && bytes[..4] != MAGIC { ContainerError::BadMagic } else { ContainerError::Truncated });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(ContainerError::ChecksumMismatch { stored, computed });
        }
        if body[..4] != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let u16_at = |o: usize| u16::from_le_bytes([body[o], body[o + 1]]);
        let u64_at = |o: usize| u64::from_le_bytes(body[o..o + 8].try_into().unwrap());
        let version = u16_at(4);
        if version != VERSION {
            return Err(ContainerError::UnsupportedVersion(version));
        }
        let kind = Kind::from_code(body[6]).ok_or(ContainerError::UnknownKind(body[6]))?;
        let dtype = DType::from_code(body[7]).ok_or(ContainerError::UnknownDtype(body[7]))?;
        let pattern = [u16_at(8), u16_at(10), u16_at(12), u16_at(14)];
        let shape = (u64_at(16), u64_at(24));
        let mut sections = Vec::new();
        let mut at = HEADER_LEN;
        while at < body.len() {
            if body.len() - at < 8 {
                return Err(ContainerError::Truncated);
            }
            let len = u64_at(at);
            at += 8;
            if (body.len() - at) as u64 > u64::MAX || len > (body.len() - at) as u64 {
                return Err(ContainerError::Truncated);
            }
            let len = len as usize;
            sections.push(body[at..at + len].to_vec());
            at += len;
        }
        Ok(Container { kind, dtype, pattern, shape, sections })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnyMatrix {
    I8(Matrix<i8>),
    I32(Matrix<i32>),
    F32(Matrix<f32>),
    F64(Matrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnySlided {
    I8(SlidedMatrix<i8>),
    I32(SlidedMatrix<i32>),
    F32(SlidedMatrix<f32>),
    F64(SlidedMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnyCompressed {
    I8(CompressedSparseMatrix<i8>),
    I32(CompressedSparseMatrix<i32>),
    F32(CompressedSparseMatrix<f32>),
    F64(CompressedSparseMatrix<f64>),
}

/// Applies `$body` to the matrix held by any variant of a typed enum.
#[macro_export]
macro_rules! dispatch {
    ($e:expr, $enum:ident, $m:ident => $body:expr) => {
        match $e {
            $crate::container::$enum::I8($m) => $body,
            $crate::container::$enum::I32($m) => $body,
            $crate::container::$enum::F32($m) => $body,
            $crate::container::$enum::F64($m) => $body,
        }
    };
}

macro_rules! typed_from {
    ($enum:ident, $inner:ident) => {
        impl From<$inner<i8>> for $enum {
            fn from(m: $inner<i8>) -> Self {
                $enum::I8(m)
            }
        }
        impl From<$inner<i32>> for $enum {
            fn from(m: $inner<i32>) -> Self {
                $enum::I32(m)
            }
        }
        impl From<$inner<f32>> for $enum {
            fn from(m: $inner<f32>) -> Self {
                $enum::F32(m)
            }
        }
        impl From<$inner<f64>> for $enum {
            fn from(m: $inner<f64>) -> Self {
                $enum::F64(m)
            }
        }
    };
}

typed_from!(AnyMatrix, Matrix);
typed_from!(AnySlided, SlidedMatrix);
typed_from!(AnyCompressed, CompressedSparseMatrix);

impl AnyMatrix {
    pub fn dtype(&self) -> DType {
        match self {
            AnyMatrix::I8(_) => DType::Int8,
            AnyMatrix::I32(_) => DType::Int32,
            AnyMatrix::F32(_) => DType::Fp32,
            AnyMatrix::F64(_) => DType::Fp64,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        dispatch!(self, AnyMatrix, m => m.shape())
    }
}

impl AnySlided {
    pub fn dtype(&self) -> DType {
        match self {
            AnySlided::I8(_) => DType::Int8,
            AnySlided::I32(_) => DType::Int32,
            AnySlided::F32(_) => DType::Fp32,
            AnySlided::F64(_) => DType::Fp64,
        }
    }

    pub fn pattern(&self) -> SparsityPattern {
        *dispatch!(self, AnySlided, m => m.pattern())
    }
}

impl AnyCompressed {
    pub fn dtype(&self) -> DType {
        match self {
            AnyCompressed::I8(_) => DType::Int8,
            AnyCompressed::I32(_) => DType::Int32,
            AnyCompressed::F32(_) => DType::Fp32,
            AnyCompressed::F64(_) => DType::Fp64,
        }
    }

    pub fn pattern(&self) -> SparsityPattern {
        *dispatch!(self, AnyCompressed, m => m.pattern())
    }
}

/// Decoded container contents.
#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    Dense(AnyMatrix),
    Slided(AnySlided),
    Compressed(AnyCompressed),
    QuantizedLifted(QuantizedLiftedActivation),
}

impl Tensor {
    pub fn kind(&self) -> Kind {
        match self {
            Tensor::Dense(_) => Kind::Dense,
            Tensor::Slided(_) => Kind::Slided,
            Tensor::Compressed(_) => Kind::Compressed,
            Tensor::QuantizedLifted(_) => Kind::QuantizedLifted,
        }
    }

    pub fn to_container(&self) -> Result<Container> {
        Ok(match self {
            Tensor::Dense(m) => {
                let (dtype, (rows, cols)) = (m.dtype(), m.shape());
                let values = dispatch!(m, AnyMatrix, m => encode_values(m.data()));
                Container { kind: Kind::Dense, dtype, pattern: [0; 4], shape: (rows as u64, cols as u64), sections: vec![values] }
            }
            Tensor::Slided(s) => {
                let values = dispatch!(s, AnySlided, s => encode_values(s.matrix().data()));
                let (rows, cols) = dispatch!(s, AnySlided, s => s.matrix().shape());
                Container {
                    kind: Kind::Slided,
                    dtype: s.dtype(),
                    pattern: pattern_fields(&s.pattern())?,
                    shape: (rows as u64, cols as u64),
                    sections: vec![values],
                }
            }
            Tensor::Compressed(c) => {
                let (values, meta, rows, wpr) = dispatch!(c, AnyCompressed, c => (
                    encode_values(c.values()),
                    c.packed_metadata(),
                    c.rows(),
                    c.windows_per_row()
                ));
                Container {
                    kind: Kind::Compressed,
                    dtype: c.dtype(),
                    pattern: pattern_fields(&c.pattern())?,
                    shape: (rows as u64, wpr as u64),
                    sections: vec![values, meta],
                }
            }
            Tensor::QuantizedLifted(a) => {
                let words: Vec<u8> = a.payload().iter().flat_map(|w| w.to_le_bytes()).collect();
                let scales: Vec<u8> = a.scales().iter().flat_map(|s| s.to_le_bytes()).collect();
                Container {
                    kind: Kind::QuantizedLifted,
                    dtype: a.format().dtype(),
                    pattern: pattern_fields(a.pattern())?,
                    shape: (a.rows() as u64, a.lifted_cols() as u64),
                    sections: vec![words, scales],
                }
            }
        })
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let rows = usize::try_from(c.shape.0).map_err(|_| inconsistent("row count overflows"))?;
        let cols = usize::try_from(c.shape.1).map_err(|_| inconsistent("column count overflows"))?;
        let want_sections = match c.kind {
            Kind::Dense | Kind::Slided => 1,
            Kind::Compressed | Kind::QuantizedLifted => 2,
        };
        if c.sections.len() != want_sections {
            return Err(inconsistent(format!(
                "{} tensor needs {want_sections} sections, found {}",
                c.kind.name(),
                c.sections.len()
            )));
        }
        let count = rows.checked_mul(cols).ok_or_else(|| inconsistent("shape overflows"))?;
        match c.kind {
            Kind::Dense => {
                if c.pattern != [0; 4] {
                    return Err(inconsistent("dense tensor carries a pattern"));
                }
                Ok(Tensor::Dense(decode_matrix(c.dtype, rows, cols, &c.sections[0])?))
            }
            Kind::Slided => {
                let pattern = parse_pattern(c.pattern)?;
                let s = match decode_matrix(c.dtype, rows, cols, &c.sections[0])? {
                    AnyMatrix::I8(m) => AnySlided::I8(SlidedMatrix::from_parts(pattern, m)?),
                    AnyMatrix::I32(m) => AnySlided::I32(SlidedMatrix::from_parts(pattern, m)?),
                    AnyMatrix::F32(m) => AnySlided::F32(SlidedMatrix::from_parts(pattern, m)?),
                    AnyMatrix::F64(m) => AnySlided::F64(SlidedMatrix::from_parts(pattern, m)?),
                };
                Ok(Tensor::Slided(s))
            }
            Kind::Compressed => {
                let pattern = parse_pattern(c.pattern)?;
                let slots = count.checked_mul(pattern.hw_m()).ok_or_else(|| inconsistent("shape overflows"))?;
                let meta = CompressedSparseMatrix::<i8>::unpack_metadata(&c.sections[1], slots, pattern.hw_n())?;
                let plan = WindowPlan::new(pattern)?;
                if (cols * pattern.hw_n()) % plan.lifted_block_len() != 0 {
                    return Err(inconsistent("windows per row is not a whole number of packed blocks"));
                }
                fn build<T: Element>(
                    p: SparsityPattern,
                    rows: usize,
                    cols: usize,
                    bytes: &[u8],
                    meta: Vec<u8>,
                    slots: usize,
                ) -> Result<CompressedSparseMatrix<T>> {
                    let values = decode_values::<T>(bytes, slots)?;
                    Ok(CompressedSparseMatrix::from_parts(p, rows, cols, values, meta)?)
                }
                let v = &c.sections[0];
                let t = match c.dtype {
                    DType::Int8 => AnyCompressed::I8(build(pattern, rows, cols, v, meta, slots)?),
                    DType::Int32 => AnyCompressed::I32(build(pattern, rows, cols, v, meta, slots)?),
                    DType::Fp32 => AnyCompressed::F32(build(pattern, rows, cols, v, meta, slots)?),
                    DType::Fp64 => AnyCompressed::F64(build(pattern, rows, cols, v, meta, slots)?),
                    DType::Fp8E4M3 => return Err(inconsistent("fp8 is only valid for quantized-lifted tensors")),
                };
                Ok(Tensor::Compressed(t))
            }
            Kind::QuantizedLifted => {
                let pattern = parse_pattern(c.pattern)?;
                let format = QuantFormat::from_dtype(c.dtype)
                    .ok_or_else(|| inconsistent(format!("{} is not a quantized code format", c.dtype)))?;
                let words = rows * cols.div_ceil(4);
                if c.sections[0].len() != words * 4 || c.sections[1].len() != rows * 4 {
                    return Err(inconsistent("quantized payload or scale length does not match shape"));
                }
                let payload = c.sections[0].chunks_exact(4).map(|b| u32::from_le_bytes(b.try_into().unwrap())).collect();
                let scales = c.sections[1].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
                Ok(Tensor::QuantizedLifted(QuantizedLiftedActivation::from_parts(
                    pattern, format, rows, cols, payload, scales,
                )?))
            }
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(self.to_container()?.to_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_container(&Container::from_bytes(bytes)?)
    }
}

fn inconsistent(msg: impl Into<String>) -> ContainerError {
    ContainerError::Inconsistent(msg.into())
}

fn pattern_fields(p: &SparsityPattern) -> Result<[u16; 4]> {
    let f = |v: usize| u16::try_from(v).map_err(|_| inconsistent(format!("pattern field {v} exceeds u16")));
    Ok([f(p.z())?, f(p.l())?, f(p.hw_m())?, f(p.hw_n())?])
}

fn parse_pattern(f: [u16; 4]) -> Result<SparsityPattern> {
    Ok(SparsityPattern::new(f[0] as usize, f[1] as usize, f[2] as usize, f[3] as usize)?)
}

fn encode_values<T: Element>(data: &[T]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() * T::DTYPE.size());
    for &v in data {
        v.write_le(&mut out);
    }
    out
}

fn decode_values<T: Element>(bytes: &[u8], count: usize) -> Result<Vec<T>> {
    let size = T::DTYPE.size();
    if Some(bytes.len()) != count.checked_mul(size) {
        return Err(inconsistent(format!(
            "value section holds {} bytes, expected {count} {} elements",
            bytes.len(),
            T::DTYPE
        )));
    }
    Ok(bytes.chunks_exact(size).map(T::read_le).collect())
}

fn decode_matrix(dtype: DType, rows: usize, cols: usize, bytes: &[u8]) -> Result<AnyMatrix> {
    let n = rows * cols;
    Ok(match dtype {
        DType::Int8 => AnyMatrix::I8(Matrix::from_vec(rows, cols, decode_values(bytes, n)?)?),
        DType::Int32 => AnyMatrix::I32(Matrix::from_vec(rows, cols, decode_values(bytes, n)?)?),
        DType::Fp32 => AnyMatrix::F32(Matrix::from_vec(rows, cols, decode_values(bytes, n)?)?),
        DType::Fp64 => AnyMatrix::F64(Matrix::from_vec(rows, cols, decode_values(bytes, n)?)?),
        DType::Fp8E4M3 => return Err(inconsistent("fp8 is only valid for quantized-lifted tensors")),
    })
}

/// Writes `tensor` to `path` atomically (temp file in the same directory,
/// then rename).
pub fn save(path: &Path, tensor: &Tensor) -> Result<()> {
    let bytes = tensor.to_bytes()?;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| ContainerError::Io(e.error))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Tensor> {
    Tensor::from_bytes(&fs::read(path)?)
}

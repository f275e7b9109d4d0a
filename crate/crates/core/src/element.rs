use std::fmt::Debug;
use std::ops::AddAssign;

use crate::error::{Error, Result};

/// Element representation tag. The discriminants are the on-disk codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum DType {
    Int8 = 0,
    Int32 = 1,
    Fp32 = 2,
    Fp64 = 3,
    Fp8E4M3 = 4,
}

impl DType {
    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => DType::Int8,
            1 => DType::Int32,
            2 => DType::Fp32,
            3 => DType::Fp64,
            4 => DType::Fp8E4M3,
            _ => return None,
        })
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn size(self) -> usize {
        match self {
            DType::Int8 | DType::Fp8E4M3 => 1,
            DType::Int32 | DType::Fp32 => 4,
            DType::Fp64 => 8,
        }
    }

    pub fn is_integer(self) -> bool {
        matches!(self, DType::Int8 | DType::Int32)
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::Int8 => "int8",
            DType::Int32 => "int32",
            DType::Fp32 => "fp32",
            DType::Fp64 => "fp64",
            DType::Fp8E4M3 => "fp8e4m3",
        }
    }
}

impl std::str::FromStr for DType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "int8" | "i8" => Ok(DType::Int8),
            "int32" | "i32" => Ok(DType::Int32),
            "fp32" | "f32" => Ok(DType::Fp32),
            "fp64" | "f64" => Ok(DType::Fp64),
            "fp8" | "fp8e4m3" | "e4m3" => Ok(DType::Fp8E4M3),
            other => Err(format!("unknown dtype `{other}`")),
        }
    }
}

impl std::fmt::Display for DType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A scalar that can live in a weight or activation matrix.
pub trait Element: Copy + Default + PartialEq + Debug + Send + Sync + 'static {
    const DTYPE: DType;

    /// Sparsity test. `-0.0` counts as zero.
    fn is_zero(&self) -> bool;

    fn to_f64(self) -> f64;

    fn write_le(self, out: &mut Vec<u8>);

    /// Decodes one element from exactly `DTYPE.size()` bytes.
    fn read_le(bytes: &[u8]) -> Self;
}

macro_rules! impl_element {
    ($t:ty, $dtype:expr) => {
        impl Element for $t {
            const DTYPE: DType = $dtype;

            #[inline]
            fn is_zero(&self) -> bool {
                *self == (0 as $t)
            }

            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }

            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes.try_into().expect("element width"))
            }
        }
    };
}

impl_element!(i8, DType::Int8);
impl_element!(i32, DType::Int32);
impl_element!(f32, DType::Fp32);
impl_element!(f64, DType::Fp64);

/// Products and sums in a wider accumulator type.
///
/// int8 accumulates in i32, int32 in i64, fp32 in f64 (the product of two
/// f32 values is exact in f64). fp64 stays in f64.
pub trait Accumulate: Element {
    type Acc: Copy + Default + PartialEq + Debug + Send + Sync + AddAssign;

    fn mul_wide(self, rhs: Self) -> Self::Acc;

    fn acc_to_f64(acc: Self::Acc) -> f64;
}

impl Accumulate for i8 {
    type Acc = i32;

    #[inline]
    fn mul_wide(self, rhs: Self) -> i32 {
        self as i32 * rhs as i32
    }

    #[inline]
    fn acc_to_f64(acc: i32) -> f64 {
        acc as f64
    }
}

impl Accumulate for i32 {
    type Acc = i64;

    #[inline]
    fn mul_wide(self, rhs: Self) -> i64 {
        self as i64 * rhs as i64
    }

    #[inline]
    fn acc_to_f64(acc: i64) -> f64 {
        acc as f64
    }
}

impl Accumulate for f32 {
    type Acc = f64;

    #[inline]
    fn mul_wide(self, rhs: Self) -> f64 {
        self as f64 * rhs as f64
    }

    #[inline]
    fn acc_to_f64(acc: f64) -> f64 {
        acc
    }
}

impl Accumulate for f64 {
    type Acc = f64;

    #[inline]
    fn mul_wide(self, rhs: Self) -> f64 {
        self * rhs
    }

    #[inline]
    fn acc_to_f64(acc: f64) -> f64 {
        acc
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Copy + Default> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::default(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "buffer of {} elements cannot be shaped {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn map<U: Copy + Default>(&self, f: impl Fn(T) -> U) -> Matrix<U> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

impl<T: Element> Matrix<T> {
    pub fn nnz(&self) -> usize {
        self.data.iter().filter(|v| !v.is_zero()).count()
    }
}

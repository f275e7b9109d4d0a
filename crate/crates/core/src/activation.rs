//! Activation lifting and per-token quantization.
//!
//! Lifting duplicates activation elements so that window `j` of group `g`
//! sees the `hw_n` source elements starting at `g * l + window_starts[j]`.
//! It is pure index remapping. The fused transform quantizes, lifts and packs
//! four codes per 32-bit word in a single output-oriented pass per row.

use float8::F8E4M3;
use rayon::prelude::*;

use crate::element::{DType, Matrix};
use crate::error::{Error, Result};
use crate::pattern::{SparsityPattern, WindowPlan};

/// 8-bit code format used for quantized activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QuantFormat {
    /// Symmetric int8, codes in `[-127, 127]`; `-128` is never produced.
    Int8,
    /// FP8 E4M3 with round-to-nearest-even and saturation at 448.
    Fp8E4M3,
}

impl QuantFormat {
    pub fn qmax(self) -> f64 {
        match self {
            QuantFormat::Int8 => 127.0,
            QuantFormat::Fp8E4M3 => 448.0,
        }
    }

    pub fn dtype(self) -> DType {
        match self {
            QuantFormat::Int8 => DType::Int8,
            QuantFormat::Fp8E4M3 => DType::Fp8E4M3,
        }
    }

    pub fn from_dtype(dtype: DType) -> Option<Self> {
        match dtype {
            DType::Int8 => Some(QuantFormat::Int8),
            DType::Fp8E4M3 => Some(QuantFormat::Fp8E4M3),
            _ => None,
        }
    }

    /// Encodes an already-scaled value into its byte code.
    #[inline]
    pub fn encode(self, v: f64) -> u8 {
        let qmax = self.qmax();
        match self {
            QuantFormat::Int8 => v.round_ties_even().clamp(-qmax, qmax) as i8 as u8,
            QuantFormat::Fp8E4M3 => F8E4M3::from_f64(v.clamp(-qmax, qmax)).to_bits(),
        }
    }

    #[inline]
    pub fn decode(self, code: u8) -> f64 {
        match self {
            QuantFormat::Int8 => code as i8 as f64,
            QuantFormat::Fp8E4M3 => F8E4M3::from_bits(code).to_f64(),
        }
    }

    fn code_in_range(self, code: u8) -> bool {
        let v = self.decode(code);
        v.is_finite() && v.abs() <= self.qmax()
    }
}

impl std::str::FromStr for QuantFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "int8" | "i8" => Ok(QuantFormat::Int8),
            "fp8" | "fp8e4m3" | "e4m3" => Ok(QuantFormat::Fp8E4M3),
            other => Err(format!("unknown quantization format `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedRow {
    pub codes: Vec<u8>,
    pub scale: f32,
}

/// Absmax and reciprocal scale for one row. An all-zero row gets scale 1.0
/// and a zero multiplier.
fn row_scale(x: &[f32], row: usize, format: QuantFormat) -> Result<(f64, f32)> {
    let mut absmax = 0.0f32;
    for (col, &v) in x.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFiniteInput { row, col });
        }
        absmax = absmax.max(v.abs());
    }
    if absmax == 0.0 {
        return Ok((0.0, 1.0));
    }
    let a = absmax as f64;
    Ok((format.qmax() / a, (a / format.qmax()) as f32))
}

/// Per-token symmetric quantization of one row.
pub fn quantize_row(x: &[f32], format: QuantFormat) -> Result<QuantizedRow> {
    let (r, scale) = row_scale(x, 0, format)?;
    let codes = x.iter().map(|&v| format.encode(v as f64 * r)).collect();
    Ok(QuantizedRow { codes, scale })
}

/// Lifts one row whose length is a whole number of `l`-blocks.
pub fn lift_row<T: Copy>(x: &[T], plan: &WindowPlan) -> Result<Vec<T>> {
    let p = plan.pattern();
    if x.len() % p.l() != 0 {
        return Err(Error::DimensionMismatch(format!(
            "activation length {} is not a multiple of the block length {}",
            x.len(),
            p.l()
        )));
    }
    let mut out = Vec::with_capacity(plan.lifted_len(x.len()));
    for block in x.chunks_exact(p.l()) {
        for &start in plan.window_starts() {
            out.extend_from_slice(&block[start..start + p.hw_n()]);
        }
    }
    Ok(out)
}

/// Zero-pads `x` to a whole number of blocks and lifts it.
pub fn lift_padded<T: Copy + Default>(x: &[T], plan: &WindowPlan) -> Vec<T> {
    let mut padded = x.to_vec();
    padded.resize(plan.groups_for(x.len()) * plan.pattern().l(), T::default());
    lift_row(&padded, plan).expect("padded to a whole number of blocks")
}

/// Lifts every row of a tokens-by-K matrix, zero-padding K as needed.
pub fn lift_matrix<T: Copy + Default + Send + Sync>(x: &Matrix<T>, plan: &WindowPlan) -> Matrix<T> {
    let width = plan.lifted_len(x.cols());
    let data: Vec<T> = (0..x.rows()).into_par_iter().flat_map_iter(|i| lift_padded(x.row(i), plan)).collect();
    Matrix::from_vec(x.rows(), width, data).expect("lifted shape")
}

/// Packs bytes four to a little-endian word: `b0 | b1 << 8 | b2 << 16 | b3 << 24`.
/// A short tail is zero-filled.
pub fn pack_bytes(bytes: &[u8]) -> Vec<u32> {
    bytes
        .chunks(4)
        .map(|c| c.iter().enumerate().fold(0u32, |w, (k, &b)| w | (b as u32) << (8 * k)))
        .collect()
}

pub fn unpack_words(words: &[u32], len: usize) -> Vec<u8> {
    words.iter().flat_map(|w| w.to_le_bytes()).take(len).collect()
}

/// Quantized, lifted, word-packed activations with one scale per row.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLiftedActivation {
    pattern: SparsityPattern,
    format: QuantFormat,
    rows: usize,
    lifted_cols: usize,
    payload: Vec<u32>,
    scales: Vec<f32>,
}

impl QuantizedLiftedActivation {
    pub fn from_parts(
        pattern: SparsityPattern,
        format: QuantFormat,
        rows: usize,
        lifted_cols: usize,
        payload: Vec<u32>,
        scales: Vec<f32>,
    ) -> Result<Self> {
        let plan = WindowPlan::new(pattern)?;
        if lifted_cols % plan.lifted_block_len() != 0 {
            return Err(Error::DimensionMismatch(format!(
                "lifted width {lifted_cols} is not a multiple of {}",
                plan.lifted_block_len()
            )));
        }
        let words = lifted_cols.div_ceil(4);
        if payload.len() != rows * words || scales.len() != rows {
            return Err(Error::DimensionMismatch(format!(
                "expected {} words and {rows} scales, got {} and {}",
                rows * words,
                payload.len(),
                scales.len()
            )));
        }
        if let Some(s) = scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::OutOfRange(format!("scale {s} is not positive and finite")));
        }
        let act = Self { pattern, format, rows, lifted_cols, payload, scales };
        for i in 0..rows {
            if let Some(c) = act.row_codes(i).into_iter().find(|&c| !format.code_in_range(c)) {
                return Err(Error::OutOfRange(format!("code {c:#04x} in row {i} exceeds qmax")));
            }
        }
        Ok(act)
    }

    /// Lifts an int8 matrix (tokens by K) without quantizing; scales are 1.0.
    pub fn from_int8(x: &Matrix<i8>, plan: &WindowPlan) -> Result<Self> {
        if let Some(pos) = x.data().iter().position(|&v| v == i8::MIN) {
            return Err(Error::OutOfRange(format!(
                "-128 at row {}, column {} is outside the symmetric int8 range",
                pos / x.cols().max(1),
                pos % x.cols().max(1)
            )));
        }
        let lifted_cols = plan.lifted_len(x.cols());
        let mut payload = Vec::with_capacity(x.rows() * lifted_cols.div_ceil(4));
        for i in 0..x.rows() {
            let bytes: Vec<u8> = lift_padded(x.row(i), plan).into_iter().map(|v| v as u8).collect();
            payload.extend(pack_bytes(&bytes));
        }
        Ok(Self {
            pattern: *plan.pattern(),
            format: QuantFormat::Int8,
            rows: x.rows(),
            lifted_cols,
            payload,
            scales: vec![1.0; x.rows()],
        })
    }

    pub fn pattern(&self) -> &SparsityPattern {
        &self.pattern
    }

    pub fn format(&self) -> QuantFormat {
        self.format
    }

    pub fn qmax(&self) -> f64 {
        self.format.qmax()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Lifted codes per row.
    pub fn lifted_cols(&self) -> usize {
        self.lifted_cols
    }

    pub fn words_per_row(&self) -> usize {
        self.lifted_cols.div_ceil(4)
    }

    pub fn payload(&self) -> &[u32] {
        &self.payload
    }

    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    pub fn row_words(&self, i: usize) -> &[u32] {
        let w = self.words_per_row();
        &self.payload[i * w..(i + 1) * w]
    }

    pub fn row_codes(&self, i: usize) -> Vec<u8> {
        unpack_words(self.row_words(i), self.lifted_cols)
    }

    /// Signed int8 view of a row; `None` for FP8 payloads.
    pub fn row_i8(&self, i: usize) -> Option<Vec<i8>> {
        (self.format == QuantFormat::Int8).then(|| self.row_codes(i).into_iter().map(|c| c as i8).collect())
    }

    pub fn dequantize_row(&self, i: usize) -> Vec<f64> {
        let s = self.scales[i] as f64;
        self.row_codes(i).into_iter().map(|c| self.format.decode(c) * s).collect()
    }
}

fn fused_row(
    x: &[f32],
    row: usize,
    plan: &WindowPlan,
    format: QuantFormat,
    words: usize,
) -> Result<(Vec<u32>, f32)> {
    let p = plan.pattern();
    // Pass 1: dynamic scale.
    let (r, scale) = row_scale(x, row, format)?;
    // Pass 2: one iteration per output window.
    let (l, hw_n, per_group) = (p.l(), p.hw_n(), plan.window_count());
    let n_w = plan.groups_for(x.len()) * per_group;
    let mut out = vec![0u32; words];
    let mut pos = 0usize;
    for j in 0..n_w {
        let (g, w) = (j / per_group, j % per_group);
        let b = l * g + plan.window_starts()[w];
        for delta in 0..hw_n {
            let v = x.get(b + delta).copied().unwrap_or(0.0);
            let q = format.encode(v as f64 * r);
            out[pos / 4] |= (q as u32) << (8 * (pos % 4));
            pos += 1;
        }
    }
    Ok((out, scale))
}

/// Fused quantize, lift and pack over a tokens-by-K matrix.
///
/// Rows whose K is not a multiple of `l` are zero-padded. Rows are processed
/// in parallel and independently.
pub fn fused_quant_slide(
    x: &Matrix<f32>,
    plan: &WindowPlan,
    format: QuantFormat,
) -> Result<QuantizedLiftedActivation> {
    let lifted_cols = plan.lifted_len(x.cols());
    let words = lifted_cols.div_ceil(4);
    let rows: Vec<(Vec<u32>, f32)> = (0..x.rows())
        .into_par_iter()
        .map(|i| fused_row(x.row(i), i, plan, format, words))
        .collect::<Result<_>>()?;
    let mut payload = Vec::with_capacity(x.rows() * words);
    let mut scales = Vec::with_capacity(x.rows());
    for (w, s) in rows {
        payload.extend(w);
        scales.push(s);
    }
    Ok(QuantizedLiftedActivation {
        pattern: *plan.pattern(),
        format,
        rows: x.rows(),
        lifted_cols,
        payload,
        scales,
    })
}

/// Unfused reference: quantize each row, then lift, then pack.
pub fn quantize_then_lift(
    x: &Matrix<f32>,
    plan: &WindowPlan,
    format: QuantFormat,
) -> Result<QuantizedLiftedActivation> {
    let mut payload = Vec::new();
    let mut scales = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let q = quantize_row(x.row(i), format).map_err(|e| match e {
            Error::NonFiniteInput { col, .. } => Error::NonFiniteInput { row: i, col },
            e => e,
        })?;
        payload.extend(pack_bytes(&lift_padded(&q.codes, plan)));
        scales.push(q.scale);
    }
    Ok(QuantizedLiftedActivation {
        pattern: *plan.pattern(),
        format,
        rows: x.rows(),
        lifted_cols: plan.lifted_len(x.cols()),
        payload,
        scales,
    })
}

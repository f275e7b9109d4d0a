//! Compressed `M:N` storage and the structured sparse GEMM.
//!
//! Every hardware window stores exactly `hw_m` values together with their
//! intra-window positions. A window with fewer nonzeros is padded with the
//! smallest unused positions carrying value zero, so the encoding of a given
//! slided matrix is unique.

use rayon::prelude::*;

use crate::activation::{lift_matrix, QuantFormat, QuantizedLiftedActivation};
use crate::element::{Accumulate, Element, Matrix};
use crate::error::{Error, Result};
use crate::packer::{pack_matrix, unpack_matrix, SlidedMatrix};
use crate::pattern::{SparsityPattern, WindowPlan};

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedSparseMatrix<T> {
    pattern: SparsityPattern,
    rows: usize,
    windows_per_row: usize,
    values: Vec<T>,
    /// One intra-window position per stored value.
    metadata: Vec<u8>,
}

/// Bits needed for one position code of an `hw_n`-wide window.
pub fn metadata_bits(hw_n: usize) -> usize {
    (usize::BITS - (hw_n.max(2) - 1).leading_zeros()) as usize
}

impl<T: Element> CompressedSparseMatrix<T> {
    pub fn from_parts(
        pattern: SparsityPattern,
        rows: usize,
        windows_per_row: usize,
        values: Vec<T>,
        metadata: Vec<u8>,
    ) -> Result<Self> {
        let slots = rows * windows_per_row * pattern.hw_m();
        if values.len() != slots || metadata.len() != slots {
            return Err(Error::DimensionMismatch(format!(
                "expected {slots} values and codes, got {} and {}",
                values.len(),
                metadata.len()
            )));
        }
        let c = Self { pattern, rows, windows_per_row, values, metadata };
        c.validate_metadata()?;
        Ok(c)
    }

    fn validate_metadata(&self) -> Result<()> {
        let (hw_m, hw_n) = (self.pattern.hw_m(), self.pattern.hw_n());
        for (w, codes) in self.metadata.chunks_exact(hw_m).enumerate() {
            let (row, window) = (w / self.windows_per_row.max(1), w % self.windows_per_row.max(1));
            if let Some(&c) = codes.iter().find(|&&c| c as usize >= hw_n) {
                return Err(Error::MalformedMetadata { row, window, reason: format!("position {c} >= {hw_n}") });
            }
            if codes.windows(2).any(|p| p[0] >= p[1]) {
                return Err(Error::MalformedMetadata {
                    row,
                    window,
                    reason: format!("positions {codes:?} are not strictly increasing"),
                });
            }
        }
        Ok(())
    }

    pub fn pattern(&self) -> &SparsityPattern {
        &self.pattern
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn windows_per_row(&self) -> usize {
        self.windows_per_row
    }

    pub fn hw_m(&self) -> usize {
        self.pattern.hw_m()
    }

    pub fn hw_n(&self) -> usize {
        self.pattern.hw_n()
    }

    /// Width of the slided matrix this encodes.
    pub fn cols_expanded(&self) -> usize {
        self.windows_per_row * self.hw_n()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn metadata(&self) -> &[u8] {
        &self.metadata
    }

    /// Values and positions of window `j` in row `i`.
    pub fn window(&self, i: usize, j: usize) -> (&[T], &[u8]) {
        let m = self.hw_m();
        let at = (i * self.windows_per_row + j) * m;
        (&self.values[at..at + m], &self.metadata[at..at + m])
    }

    /// Position codes bit-packed LSB-first, `metadata_bits(hw_n)` bits each.
    pub fn packed_metadata(&self) -> Vec<u8> {
        let bits = metadata_bits(self.hw_n());
        let mut out = vec![0u8; (self.metadata.len() * bits).div_ceil(8)];
        for (k, &code) in self.metadata.iter().enumerate() {
            for b in 0..bits {
                if code >> b & 1 == 1 {
                    let pos = k * bits + b;
                    out[pos / 8] |= 1 << (pos % 8);
                }
            }
        }
        out
    }

    pub fn unpack_metadata(packed: &[u8], count: usize, hw_n: usize) -> Result<Vec<u8>> {
        let bits = metadata_bits(hw_n);
        if packed.len() != (count * bits).div_ceil(8) {
            return Err(Error::DimensionMismatch(format!(
                "{} metadata bytes cannot hold exactly {count} codes of {bits} bits",
                packed.len()
            )));
        }
        Ok((0..count)
            .map(|k| {
                (0..bits).fold(0u8, |code, b| {
                    let pos = k * bits + b;
                    code | (packed[pos / 8] >> (pos % 8) & 1) << b
                })
            })
            .collect())
    }

    /// Stored value bytes plus metadata bytes.
    pub fn storage_bytes(&self) -> usize {
        self.values.len() * T::DTYPE.size() + (self.metadata.len() * metadata_bits(self.hw_n())).div_ceil(8)
    }
}

/// Encodes a slided matrix window by window.
pub fn compress<T: Element>(s: &SlidedMatrix<T>) -> Result<CompressedSparseMatrix<T>> {
    let p = *s.pattern();
    let (hw_m, hw_n) = (p.hw_m(), p.hw_n());
    let windows_per_row = s.cols_expanded() / hw_n;
    let slots = s.rows() * windows_per_row * hw_m;
    let mut values = Vec::with_capacity(slots);
    let mut metadata = Vec::with_capacity(slots);
    let mut keep = Vec::with_capacity(hw_n);
    for i in 0..s.rows() {
        for (j, window) in s.matrix().row(i).chunks_exact(hw_n).enumerate() {
            keep.clear();
            keep.extend((0..hw_n).filter(|&d| !window[d].is_zero()));
            if keep.len() > hw_m {
                return Err(Error::NotCompliant { row: i, block: j, nnz: keep.len(), max: hw_m });
            }
            let mut pad = (0..hw_n).filter(|&d| window[d].is_zero());
            while keep.len() < hw_m {
                keep.push(pad.next().expect("hw_m < hw_n"));
            }
            keep.sort_unstable();
            for &d in &keep {
                values.push(if window[d].is_zero() { T::default() } else { window[d] });
                metadata.push(d as u8);
            }
        }
    }
    Ok(CompressedSparseMatrix { pattern: p, rows: s.rows(), windows_per_row, values, metadata })
}

/// Scatters stored values back to their positions.
pub fn decompress<T: Element>(c: &CompressedSparseMatrix<T>) -> Result<SlidedMatrix<T>> {
    c.validate_metadata()?;
    let (hw_m, hw_n) = (c.hw_m(), c.hw_n());
    let mut out = Matrix::zeros(c.rows, c.cols_expanded());
    for (w, (vals, codes)) in c.values.chunks_exact(hw_m).zip(c.metadata.chunks_exact(hw_m)).enumerate() {
        let (i, j) = (w / c.windows_per_row, w % c.windows_per_row);
        for (&v, &d) in vals.iter().zip(codes) {
            out.set(i, j * hw_n + d as usize, v);
        }
    }
    SlidedMatrix::from_parts(c.pattern, out)
}

/// Output of a GEMM together with the number of scalar multiplies issued.
#[derive(Debug, Clone, PartialEq)]
pub struct Counted<T> {
    pub output: Matrix<T>,
    pub multiplies: u64,
}

/// Structured sparse GEMM against a lifted activation (tokens by lifted
/// width). Output is `rows x tokens`.
///
/// Each stored value multiplies the lifted element at its window's offset
/// plus its metadata position. Per output element the order is fixed
/// (window, then slot), so the result does not depend on parallelism.
pub fn sparse_gemm_lifted<T: Accumulate>(
    c: &CompressedSparseMatrix<T>,
    lifted: &Matrix<T>,
) -> Result<Counted<T::Acc>> {
    if lifted.cols() != c.cols_expanded() {
        return Err(Error::DimensionMismatch(format!(
            "compressed width {} does not match lifted activation width {}",
            c.cols_expanded(),
            lifted.cols()
        )));
    }
    let tokens = lifted.rows();
    let (hw_m, hw_n, wpr) = (c.hw_m(), c.hw_n(), c.windows_per_row);
    let mut out = vec![T::Acc::default(); c.rows * tokens];
    let mut multiplies = 0u64;
    if tokens > 0 {
        multiplies = out
            .par_chunks_mut(tokens)
            .enumerate()
            .map(|(i, dst)| {
                let base = i * wpr * hw_m;
                let vals = &c.values[base..base + wpr * hw_m];
                let codes = &c.metadata[base..base + wpr * hw_m];
                let mut count = 0u64;
                for (t, acc_out) in dst.iter_mut().enumerate() {
                    let x = lifted.row(t);
                    let mut acc = T::Acc::default();
                    for j in 0..wpr {
                        for k in j * hw_m..(j + 1) * hw_m {
                            acc += vals[k].mul_wide(x[j * hw_n + codes[k] as usize]);
                            count += 1;
                        }
                    }
                    *acc_out = acc;
                }
                count
            })
            .sum();
    }
    Ok(Counted { output: Matrix::from_vec(c.rows, tokens, out)?, multiplies })
}

/// int8 sparse GEMM against a quantized lifted activation, accumulating in
/// i32. Activation scales are not applied; multiply column `t` by
/// `a.scales()[t]` to dequantize.
pub fn sparse_gemm(c: &CompressedSparseMatrix<i8>, a: &QuantizedLiftedActivation) -> Result<Matrix<i32>> {
    sparse_gemm_counted(c, a).map(|r| r.output)
}

pub fn sparse_gemm_counted(
    c: &CompressedSparseMatrix<i8>,
    a: &QuantizedLiftedActivation,
) -> Result<Counted<i32>> {
    if a.format() != QuantFormat::Int8 {
        return Err(Error::DimensionMismatch("int8 sparse GEMM needs an int8 activation".into()));
    }
    if (a.pattern().hw_m(), a.pattern().hw_n()) != (c.hw_m(), c.hw_n()) {
        return Err(Error::DimensionMismatch(format!(
            "activation lifted for {} but weights compressed for {}",
            a.pattern(),
            c.pattern()
        )));
    }
    let mut data = Vec::with_capacity(a.rows() * a.lifted_cols());
    for t in 0..a.rows() {
        data.extend(a.row_i8(t).expect("int8 format checked above"));
    }
    sparse_gemm_lifted(c, &Matrix::from_vec(a.rows(), a.lifted_cols(), data)?)
}

/// Dense GEMM `W X` with a widened accumulator and left-to-right summation
/// over the inner dimension.
pub fn dense_gemm<T: Accumulate>(w: &Matrix<T>, x: &Matrix<T>) -> Result<Matrix<T::Acc>> {
    dense_gemm_counted(w, x).map(|r| r.output)
}

pub fn dense_gemm_counted<T: Accumulate>(w: &Matrix<T>, x: &Matrix<T>) -> Result<Counted<T::Acc>> {
    if w.cols() != x.rows() {
        return Err(Error::DimensionMismatch(format!(
            "cannot multiply {}x{} by {}x{}",
            w.rows(),
            w.cols(),
            x.rows(),
            x.cols()
        )));
    }
    let xt = x.transpose();
    let n = x.cols();
    let mut out = vec![T::Acc::default(); w.rows() * n];
    if n > 0 {
        out.par_chunks_mut(n).enumerate().for_each(|(i, dst)| {
            let wr = w.row(i);
            for (t, o) in dst.iter_mut().enumerate() {
                let mut acc = T::Acc::default();
                for (&a, &b) in wr.iter().zip(xt.row(t)) {
                    acc += a.mul_wide(b);
                }
                *o = acc;
            }
        });
    }
    let multiplies = (w.rows() * w.cols() * n) as u64;
    Ok(Counted { output: Matrix::from_vec(w.rows(), n, out)?, multiplies })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub max_abs_diff: f64,
    /// Largest `|diff| / (||w_i|| * ||x_t||)` over output elements with
    /// nonzero norms.
    pub max_scaled_diff: f64,
    /// Every output element identical.
    pub exact: bool,
    pub dense_multiplies: u64,
    pub sparse_multiplies: u64,
}

/// Runs the dense product `W X` and the sparse path
/// `compress(pack(W))` against `lift(X)` and compares them elementwise.
///
/// `x` is `K x tokens`, as in `Y = W X`.
pub fn check_equivalence<T: Accumulate>(
    w: &Matrix<T>,
    x: &Matrix<T>,
    pattern: SparsityPattern,
) -> Result<EquivalenceReport> {
    let slided = pack_matrix(w, pattern)?;
    compare_paths(w, &slided, x)
}

/// As [`check_equivalence`], starting from an already packed matrix. The
/// dense operand is reconstructed by unpacking.
pub fn check_slided_equivalence<T: Accumulate>(s: &SlidedMatrix<T>, x: &Matrix<T>) -> Result<EquivalenceReport> {
    let w = unpack_matrix(s)?;
    compare_paths(&w, s, x)
}

fn compare_paths<T: Accumulate>(w: &Matrix<T>, s: &SlidedMatrix<T>, x: &Matrix<T>) -> Result<EquivalenceReport> {
    let dense = dense_gemm_counted(w, x)?;
    let plan = WindowPlan::new(*s.pattern())?;
    let lifted = lift_matrix(&x.transpose(), &plan);
    let sparse = sparse_gemm_lifted(&compress(s)?, &lifted)?;

    let norm = |v: &[T]| v.iter().map(|e| e.to_f64() * e.to_f64()).sum::<f64>().sqrt();
    let w_norms: Vec<f64> = (0..w.rows()).map(|i| norm(w.row(i))).collect();
    let xt = x.transpose();
    let x_norms: Vec<f64> = (0..xt.rows()).map(|t| norm(xt.row(t))).collect();

    let mut report = EquivalenceReport {
        max_abs_diff: 0.0,
        max_scaled_diff: 0.0,
        exact: true,
        dense_multiplies: dense.multiplies,
        sparse_multiplies: sparse.multiplies,
    };
    for (i, &wn) in w_norms.iter().enumerate() {
        for (t, &xn) in x_norms.iter().enumerate() {
            let (d, sp) = (dense.output.get(i, t), sparse.output.get(i, t));
            if d != sp {
                report.exact = false;
            }
            let diff = (T::acc_to_f64(d) - T::acc_to_f64(sp)).abs();
            report.max_abs_diff = report.max_abs_diff.max(diff);
            let scale = wn * xn;
            if scale > 0.0 {
                report.max_scaled_diff = report.max_scaled_diff.max(diff / scale);
            }
        }
    }
    Ok(report)
}

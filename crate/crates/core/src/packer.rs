//! Offline weight packer.
//!
//! Each aligned `l`-block of a `Z:L` row is scanned window by window (in
//! increasing group, window, then intra-window offset order); a window keeps
//! up to `hw_m` not-yet-used nonzeros at their intra-window offset and leaves
//! the rest for the windows that follow. The packed row is the concatenation
//! of all windows, `window_count * hw_n` elements per block.

use rayon::prelude::*;

use crate::element::{Element, Matrix};
use crate::error::{Error, Result};
use crate::pattern::{SparsityPattern, WindowPlan};

/// Weight matrix after packing: every aligned `hw_n` window holds at most
/// `hw_m` nonzeros.
#[derive(Debug, Clone, PartialEq)]
pub struct SlidedMatrix<T> {
    pattern: SparsityPattern,
    values: Matrix<T>,
}

impl<T: Element> SlidedMatrix<T> {
    /// Wraps an existing expanded matrix. The width must be a whole number of
    /// packed blocks; compliance is not checked here.
    pub fn from_parts(pattern: SparsityPattern, values: Matrix<T>) -> Result<Self> {
        let plan = WindowPlan::new(pattern)?;
        if values.cols() % plan.lifted_block_len() != 0 {
            return Err(Error::DimensionMismatch(format!(
                "slided width {} is not a multiple of the packed block width {}",
                values.cols(),
                plan.lifted_block_len()
            )));
        }
        Ok(Self { pattern, values })
    }

    pub fn pattern(&self) -> &SparsityPattern {
        &self.pattern
    }

    pub fn plan(&self) -> WindowPlan {
        WindowPlan::new(self.pattern).expect("pattern validated at construction")
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.values
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.values
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols_expanded(&self) -> usize {
        self.values.cols()
    }

    /// Width of the source matrix this was packed from.
    pub fn source_cols(&self) -> usize {
        let plan = self.plan();
        self.values.cols() / plan.lifted_block_len() * self.pattern.l()
    }
}

/// A nonzero a window saw but did not take because it was full.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rejection {
    pub window: usize,
    pub index: usize,
}

/// Result of running the greedy over one block with an arbitrary window
/// layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation<T> {
    pub output: Vec<T>,
    /// Source indices whose nonzero no window took.
    pub unplaced: Vec<usize>,
    pub rejections: Vec<Rejection>,
}

impl<T> Allocation<T> {
    pub fn is_complete(&self) -> bool {
        self.unplaced.is_empty()
    }
}

/// Greedy residual allocation of one block over windows starting at
/// `window_starts`, each `hw_n` wide with capacity `hw_m`.
///
/// This is the packing primitive with no validity checks, exposed so callers
/// can run it on deliberately undersized layouts.
pub fn allocate_block<T: Element>(
    block: &[T],
    window_starts: &[usize],
    hw_m: usize,
    hw_n: usize,
) -> Allocation<T> {
    let mut output = vec![T::default(); window_starts.len() * hw_n];
    let mut used = vec![false; block.len()];
    let mut rejections = Vec::new();
    greedy(block, window_starts, hw_m, hw_n, &mut used, &mut output, |window, index| {
        rejections.push(Rejection { window, index })
    });
    let unplaced = (0..block.len()).filter(|&i| !block[i].is_zero() && !used[i]).collect();
    Allocation { output, unplaced, rejections }
}

#[inline]
fn greedy<T: Element>(
    block: &[T],
    window_starts: &[usize],
    hw_m: usize,
    hw_n: usize,
    used: &mut [bool],
    out: &mut [T],
    mut on_reject: impl FnMut(usize, usize),
) {
    for (j, &start) in window_starts.iter().enumerate() {
        let mut cnt = 0;
        for delta in 0..hw_n {
            let idx = start + delta;
            if idx >= block.len() || block[idx].is_zero() || used[idx] {
                continue;
            }
            if cnt < hw_m {
                out[j * hw_n + delta] = block[idx];
                used[idx] = true;
                cnt += 1;
            } else {
                on_reject(j, idx);
            }
        }
    }
}

fn pack_row_into<T: Element>(
    w: &[T],
    plan: &WindowPlan,
    row: usize,
    out: &mut [T],
    used: &mut Vec<bool>,
) -> Result<()> {
    let p = plan.pattern();
    let (l, z) = (p.l(), p.z());
    let width = plan.lifted_block_len();
    for (g, (block, dst)) in w.chunks_exact(l).zip(out.chunks_exact_mut(width)).enumerate() {
        let nnz = block.iter().filter(|v| !v.is_zero()).count();
        if nnz > z {
            return Err(Error::NotCompliant { row, block: g, nnz, max: z });
        }
        dst.fill(T::default());
        used.clear();
        used.resize(l, false);
        greedy(block, plan.window_starts(), p.hw_m(), p.hw_n(), used, dst, |_, _| {});
        if let Some(index) = (0..l).find(|&i| !block[i].is_zero() && !used[i]) {
            return Err(Error::Unplaced { row, block: g, index: g * l + index });
        }
    }
    Ok(())
}

fn check_width(len: usize, l: usize) -> Result<()> {
    if len % l != 0 {
        return Err(Error::DimensionMismatch(format!(
            "length {len} is not a multiple of the block length {l}"
        )));
    }
    Ok(())
}

/// Packs one `Z:L` row into concatenated `hw_m:hw_n` windows.
pub fn pack_row<T: Element>(w: &[T], plan: &WindowPlan) -> Result<Vec<T>> {
    let l = plan.pattern().l();
    check_width(w.len(), l)?;
    let mut out = vec![T::default(); w.len() / l * plan.lifted_block_len()];
    pack_row_into(w, plan, 0, &mut out, &mut Vec::with_capacity(l))?;
    Ok(out)
}

/// Inverse of [`pack_row`]: scatters every packed nonzero back to its source
/// index.
pub fn unpack_row<T: Element>(packed: &[T], plan: &WindowPlan) -> Result<Vec<T>> {
    let p = plan.pattern();
    let width = plan.lifted_block_len();
    check_width(packed.len(), width)?;
    let mut w = vec![T::default(); packed.len() / width * p.l()];
    for (g, block) in packed.chunks_exact(width).enumerate() {
        for (j, &start) in plan.window_starts().iter().enumerate() {
            for delta in 0..p.hw_n() {
                let v = block[j * p.hw_n() + delta];
                if v.is_zero() {
                    continue;
                }
                let idx = g * p.l() + start + delta;
                if !w[idx].is_zero() {
                    return Err(Error::OutOfRange(format!(
                        "source index {idx} is claimed by more than one window"
                    )));
                }
                w[idx] = v;
            }
        }
    }
    Ok(w)
}

/// Row-wise [`pack_row`]. Rows are packed in parallel; the result does not
/// depend on the degree of parallelism. On failure the error for the lowest
/// offending row is returned.
pub fn pack_matrix<T: Element>(w: &Matrix<T>, pattern: SparsityPattern) -> Result<SlidedMatrix<T>> {
    let plan = WindowPlan::new(pattern)?;
    pack_matrix_with_plan(w, &plan)
}

pub fn pack_matrix_with_plan<T: Element>(w: &Matrix<T>, plan: &WindowPlan) -> Result<SlidedMatrix<T>> {
    let l = plan.pattern().l();
    check_width(w.cols(), l)?;
    let out_cols = w.cols() / l * plan.lifted_block_len();
    let mut out = vec![T::default(); w.rows() * out_cols];
    if out_cols > 0 {
        let results: Vec<Result<()>> = out
            .par_chunks_mut(out_cols)
            .enumerate()
            .map_init(
                || Vec::with_capacity(l),
                |used, (i, dst)| pack_row_into(w.row(i), plan, i, dst, used),
            )
            .collect();
        results.into_iter().collect::<Result<()>>()?;
    }
    Ok(SlidedMatrix { pattern: *plan.pattern(), values: Matrix::from_vec(w.rows(), out_cols, out)? })
}

/// Reconstructs the source matrix from a slided one.
pub fn unpack_matrix<T: Element>(s: &SlidedMatrix<T>) -> Result<Matrix<T>> {
    let plan = s.plan();
    let mut data = Vec::with_capacity(s.rows() * s.source_cols());
    for i in 0..s.rows() {
        data.extend(unpack_row(s.matrix().row(i), &plan)?);
    }
    Matrix::from_vec(s.rows(), s.source_cols(), data)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComplianceReport {
    pub compliant: bool,
    /// `(row, window)` of the first window holding more than `m` nonzeros.
    pub first_violation: Option<(usize, usize)>,
    /// `histogram[k]` = number of windows holding exactly `k` nonzeros.
    pub histogram: Vec<usize>,
}

/// Checks that every aligned `n`-window of every row holds at most `m`
/// nonzeros.
pub fn verify_compliance<T: Element>(mx: &Matrix<T>, m: usize, n: usize) -> Result<ComplianceReport> {
    if n == 0 || mx.cols() % n != 0 {
        return Err(Error::DimensionMismatch(format!(
            "{} columns cannot be split into windows of {n}",
            mx.cols()
        )));
    }
    let mut histogram = vec![0; n + 1];
    let mut first_violation = None;
    for i in 0..mx.rows() {
        for (j, window) in mx.row(i).chunks_exact(n).enumerate() {
            let nnz = window.iter().filter(|v| !v.is_zero()).count();
            histogram[nnz] += 1;
            if nnz > m && first_violation.is_none() {
                first_violation = Some((i, j));
            }
        }
    }
    Ok(ComplianceReport { compliant: first_violation.is_none(), first_violation, histogram })
}

/// Zeroes the `l - z` smallest-magnitude entries of every aligned `l`-block.
/// Ties are broken by pruning the lower index first.
pub fn magnitude_prune<T: Element>(w: &Matrix<T>, pattern: SparsityPattern) -> Result<Matrix<T>> {
    let (z, l) = (pattern.z(), pattern.l());
    check_width(w.cols(), l)?;
    let mut out = w.clone();
    let mut order: Vec<usize> = Vec::with_capacity(l);
    for i in 0..out.rows() {
        for block in out.row_mut(i).chunks_exact_mut(l) {
            order.clear();
            order.extend(0..l);
            order.sort_by(|&a, &b| {
                block[a].to_f64().abs().total_cmp(&block[b].to_f64().abs()).then(a.cmp(&b))
            });
            for &k in &order[..l - z] {
                block[k] = T::default();
            }
        }
    }
    Ok(out)
}

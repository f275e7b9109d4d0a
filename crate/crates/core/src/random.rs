//! Seeded generators for compliant weights and activations.

use rand::seq::index::sample;
use rand::Rng;

use crate::element::Matrix;
use crate::pattern::SparsityPattern;

/// Value source for [`compliant_matrix`].
pub trait RandomNonzero: Copy + Default {
    fn random_nonzero<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl RandomNonzero for i8 {
    fn random_nonzero<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let v: i8 = rng.gen();
            if v != 0 {
                return v;
            }
        }
    }
}

impl RandomNonzero for i32 {
    fn random_nonzero<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let v = rng.gen_range(1..=1000);
        if rng.gen() {
            v
        } else {
            -v
        }
    }
}

impl RandomNonzero for f32 {
    fn random_nonzero<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let v: f32 = rng.gen_range(0.01..1.0);
        if rng.gen() {
            v
        } else {
            -v
        }
    }
}

impl RandomNonzero for f64 {
    fn random_nonzero<R: Rng + ?Sized>(rng: &mut R) -> Self {
        f32::random_nonzero(rng) as f64
    }
}

/// Fills one row with `Z:L`-compliant blocks. Half the blocks carry exactly
/// `z` nonzeros (the hard case for the packer); the rest carry a uniform
/// count in `0..=z`.
pub fn compliant_row<T: RandomNonzero, R: Rng + ?Sized>(rng: &mut R, row: &mut [T], z: usize, l: usize) {
    for block in row.chunks_mut(l) {
        block.fill(T::default());
        let cap = z.min(block.len());
        let nnz = if rng.gen() { cap } else { rng.gen_range(0..=cap) };
        for idx in sample(rng, block.len(), nnz) {
            block[idx] = T::random_nonzero(rng);
        }
    }
}

pub fn compliant_matrix<T: RandomNonzero, R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    pattern: &SparsityPattern,
) -> Matrix<T> {
    let mut m = Matrix::zeros(rows, cols);
    for i in 0..rows {
        compliant_row(rng, m.row_mut(i), pattern.z(), pattern.l());
    }
    m
}

/// Symmetric int8 values in `[-127, 127]`.
pub fn int8_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix<i8> {
    let data = (0..rows * cols).map(|_| rng.gen_range(-127..=127)).collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

pub fn int32_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix<i32> {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1000..=1000)).collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

/// Uniform values in `[-1, 1)`.
pub fn f32_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix<f32> {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

pub fn f64_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix<f64> {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

/// Dense matrix with no zero entries, for pruning.
pub fn dense_matrix<T: RandomNonzero, R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix<T> {
    let data = (0..rows * cols).map(|_| T::random_nonzero(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

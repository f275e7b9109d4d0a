//! Seeded inputs shared by the criterion benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slsp_core::random::{compliant_matrix, f32_matrix};
use slsp_core::{compress, pack_matrix, CompressedSparseMatrix, Matrix, SlidedMatrix, SparsityPattern};

pub const SEED: u64 = 0x5eed;

/// Patterns swept by the benchmarks.
pub fn patterns() -> Vec<SparsityPattern> {
    [3, 4, 5, 8].into_iter().map(|n| SparsityPattern::family(n).expect("family pattern")).collect()
}

pub struct Fixture {
    pub pattern: SparsityPattern,
    pub weights: Matrix<i8>,
    pub slided: SlidedMatrix<i8>,
    pub compressed: CompressedSparseMatrix<i8>,
    /// Tokens by K.
    pub activations: Matrix<f32>,
}

/// `rows x k` compliant int8 weights (k rounded down to whole blocks) and
/// `tokens x k` activations.
pub fn fixture(pattern: SparsityPattern, rows: usize, k: usize, tokens: usize) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let k = k / pattern.l() * pattern.l();
    let weights = compliant_matrix::<i8, _>(&mut rng, rows, k, &pattern);
    let slided = pack_matrix(&weights, pattern).expect("compliant by construction");
    let compressed = compress(&slided).expect("packed output is compliant");
    let activations = f32_matrix(&mut rng, tokens, k);
    Fixture { pattern, weights, slided, compressed, activations }
}

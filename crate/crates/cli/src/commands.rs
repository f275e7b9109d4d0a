use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slsp_core::container::{self, AnyCompressed, AnyMatrix, AnySlided, ContainerError, Tensor};
use slsp_core::packer::{pack_matrix_with_plan, unpack_matrix};
use slsp_core::pattern::ratio_to_f64;
use slsp_core::random::{self, RandomNonzero};
use slsp_core::sparse::check_slided_equivalence;
use slsp_core::{
    compress, decompress, dispatch, fused_quant_slide, magnitude_prune, verify_compliance, Accumulate,
    CompressedSparseMatrix, DType, Element, Matrix, QuantFormat, QuantizedLiftedActivation, SlidedMatrix,
    SparsityPattern, WindowPlan,
};

use crate::{CliError, CliResult, Ctx};

pub(crate) fn format_error(msg: impl Into<String>) -> CliError {
    CliError::Container(ContainerError::Inconsistent(msg.into()))
}

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gen(
    ctx: &mut Ctx,
    out: &Path,
    rows: usize,
    cols: usize,
    dtype: DType,
    pattern: Option<(usize, usize)>,
) -> CliResult {
    fn make<T: RandomNonzero + Element>(seed: u64, rows: usize, cols: usize, zl: Option<(usize, usize)>) -> CliResult<Matrix<T>> {
        let mut r = rng(seed);
        Ok(match zl {
            Some((z, l)) => {
                if z == 0 || z > l || cols % l != 0 {
                    return Err(CliError::Usage(format!("need 0 < z <= l and l dividing {cols}, got {z}:{l}")));
                }
                let mut m = Matrix::zeros(rows, cols);
                for i in 0..rows {
                    random::compliant_row(&mut r, m.row_mut(i), z, l);
                }
                m
            }
            None => random::dense_matrix(&mut r, rows, cols),
        })
    }
    let m: AnyMatrix = match dtype {
        DType::Int8 => make::<i8>(ctx.seed, rows, cols, pattern)?.into(),
        DType::Int32 => make::<i32>(ctx.seed, rows, cols, pattern)?.into(),
        DType::Fp32 => make::<f32>(ctx.seed, rows, cols, pattern)?.into(),
        DType::Fp64 => make::<f64>(ctx.seed, rows, cols, pattern)?.into(),
        DType::Fp8E4M3 => return Err(CliError::Usage("fp8e4m3 is only a quantized activation format".into())),
    };
    container::save(out, &Tensor::Dense(m))?;
    ctx.say(format!("wrote dense {rows}x{cols} {dtype} to {}", out.display()))
}

struct PackSummary {
    rows: usize,
    cols: usize,
    cols_expanded: usize,
    nnz_in: usize,
    pruned: usize,
    nnz_out: usize,
    histogram: Vec<usize>,
}

fn pack_typed<T: Element>(
    w: &Matrix<T>,
    plan: &WindowPlan,
    prune: bool,
    compressed: bool,
) -> CliResult<(Tensor, PackSummary)>
where
    SlidedMatrix<T>: Into<AnySlided>,
    CompressedSparseMatrix<T>: Into<AnyCompressed>,
{
    let p = *plan.pattern();
    let nnz_in = w.nnz();
    let pruned_w;
    let src = if prune {
        pruned_w = magnitude_prune(w, p)?;
        &pruned_w
    } else {
        w
    };
    let s = pack_matrix_with_plan(src, plan)?;
    let report = verify_compliance(s.matrix(), p.hw_m(), p.hw_n())?;
    if let Some((row, window)) = report.first_violation {
        return Err(CliError::Verification(format!("packed row {row} window {window} exceeds {}:{}", p.hw_m(), p.hw_n())));
    }
    let summary = PackSummary {
        rows: w.rows(),
        cols: w.cols(),
        cols_expanded: s.cols_expanded(),
        nnz_in,
        pruned: nnz_in - src.nnz(),
        nnz_out: s.matrix().nnz(),
        histogram: report.histogram,
    };
    let t = if compressed { Tensor::Compressed(compress(&s)?.into()) } else { Tensor::Slided(s.into()) };
    Ok((t, summary))
}

pub fn pack(ctx: &mut Ctx, input: &Path, output: &Path, pattern: SparsityPattern, prune: bool, compressed: bool) -> CliResult {
    let Tensor::Dense(w) = container::load(input)? else {
        return Err(format_error(format!("{} is not a dense container", input.display())));
    };
    let plan = WindowPlan::new(pattern)?;
    let dtype = w.dtype();
    let (t, s) = dispatch!(&w, AnyMatrix, m => pack_typed(m, &plan, prune, compressed))?;
    container::save(output, &t)?;
    ctx.say(format!(
        "pattern {pattern}: {} windows per block, stride {}, gamma {} ({:.3})",
        plan.window_count(),
        plan.stride(),
        plan.expansion(),
        ratio_to_f64(plan.expansion())
    ))?;
    ctx.say(format!("input {}x{} {dtype}, nnz {}", s.rows, s.cols, s.nnz_in))?;
    if prune {
        ctx.say(format!("pruned {} values", s.pruned))?;
    }
    let hist: Vec<String> = s.histogram.iter().enumerate().map(|(k, n)| format!("{k}:{n}")).collect();
    ctx.say(format!(
        "output {} {}x{}, nnz {}, {}:{} compliant, window occupancy {}",
        t.kind().name(),
        s.rows,
        s.cols_expanded,
        s.nnz_out,
        pattern.hw_m(),
        pattern.hw_n(),
        hist.join(" ")
    ))?;
    ctx.say(format!("wrote {}", output.display()))
}

/// Random activations and the default agreement tolerance per dtype.
trait Sample: Accumulate {
    /// `None` means the paths must agree exactly.
    const TOLERANCE: Option<f64>;
    fn sample(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<Self>;
}

impl Sample for i8 {
    const TOLERANCE: Option<f64> = None;
    fn sample(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<Self> {
        random::int8_matrix(r, rows, cols)
    }
}

impl Sample for i32 {
    const TOLERANCE: Option<f64> = None;
    fn sample(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<Self> {
        random::int32_matrix(r, rows, cols)
    }
}

impl Sample for f32 {
    const TOLERANCE: Option<f64> = Some(1.0 / (1u64 << 18) as f64);
    fn sample(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<Self> {
        random::f32_matrix(r, rows, cols)
    }
}

impl Sample for f64 {
    const TOLERANCE: Option<f64> = Some(1.0 / (1u64 << 40) as f64);
    fn sample(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<Self> {
        random::f64_matrix(r, rows, cols)
    }
}

/// Rejects slided matrices that are not the packer's own output: windows
/// over capacity, overlapping claims, or a layout the greedy would not
/// produce from the recovered source.
fn check_slided<T: Element>(ctx: &mut Ctx, s: &SlidedMatrix<T>) -> CliResult {
    let p = *s.pattern();
    let report = verify_compliance(s.matrix(), p.hw_m(), p.hw_n())?;
    if let Some((row, window)) = report.first_violation {
        ctx.say(format!("compliance: FAIL at row {row}, window {window}"))?;
        return Err(CliError::Verification(format!(
            "row {row} window {window} holds more than {} nonzeros",
            p.hw_m()
        )));
    }
    ctx.say(format!("compliance: {}:{} ok", p.hw_m(), p.hw_n()))?;
    let w = unpack_matrix(s).map_err(|e| CliError::Verification(format!("cannot recover source: {e}")))?;
    match pack_matrix_with_plan(&w, &s.plan()) {
        Ok(again) if again == *s => Ok(()),
        Ok(_) => Err(CliError::Verification("layout is not the canonical packing of its source".into())),
        Err(e) => Err(CliError::Verification(format!("recovered source does not repack: {e}"))),
    }
}

fn verify_typed<T: Sample>(
    ctx: &mut Ctx,
    s: &SlidedMatrix<T>,
    trials: usize,
    tokens: usize,
    tolerance: Option<f64>,
) -> CliResult {
    check_slided(ctx, s)?;
    let tol = T::TOLERANCE.map(|d| tolerance.unwrap_or(d));
    let mut r = rng(ctx.seed);
    let (mut agreed, mut max_abs, mut max_scaled) = (0usize, 0f64, 0f64);
    for _ in 0..trials {
        let x = T::sample(&mut r, s.source_cols(), tokens);
        let rep = check_slided_equivalence(s, &x)?;
        max_abs = max_abs.max(rep.max_abs_diff);
        max_scaled = max_scaled.max(rep.max_scaled_diff);
        let ok = match tol {
            None => rep.exact,
            Some(t) => rep.max_scaled_diff <= t,
        };
        agreed += ok as usize;
    }
    let rule = match tol {
        None => "exact".to_string(),
        Some(t) => format!("scaled diff <= {t:e}"),
    };
    ctx.say(format!(
        "trials {trials} ({tokens} tokens each), agreeing {agreed} ({rule}), max |diff| {max_abs:e}, max scaled diff {max_scaled:e}"
    ))?;
    if agreed != trials {
        return Err(CliError::Verification(format!("{} of {trials} trials disagree", trials - agreed)));
    }
    ctx.say("verify: PASS")
}

/// Slided weights from any weight container. Dense inputs are packed with
/// `pattern`.
pub(crate) fn load_slided(path: &Path, pattern: Option<SparsityPattern>) -> CliResult<AnySlided> {
    Ok(match container::load(path)? {
        Tensor::Slided(s) => s,
        Tensor::Compressed(c) => dispatch!(c, AnyCompressed, c => decompress(&c)?.into()),
        Tensor::Dense(w) => {
            let p = pattern.ok_or_else(|| CliError::Usage("dense weights need --pattern".into()))?;
            let plan = WindowPlan::new(p)?;
            dispatch!(w, AnyMatrix, w => pack_matrix_with_plan(&w, &plan)?.into())
        }
        Tensor::QuantizedLifted(_) => return Err(format_error("expected weights, found a quantized activation")),
    })
}

pub fn verify(
    ctx: &mut Ctx,
    weights: &Path,
    pattern: Option<SparsityPattern>,
    trials: usize,
    tokens: usize,
    tolerance: Option<f64>,
) -> CliResult {
    let s = load_slided(weights, pattern)?;
    ctx.say(format!("weights {} ({}), pattern {}", weights.display(), s.dtype(), s.pattern()))?;
    dispatch!(&s, AnySlided, s => verify_typed(ctx, s, trials, tokens, tolerance))
}

pub fn lift(ctx: &mut Ctx, input: &Path, output: &Path, pattern: SparsityPattern, format: QuantFormat) -> CliResult {
    let plan = WindowPlan::new(pattern)?;
    let a = match container::load(input)? {
        Tensor::Dense(AnyMatrix::F32(x)) => fused_quant_slide(&x, &plan, format)?,
        Tensor::Dense(AnyMatrix::I8(x)) => {
            if format != QuantFormat::Int8 {
                return Err(CliError::Usage("int8 activations can only be lifted as int8".into()));
            }
            QuantizedLiftedActivation::from_int8(&x, &plan)?
        }
        Tensor::Dense(m) => return Err(format_error(format!("cannot lift {} activations", m.dtype()))),
        other => return Err(format_error(format!("expected a dense activation, found {}", other.kind().name()))),
    };
    container::save(output, &Tensor::QuantizedLifted(a.clone()))?;
    ctx.say(format!(
        "lifted {} rows to {} codes ({} words) per row, {}, gamma {}",
        a.rows(),
        a.lifted_cols(),
        a.words_per_row(),
        format.dtype(),
        plan.expansion()
    ))?;
    ctx.say(format!("wrote {}", output.display()))
}

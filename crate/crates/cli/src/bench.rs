use std::hint::black_box;
use std::path::Path;
use std::time::Instant;

use slsp_core::activation::{pack_bytes, quantize_row};
use slsp_core::container::AnySlided;
use slsp_core::packer::unpack_matrix;
use slsp_core::pattern::Ratio;
use slsp_core::random;
use slsp_core::sparse::{dense_gemm_counted, sparse_gemm_counted};
use slsp_core::{compress, fused_quant_slide, Matrix, QuantFormat, SparsityPattern};

use crate::commands::{format_error, load_slided, rng};
use crate::{CliError, CliResult, Ctx};

pub struct Options {
    pub m_list: Vec<usize>,
    pub repeats: usize,
    pub warmup: usize,
}

struct Row {
    m: usize,
    path: &'static str,
    mean_ns: f64,
    stddev_ns: f64,
    multiplies: Option<u64>,
}

fn time<R>(opts: &Options, mut f: impl FnMut() -> R) -> (f64, f64) {
    for _ in 0..opts.warmup {
        black_box(f());
    }
    let samples: Vec<f64> = (0..opts.repeats)
        .map(|_| {
            let t = Instant::now();
            black_box(f());
            t.elapsed().as_nanos() as f64
        })
        .collect();
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn run(ctx: &mut Ctx, weights: &Path, pattern: Option<SparsityPattern>, opts: &Options, out: Option<&Path>) -> CliResult {
    if opts.repeats == 0 || opts.m_list.contains(&0) {
        return Err(CliError::Usage("--repeats and every --m-list value must be positive".into()));
    }
    let AnySlided::I8(s) = load_slided(weights, pattern)? else {
        return Err(format_error("bench needs int8 weights"));
    };
    let p = *s.pattern();
    let plan = s.plan();
    let w = unpack_matrix(&s)?;
    let c = compress(&s)?;
    let k = w.cols();
    // Sparse multiplies per dense multiply: gamma * hw_m / hw_n.
    let predicted = plan.expansion() * Ratio::new(p.hw_m() as u64, p.hw_n() as u64);
    ctx.say(format!("weights {}x{} int8, pattern {p}, predicted op ratio {predicted}", w.rows(), k))?;

    let mut rows = Vec::new();
    for &m in &opts.m_list {
        let x = random::f32_matrix(&mut rng(ctx.seed ^ m as u64), m, k);

        let quantize_only = || -> Vec<(Vec<u32>, f32)> {
            (0..m)
                .map(|i| {
                    let q = quantize_row(x.row(i), QuantFormat::Int8).expect("finite activations");
                    (pack_bytes(&q.codes), q.scale)
                })
                .collect()
        };
        let (mean, sd) = time(opts, quantize_only);
        rows.push(Row { m, path: "quantize_only", mean_ns: mean, stddev_ns: sd, multiplies: None });

        let (mean, sd) = time(opts, || fused_quant_slide(&x, &plan, QuantFormat::Int8).expect("finite activations"));
        rows.push(Row { m, path: "fused_quant_slide", mean_ns: mean, stddev_ns: sd, multiplies: None });

        let a = fused_quant_slide(&x, &plan, QuantFormat::Int8)?;
        let mut codes = Matrix::zeros(k, m);
        for t in 0..m {
            for (j, &b) in quantize_row(x.row(t), QuantFormat::Int8)?.codes.iter().enumerate() {
                codes.set(j, t, b as i8);
            }
        }
        let dense = dense_gemm_counted(&w, &codes)?;
        let sparse = sparse_gemm_counted(&c, &a)?;
        if dense.output != sparse.output {
            return Err(CliError::Verification(format!("sparse and dense outputs differ at m = {m}")));
        }
        let observed = Ratio::new(sparse.multiplies, dense.multiplies.max(1));
        if dense.multiplies > 0 && observed != predicted {
            return Err(CliError::Verification(format!(
                "op ratio {observed} at m = {m} differs from predicted {predicted}"
            )));
        }

        let (mean, sd) = time(opts, || dense_gemm_counted(&w, &codes).expect("shapes checked"));
        rows.push(Row { m, path: "dense_gemm", mean_ns: mean, stddev_ns: sd, multiplies: Some(dense.multiplies) });
        let (mean, sd) = time(opts, || sparse_gemm_counted(&c, &a).expect("shapes checked"));
        rows.push(Row { m, path: "sparse_gemm", mean_ns: mean, stddev_ns: sd, multiplies: Some(sparse.multiplies) });

        ctx.say(format!(
            "m={m}: dense {} multiplies, sparse {} (ratio {observed}, predicted {predicted})",
            dense.multiplies, sparse.multiplies
        ))?;
    }

    for r in &rows {
        ctx.say(format!(
            "{:>5} {:<18} {:>14.0} ns +- {:>12.0}",
            r.m, r.path, r.mean_ns, r.stddev_ns
        ))?;
    }
    if let Some(path) = out {
        let mut wtr = csv::Writer::from_path(path)?;
        wtr.write_record(["m", "path", "mean_ns", "stddev_ns", "multiplies"])?;
        for r in &rows {
            wtr.write_record([
                r.m.to_string(),
                r.path.to_string(),
                format!("{:.1}", r.mean_ns),
                format!("{:.1}", r.stddev_ns),
                r.multiplies.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        wtr.flush()?;
        ctx.say(format!("wrote {}", path.display()))?;
    }
    Ok(())
}

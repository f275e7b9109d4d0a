//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fail.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slsp_core::activation::{fused_quant_slide, quantize_then_lift, QuantFormat};
use slsp_core::analyzer::{case_table, efficiency, r_theory_table, EfficiencyInput, DEFAULT_FAMILY};
use slsp_core::container::{self, ContainerError, Tensor};
use slsp_core::packer::{allocate_block, pack_matrix, verify_compliance, SlidedMatrix};
use slsp_core::pattern::{ratio_to_f64, Ratio, SparsityPattern, WindowPlan};
use slsp_core::random::{compliant_matrix, f32_matrix, int8_matrix};
use slsp_core::sparse::{compress, dense_gemm_counted, sparse_gemm_counted, sparse_gemm_lifted};
use slsp_core::{check_equivalence, lift_row, Error, Matrix};

type Outcome = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    }};
}

const LOSSLESS_PATTERNS: [(usize, usize); 4] = [(4, 6), (6, 8), (8, 10), (14, 16)];

fn p24(z: usize, l: usize) -> SparsityPattern {
    SparsityPattern::new(z, l, 2, 4).unwrap()
}

fn ac01_lossless() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xac01);
    let mut outputs = 0usize;
    for &(z, l) in &LOSSLESS_PATTERNS {
        let p = p24(z, l);
        for trial in 0..1000 {
            let rows = rng.gen_range(1..=64);
            let k = l * rng.gen_range(1..=256 / l);
            let tokens = rng.gen_range(1..=16);
            let w = compliant_matrix::<i8, _>(&mut rng, rows, k, &p);
            let x = int8_matrix(&mut rng, k, tokens);
            let rep = check_equivalence(&w, &x, p).map_err(|e| e.to_string())?;
            ensure!(rep.exact && rep.max_abs_diff == 0.0, "{z}:{l} trial {trial}: max diff {}", rep.max_abs_diff);
            outputs += rows * tokens;
        }
    }
    Ok(format!("4000 trials, {outputs} outputs, all exact"))
}

fn ac02_compliance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xac02);
    for &(z, l) in &DEFAULT_FAMILY {
        let p = p24(z, l);
        let w = compliant_matrix::<i8, _>(&mut rng, 10_000, 2 * l, &p);
        let s = pack_matrix(&w, p).map_err(|e| e.to_string())?;
        let rep = verify_compliance(s.matrix(), 2, 4).map_err(|e| e.to_string())?;
        ensure!(rep.compliant, "{z}:{l}: violation at {:?}", rep.first_violation);
    }
    // Negative controls: an extra nonzero in a full window, and an
    // over-dense source row.
    let p = p24(6, 8);
    let w = Matrix::from_vec(1, 8, vec![1i8, 2, 3, 0, 4, 5, 0, 6]).unwrap();
    let mut m = pack_matrix(&w, p).unwrap().into_matrix();
    m.set(0, 2, 7);
    let rep = verify_compliance(&m, 2, 4).unwrap();
    ensure!(!rep.compliant && rep.first_violation == Some((0, 0)), "injected violation not detected");
    let dense = Matrix::from_vec(1, 8, vec![1i8; 8]).unwrap();
    ensure!(
        matches!(pack_matrix(&dense, p), Err(Error::NotCompliant { row: 0, block: 0, nnz: 8, max: 6 })),
        "over-dense row accepted"
    );
    Ok("5 patterns x 10000 rows compliant; negative controls rejected".into())
}

fn ac03_case_table() -> Outcome {
    let expected = [
        ((4, 6), "1.33", "1.50"),
        ((6, 8), "1.50", "1.33"),
        ((8, 10), "1.60", "1.25"),
        ((10, 12), "1.67", "1.20"),
        ((14, 16), "1.75", "1.14"),
    ];
    let rows = case_table(2, 4, &DEFAULT_FAMILY).map_err(|e| e.to_string())?;
    for (row, ((z, l), gamma, s_eff)) in rows.iter().zip(expected) {
        let g = format!("{:.2}", ratio_to_f64(row.gamma));
        let s = format!("{:.2}", ratio_to_f64(row.s_eff));
        ensure!((row.z, row.l) == (z, l), "row order");
        ensure!(g == gamma && s == s_eff, "{z}:{l}: gamma {g} s_eff {s}, expected {gamma} {s_eff}");
        ensure!(row.achieves_bound && row.s_eff == Ratio::new(l as u64, z as u64), "{z}:{l} misses bound");
        let n = (l / 2) as u64;
        ensure!(row.gamma == Ratio::new(2, 1) - Ratio::new(2, n), "{z}:{l}: gamma != 2 - 2/N");
    }
    Ok("gamma 1.33/1.50/1.60/1.67/1.75, s_eff 1.50/1.33/1.25/1.20/1.14, all at bound".into())
}

fn ac04_r_theory() -> Outcome {
    let expected = [("2:4", "1.000"), ("4:6", "0.750"), ("6:8", "0.667"), ("8:10", "0.625"), ("dense", "0.500")];
    let table = r_theory_table();
    ensure!(table.len() == expected.len(), "table has {} rows", table.len());
    for (row, (label, r)) in table.iter().zip(expected) {
        let got = format!("{:.3}", ratio_to_f64(row.r_theory));
        ensure!(row.label == label && got == r, "{}: {got}, expected {label} {r}", row.label);
    }
    Ok("1.000 0.750 0.667 0.625 0.500".into())
}

fn ac05_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xac05);
    let hws = [(2, 4), (1, 4), (2, 8), (1, 2), (3, 4), (4, 8), (1, 8)];
    let (mut cases, mut one_four, mut attempts) = (0, 0, 0);
    while (cases < 2000 || one_four < 200) && attempts < 1_000_000 {
        attempts += 1;
        let (m, n) = hws[rng.gen_range(0..hws.len())];
        let l = rng.gen_range(1..=64);
        let z = rng.gen_range(1..=l);
        let p = SparsityPattern::new(z, l, m, n).unwrap();
        let Ok(plan) = WindowPlan::new(p) else { continue };
        cases += 1;
        let bound = Ratio::new(l as u64, z as u64);
        ensure!(plan.s_eff() <= bound, "{p}: s_eff {} > {bound}", plan.s_eff());
        if (m, n) == (1, 4) {
            one_four += 1;
            ensure!(plan.s_eff() == bound, "{p}: s_eff {} != {bound}", plan.s_eff());
        }
    }
    ensure!(cases >= 500 && one_four > 0, "only {cases} valid cases");
    Ok(format!("{cases} valid plans within bound, {one_four} on 1:4 all equal to l/z"))
}

fn ac06_sharpness() -> Outcome {
    for n in [3usize, 4, 5, 8] {
        let p = SparsityPattern::family(n).unwrap();
        let plan = WindowPlan::new(p).unwrap();
        ensure!(plan.window_count() == n - 1, "N={n}: {} windows", plan.window_count());
        ensure!(2 * (n - 1) >= p.z() && 2 * (n - 2) < p.z(), "N={n}: capacity arithmetic");
        let block: Vec<i8> = (1..=p.l() as i8).map(|v| if (v as usize) <= p.z() { v } else { 0 }).collect();
        ensure!(allocate_block(&block, plan.window_starts(), 2, 4).is_complete(), "N={n}: N-1 windows fail");
        let fewer: Vec<usize> = (0..n - 2).map(|j| 2 * j).collect();
        let alloc = allocate_block(&block, &fewer, 2, 4);
        ensure!(!alloc.is_complete(), "N={n}: N-2 windows succeed");
        ensure!(
            matches!(WindowPlan::with_window_count(p, n - 2), Err(Error::InsufficientCapacity { .. })),
            "N={n}: N-2 windows accepted by the planner"
        );
    }
    Ok("N in {3,4,5,8}: N-1 windows pack, N-2 leave a nonzero unplaced".into())
}

fn ac07_fusion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xac07);
    let mut padded = 0;
    for &(z, l) in &DEFAULT_FAMILY {
        let plan = WindowPlan::new(p24(z, l)).unwrap();
        for fmt in [QuantFormat::Int8, QuantFormat::Fp8E4M3] {
            for chunk in 0..10 {
                let cols = if chunk % 2 == 0 { l * rng.gen_range(1..8) } else { rng.gen_range(1..8 * l) };
                padded += (cols % l != 0) as usize;
                let mut x = f32_matrix(&mut rng, 100, cols);
                for i in (0..100).step_by(10) {
                    x.row_mut(i).fill(0.0);
                }
                let fused = fused_quant_slide(&x, &plan, fmt).map_err(|e| e.to_string())?;
                let two_step = quantize_then_lift(&x, &plan, fmt).map_err(|e| e.to_string())?;
                ensure!(fused == two_step, "{z}:{l} {fmt:?} cols {cols}: fused differs");
            }
        }
    }
    Ok(format!("5 patterns x 2 formats x 1000 rows bit-identical ({padded} padded widths)"))
}

fn ac08_worked_example() -> Outcome {
    let p = p24(6, 8);
    let w = Matrix::from_vec(1, 8, vec![1i8, 2, 3, 0, 4, 5, 0, 6]).unwrap();
    let s = pack_matrix(&w, p).map_err(|e| e.to_string())?;
    ensure!(s.matrix().row(0) == [1, 2, 0, 0, 3, 0, 4, 0, 0, 5, 0, 6], "packed {:?}", s.matrix().row(0));
    let x: Vec<i8> = (1..=8).collect();
    let dense = dense_gemm_counted(&w, &Matrix::from_vec(8, 1, x.clone()).unwrap()).unwrap();
    let lifted = lift_row(&x, &s.plan()).unwrap();
    let c = compress(&s).unwrap();
    let sparse = sparse_gemm_lifted(&c, &Matrix::from_vec(1, 12, lifted).unwrap()).unwrap();
    let (d, sp) = (dense.output.get(0, 0), sparse.output.get(0, 0));
    ensure!(d == 112 && sp == 112, "dense {d}, sparse {sp}");
    Ok("[1,2,0,0|3,0,4,0|0,5,0,6], dense 112, sparse 112".into())
}

fn ac09_efficiency() -> Outcome {
    let run = |s24, sp, z, l| efficiency(EfficiencyInput { s_baseline_24: s24, s_pattern: sp, z, l }).unwrap().percent;
    let a = run(2.0, 4.0 / 3.0, 6, 8);
    let b = run(1.0, 1.0, 1, 1);
    let c = run(2.08, 1.42, 6, 8);
    ensure!(format!("{a:.1}") == "100.0", "theoretical point {a}");
    ensure!(format!("{b:.1}") == "200.0", "parity {b}");
    ensure!((c - 102.4).abs() <= 0.1, "measured case {c}");
    Ok(format!("{a:.1}% {b:.1}% {c:.1}%"))
}

fn ac10_determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_slsp");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let input = dir.path().join("w.slsp");
    let run = |args: &[&str], threads: Option<usize>| -> Result<(), String> {
        let mut cmd = Command::new(bin);
        cmd.args(args).arg("--quiet").env_remove("SLSP_THREADS");
        if let Some(t) = threads {
            cmd.args(["--threads", &t.to_string()]);
        }
        let o = cmd.output().map_err(|e| e.to_string())?;
        ensure!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        Ok(())
    };
    let inp = input.to_string_lossy().into_owned();
    run(&["gen", "--out", &inp, "--rows", "512", "--cols", "1024", "--pattern", "6:8", "--seed", "10"], None)?;
    let max = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let mut reference: Vec<Option<Vec<u8>>> = vec![None, None];
    let mut files = 0;
    for (variant, extra) in [&[][..], &["--compress"][..]].iter().enumerate() {
        let configs = (0..5).map(|_| None).chain([1, 4, max].into_iter().map(Some));
        for (k, threads) in configs.enumerate() {
            let out = dir.path().join(format!("out-{variant}-{k}.slsp")).to_string_lossy().into_owned();
            let mut args = vec!["pack", inp.as_str(), out.as_str(), "--pattern", "6:8"];
            args.extend_from_slice(extra);
            run(&args, threads)?;
            let bytes = std::fs::read(&out).map_err(|e| e.to_string())?;
            match &reference[variant] {
                None => reference[variant] = Some(bytes),
                Some(r) => ensure!(*r == bytes, "variant {variant} run {k} (threads {threads:?}) differs"),
            }
            files += 1;
        }
    }
    Ok(format!("{files} pack outputs byte-identical (5 runs + threads 1/4/{max}, slided and compressed)"))
}

fn ac11_op_count() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xac11);
    let mut report = Vec::new();
    let patterns: Vec<SparsityPattern> = DEFAULT_FAMILY
        .iter()
        .map(|&(z, l)| p24(z, l))
        .chain([SparsityPattern::new(7, 10, 1, 4).unwrap(), SparsityPattern::new(4, 4, 2, 4).unwrap()])
        .collect();
    for p in patterns {
        let plan = WindowPlan::new(p).unwrap();
        let k = 4 * p.l();
        let w = compliant_matrix::<i8, _>(&mut rng, 8, k, &p);
        let x = f32_matrix(&mut rng, 5, k);
        let a = fused_quant_slide(&x, &plan, QuantFormat::Int8).unwrap();
        let sparse = sparse_gemm_counted(&compress(&pack_matrix(&w, p).unwrap()).unwrap(), &a).unwrap();
        let dense = dense_gemm_counted(&w, &int8_matrix(&mut rng, k, 5)).unwrap();
        let observed = Ratio::new(sparse.multiplies, dense.multiplies);
        let predicted = plan.expansion() * Ratio::new(p.hw_m() as u64, p.hw_n() as u64);
        ensure!(observed == predicted, "{p}: {observed} != {predicted}");
        report.push(format!("{}:{}={observed}", p.z(), p.l()));
    }
    Ok(report.join(" "))
}

fn ac12_container() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xac12);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = p24(6, 8);
    let w = compliant_matrix::<i8, _>(&mut rng, 6, 32, &p);
    let s: SlidedMatrix<i8> = pack_matrix(&w, p).unwrap();
    let a = fused_quant_slide(&f32_matrix(&mut rng, 4, 29), &s.plan(), QuantFormat::Int8).unwrap();
    let wf = compliant_matrix::<f64, _>(&mut rng, 3, 16, &p);
    let fixtures = [
        Tensor::Dense(w.clone().into()),
        Tensor::Dense(wf.clone().into()),
        Tensor::Slided(s.clone().into()),
        Tensor::Slided(pack_matrix(&wf, p).unwrap().into()),
        Tensor::Compressed(compress(&s).unwrap().into()),
        Tensor::QuantizedLifted(a),
    ];
    let mut encoded = Vec::new();
    for (i, t) in fixtures.iter().enumerate() {
        let path = dir.path().join(format!("f{i}.slsp"));
        container::save(&path, t).map_err(|e| e.to_string())?;
        let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
        let back = container::load(&path).map_err(|e| e.to_string())?;
        ensure!(back == *t, "fixture {i}: load differs");
        ensure!(back.to_bytes().unwrap() == bytes, "fixture {i}: re-encode differs");
        encoded.push(bytes);
    }
    let mut detected = 0;
    for m in 0..100 {
        let mut bytes = encoded[m % encoded.len()].clone();
        let pos = rng.gen_range(0..bytes.len());
        bytes[pos] ^= rng.gen_range(1..=255u8);
        match Tensor::from_bytes(&bytes) {
            Err(ContainerError::ChecksumMismatch { .. }) => detected += 1,
            Err(e) => return Err(format!("mutation {m} at byte {pos} reported as `{e}`, not a checksum mismatch")),
            Ok(_) => return Err(format!("mutation {m} at byte {pos} not detected")),
        }
    }
    ensure!(detected == 100, "{detected}/100 detected");
    Ok(format!("{} fixtures over 4 kinds round-trip byte-exact; {detected}/100 mutations caught by CRC", fixtures.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        ("AC-01", "lossless int8 equivalence", ac01_lossless),
        ("AC-02", "packed output compliance", ac02_compliance),
        ("AC-03", "case table", ac03_case_table),
        ("AC-04", "R_theory table", ac04_r_theory),
        ("AC-05", "density bound", ac05_bound),
        ("AC-06", "window-count sharpness", ac06_sharpness),
        ("AC-07", "fused transform equivalence", ac07_fusion),
        ("AC-08", "worked example", ac08_worked_example),
        ("AC-09", "efficiency metric", ac09_efficiency),
        ("AC-10", "pack determinism", ac10_determinism),
        ("AC-11", "multiply-count ratio", ac11_op_count),
        ("AC-12", "container round-trip and corruption", ac12_container),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or(e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("{id} PASS {name}: {detail} ({secs:.2}s)"),
            Err(why) => {
                failed += 1;
                println!("{id} FAIL {name}: {why} ({secs:.2}s)");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 12 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

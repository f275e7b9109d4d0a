use std::fs::File;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use slsp_core::analyzer::{
    case_row, case_table, efficiency, io_cost, r_theory_table, CaseRow, EfficiencyInput, EfficiencyReport,
    DEFAULT_FAMILY,
};
use slsp_core::pattern::{ratio_to_f64, Ratio};
use slsp_core::SparsityPattern;

use crate::{CliError, CliResult, Ctx, HwArgs};

pub enum Mode {
    Pattern { pattern: SparsityPattern, rows: usize, cols: Option<usize> },
    Table { hw: HwArgs, family: Vec<(usize, usize)> },
    RTheory,
    Efficiency(PathBuf),
}

#[derive(Debug, Deserialize)]
struct EfficiencyRecord {
    s_24: f64,
    s_pattern: f64,
    z: usize,
    l: usize,
}

fn exact(r: Ratio) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: serde::Serialize + ?Sized>(path: &Path, value: &T) -> CliResult {
    serde_json::to_writer_pretty(File::create(path)?, value)?;
    Ok(())
}

const CASE_HEADER: [&str; 10] =
    ["z", "l", "windows", "density", "gamma", "gamma_exact", "s_eff", "s_eff_exact", "bound", "achieves_bound"];

fn case_csv(r: &CaseRow) -> Vec<String> {
    vec![
        r.z.to_string(),
        r.l.to_string(),
        r.window_count.to_string(),
        format!("{:.4}", ratio_to_f64(r.density)),
        format!("{:.4}", ratio_to_f64(r.gamma)),
        exact(r.gamma),
        format!("{:.4}", ratio_to_f64(r.s_eff)),
        exact(r.s_eff),
        format!("{:.4}", ratio_to_f64(r.bound)),
        r.achieves_bound.to_string(),
    ]
}

pub fn run(ctx: &mut Ctx, mode: Mode, json: Option<&Path>, csv_out: Option<&Path>) -> CliResult {
    match mode {
        Mode::Pattern { pattern, rows, cols } => {
            let row = case_row(pattern)?;
            let cost = io_cost(rows, cols.unwrap_or(pattern.l()), pattern)?;
            ctx.say(format!("pattern {pattern}, alpha {}", exact(pattern.alpha())))?;
            ctx.say(format!("windows {}, density {:.1}%", row.window_count, 100.0 * ratio_to_f64(row.density)))?;
            ctx.say(format!("gamma={:.3} ({})", ratio_to_f64(row.gamma), exact(row.gamma)))?;
            ctx.say(format!("s_eff={:.3} ({})", ratio_to_f64(row.s_eff), exact(row.s_eff)))?;
            ctx.say(format!("bound={:.3} ({}), achieves bound: {}", ratio_to_f64(row.bound), exact(row.bound), row.achieves_bound))?;
            ctx.say(format!(
                "io per {}x{} activation: two-step {}, fused {}, quantize-only {}, fused overhead {}",
                cost.rows,
                cost.cols,
                cost.io_two_step,
                cost.io_fused,
                cost.io_quantize_only,
                exact(cost.fused_overhead)
            ))?;
            if let Some(p) = json {
                write_json(p, &serde_json::json!({ "case": row, "cost": cost }))?;
            }
            if let Some(p) = csv_out {
                write_csv(p, &CASE_HEADER, &[case_csv(&row)])?;
            }
        }
        Mode::Table { hw, family } => {
            let family = if family.is_empty() { DEFAULT_FAMILY.to_vec() } else { family };
            let rows = match hw.alpha {
                None => case_table(hw.hw.0, hw.hw.1, &family)?,
                Some(_) => family.iter().map(|&zl| case_row(hw.pattern(zl)?).map_err(CliError::from)).collect::<CliResult<_>>()?,
            };
            ctx.say(format!("{:>7} {:>7} {:>8} {:>6} {:>6} {:>6}  bound?", "z:l", "windows", "density", "gamma", "s_eff", "bound"))?;
            for r in &rows {
                ctx.say(format!(
                    "{:>7} {:>7} {:>7.1}% {:>6.2} {:>5.2}x {:>5.2}x  {}",
                    format!("{}:{}", r.z, r.l),
                    r.window_count,
                    100.0 * ratio_to_f64(r.density),
                    ratio_to_f64(r.gamma),
                    ratio_to_f64(r.s_eff),
                    ratio_to_f64(r.bound),
                    if r.achieves_bound { "yes" } else { "no" }
                ))?;
            }
            if let Some(p) = json {
                write_json(p, &rows)?;
            }
            if let Some(p) = csv_out {
                write_csv(p, &CASE_HEADER, &rows.iter().map(case_csv).collect::<Vec<_>>())?;
            }
        }
        Mode::RTheory => {
            let rows = r_theory_table();
            ctx.say(format!("{:>7} {:>8} {:>9} {:>9}", "pattern", "density", "s_theory", "r_theory"))?;
            for r in &rows {
                ctx.say(format!(
                    "{:>7} {:>8.3} {:>9.2} {:>9.3}",
                    r.label,
                    ratio_to_f64(r.density),
                    ratio_to_f64(r.s_theory),
                    ratio_to_f64(r.r_theory)
                ))?;
            }
            if let Some(p) = json {
                write_json(p, &rows)?;
            }
            if let Some(p) = csv_out {
                let body: Vec<Vec<String>> = rows
                    .iter()
                    .map(|r| {
                        vec![
                            r.label.clone(),
                            format!("{:.4}", ratio_to_f64(r.density)),
                            format!("{:.4}", ratio_to_f64(r.s_theory)),
                            format!("{:.4}", ratio_to_f64(r.r_theory)),
                        ]
                    })
                    .collect();
                write_csv(p, &["pattern", "density", "s_theory", "r_theory"], &body)?;
            }
        }
        Mode::Efficiency(path) => {
            let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(&path)?;
            let headers = reader.headers()?.clone();
            if headers.iter().collect::<Vec<_>>() != ["s_24", "s_pattern", "z", "l"] {
                return Err(CliError::Usage(format!(
                    "{}: expected header `s_24,s_pattern,z,l`, found `{}`",
                    path.display(),
                    headers.iter().collect::<Vec<_>>().join(",")
                )));
            }
            let mut reports: Vec<EfficiencyReport> = Vec::new();
            for rec in reader.deserialize::<EfficiencyRecord>() {
                let rec = rec?;
                reports.push(efficiency(EfficiencyInput {
                    s_baseline_24: rec.s_24,
                    s_pattern: rec.s_pattern,
                    z: rec.z,
                    l: rec.l,
                })?);
            }
            for r in &reports {
                ctx.say(format!(
                    "{}:{}  s_24 {}  s_pattern {}  r_actual {:.4}  r_theory {:.4}  efficiency {:.1}%",
                    r.input.z, r.input.l, r.input.s_baseline_24, r.input.s_pattern, r.r_actual, r.r_theory, r.percent
                ))?;
            }
            if let Some(p) = json {
                write_json(p, &reports)?;
            }
            if let Some(p) = csv_out {
                let body: Vec<Vec<String>> = reports
                    .iter()
                    .map(|r| {
                        vec![
                            r.input.s_baseline_24.to_string(),
                            r.input.s_pattern.to_string(),
                            r.input.z.to_string(),
                            r.input.l.to_string(),
                            format!("{:.6}", r.r_actual),
                            format!("{:.6}", r.r_theory),
                            format!("{:.1}", r.percent),
                        ]
                    })
                    .collect();
                write_csv(p, &["s_24", "s_pattern", "z", "l", "r_actual", "r_theory", "efficiency_pct"], &body)?;
            }
        }
    }
    Ok(())
}

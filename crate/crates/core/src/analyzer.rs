//! Closed-form cost model: case tables, the algorithmic-efficiency metric and
//! a logical I/O count for the activation transform.
//!
//! Measured speedups are inputs only; nothing here times anything.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::pattern::{ratio_to_f64, Ratio, SparsityPattern, WindowPlan};

/// The `(2N-2):2N` rows reported for 2:4 hardware.
pub const DEFAULT_FAMILY: [(usize, usize); 5] = [(4, 6), (6, 8), (8, 10), (10, 12), (14, 16)];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseRow {
    pub z: usize,
    pub l: usize,
    pub window_count: usize,
    #[serde(serialize_with = "ser_ratio")]
    pub density: Ratio,
    #[serde(serialize_with = "ser_ratio")]
    pub gamma: Ratio,
    #[serde(serialize_with = "ser_ratio")]
    pub s_eff: Ratio,
    #[serde(serialize_with = "ser_ratio")]
    pub bound: Ratio,
    pub achieves_bound: bool,
}

fn ser_ratio<S: serde::Serializer>(r: &Ratio, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeStruct;
    let mut st = s.serialize_struct("Ratio", 2)?;
    st.serialize_field("exact", &format!("{}/{}", r.numer(), r.denom()))?;
    st.serialize_field("value", &ratio_to_f64(*r))?;
    st.end()
}

pub fn case_row(pattern: SparsityPattern) -> Result<CaseRow> {
    let plan = WindowPlan::new(pattern)?;
    let bound = pattern.speedup_bound();
    Ok(CaseRow {
        z: pattern.z(),
        l: pattern.l(),
        window_count: plan.window_count(),
        density: pattern.density(),
        gamma: plan.expansion(),
        s_eff: plan.s_eff(),
        bound,
        achieves_bound: plan.s_eff() == bound,
    })
}

/// One row per `(z, l)` for the given hardware pattern.
pub fn case_table(hw_m: usize, hw_n: usize, family: &[(usize, usize)]) -> Result<Vec<CaseRow>> {
    family
        .iter()
        .map(|&(z, l)| case_row(SparsityPattern::new(z, l, hw_m, hw_n)?))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RTheoryRow {
    pub label: String,
    #[serde(serialize_with = "ser_ratio")]
    pub density: Ratio,
    #[serde(serialize_with = "ser_ratio")]
    pub s_theory: Ratio,
    #[serde(serialize_with = "ser_ratio")]
    pub r_theory: Ratio,
}

/// Theoretical speedup ratio against native 2:4: `0.5 / density`.
pub fn r_theory(density: Ratio) -> Ratio {
    Ratio::new(1, 2) / density
}

/// Density-only speedups for 2:4, the first family members and dense.
pub fn r_theory_table() -> Vec<RTheoryRow> {
    let row = |label: &str, density: Ratio| RTheoryRow {
        label: label.to_string(),
        density,
        s_theory: Ratio::from_integer(1) / density,
        r_theory: r_theory(density),
    };
    vec![
        row("2:4", Ratio::new(2, 4)),
        row("4:6", Ratio::new(4, 6)),
        row("6:8", Ratio::new(6, 8)),
        row("8:10", Ratio::new(8, 10)),
        row("dense", Ratio::from_integer(1)),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EfficiencyInput {
    /// Measured speedup of native 2:4 over dense.
    pub s_baseline_24: f64,
    /// Measured speedup of the pattern over dense.
    pub s_pattern: f64,
    pub z: usize,
    pub l: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EfficiencyReport {
    pub input: EfficiencyInput,
    pub r_actual: f64,
    pub r_theory: f64,
    pub percent: f64,
}

/// `(s_pattern / s_baseline_24) / r_theory * 100`.
pub fn efficiency(inp: EfficiencyInput) -> Result<EfficiencyReport> {
    if inp.s_baseline_24.is_nan() || inp.s_baseline_24 <= 0.0 {
        return Err(Error::ZeroBaseline);
    }
    if !inp.s_pattern.is_finite() || inp.s_pattern <= 0.0 || !inp.s_baseline_24.is_finite() {
        return Err(Error::OutOfRange(format!("speedups must be positive, got {}", inp.s_pattern)));
    }
    if inp.z == 0 || inp.z > inp.l {
        return Err(Error::InvalidPattern(format!("need 0 < z <= l, got {}:{}", inp.z, inp.l)));
    }
    let r_theory = ratio_to_f64(r_theory(Ratio::new(inp.z as u64, inp.l as u64)));
    let r_actual = inp.s_pattern / inp.s_baseline_24;
    Ok(EfficiencyReport { input: inp, r_actual, r_theory, percent: r_actual / r_theory * 100.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostModelReport {
    pub rows: usize,
    pub cols: usize,
    #[serde(serialize_with = "ser_ratio")]
    pub gamma: Ratio,
    #[serde(serialize_with = "ser_ratio")]
    pub s_eff_theoretical: Ratio,
    #[serde(serialize_with = "ser_ratio")]
    pub speedup_bound: Ratio,
    /// Stored weight values relative to dense, `z / l`.
    #[serde(serialize_with = "ser_ratio")]
    pub memory_ratio: Ratio,
    /// Read X, write X', read X', write lifted Y.
    pub io_two_step: u64,
    /// Read X, write lifted Y.
    pub io_fused: u64,
    /// Read X, write X' (plain quantization, no lifting).
    pub io_quantize_only: u64,
    /// Extra writes of the fused transform over plain quantization, per
    /// source element: `gamma - 1`.
    #[serde(serialize_with = "ser_ratio")]
    pub fused_overhead: Ratio,
}

/// Logical element transfers per activation matrix of `rows x cols`.
pub fn io_cost(rows: usize, cols: usize, pattern: SparsityPattern) -> Result<CostModelReport> {
    let plan = WindowPlan::new(pattern)?;
    let lifted = plan.lifted_len(cols) as u64;
    let (r, k) = (rows as u64, cols as u64);
    let gamma = plan.expansion();
    Ok(CostModelReport {
        rows,
        cols,
        gamma,
        s_eff_theoretical: plan.s_eff(),
        speedup_bound: pattern.speedup_bound(),
        memory_ratio: pattern.density(),
        io_two_step: r * (3 * k + lifted),
        io_fused: r * (k + lifted),
        io_quantize_only: r * 2 * k,
        fused_overhead: gamma - Ratio::from_integer(1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: u64, d: u64) -> Ratio {
        Ratio::new(n, d)
    }

    #[test]
    fn two_four_row() {
        let rows = case_table(2, 4, &[(2, 4)]).unwrap();
        assert_eq!(rows[0].gamma, r(1, 1));
        assert_eq!(rows[0].s_eff, r(2, 1));
        assert!(rows[0].achieves_bound);
    }

    #[test]
    fn one_four_reaches_bound() {
        let row = case_row(SparsityPattern::new(7, 10, 1, 4).unwrap()).unwrap();
        assert_eq!(row.s_eff, r(10, 7));
        assert!(row.achieves_bound);
    }

    #[test]
    fn r_theory_values() {
        let t = r_theory_table();
        let got: Vec<Ratio> = t.iter().map(|row| row.r_theory).collect();
        assert_eq!(got, vec![r(1, 1), r(3, 4), r(2, 3), r(5, 8), r(1, 2)]);
        let s: Vec<Ratio> = t.iter().map(|row| row.s_theory).collect();
        assert_eq!(s, vec![r(2, 1), r(3, 2), r(4, 3), r(5, 4), r(1, 1)]);
    }

    #[test]
    fn efficiency_examples() {
        let e = efficiency(EfficiencyInput { s_baseline_24: 2.0, s_pattern: 4.0 / 3.0, z: 6, l: 8 }).unwrap();
        assert!((e.percent - 100.0).abs() < 1e-9);
        let e = efficiency(EfficiencyInput { s_baseline_24: 1.0, s_pattern: 1.0, z: 1, l: 1 }).unwrap();
        assert!((e.percent - 200.0).abs() < 1e-9);
        let e = efficiency(EfficiencyInput { s_baseline_24: 2.08, s_pattern: 1.42, z: 6, l: 8 }).unwrap();
        assert!((e.percent - 102.4).abs() < 0.05, "{}", e.percent);
    }

    #[test]
    fn efficiency_errors() {
        let base = EfficiencyInput { s_baseline_24: 0.0, s_pattern: 1.0, z: 6, l: 8 };
        assert_eq!(efficiency(base), Err(Error::ZeroBaseline));
        assert!(efficiency(EfficiencyInput { s_baseline_24: 1.0, s_pattern: -1.0, ..base }).is_err());
        assert!(efficiency(EfficiencyInput { s_baseline_24: 1.0, z: 0, ..base }).is_err());
    }

    #[test]
    fn io_examples() {
        let c = io_cost(16, 4096, SparsityPattern::family(4).unwrap()).unwrap();
        assert_eq!(c.fused_overhead, r(1, 2));
        assert_eq!(c.io_fused, 16 * (4096 + 6144));
        assert_eq!(c.io_two_step, 16 * (3 * 4096 + 6144));
        assert_eq!(c.memory_ratio, r(3, 4));

        let id = io_cost(4, 64, SparsityPattern::identity(2, 4).unwrap()).unwrap();
        assert_eq!(id.io_fused, id.io_quantize_only);

        let c = io_cost(1, 6, SparsityPattern::family(3).unwrap()).unwrap();
        assert_eq!(c.fused_overhead, r(1, 3));
    }
}

//! Sparsity patterns and window plans.
//!
//! A [`SparsityPattern`] pairs a source `Z:L` budget (at most `z` nonzeros in
//! every aligned block of `l`) with a hardware `M:N` constraint (at most
//! `hw_m` nonzeros in every aligned window of `hw_n`). A [`WindowPlan`] lays
//! out the overlapping hardware windows that cover one source block.
//!
//! All ratios are exact rationals so that equalities such as
//! `s_eff == l / z` can be asserted without tolerance.

use std::fmt;

use crate::error::{Error, Result};

pub type Ratio = num_rational::Ratio<u64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SparsityPattern {
    z: usize,
    l: usize,
    hw_m: usize,
    hw_n: usize,
    alpha: Option<Ratio>,
}

impl SparsityPattern {
    pub fn new(z: usize, l: usize, hw_m: usize, hw_n: usize) -> Result<Self> {
        if z == 0 || z > l {
            return Err(Error::InvalidPattern(format!("need 0 < z <= l, got {z}:{l}")));
        }
        if hw_m == 0 || hw_m >= hw_n {
            return Err(Error::InvalidPattern(format!(
                "need 0 < m < n for hardware pattern, got {hw_m}:{hw_n}"
            )));
        }
        Ok(Self { z, l, hw_m, hw_n, alpha: None })
    }

    /// The `(2n-2):2n` pattern on 2:4 hardware.
    pub fn family(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidPattern(format!("family parameter must be >= 2, got {n}")));
        }
        Self::new(2 * n - 2, 2 * n, 2, 4)
    }

    /// Overrides the hardware speedup, e.g. with a measured value.
    pub fn with_alpha(mut self, alpha: Ratio) -> Result<Self> {
        if alpha == Ratio::from_integer(0) {
            return Err(Error::InvalidPattern("alpha must be positive".into()));
        }
        self.alpha = Some(alpha);
        Ok(self)
    }

    pub fn z(&self) -> usize {
        self.z
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn hw_m(&self) -> usize {
        self.hw_m
    }

    pub fn hw_n(&self) -> usize {
        self.hw_n
    }

    /// Hardware speedup of `M:N` sparse over dense. Defaults to `hw_n / hw_m`.
    pub fn alpha(&self) -> Ratio {
        self.alpha.unwrap_or_else(|| self.nominal_alpha())
    }

    pub fn nominal_alpha(&self) -> Ratio {
        Ratio::new(self.hw_n as u64, self.hw_m as u64)
    }

    pub fn density(&self) -> Ratio {
        Ratio::new(self.z as u64, self.l as u64)
    }

    pub fn hw_density(&self) -> Ratio {
        Ratio::new(self.hw_m as u64, self.hw_n as u64)
    }

    /// Window stride of the canonical sliding construction, `hw_n - hw_m`.
    pub fn hw_stride(&self) -> usize {
        self.hw_n - self.hw_m
    }

    /// True when `z/l < hw_m/hw_n`: the source can run on the hardware
    /// directly without decomposition.
    pub fn is_already_compliant(&self) -> bool {
        self.density() < self.hw_density()
    }

    /// `l / z`, the density-determined ceiling on effective speedup.
    pub fn speedup_bound(&self) -> Ratio {
        Ratio::new(self.l as u64, self.z as u64)
    }

    /// Pattern whose source and hardware constraint coincide; decomposition
    /// is the identity.
    pub fn identity(hw_m: usize, hw_n: usize) -> Result<Self> {
        Self::new(hw_m, hw_n, hw_m, hw_n)
    }
}

impl fmt::Display for SparsityPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{} on {}:{}", self.z, self.l, self.hw_m, self.hw_n)
    }
}

/// Parses `"a:b"` into `(a, b)`.
pub fn parse_pair(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected `a:b`, got `{s}`"))?;
    let a = a.trim().parse().map_err(|e| format!("bad number `{a}`: {e}"))?;
    let b = b.trim().parse().map_err(|e| format!("bad number `{b}`: {e}"))?;
    Ok((a, b))
}

/// Parses a positive decimal (`2.08`) or fraction (`4/3`) into an exact ratio.
pub fn parse_ratio(s: &str) -> std::result::Result<Ratio, String> {
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: u64 = n.trim().parse().map_err(|e| format!("bad numerator in `{s}`: {e}"))?;
        let d: u64 = d.trim().parse().map_err(|e| format!("bad denominator in `{s}`: {e}"))?;
        if d == 0 {
            return Err(format!("zero denominator in `{s}`"));
        }
        return Ok(Ratio::new(n, d));
    }
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if frac.len() > 18 || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format!("bad decimal `{s}`"));
    }
    let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|e| format!("bad decimal `{s}`: {e}"))? };
    let scale = 10u64.pow(frac.len() as u32);
    let frac: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|e| format!("bad decimal `{s}`: {e}"))? };
    let num = int
        .checked_mul(scale)
        .and_then(|v| v.checked_add(frac))
        .ok_or_else(|| format!("decimal `{s}` out of range"))?;
    Ok(Ratio::new(num, scale))
}

pub fn ratio_to_f64(r: Ratio) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Layout of hardware windows over one source block.
///
/// Window `j` of group `g` covers source indices
/// `g * l + window_starts[j] .. g * l + window_starts[j] + hw_n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPlan {
    pattern: SparsityPattern,
    window_count: usize,
    stride: usize,
    window_starts: Vec<usize>,
    expansion: Ratio,
    s_eff: Ratio,
}

impl WindowPlan {
    /// Minimal plan: `ceil(z / hw_m)` windows, spread evenly across the block.
    pub fn new(pattern: SparsityPattern) -> Result<Self> {
        if pattern.is_already_compliant() {
            return Err(Error::AlreadyCompliant {
                z: pattern.z,
                l: pattern.l,
                hw_m: pattern.hw_m,
                hw_n: pattern.hw_n,
            });
        }
        Self::with_window_count(pattern, pattern.z.div_ceil(pattern.hw_m))
    }

    /// Plan with an explicit window count. Windows are placed at a uniform
    /// stride so the first starts at 0 and the last ends at `l`.
    pub fn with_window_count(pattern: SparsityPattern, window_count: usize) -> Result<Self> {
        let (l, hw_m, hw_n) = (pattern.l, pattern.hw_m, pattern.hw_n);
        let capacity = window_count * hw_m;
        if capacity < pattern.z {
            return Err(Error::InsufficientCapacity { windows: window_count, capacity, z: pattern.z });
        }
        let tiling_err = || Error::NonIntegralWindowCount { l, windows: window_count, hw_n };
        if l < hw_n {
            return Err(tiling_err());
        }
        let stride = if window_count == 1 {
            if l != hw_n {
                return Err(tiling_err());
            }
            0
        } else {
            let span = l - hw_n;
            if span % (window_count - 1) != 0 {
                return Err(tiling_err());
            }
            span / (window_count - 1)
        };
        if stride > hw_n {
            // Gaps between windows would leave source positions uncovered.
            return Err(tiling_err());
        }
        let window_starts = (0..window_count).map(|j| j * stride).collect();
        let expansion = Ratio::new((window_count * hw_n) as u64, l as u64);
        let s_eff = pattern.alpha() / expansion;
        Ok(Self { pattern, window_count, stride, window_starts, expansion, s_eff })
    }

    pub fn pattern(&self) -> &SparsityPattern {
        &self.pattern
    }

    pub fn window_count(&self) -> usize {
        self.window_count
    }

    /// Distance between consecutive window starts; 0 for a single window.
    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn window_starts(&self) -> &[usize] {
        &self.window_starts
    }

    /// Expansion factor `window_count * hw_n / l`.
    pub fn expansion(&self) -> Ratio {
        self.expansion
    }

    /// Theoretical effective speedup `alpha / expansion`.
    pub fn s_eff(&self) -> Ratio {
        self.s_eff
    }

    pub fn capacity(&self) -> usize {
        self.window_count * self.pattern.hw_m
    }

    /// Positions shared by adjacent windows.
    pub fn overlap(&self) -> usize {
        if self.window_count < 2 {
            0
        } else {
            self.pattern.hw_n - self.stride
        }
    }

    /// Whether greedy allocation places every nonzero of every `Z:L`-compliant
    /// block.
    ///
    /// A window keeps its `hw_m` earliest free nonzeros, so anything it
    /// rejects sits at least `hw_m` past its start. Rejections therefore land
    /// inside the next window exactly when `stride <= hw_m`. With a larger
    /// stride, `hw_m + 1` nonzeros packed into the first `stride` positions
    /// are only visible to window 0 and cannot all be placed.
    pub fn coverage_guaranteed(&self) -> bool {
        self.window_count == 1 || self.stride <= self.pattern.hw_m
    }

    /// True when the layout is the canonical `hw_n - hw_m` stride.
    pub fn uses_hardware_stride(&self) -> bool {
        self.window_count == 1 || self.stride == self.pattern.hw_stride()
    }

    /// Lifted (expanded) length of one source block.
    pub fn lifted_block_len(&self) -> usize {
        self.window_count * self.pattern.hw_n
    }

    /// Source groups needed to cover `cols` elements, padding the tail.
    pub fn groups_for(&self, cols: usize) -> usize {
        cols.div_ceil(self.pattern.l)
    }

    pub fn lifted_len(&self, cols: usize) -> usize {
        self.groups_for(cols) * self.lifted_block_len()
    }
}

pub fn plan_decomposition(pattern: SparsityPattern) -> Result<WindowPlan> {
    WindowPlan::new(pattern)
}

pub fn expansion_factor(pattern: SparsityPattern) -> Result<Ratio> {
    WindowPlan::new(pattern).map(|p| p.expansion())
}

pub fn speedup_bound(pattern: SparsityPattern) -> Ratio {
    pattern.speedup_bound()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: u64, d: u64) -> Ratio {
        Ratio::new(n, d)
    }

    fn pat(z: usize, l: usize, m: usize, n: usize) -> SparsityPattern {
        SparsityPattern::new(z, l, m, n).unwrap()
    }

    #[test]
    fn six_eight_plan() {
        let plan = plan_decomposition(pat(6, 8, 2, 4)).unwrap();
        assert_eq!(plan.window_count(), 3);
        assert_eq!(plan.window_starts(), &[0, 2, 4]);
        assert_eq!(plan.expansion(), r(3, 2));
        assert_eq!(plan.s_eff(), r(4, 3));
        assert_eq!(plan.overlap(), 2);
        assert!(plan.coverage_guaranteed());
    }

    #[test]
    fn two_four_is_identity() {
        let plan = plan_decomposition(pat(2, 4, 2, 4)).unwrap();
        assert_eq!(plan.window_count(), 1);
        assert_eq!(plan.window_starts(), &[0]);
        assert_eq!(plan.expansion(), r(1, 1));
        assert_eq!(plan.s_eff(), r(2, 1));
    }

    #[test]
    fn fourteen_sixteen_plan() {
        let plan = plan_decomposition(pat(14, 16, 2, 4)).unwrap();
        assert_eq!(plan.window_count(), 7);
        assert_eq!(plan.expansion(), r(7, 4));
        assert_eq!(plan.s_eff(), r(8, 7));
    }

    #[test]
    fn three_ten_on_one_four() {
        let p = pat(3, 10, 1, 4);
        let plan = plan_decomposition(p).unwrap();
        assert_eq!(plan.window_count(), 3);
        assert_eq!(plan.window_starts(), &[0, 3, 6]);
        assert_eq!(plan.capacity(), 3);
        assert_eq!(plan.expansion(), r(6, 5));
        assert_eq!(plan.s_eff(), r(10, 3));
        assert_eq!(plan.s_eff(), p.speedup_bound());
        // stride 3 > capacity 1: clustered nonzeros are not placeable
        assert!(!plan.coverage_guaranteed());
    }

    #[test]
    fn seven_ten_on_one_four_reaches_bound() {
        let p = pat(7, 10, 1, 4);
        let plan = plan_decomposition(p).unwrap();
        assert_eq!(plan.window_count(), 7);
        assert_eq!(plan.stride(), 1);
        assert_eq!(plan.expansion(), r(14, 5));
        assert_eq!(plan.s_eff(), r(10, 7));
        assert!(plan.coverage_guaranteed());
    }

    #[test]
    fn expansion_examples() {
        assert_eq!(expansion_factor(pat(4, 6, 2, 4)).unwrap(), r(4, 3));
        assert_eq!(expansion_factor(pat(10, 12, 2, 4)).unwrap(), r(5, 3));
        for (z, l) in [(3, 10), (7, 10), (4, 13), (5, 8)] {
            let g = expansion_factor(pat(z, l, 1, 4));
            if let Ok(g) = g {
                assert_eq!(g, r(4 * z as u64, l as u64), "{z}:{l}");
            }
        }
    }

    #[test]
    fn speedup_bound_examples() {
        assert_eq!(speedup_bound(pat(6, 8, 2, 4)), r(4, 3));
        assert!((ratio_to_f64(speedup_bound(pat(7, 10, 2, 4))) - 1.43).abs() < 0.005);
        assert_eq!(speedup_bound(pat(4, 4, 2, 4)), r(1, 1));
    }

    #[test]
    fn already_compliant_is_signalled() {
        assert!(matches!(
            plan_decomposition(pat(1, 4, 2, 4)),
            Err(Error::AlreadyCompliant { .. })
        ));
        assert!(matches!(
            plan_decomposition(pat(3, 8, 2, 4)),
            Err(Error::AlreadyCompliant { .. })
        ));
    }

    #[test]
    fn insufficient_capacity() {
        let p = SparsityPattern::family(4).unwrap();
        assert_eq!(
            WindowPlan::with_window_count(p, 2),
            Err(Error::InsufficientCapacity { windows: 2, capacity: 4, z: 6 })
        );
    }

    #[test]
    fn non_integral_layout() {
        // 7:12 on 2:4 needs 4 windows over a span of 8: stride 8/3.
        assert!(matches!(
            plan_decomposition(pat(7, 12, 2, 4)),
            Err(Error::NonIntegralWindowCount { .. })
        ));
        // block shorter than the hardware window
        assert!(matches!(
            plan_decomposition(pat(2, 3, 2, 4)),
            Err(Error::NonIntegralWindowCount { .. })
        ));
    }

    #[test]
    fn invalid_patterns_rejected() {
        assert!(SparsityPattern::new(0, 8, 2, 4).is_err());
        assert!(SparsityPattern::new(9, 8, 2, 4).is_err());
        assert!(SparsityPattern::new(6, 8, 4, 4).is_err());
        assert!(SparsityPattern::new(6, 8, 0, 4).is_err());
        assert!(SparsityPattern::family(1).is_err());
    }

    #[test]
    fn alpha_override_scales_s_eff() {
        let p = SparsityPattern::family(4).unwrap().with_alpha(r(208, 100)).unwrap();
        let plan = plan_decomposition(p).unwrap();
        assert_eq!(plan.s_eff(), r(208, 100) / r(3, 2));
        assert!(p.with_alpha(r(0, 1)).is_err());
    }

    #[test]
    fn parse_helpers() {
        assert_eq!(parse_pair("6:8"), Ok((6, 8)));
        assert!(parse_pair("6-8").is_err());
        assert_eq!(parse_ratio("2.08"), Ok(r(52, 25)));
        assert_eq!(parse_ratio("4/3"), Ok(r(4, 3)));
        assert_eq!(parse_ratio("2"), Ok(r(2, 1)));
        assert_eq!(parse_ratio(".5"), Ok(r(1, 2)));
        assert!(parse_ratio("1/0").is_err());
        assert!(parse_ratio("x").is_err());
    }

    #[test]
    fn family_closed_forms() {
        for n in 3..=64usize {
            let p = SparsityPattern::family(n).unwrap();
            let plan = plan_decomposition(p).unwrap();
            assert_eq!(plan.window_count(), n - 1);
            // capacity of one fewer window falls short
            assert!(2 * (n - 2) < 2 * n - 2);
            // general formula (l - m) n / (l (n - m)) against 2 - 2/N
            let general = r(((2 * n - 2) * 4) as u64, (2 * n * 2) as u64);
            assert_eq!(plan.expansion(), general);
            assert_eq!(plan.expansion(), r(2, 1) - r(2, n as u64));
            assert_eq!(plan.s_eff(), p.speedup_bound());
            assert!(plan.uses_hardware_stride());
            if n > 3 {
                let prev = plan_decomposition(SparsityPattern::family(n - 1).unwrap()).unwrap();
                assert!(plan.expansion() > prev.expansion());
                assert!(plan.s_eff() < prev.s_eff());
            }
            assert!(plan.expansion() < r(2, 1));
            assert!(plan.s_eff() > r(1, 1));
        }
    }
}

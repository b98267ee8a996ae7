//! Hypothesis tests and the distribution tails they need.
//!
//! Tail probabilities come from the regularized incomplete beta and gamma
//! functions, evaluated by series or modified-Lentz continued fractions.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EPS: f64 = 1e-15;
const TINY: f64 = 1e-300;
const MAX_ITER: usize = 10_000;

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    let t = x + 7.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    1.0 - gamma_q(a, x)
}

/// Regularized upper incomplete gamma `Q(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        // series for P
        let mut ap = a;
        let mut del = 1.0 / a;
        let mut sum = del;
        for _ in 0..MAX_ITER {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        1.0 - sum * ln_front.exp()
    } else {
        // continued fraction for Q
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..=MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < EPS {
                break;
            }
        }
        ln_front.exp() * h
    }
}

/// `P(F > f)` for the F distribution with `(d1, d2)` degrees of freedom.
pub fn f_sf(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    inc_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f))
}

/// `P(X > x)` for chi-square with `k` degrees of freedom.
pub fn chi2_sf(x: f64, k: f64) -> f64 {
    gamma_q(k / 2.0, x / 2.0)
}

pub fn erfc(x: f64) -> f64 {
    if x >= 0.0 {
        gamma_q(0.5, x * x)
    } else {
        2.0 - gamma_q(0.5, x * x)
    }
}

/// Standard normal upper tail `P(Z > z)`.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EffectMagnitude {
    Small,
    Medium,
    Large,
}

impl EffectMagnitude {
    /// Large above 0.26, medium above 0.13, small otherwise.
    pub fn from_eta_squared(eta2: f64) -> Self {
        if eta2 > 0.26 {
            EffectMagnitude::Large
        } else if eta2 > 0.13 {
            EffectMagnitude::Medium
        } else {
            EffectMagnitude::Small
        }
    }
}

impl fmt::Display for EffectMagnitude {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EffectMagnitude::Small => "small",
            EffectMagnitude::Medium => "medium",
            EffectMagnitude::Large => "large",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsResult {
    pub test: String,
    pub statistic: f64,
    pub p_value: f64,
    /// Equal to `p_value` until a multiple-comparison correction is applied.
    pub adjusted_p: f64,
    /// η² for ANOVA, Cramér's V for contingency tables.
    pub effect_size: Option<f64>,
    pub magnitude: Option<EffectMagnitude>,
}

impl StatsResult {
    fn new(test: &str, statistic: f64, p_value: f64) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        StatsResult {
            test: test.to_string(),
            statistic,
            p_value,
            adjusted_p: p_value,
            effect_size: None,
            magnitude: None,
        }
    }
}

/// One-way ANOVA. The effect size is η² = SSB / SST.
pub fn anova_one_way(groups: &[&[f64]]) -> Result<StatsResult> {
    if groups.len() < 2 {
        return Err(Error::Stats("ANOVA needs at least two groups".into()));
    }
    if groups.iter().any(|g| g.len() < 2) {
        return Err(Error::Stats("ANOVA needs at least two values per group".into()));
    }
    let k = groups.len() as f64;
    let n: usize = groups.iter().map(|g| g.len()).sum();
    let grand = groups.iter().flat_map(|g| g.iter()).sum::<f64>() / n as f64;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for g in groups {
        let m = g.iter().sum::<f64>() / g.len() as f64;
        ssb += g.len() as f64 * (m - grand).powi(2);
        ssw += g.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    }
    let sst = ssb + ssw;
    if sst == 0.0 {
        return Err(Error::Stats("all values identical; F is undefined".into()));
    }
    let df1 = k - 1.0;
    let df2 = n as f64 - k;
    let (f, p) = if ssw == 0.0 { (f64::INFINITY, 0.0) } else {
        let f = (ssb / df1) / (ssw / df2);
        (f, f_sf(f, df1, df2))
    };
    let eta2 = ssb / sst;
    let mut r = StatsResult::new("one-way ANOVA", f, p);
    r.effect_size = Some(eta2);
    r.magnitude = Some(EffectMagnitude::from_eta_squared(eta2));
    Ok(r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankSumTest {
    /// `statistic` is Mann-Whitney U for the first sample.
    pub result: StatsResult,
    /// One-sided p for the alternative "first sample tends smaller".
    pub p_less: f64,
    /// One-sided p for the alternative "first sample tends larger".
    pub p_greater: f64,
    pub exact: bool,
}

/// Midranks (1-based) of the pooled values, and the tie-group sizes.
fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

const EXACT_LIMIT: usize = 12;

/// Wilcoxon rank-sum (Mann-Whitney) test with midranks for ties.
///
/// With at most 12 pooled values the null distribution is enumerated
/// exactly; otherwise a normal approximation with tie-corrected variance and
/// continuity correction is used. Two-sided p counts rank assignments at
/// least as far from the null mean as the observed U.
pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64]) -> Result<RankSumTest> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Stats("rank-sum test needs two non-empty samples".into()));
    }
    let na = a.len();
    let nb = b.len();
    let n = na + nb;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let rank_sum_a: f64 = ranks[..na].iter().sum();
    let offset = (na * (na + 1)) as f64 / 2.0;
    let u = rank_sum_a - offset;
    let mu = (na * nb) as f64 / 2.0;

    let (p_two, p_less, p_greater, exact) = if n <= EXACT_LIMIT {
        // Count subsets of size na by their sum of doubled midranks.
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let max_sum: usize = doubled.iter().sum();
        let mut dp = vec![vec![0u64; max_sum + 1]; na + 1];
        dp[0][0] = 1;
        for &r in &doubled {
            for j in (1..=na).rev() {
                for s in (r..=max_sum).rev() {
                    dp[j][s] += dp[j - 1][s - r];
                }
            }
        }
        let total: u64 = dp[na].iter().sum();
        let observed = 2.0 * u;
        let dev = (observed - 2.0 * mu).abs();
        let (mut two, mut less, mut greater) = (0u64, 0u64, 0u64);
        for (s, &count) in dp[na].iter().enumerate() {
            if count == 0 {
                continue;
            }
            let u2 = s as f64 - 2.0 * offset;
            if (u2 - 2.0 * mu).abs() >= dev - 1e-9 {
                two += count;
            }
            if u2 <= observed + 1e-9 {
                less += count;
            }
            if u2 >= observed - 1e-9 {
                greater += count;
            }
        }
        let t = total as f64;
        (two as f64 / t, less as f64 / t, greater as f64 / t, true)
    } else {
        let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>();
        let var = (na * nb) as f64 / 12.0 * ((n + 1) as f64 - tie_term / (n * (n - 1)) as f64);
        if var <= 0.0 {
            (1.0, 1.0, 1.0, false)
        } else {
            let sd = var.sqrt();
            let z_two = ((u - mu).abs() - 0.5).max(0.0) / sd;
            let p_two = (2.0 * normal_sf(z_two)).min(1.0);
            let p_less = 1.0 - normal_sf((u - mu + 0.5) / sd);
            let p_greater = normal_sf((u - mu - 0.5) / sd);
            (p_two, p_less, p_greater, false)
        }
    };
    Ok(RankSumTest {
        result: StatsResult::new("Wilcoxon rank-sum", u, p_two.min(1.0)),
        p_less: p_less.min(1.0),
        p_greater: p_greater.min(1.0),
        exact,
    })
}

/// Pearson chi-square test of independence on a 2x2 table, without
/// continuity correction. Effect size is Cramér's V.
pub fn chi_square_proportions(table: [[f64; 2]; 2]) -> Result<StatsResult> {
    let rows = [table[0][0] + table[0][1], table[1][0] + table[1][1]];
    let cols = [table[0][0] + table[1][0], table[0][1] + table[1][1]];
    if rows.iter().chain(&cols).any(|&m| m <= 0.0) {
        return Err(Error::Stats("chi-square table has a zero marginal".into()));
    }
    let total = rows[0] + rows[1];
    let mut chi2 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let e = rows[i] * cols[j] / total;
            chi2 += (table[i][j] - e).powi(2) / e;
        }
    }
    let mut r = StatsResult::new("chi-square (1 df)", chi2, chi2_sf(chi2, 1.0));
    r.effect_size = Some((chi2 / total).sqrt());
    Ok(r)
}

/// Holm step-down adjustment; output is in input order.
pub fn holm_bonferroni(p_values: &[f64]) -> Result<Vec<f64>> {
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Stats(format!("p-value {p} outside [0,1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]).then(i.cmp(&j)));
    let mut adjusted = vec![0.0; m];
    let mut running: f64 = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        let scaled = ((m - rank) as f64 * p_values[i]).min(1.0);
        running = running.max(scaled);
        adjusted[i] = running;
    }
    Ok(adjusted)
}

/// Applies [`holm_bonferroni`] across a family of results in place.
pub fn adjust_family(results: &mut [StatsResult]) -> Result<()> {
    let ps: Vec<f64> = results.iter().map(|r| r.p_value).collect();
    for (r, adj) in results.iter_mut().zip(holm_bonferroni(&ps)?) {
        r.adjusted_p = adj;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn special_function_references() {
        // scipy.special values
        assert_abs_diff_eq!(inc_beta(2.5, 3.5, 0.4), 0.4869041915261176, epsilon = 1e-12);
        assert_abs_diff_eq!(gamma_p(3.0, 2.5), 0.45618688411667035, epsilon = 1e-12);
        assert_abs_diff_eq!(ln_gamma(10.5), 13.940625219403763, epsilon = 1e-12);
        assert_abs_diff_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(normal_sf(1.96), 0.024997895148220435, epsilon = 1e-12);
        assert_abs_diff_eq!(normal_sf(-1.0), 1.0 - 0.15865525393145707, epsilon = 1e-12);
    }

    #[test]
    fn anova_fixture() {
        let r = anova_one_way(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]).unwrap();
        assert_abs_diff_eq!(r.statistic, 13.5, epsilon = 1e-9);
        assert_abs_diff_eq!(r.effect_size.unwrap(), 13.5 / 17.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.p_value, 0.02131164112875672, epsilon = 1e-10);
        assert_eq!(r.magnitude, Some(EffectMagnitude::Large));
    }

    #[test]
    fn anova_degenerate_cases() {
        let r = anova_one_way(&[&[1.0, 3.0], &[1.0, 3.0]]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.effect_size, Some(0.0));
        assert_eq!(r.p_value, 1.0);

        let r = anova_one_way(&[&[1.0, 1.0], &[2.0, 2.0]]).unwrap();
        assert!(r.statistic.is_infinite());
        assert_eq!(r.p_value, 0.0);

        assert!(anova_one_way(&[&[2.0, 2.0], &[2.0, 2.0]]).is_err());
        assert!(anova_one_way(&[&[2.0, 2.0]]).is_err());
        assert!(anova_one_way(&[&[2.0], &[1.0, 3.0]]).is_err());
    }

    #[test]
    fn eta_labels() {
        assert_eq!(EffectMagnitude::from_eta_squared(0.14), EffectMagnitude::Medium);
        assert_eq!(EffectMagnitude::from_eta_squared(0.27), EffectMagnitude::Large);
        assert_eq!(EffectMagnitude::from_eta_squared(0.10), EffectMagnitude::Small);
        assert_eq!(EffectMagnitude::from_eta_squared(0.26), EffectMagnitude::Medium);
        assert_eq!(EffectMagnitude::from_eta_squared(0.13), EffectMagnitude::Small);
    }

    #[test]
    fn rank_sum_separated() {
        let r = wilcoxon_rank_sum(&[1.0, 2.0, 3.0], &[10.0, 11.0, 12.0]).unwrap();
        assert!(r.exact);
        assert_eq!(r.result.statistic, 0.0);
        assert_abs_diff_eq!(r.result.p_value, 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(r.p_less, 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(r.p_greater, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn rank_sum_identical_samples() {
        let r = wilcoxon_rank_sum(&[1.0, 2.0, 2.0, 5.0], &[1.0, 2.0, 2.0, 5.0]).unwrap();
        assert_eq!(r.result.statistic, 8.0);
        assert_eq!(r.result.p_value, 1.0);
        assert!(wilcoxon_rank_sum(&[], &[1.0]).is_err());
    }

    #[test]
    fn rank_sum_normal_branch() {
        let a: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..20).map(|i| i as f64 + 0.5).collect();
        let r = wilcoxon_rank_sum(&a, &b).unwrap();
        assert!(!r.exact);
        assert!(r.result.p_value > 0.5 && r.result.p_value <= 1.0);
        let far: Vec<f64> = b.iter().map(|x| x + 100.0).collect();
        let r2 = wilcoxon_rank_sum(&a, &far).unwrap();
        assert!(r2.result.p_value < 1e-6);
        assert!(r2.p_less < 1e-6 && r2.p_greater > 0.99);
    }

    #[test]
    fn chi_square_fixtures() {
        let r = chi_square_proportions([[50.0, 50.0], [50.0, 50.0]]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        let r = chi_square_proportions([[90.0, 10.0], [10.0, 90.0]]).unwrap();
        assert_abs_diff_eq!(r.statistic, 128.0, epsilon = 1e-9);
        let swapped = chi_square_proportions([[10.0, 90.0], [90.0, 10.0]]).unwrap();
        assert_eq!(swapped.statistic, r.statistic);
        assert!(chi_square_proportions([[0.0, 0.0], [3.0, 4.0]]).is_err());
    }

    #[test]
    fn holm_fixtures() {
        let adj = holm_bonferroni(&[0.01, 0.04, 0.03]).unwrap();
        for (got, want) in adj.iter().zip([0.03, 0.06, 0.06]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-15);
        }
        assert_eq!(holm_bonferroni(&[0.2]).unwrap(), vec![0.2]);
        assert_eq!(holm_bonferroni(&[1.0, 1.0, 1.0]).unwrap(), vec![1.0, 1.0, 1.0]);
        assert!(holm_bonferroni(&[1.2]).is_err());
    }
}

//! Hypothesis tests: Bonferroni-corrected binomial tail, Kendall's τ,
//! Mann-Whitney U, Welch's t and a Fisher-z one-sample test.
//!
//! All p-values are one-sided. A p-value that falls below the smallest
//! positive normal `f64` is reported as `0.0` with `underflow` set.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestKind {
    Binomial,
    MannWhitneyU,
    WelchT,
    FisherZ,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// Binomial: `ln(V·p_nominal)`; Mann-Whitney: U of the first sample;
    /// Welch / Fisher-z: the t statistic.
    pub statistic: f64,
    pub p_value: f64,
    pub test_kind: TestKind,
    pub n_a: usize,
    pub n_b: usize,
    pub underflow: bool,
}

impl TestResult {
    fn new(kind: TestKind, statistic: f64, p: f64, n_a: usize, n_b: usize) -> Self {
        let p = if p.is_nan() { 1.0 } else { p.clamp(0.0, 1.0) };
        let underflow = p < f64::MIN_POSITIVE;
        Self {
            statistic,
            p_value: if underflow { 0.0 } else { p },
            test_kind: kind,
            n_a,
            n_b,
            underflow,
        }
    }
}

/// `ln C(n, k)` as a sum of `min(k, n−k)` logs. Slower than `ln Γ` but free
/// of the cancellation between three large log-gamma values.
fn ln_choose(n: u64, k: u64) -> f64 {
    let m = k.min(n - k);
    let base = (n - m) as f64;
    (1..=m).map(|i| ((base + i as f64) / i as f64).ln()).sum()
}

fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// `ln P(X ≥ k)` for `X ~ Binomial(n, p)`, summing whichever tail is shorter
/// to compute in log space.
pub fn ln_binomial_upper_tail(k: u64, n: u64, p: f64) -> f64 {
    if k == 0 {
        return 0.0;
    }
    if k > n {
        return f64::NEG_INFINITY;
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let upper = k as f64 > n as f64 * p;
    let (lo, hi) = if upper { (k, n) } else { (0, k - 1) };
    // walk the pmf by its ratio recurrence from the first term; past the
    // mean the upper-tail terms only shrink, so stop once they are negligible
    let mut terms = Vec::new();
    let mut t = ln_choose(n, lo) + lo as f64 * lp + (n - lo) as f64 * lq;
    for j in lo..=hi {
        terms.push(t);
        t += ((n - j) as f64 / (j + 1) as f64).ln() + lp - lq;
        if upper && t < terms[0] - 800.0 {
            break;
        }
    }
    let total = log_sum_exp(terms.iter().copied());
    if upper {
        total
    } else {
        // 1 − P(X ≤ k−1), accurate because the result is not small
        (-total.exp_m1()).max(0.0).ln()
    }
}

/// Bonferroni-corrected significance of the most frequent token: with
/// `p_nominal = P(X ≥ k_max)`, `X ~ Binomial(N, 1/V)`, returns
/// `min(1, V·p_nominal)`.
pub fn top1_binomial_pvalue(k_max: u64, n: u64, vocab: u64) -> Result<TestResult> {
    if k_max > n {
        return Err(Error::invalid(format!("k_max {k_max} exceeds N {n}")));
    }
    if vocab == 0 {
        return Err(Error::invalid("vocabulary size must be at least 1"));
    }
    // with one token every draw hits it: P(X ≥ k) = 1
    let ln_nominal = if vocab == 1 {
        0.0
    } else {
        ln_binomial_upper_tail(k_max, n, 1.0 / vocab as f64)
    };
    let ln_corrected = ln_nominal + (vocab as f64).ln();
    let p = if ln_corrected >= 0.0 { 1.0 } else { ln_corrected.exp() };
    Ok(TestResult::new(TestKind::Binomial, ln_corrected, p, n as usize, vocab as usize))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TauVariant {
    /// `(C − D) / (n(n−1)/2)`; tied pairs count toward neither C nor D.
    #[default]
    A,
    /// `(C − D) / √((n0 − n1)(n0 − n2))`.
    B,
}

/// Kendall's τ-a in O(n log n).
pub fn kendall_tau(xs: &[f64], ys: &[f64]) -> Result<f64> {
    kendall_tau_with(xs, ys, TauVariant::A)
}

/// Knight's algorithm: sort by (x, y), count ties, then count the swaps
/// a merge sort on y needs.
pub fn kendall_tau_with(xs: &[f64], ys: &[f64], variant: TauVariant) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::dims("kendall_tau", xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < 2 {
        return Err(Error::invalid("kendall_tau needs at least 2 pairs"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::invalid("kendall_tau inputs must be finite"));
    }
    let mut pairs: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
    pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let tie_pairs = |run: u64| run * (run - 1) / 2;
    let (mut n1, mut n3) = (0u64, 0u64);
    let (mut run_x, mut run_xy) = (1u64, 1u64);
    for w in pairs.windows(2) {
        if w[0].0 == w[1].0 {
            run_x += 1;
            if w[0].1 == w[1].1 {
                run_xy += 1;
            } else {
                n3 += tie_pairs(run_xy);
                run_xy = 1;
            }
        } else {
            n1 += tie_pairs(run_x);
            n3 += tie_pairs(run_xy);
            run_x = 1;
            run_xy = 1;
        }
    }
    n1 += tie_pairs(run_x);
    n3 += tie_pairs(run_xy);

    let mut y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut y, &mut buf);

    let mut n2 = 0u64;
    let mut run_y = 1u64;
    for w in y.windows(2) {
        if w[0] == w[1] {
            run_y += 1;
        } else {
            n2 += tie_pairs(run_y);
            run_y = 1;
        }
    }
    n2 += tie_pairs(run_y);

    let n0 = tie_pairs(n as u64);
    let s = n0 as i128 - n1 as i128 - n2 as i128 + n3 as i128 - 2 * swaps as i128;
    let tau = match variant {
        TauVariant::A => s as f64 / n0 as f64,
        TauVariant::B => {
            let denom = ((n0 - n1) as f64 * (n0 - n2) as f64).sqrt();
            if denom == 0.0 {
                return Err(Error::invalid("tau-b undefined when one argument is constant"));
            }
            s as f64 / denom
        }
    };
    Ok(tau.clamp(-1.0, 1.0))
}

/// Sorts `v` ascending, returning the number of inversions (strict).
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], &mut buf[..mid]) + merge_count(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..].copy_from_slice(&v[j..]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// O(n²) reference τ-a used by tests and benches.
pub fn kendall_tau_naive(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::dims("kendall_tau_naive", xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < 2 {
        return Err(Error::invalid("kendall_tau needs at least 2 pairs"));
    }
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            let dx = xs[j] - xs[i];
            let dy = ys[j] - ys[i];
            s += (dx.signum() as i64 * dy.signum() as i64) * i64::from(dx != 0.0 && dy != 0.0);
        }
    }
    Ok(s as f64 / (n * (n - 1) / 2) as f64)
}

/// Upper normal tail `P(Z > z)` without cancellation.
fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

/// Midranks (1-based) of `values`, plus `Σ(t³ − t)` over tie groups.
fn midranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && values[idx[j]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    (ranks, tie_term)
}

/// One-sided Mann-Whitney U test, H₁: `a` is stochastically greater than `b`.
///
/// Normal approximation with tie-corrected variance and a 0.5 continuity
/// correction. When every value is identical the variance vanishes and
/// `p = 0.5`.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<TestResult> {
    let (na, nb) = (a.len(), b.len());
    if na == 0 || nb == 0 {
        return Err(Error::invalid("mann_whitney_u needs non-empty samples"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("mann_whitney_u inputs must be finite"));
    }
    let all: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, tie_term) = midranks(&all);
    let r_a: f64 = ranks[..na].iter().sum();
    let (fa, fb) = (na as f64, nb as f64);
    let u = r_a - fa * (fa + 1.0) / 2.0;
    let n = fa + fb;
    let mean = fa * fb / 2.0;
    let var = fa * fb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let p = if var <= 0.0 || !var.is_finite() {
        0.5
    } else {
        normal_sf((u - mean - 0.5) / var.sqrt())
    };
    Ok(TestResult::new(TestKind::MannWhitneyU, u, p, na, nb))
}

/// `P(T > t)` for Student's t with `df` degrees of freedom.
fn student_t_sf(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 0.0 } else { 1.0 };
    }
    let tail = 0.5 * beta_reg(df / 2.0, 0.5, df / (df + t * t));
    if t >= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Welch's one-sided t-test, H₁: `mean(a) > mean(b)`.
pub fn welch_t_one_sided(a: &[f64], b: &[f64]) -> Result<TestResult> {
    let (na, nb) = (a.len(), b.len());
    if na < 2 || nb < 2 {
        return Err(Error::invalid("welch_t_one_sided needs at least 2 values per sample"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("welch_t_one_sided inputs must be finite"));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = (mean_var(b).0, mean_var(b).1);
    let (sa, sb) = (va / na as f64, vb / nb as f64);
    let se2 = sa + sb;
    if se2 == 0.0 {
        let p = match ma.partial_cmp(&mb) {
            Some(std::cmp::Ordering::Greater) => 0.0,
            Some(std::cmp::Ordering::Less) => 1.0,
            _ => 0.5,
        };
        let t = if p == 0.0 {
            f64::INFINITY
        } else if p == 1.0 {
            f64::NEG_INFINITY
        } else {
            0.0
        };
        return Ok(TestResult::new(TestKind::WelchT, t, p, na, nb));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na as f64 - 1.0) + sb * sb / (nb as f64 - 1.0));
    Ok(TestResult::new(TestKind::WelchT, t, student_t_sf(t, df), na, nb))
}

/// One-sided one-sample t-test of `atanh(sims)` against 0 (H₁: mean > 0).
pub fn fisher_z_onesample(sims: &[f64]) -> Result<TestResult> {
    let n = sims.len();
    if n < 2 {
        return Err(Error::invalid("fisher_z_onesample needs at least 2 values"));
    }
    if let Some(s) = sims.iter().find(|s| !(s.abs() < 1.0)) {
        return Err(Error::invalid(format!("similarity {s} outside (-1, 1)")));
    }
    let z: Vec<f64> = sims.iter().map(|s| s.atanh()).collect();
    let (mean, var) = mean_var(&z);
    let se = (var / n as f64).sqrt();
    if se == 0.0 {
        let (t, p) = if mean > 0.0 {
            (f64::INFINITY, 0.0)
        } else if mean < 0.0 {
            (f64::NEG_INFINITY, 1.0)
        } else {
            (0.0, 0.5)
        };
        return Ok(TestResult::new(TestKind::FisherZ, t, p, n, 0));
    }
    let t = mean / se;
    Ok(TestResult::new(TestKind::FisherZ, t, student_t_sf(t, n as f64 - 1.0), n, 0))
}

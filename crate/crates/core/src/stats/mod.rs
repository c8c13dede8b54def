//! Statistical kernel: rank tests, paired t-tests, multiple-comparison
//! corrections, bootstrap resampling and the descriptive summaries used in
//! false-positive tables.

mod bootstrap;
mod correction;
pub mod special;

pub use bootstrap::{bootstrap_indices, bootstrap_means};
pub use correction::{bh_fdr, holm_fwer, CorrectionMethod, CorrectionResult};

use serde::Serialize;

use crate::error::{ensure, Error, Result};

/// Test statistic with degrees of freedom and a two-sided p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub df: f64,
    pub p_value: f64,
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample variance with `n - 1` denominator; `None` for fewer than two values.
pub fn sample_variance(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let m = mean(values);
    Some(values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64)
}

pub fn sample_sd(values: &[f64]) -> Option<f64> {
    sample_variance(values).map(f64::sqrt)
}

/// Population variance (denominator `n`).
pub fn population_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// 1-based mid-ranks (ties share the average rank) and the tie-group sizes.
pub fn mid_ranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        if end - start > 1 {
            ties.push(end - start);
        }
        start = end;
    }
    (ranks, ties)
}

/// Kruskal-Wallis H with mid-ranks and tie correction; p from chi-square with `k - 1` df.
///
/// When every value is tied the statistic is defined as 0 with p = 1.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<TestResult> {
    ensure!(
        groups.len() >= 2,
        InvalidArgument,
        "Kruskal-Wallis needs at least two groups"
    );
    ensure!(
        groups.iter().all(|g| !g.is_empty()),
        InvalidArgument,
        "Kruskal-Wallis groups must be non-empty"
    );
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    ensure!(
        pooled.len() >= 3,
        InvalidArgument,
        "Kruskal-Wallis needs at least three observations"
    );
    ensure!(
        pooled.iter().all(|v| v.is_finite()),
        InvalidArgument,
        "Kruskal-Wallis values must be finite"
    );
    let (ranks, ties) = mid_ranks(&pooled);
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let mut rank_sums = Vec::with_capacity(groups.len());
    let mut offset = 0;
    for &n in &sizes {
        rank_sums.push(ranks[offset..offset + n].iter().sum::<f64>());
        offset += n;
    }
    Ok(KruskalWallisRanks::new(pooled.len(), &ties).result(&rank_sums, &sizes))
}

/// Pre-computed tie structure for repeatedly scoring partitions of a fixed pool.
#[derive(Debug, Clone, Copy)]
pub struct KruskalWallisRanks {
    n: usize,
    tie_correction: f64,
}

impl KruskalWallisRanks {
    pub fn new(n: usize, tie_sizes: &[usize]) -> Self {
        let nf = n as f64;
        let ties: f64 = tie_sizes.iter().map(|&t| (t * t * t - t) as f64).sum();
        Self {
            n,
            tie_correction: 1.0 - ties / (nf * nf * nf - nf),
        }
    }

    /// H and p from per-group rank sums and sizes.
    pub fn result(&self, rank_sums: &[f64], sizes: &[usize]) -> TestResult {
        let df = (sizes.len() - 1) as f64;
        if self.tie_correction <= 0.0 {
            return TestResult {
                statistic: 0.0,
                df,
                p_value: 1.0,
            };
        }
        let nf = self.n as f64;
        let s: f64 = rank_sums
            .iter()
            .zip(sizes)
            .map(|(r, &n)| r * r / n as f64)
            .sum();
        let h = (12.0 / (nf * (nf + 1.0)) * s - 3.0 * (nf + 1.0)) / self.tie_correction;
        // rounding can push an exact zero slightly negative
        let h = h.max(0.0);
        TestResult {
            statistic: h,
            df,
            p_value: special::chi2_sf(h, df),
        }
    }
}

/// Paired two-sided t-test on `a - b`.
pub fn paired_t(a: &[f64], b: &[f64]) -> Result<TestResult> {
    ensure!(
        a.len() == b.len(),
        InvalidArgument,
        "paired samples differ in length ({} vs {})",
        a.len(),
        b.len()
    );
    ensure!(a.len() >= 2, InvalidArgument, "paired t-test needs n >= 2");
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let m = mean(&d);
    let var = sample_variance(&d).unwrap();
    if !(var > 0.0) {
        return Err(Error::Degenerate(
            "paired differences have zero variance".into(),
        ));
    }
    let t = m / (var / n).sqrt();
    let df = n - 1.0;
    Ok(TestResult {
        statistic: t,
        df,
        p_value: special::student_t_two_sided(t, df),
    })
}

/// Outcome of a model comparison: a paired t-test, or "indistinguishable"
/// when the paired differences have zero variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum PairedOutcome {
    Tested(TestResult),
    Indistinguishable,
}

impl PairedOutcome {
    pub fn test(&self) -> Option<&TestResult> {
        match self {
            PairedOutcome::Tested(t) => Some(t),
            PairedOutcome::Indistinguishable => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            PairedOutcome::Tested(_) => "tested",
            PairedOutcome::Indistinguishable => "indistinguishable",
        }
    }
}

/// [`paired_t`] with the zero-variance case mapped to
/// [`PairedOutcome::Indistinguishable`].
pub fn compare_paired(a: &[f64], b: &[f64]) -> Result<PairedOutcome> {
    match paired_t(a, b) {
        Ok(t) => Ok(PairedOutcome::Tested(t)),
        Err(Error::Degenerate(_)) => Ok(PairedOutcome::Indistinguishable),
        Err(e) => Err(e),
    }
}

/// Pearson correlation of mid-ranks; p via the t approximation with `n - 2` df.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<TestResult> {
    ensure!(
        x.len() == y.len(),
        InvalidArgument,
        "spearman inputs differ in length ({} vs {})",
        x.len(),
        y.len()
    );
    ensure!(x.len() >= 3, InvalidArgument, "spearman needs n >= 3");
    let (rx, _) = mid_ranks(x);
    let (ry, _) = mid_ranks(y);
    let (mx, my) = (mean(&rx), mean(&ry));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate(
            "spearman input has zero rank variance".into(),
        ));
    }
    let rho = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = x.len() as f64 - 2.0;
    let p = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        special::student_t_two_sided(t, df)
    };
    Ok(TestResult {
        statistic: rho,
        df,
        p_value: p,
    })
}

/// Descriptive statistics of a count-like sample, with "non-zero" variants
/// computed over strictly positive entries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Descriptive {
    pub n: usize,
    pub mean: f64,
    pub sd: Option<f64>,
    pub nonzero_mean: Option<f64>,
    pub nonzero_sd: Option<f64>,
    pub count_nonzero: usize,
    pub max: f64,
}

pub fn descriptive(values: &[f64]) -> Result<Descriptive> {
    ensure!(
        !values.is_empty(),
        InvalidArgument,
        "descriptive statistics of an empty sample"
    );
    let positive: Vec<f64> = values.iter().copied().filter(|&v| v > 0.0).collect();
    Ok(Descriptive {
        n: values.len(),
        mean: mean(values),
        sd: sample_sd(values),
        nonzero_mean: (!positive.is_empty()).then(|| mean(&positive)),
        nonzero_sd: sample_sd(&positive),
        count_nonzero: positive.len(),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

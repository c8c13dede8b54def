use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{DensityStack, GlmSpec};
use crate::error::{ensure, Error, Result};
use crate::stats::special::student_t_two_sided;
use crate::volume::GridVolume;

/// Relative tolerance below which a regressor or residual counts as zero.
const RANK_TOL: f64 = 1e-10;

/// Voxel-wise t statistics for the score coefficient.
#[derive(Debug, Clone)]
pub struct TMap {
    /// t values on the analysis mask; 0 elsewhere and at degenerate voxels.
    pub t: GridVolume,
    /// Fitted score coefficient; 0 outside the tested set.
    pub beta: GridVolume,
    /// Two-sided parametric p; 1 outside the tested set.
    pub p_uncorrected: GridVolume,
    pub df: usize,
    /// Linear indices of tested voxels.
    pub tested: Vec<usize>,
    /// Linear indices of analysis-mask voxels with zero residual variance.
    pub degenerate: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct FweResult {
    pub tmap: TMap,
    /// `(1 + #{null max|t| >= |t|}) / (n_perm + 1)`, never below the parametric p; 1 off-mask.
    pub p_corrected: GridVolume,
    /// Null distribution of the maximum |t|, one entry per permutation.
    pub null_max: Vec<f64>,
    /// Voxels with `|t|` above this value have corrected p below alpha.
    pub t_threshold: f64,
    pub n_perm: usize,
    pub alpha: f64,
}

impl FweResult {
    pub fn significant(&self) -> Vec<usize> {
        self.tmap
            .tested
            .iter()
            .copied()
            .filter(|&v| self.p_corrected.data()[v] < self.alpha)
            .collect()
    }
}

/// Design reduced to the pieces each permutation needs: the score residualised
/// on the nuisance columns and an orthonormal basis of the non-intercept
/// nuisance columns (also residualised on the intercept).
struct Design {
    n: usize,
    score_resid: Vec<f64>,
    score_ss: f64,
    nuisance: Vec<Vec<f64>>,
    df: usize,
}

fn centred(x: &[f64]) -> Vec<f64> {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - m).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Design {
    fn new(scores: &[f64], covariate: Option<&[f64]>) -> Result<Self> {
        let n = scores.len();
        ensure!(
            scores.iter().all(|s| s.is_finite()),
            InvalidArgument,
            "scores must be finite"
        );
        let mut nuisance = Vec::new();
        if let Some(v) = covariate {
            ensure!(
                v.len() == n,
                InvalidArgument,
                "{} covariate values for {n} subjects",
                v.len()
            );
            let vc = centred(v);
            let norm = dot(&vc, &vc).sqrt();
            let scale = v
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
                .max(f64::MIN_POSITIVE);
            if norm <= RANK_TOL * scale {
                return Err(Error::Degenerate(
                    "volume covariate is collinear with the intercept".into(),
                ));
            }
            nuisance.push(vc.iter().map(|x| x / norm).collect::<Vec<f64>>());
        }
        let p = 2 + nuisance.len();
        ensure!(
            n > p,
            InvalidArgument,
            "{n} subjects leave no residual degrees of freedom for {p} regressors"
        );
        let mut s = centred(scores);
        for q in &nuisance {
            let c = dot(q, &s);
            s.iter_mut().zip(q).for_each(|(x, qv)| *x -= c * qv);
        }
        let ss = dot(&s, &s);
        let scale = scores
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .max(f64::MIN_POSITIVE);
        if ss <= RANK_TOL * scale {
            return Err(Error::Degenerate(
                "score is collinear with the intercept or covariate (rank-deficient design)".into(),
            ));
        }
        Ok(Self {
            n,
            score_resid: s,
            score_ss: ss,
            nuisance,
            df: n - p,
        })
    }

    fn residualise(&self, y: &mut [f64]) {
        let m = y.iter().sum::<f64>() / self.n as f64;
        y.iter_mut().for_each(|v| *v -= m);
        for q in &self.nuisance {
            let c = dot(q, y);
            y.iter_mut().zip(q).for_each(|(v, qv)| *v -= c * qv);
        }
    }
}

/// Residualised voxel data, voxel-major.
struct VoxelData {
    voxels: Vec<usize>,
    resid: Vec<f64>,
    resid_ss: Vec<f64>,
    degenerate: Vec<usize>,
}

fn prepare(stack: &DensityStack, design: &Design) -> VoxelData {
    let n = design.n;
    let candidates: Vec<usize> = (0..stack.analysis_mask.volume().len())
        .filter(|&v| stack.analysis_mask.contains(v))
        .collect();
    let per_voxel: Vec<(usize, Option<(Vec<f64>, f64)>)> = candidates
        .par_iter()
        .map(|&v| {
            let mut y: Vec<f64> = stack.densities.iter().map(|d| d.data()[v]).collect();
            let scale: f64 = y.iter().map(|x| x * x).sum();
            design.residualise(&mut y);
            let ss = dot(&y, &y);
            if ss <= RANK_TOL * scale || ss == 0.0 {
                return (v, None);
            }
            let a = dot(&design.score_resid, &y);
            let rss = ss - a * a / design.score_ss;
            if rss <= RANK_TOL * ss {
                return (v, None);
            }
            (v, Some((y, ss)))
        })
        .collect();
    let mut out = VoxelData {
        voxels: Vec::new(),
        resid: Vec::with_capacity(candidates.len() * n),
        resid_ss: Vec::new(),
        degenerate: Vec::new(),
    };
    for (v, r) in per_voxel {
        match r {
            Some((y, ss)) => {
                out.voxels.push(v);
                out.resid.extend(y);
                out.resid_ss.push(ss);
            }
            None => out.degenerate.push(v),
        }
    }
    out
}

/// t for the score given `a = u . y_resid` and `b = sum_q (w_q . y_resid)^2`.
fn t_value(a: f64, b: f64, ss_y: f64, design: &Design) -> f64 {
    let rss = ss_y - b - a * a / design.score_ss;
    if rss <= 0.0 {
        return f64::INFINITY.copysign(a);
    }
    a / (design.score_ss * rss / design.df as f64).sqrt()
}

fn check_inputs(stack: &DensityStack, scores: &[f64]) -> Result<()> {
    ensure!(
        scores.len() == stack.len(),
        InvalidArgument,
        "{} scores for {} subjects",
        scores.len(),
        stack.len()
    );
    Ok(())
}

fn observed(stack: &DensityStack, design: &Design, data: &VoxelData) -> TMap {
    let n = design.n;
    let dims = stack.dims();
    let spacing = stack.analysis_mask.spacing();
    let mut t = vec![0.0; stack.analysis_mask.volume().len()];
    let mut p = vec![1.0; t.len()];
    let mut beta = vec![0.0; t.len()];
    for (i, &v) in data.voxels.iter().enumerate() {
        let y = &data.resid[i * n..(i + 1) * n];
        let a = dot(&design.score_resid, y);
        let tv = t_value(a, 0.0, data.resid_ss[i], design);
        beta[v] = a / design.score_ss;
        t[v] = tv;
        p[v] = student_t_two_sided(tv, design.df as f64);
    }
    TMap {
        t: GridVolume::new(dims, spacing, t).expect("finite t on valid grid"),
        beta: GridVolume::new(dims, spacing, beta).expect("valid grid"),
        p_uncorrected: GridVolume::new(dims, spacing, p).expect("valid grid"),
        df: design.df,
        tested: data.voxels.clone(),
        degenerate: data.degenerate.clone(),
    }
}

/// OLS of density on `[1, score(, covariate)]` at every analysis-mask voxel.
pub fn fit_voxelwise_glm(
    stack: &DensityStack,
    scores: &[f64],
    covariate: Option<&[f64]>,
) -> Result<TMap> {
    check_inputs(stack, scores)?;
    let design = Design::new(scores, covariate)?;
    let data = prepare(stack, &design);
    Ok(observed(stack, &design, &data))
}

/// Max-|t| permutation family-wise error correction.
///
/// Without a covariate the scores are permuted; with one, residuals of the
/// covariate-only model are permuted (Freedman-Lane). Permutation `j` draws its
/// shuffle from stream `j` of the seeded generator.
pub fn permutation_fwe(
    stack: &DensityStack,
    scores: &[f64],
    covariate: Option<&[f64]>,
    spec: &GlmSpec,
) -> Result<FweResult> {
    spec.validate()?;
    permutation_fwe_unchecked(stack, scores, covariate, spec.n_perm, spec.alpha, spec.seed)
}

/// As [`permutation_fwe`] without the minimum permutation count.
pub(crate) fn permutation_fwe_unchecked(
    stack: &DensityStack,
    scores: &[f64],
    covariate: Option<&[f64]>,
    n_perm: usize,
    alpha: f64,
    seed: u64,
) -> Result<FweResult> {
    check_inputs(stack, scores)?;
    ensure!(n_perm >= 1, InvalidArgument, "n_perm must be positive");
    let design = Design::new(scores, covariate)?;
    let data = prepare(stack, &design);
    let tmap = observed(stack, &design, &data);
    let n = design.n;

    let null_max: Vec<f64> = (0..n_perm as u64)
        .into_par_iter()
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            // P' applied to the score and nuisance bases
            let u: Vec<f64> = perm.iter().map(|&i| design.score_resid[i]).collect();
            let w: Vec<Vec<f64>> = design
                .nuisance
                .iter()
                .map(|q| perm.iter().map(|&i| q[i]).collect())
                .collect();
            let mut max = 0.0f64;
            for (i, &ss) in data.resid_ss.iter().enumerate() {
                let y = &data.resid[i * n..(i + 1) * n];
                let a = dot(&u, y);
                let b: f64 = w.iter().map(|wq| dot(wq, y).powi(2)).sum();
                max = max.max(t_value(a, b, ss, &design).abs());
            }
            max
        })
        .collect();

    let mut sorted = null_max.clone();
    sorted.sort_by(f64::total_cmp);
    let denom = (n_perm + 1) as f64;
    let mut pc = vec![1.0; tmap.t.len()];
    for &v in &tmap.tested {
        let tv = tmap.t.data()[v].abs();
        let below = sorted.partition_point(|&m| m < tv);
        let count = n_perm - below;
        pc[v] = ((1 + count) as f64 / denom).max(tmap.p_uncorrected.data()[v]);
    }
    // |t| > sorted[idx] leaves at most n_perm - idx - 1 null maxima at or above it
    let allowed = (alpha * denom - 1.0).ceil() as i64 - 1;
    let t_threshold = if allowed < 0 {
        f64::INFINITY
    } else {
        sorted[n_perm.saturating_sub(allowed as usize + 1)]
    };
    let p_corrected = GridVolume::new(tmap.t.dims(), tmap.t.spacing(), pc)?;
    Ok(FweResult {
        tmap,
        p_corrected,
        null_max,
        t_threshold,
        n_perm,
        alpha,
    })
}

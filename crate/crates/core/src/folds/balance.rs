use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Phenotype, StudyRecord};
use crate::error::{ensure, Result};
use crate::stats::{self, KruskalWallisRanks};

/// Fraction of the candidate pool (by Kruskal-Wallis p) eligible for selection.
pub const TOP_FRACTION: f64 = 0.01;

const SELECTION_RULE: &str = "keep candidates in the top 1% by Kruskal-Wallis p, then minimise \
     var(fold mean volume)/pool median + var(fold SD volume)/pool median; ties to lowest candidate index";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub id: String,
    pub fold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceDiagnostics {
    pub kw_h: f64,
    pub kw_p: f64,
    pub pool_median_kw_p: f64,
    /// Smallest KW p admitted to the top-fraction shortlist.
    pub kw_p_cutoff: f64,
    pub n_shortlisted: usize,
    pub selected_candidate: usize,
    pub mean_volume_variance: f64,
    pub sd_volume_variance: f64,
    pub fold_sizes: Vec<usize>,
    pub fold_mean_volume: Vec<f64>,
    pub fold_sd_volume: Vec<f64>,
    pub phenotype_counts: Vec<BTreeMap<String, usize>>,
    pub selection_rule: String,
}

/// A k-way partition of studies with balance diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub n_perm: usize,
    pub assignments: Vec<FoldAssignment>,
    pub diagnostics: BalanceDiagnostics,
}

impl FoldPlan {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignments.iter().find(|a| a.id == id).map(|a| a.fold)
    }

    pub fn fold_ids(&self, fold: usize) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|a| a.fold == fold)
            .map(|a| a.id.as_str())
            .collect()
    }

    /// Appends control studies split by count only.
    pub fn add_controls(&mut self, control_ids: &[String]) {
        self.assignments
            .extend(split_controls(control_ids, self.k, self.seed));
    }
}

#[derive(Debug, Clone, Copy)]
struct CandidateScore {
    h: f64,
    p: f64,
    mean_var: f64,
    sd_var: f64,
}

/// Searches `n_perm` stratified random partitions for the best-balanced one.
///
/// Candidate `i` is generated from its own stream of the seeded generator, so
/// the result does not depend on thread scheduling.
pub fn balance_folds(
    records: &[StudyRecord],
    k: usize,
    n_perm: usize,
    seed: u64,
) -> Result<FoldPlan> {
    ensure!(
        k >= 2,
        InvalidArgument,
        "fold count must be at least 2, got {k}"
    );
    ensure!(
        records.len() >= k,
        InvalidArgument,
        "{} studies cannot fill {k} folds",
        records.len()
    );
    ensure!(n_perm >= 1, InvalidArgument, "n_perm must be at least 1");

    // canonical order so the plan does not depend on manifest order
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[a].id.cmp(&records[b].id));
    let volumes: Vec<f64> = order.iter().map(|&i| records[i].volume as f64).collect();
    let phenotypes: Vec<Phenotype> = order.iter().map(|&i| records[i].phenotype).collect();

    let mut strata: BTreeMap<Phenotype, Vec<usize>> = BTreeMap::new();
    for (pos, p) in phenotypes.iter().enumerate() {
        strata.entry(*p).or_default().push(pos);
    }
    let strata: Vec<Vec<usize>> = strata.into_values().collect();

    let (ranks, ties) = stats::mid_ranks(&volumes);
    let kw = KruskalWallisRanks::new(volumes.len(), &ties);

    let scores: Vec<CandidateScore> = (0..n_perm)
        .into_par_iter()
        .map(|i| {
            let folds = candidate(&strata, volumes.len(), k, seed, i as u64);
            score(&folds, k, &ranks, &volumes, &kw)
        })
        .collect();

    let selected = select(&scores);
    let folds = candidate(&strata, volumes.len(), k, seed, selected as u64);
    let chosen = scores[selected];

    let mut by_p: Vec<f64> = scores.iter().map(|s| s.p).collect();
    let pool_median = stats::median(&by_p);
    by_p.sort_by(|a, b| b.total_cmp(a));
    let n_short = shortlist_len(n_perm);

    let mut fold_vols = vec![Vec::new(); k];
    let mut phenotype_counts = vec![BTreeMap::new(); k];
    for (pos, &f) in folds.iter().enumerate() {
        fold_vols[f].push(volumes[pos]);
        *phenotype_counts[f]
            .entry(phenotypes[pos].to_string())
            .or_insert(0) += 1;
    }
    let mut assignments: Vec<FoldAssignment> = folds
        .iter()
        .enumerate()
        .map(|(pos, &fold)| FoldAssignment {
            id: records[order[pos]].id.clone(),
            fold,
        })
        .collect();
    assignments.sort_by(|a, b| a.id.cmp(&b.id));

    Ok(FoldPlan {
        k,
        seed,
        n_perm,
        assignments,
        diagnostics: BalanceDiagnostics {
            kw_h: chosen.h,
            kw_p: chosen.p,
            pool_median_kw_p: pool_median,
            kw_p_cutoff: by_p[n_short - 1],
            n_shortlisted: n_short,
            selected_candidate: selected,
            mean_volume_variance: chosen.mean_var,
            sd_volume_variance: chosen.sd_var,
            fold_sizes: fold_vols.iter().map(Vec::len).collect(),
            fold_mean_volume: fold_vols.iter().map(|v| stats::mean(v)).collect(),
            fold_sd_volume: fold_vols
                .iter()
                .map(|v| stats::sample_sd(v).unwrap_or(0.0))
                .collect(),
            phenotype_counts,
            selection_rule: SELECTION_RULE.to_string(),
        },
    })
}

/// Count-only split of control studies into `k` folds.
pub fn split_controls(control_ids: &[String], k: usize, seed: u64) -> Vec<FoldAssignment> {
    let mut ids: Vec<&String> = control_ids.iter().collect();
    ids.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    ids.shuffle(&mut rng);
    let mut out: Vec<FoldAssignment> = ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| FoldAssignment {
            id: id.clone(),
            fold: i % k,
        })
        .collect();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out
}

fn shortlist_len(n_perm: usize) -> usize {
    ((n_perm as f64 * TOP_FRACTION).ceil() as usize).clamp(1, n_perm)
}

/// Shuffle every stratum, lay them end to end and deal round-robin under a
/// random relabelling of folds.
fn candidate(strata: &[Vec<usize>], n: usize, k: usize, seed: u64, i: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i);
    let mut labels: Vec<usize> = (0..k).collect();
    labels.shuffle(&mut rng);
    let mut folds = vec![0; n];
    let mut counter = 0;
    for stratum in strata {
        let mut s = stratum.clone();
        s.shuffle(&mut rng);
        for pos in s {
            folds[pos] = labels[counter % k];
            counter += 1;
        }
    }
    folds
}

fn score(
    folds: &[usize],
    k: usize,
    ranks: &[f64],
    volumes: &[f64],
    kw: &KruskalWallisRanks,
) -> CandidateScore {
    let mut rank_sums = vec![0.0; k];
    let mut sizes = vec![0usize; k];
    let mut sum = vec![0.0; k];
    let mut sumsq = vec![0.0; k];
    for (pos, &f) in folds.iter().enumerate() {
        rank_sums[f] += ranks[pos];
        sizes[f] += 1;
        sum[f] += volumes[pos];
        sumsq[f] += volumes[pos] * volumes[pos];
    }
    let test = kw.result(&rank_sums, &sizes);
    let means: Vec<f64> = (0..k).map(|f| sum[f] / sizes[f] as f64).collect();
    let sds: Vec<f64> = (0..k)
        .map(|f| {
            let n = sizes[f] as f64;
            if sizes[f] < 2 {
                0.0
            } else {
                ((sumsq[f] - sum[f] * sum[f] / n) / (n - 1.0))
                    .max(0.0)
                    .sqrt()
            }
        })
        .collect();
    CandidateScore {
        h: test.statistic,
        p: test.p_value,
        mean_var: stats::population_variance(&means),
        sd_var: stats::population_variance(&sds),
    }
}

fn select(scores: &[CandidateScore]) -> usize {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].p.total_cmp(&scores[a].p).then(a.cmp(&b)));
    let shortlist = &idx[..shortlist_len(scores.len())];

    let mv: Vec<f64> = scores.iter().map(|s| s.mean_var).collect();
    let sv: Vec<f64> = scores.iter().map(|s| s.sd_var).collect();
    let (mv_med, sv_med) = (stats::median(&mv), stats::median(&sv));
    let norm = |x: f64, med: f64| if med > 0.0 { x / med } else { x };
    let composite = |i: usize| norm(scores[i].mean_var, mv_med) + norm(scores[i].sd_var, sv_med);

    let mut best = shortlist[0];
    for &i in shortlist {
        let (c, cb) = (composite(i), composite(best));
        if c < cb || (c == cb && i < best) {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::folds::Sex;
    use rand::Rng;
    use rand_distr::{Distribution, LogNormal};

    fn records(volumes: &[usize], phenotypes: &[Phenotype]) -> Vec<StudyRecord> {
        volumes
            .iter()
            .zip(phenotypes)
            .enumerate()
            .map(|(i, (&v, &p))| StudyRecord {
                id: format!("s{i:04}"),
                image_path: format!("s{i}.nii").into(),
                label_path: Some(format!("s{i}_label.nii").into()),
                volume: v,
                age: 60.0,
                sex: Sex::F,
                phenotype: p,
                is_control: false,
            })
            .collect()
    }

    fn check_balance(plan: &FoldPlan, recs: &[StudyRecord]) {
        assert_eq!(plan.assignments.len(), recs.len());
        let sizes = &plan.diagnostics.fold_sizes;
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut phenos: Vec<String> = recs.iter().map(|r| r.phenotype.to_string()).collect();
        phenos.sort();
        phenos.dedup();
        for p in phenos {
            let counts: Vec<usize> = plan
                .diagnostics
                .phenotype_counts
                .iter()
                .map(|c| c.get(&p).copied().unwrap_or(0))
                .collect();
            assert!(
                counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1,
                "{p}: {counts:?}"
            );
        }
    }

    #[test]
    fn identical_volumes_single_phenotype() {
        let recs = records(&[100; 20], &[Phenotype::Archetype(0); 20]);
        let plan = balance_folds(&recs, 5, 50, 1).unwrap();
        assert_eq!(plan.diagnostics.kw_p, 1.0);
        assert_eq!(plan.diagnostics.fold_sizes, vec![4; 5]);
    }

    #[test]
    fn stratified_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dist = LogNormal::new(6.0, 1.0).unwrap();
        let n = 123;
        let vols: Vec<usize> = (0..n).map(|_| dist.sample(&mut rng) as usize + 1).collect();
        let ph: Vec<Phenotype> = (0..n)
            .map(|_| match rng.gen_range(0..5) {
                4 => Phenotype::None,
                i => Phenotype::Archetype(i),
            })
            .collect();
        let recs = records(&vols, &ph);
        let plan = balance_folds(&recs, 5, 400, 9).unwrap();
        check_balance(&plan, &recs);
        assert!(plan.diagnostics.kw_p >= plan.diagnostics.pool_median_kw_p);
        assert!(plan.diagnostics.kw_p >= plan.diagnostics.kw_p_cutoff);
        assert_eq!(plan, balance_folds(&recs, 5, 400, 9).unwrap());

        // recompute the reported KW p from the assignment itself
        let groups: Vec<Vec<f64>> = (0..5)
            .map(|f| {
                recs.iter()
                    .filter(|r| plan.fold_of(&r.id) == Some(f))
                    .map(|r| r.volume as f64)
                    .collect()
            })
            .collect();
        let kw = stats::kruskal_wallis(&groups).unwrap();
        assert!((kw.p_value - plan.diagnostics.kw_p).abs() < 1e-12);

        // input order does not matter
        let mut shuffled = recs.clone();
        shuffled.reverse();
        assert_eq!(plan, balance_folds(&shuffled, 5, 400, 9).unwrap());
    }

    #[test]
    fn small_phenotype_class_spreads() {
        let mut ph = vec![Phenotype::Archetype(0); 12];
        ph[0] = Phenotype::Archetype(1);
        ph[1] = Phenotype::Archetype(1);
        let recs = records(&(1..=12).collect::<Vec<_>>(), &ph);
        let plan = balance_folds(&recs, 5, 30, 2).unwrap();
        check_balance(&plan, &recs);
    }

    #[test]
    fn errors() {
        let recs = records(&[1, 2, 3], &[Phenotype::None; 3]);
        assert!(balance_folds(&recs, 5, 10, 0).is_err());
        assert!(balance_folds(&recs, 1, 10, 0).is_err());
        assert!(balance_folds(&recs, 3, 0, 0).is_err());
    }

    #[test]
    fn controls_split_by_count() {
        let ids: Vec<String> = (0..13).map(|i| format!("c{i}")).collect();
        let a = split_controls(&ids, 5, 3);
        let mut sizes = [0; 5];
        for x in &a {
            sizes[x.fold] += 1;
        }
        assert_eq!(sizes.iter().sum::<usize>(), 13);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert_eq!(a, split_controls(&ids, 5, 3));
    }
}

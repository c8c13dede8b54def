//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line
//! straight to stdout (bypassing the test harness capture) and asserts the
//! checks it can meet.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use lesioncal::anatomy::{
    density_stack, fit_voxelwise_glm, permutation_fwe, DensityStack, GlmSpec,
};
use lesioncal::corruption::{
    apply_bias_field, apply_gibbs, apply_rician, apply_spike, schedule, NoiseKind, NoiseSpec,
};
use lesioncal::folds::{balance_folds, Phenotype, Sex, StudyRecord};
use lesioncal::harness::{
    fp_report, noise_sweep, prepare_image, Model, Segmenter, Study, SweepOptions, SweepSchedule,
    ThresholdSegmenter,
};
use lesioncal::metrics::{
    binarize, dice_score, early_stop, focal_loss, hd95, thresholded_average_loss, MetricParams,
};
use lesioncal::morphology::{fit_embedding, EmbeddingParams};
use lesioncal::nifti::{self, Datatype};
use lesioncal::seed::study_seed;
use lesioncal::stats::{bh_fdr, kruskal_wallis, paired_t, PairedOutcome};
use lesioncal::synth::{generate, PhantomSpec};
use lesioncal::{BinaryMask, GridVolume, ProbabilityMap};

/// Prints the verdict line and returns whether every check held.
fn verdict(name: &str, checks: &[(String, bool)]) -> bool {
    let ok = checks.iter().all(|(_, c)| *c);
    let failed: Vec<&str> = checks
        .iter()
        .filter(|(_, c)| !c)
        .map(|(d, _)| d.as_str())
        .collect();
    let line = if ok {
        format!("\nPASS  {name}\n")
    } else {
        format!("\nFAIL  {name}: {}\n", failed.join("; "))
    };
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    ok
}

fn check(desc: impl Into<String>, ok: bool) -> (String, bool) {
    (desc.into(), ok)
}

fn within(elapsed: Duration, limit_secs: u64) -> (String, bool) {
    check(
        format!("runtime {elapsed:.1?} (limit {limit_secs} s)"),
        elapsed.as_secs() < limit_secs,
    )
}

// ---------------------------------------------------------------- metrics

fn brute_surface(bits: &[bool], n: usize) -> Vec<[i64; 3]> {
    let at = |i: i64, j: i64, k: i64| {
        let inside = |c: i64| c >= 0 && c < n as i64;
        inside(i) && inside(j) && inside(k) && bits[(i + n as i64 * (j + n as i64 * k)) as usize]
    };
    let mut out = Vec::new();
    for k in 0..n as i64 {
        for j in 0..n as i64 {
            for i in 0..n as i64 {
                if !at(i, j, k) {
                    continue;
                }
                let exposed = [
                    (1, 0, 0),
                    (-1, 0, 0),
                    (0, 1, 0),
                    (0, -1, 0),
                    (0, 0, 1),
                    (0, 0, -1),
                ]
                .iter()
                .any(|&(di, dj, dk)| !at(i + di, j + dj, k + dk));
                if exposed {
                    out.push([i, j, k]);
                }
            }
        }
    }
    out
}

fn p95(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = 0.95 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (rank - lo as f64)
}

fn brute_hd95(a: &[[i64; 3]], b: &[[i64; 3]]) -> f64 {
    let directed = |from: &[[i64; 3]], to: &[[i64; 3]]| -> Vec<f64> {
        from.iter()
            .map(|p| {
                to.iter()
                    .map(|q| ((0..3).map(|d| (p[d] - q[d]).pow(2)).sum::<i64>() as f64).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    };
    p95(directed(a, b)).max(p95(directed(b, a)))
}

#[test]
fn metric_oracle_equivalence() {
    let start = Instant::now();
    let n = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut dice_exact = 0;
    let mut hd_close = 0;
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let density_a = rng.gen_range(0.02..0.6);
        let density_b = rng.gen_range(0.02..0.6);
        let mut a: Vec<bool> = (0..n * n * n).map(|_| rng.gen_bool(density_a)).collect();
        let b: Vec<bool> = (0..n * n * n).map(|_| rng.gen_bool(density_b)).collect();
        a[0] = true;
        let ma = BinaryMask::from_bools([n; 3], [1.0; 3], &a).unwrap();
        let mb = BinaryMask::from_bools([n; 3], [1.0; 3], &b).unwrap();

        let sa: HashSet<usize> = (0..a.len()).filter(|&i| a[i]).collect();
        let sb: HashSet<usize> = (0..b.len()).filter(|&i| b[i]).collect();
        let inter = sa.intersection(&sb).count();
        let oracle = 2.0 * inter as f64 / (sa.len() + sb.len()) as f64;
        if dice_score(&ma, &mb).unwrap() == oracle {
            dice_exact += 1;
        }

        let (surf_a, surf_b) = (brute_surface(&a, n), brute_surface(&b, n));
        let got = hd95(&ma, &mb).unwrap();
        let want = if surf_b.is_empty() {
            None
        } else {
            Some(brute_hd95(&surf_a, &surf_b))
        };
        match (got, want) {
            (Some(g), Some(w)) => {
                worst = worst.max((g - w).abs());
                if (g - w).abs() <= 1e-6 {
                    hd_close += 1;
                }
            }
            (None, None) => hd_close += 1,
            _ => {}
        }
    }
    let ok = verdict(
        "metric oracle equivalence",
        &[
            check(
                format!("dice exact on {dice_exact}/200 pairs"),
                dice_exact == 200,
            ),
            check(
                format!("hd95 within 1e-6 on {hd_close}/200 pairs (worst {worst:.2e})"),
                hd_close == 200,
            ),
            within(start.elapsed(), 60),
        ],
    );
    assert!(ok);
}

// ---------------------------------------------------------------- stats

#[test]
fn closed_form_statistics() {
    let kw = kruskal_wallis(&[
        vec![1.0, 2.0, 3.0],
        vec![4.0, 5.0, 6.0],
        vec![7.0, 8.0, 9.0],
    ])
    .unwrap();
    let t = paired_t(&[1.0, 2.0, 3.0], &[0.0; 3]).unwrap();

    let y = [2.0, 1.0, 4.0, 3.0];
    let densities = y
        .iter()
        .map(|&v| GridVolume::filled([1, 1, 1], [1.0; 3], v).unwrap())
        .collect();
    let all = BinaryMask::from_bools([1, 1, 1], [1.0; 3], &[true]).unwrap();
    let stack = DensityStack::from_volumes(
        (0..4).map(|i| format!("s{i}")).collect(),
        densities,
        all,
        0.0,
    )
    .unwrap();
    let ols = fit_voxelwise_glm(&stack, &[1.0, 2.0, 3.0, 4.0], None).unwrap();
    let (slope, t_ols) = (ols.beta.data()[0], ols.t.data()[0]);

    let bh = bh_fdr(&[0.01, 0.02, 0.04, 0.5], 0.05).unwrap();
    let bh_want = [0.04, 0.04, 0.04 * 4.0 / 3.0, 0.5];
    let bh_ok = bh
        .adjusted
        .iter()
        .zip(bh_want)
        .all(|(g, w)| (g - w).abs() <= 1e-6);

    let ok = verdict(
        "closed-form statistics",
        &[
            check(
                format!("KW H = {}", kw.statistic),
                (kw.statistic - 7.2).abs() <= 1e-9,
            ),
            check(
                format!("KW p = {}", kw.p_value),
                (kw.p_value - 0.0273).abs() <= 1e-4,
            ),
            check(
                format!("paired t = {}", t.statistic),
                (t.statistic - 3.4641).abs() <= 1e-4 && (t.statistic - 12f64.sqrt()).abs() <= 1e-6,
            ),
            check(format!("OLS slope = {slope}"), (slope - 0.6).abs() <= 1e-12),
            check(format!("OLS t = {t_ols}"), (t_ols - 1.06066).abs() <= 1e-4),
            check(format!("BH adjusted = {:?}", bh.adjusted), bh_ok),
        ],
    );
    assert!(ok);
}

// ---------------------------------------------------------------- losses

#[test]
fn focal_loss_values() {
    let params = MetricParams::default();
    let p = ProbabilityMap::new(GridVolume::filled([1, 1, 1], [1.0; 3], 0.5).unwrap()).unwrap();
    let g = BinaryMask::from_bools([1, 1, 1], [1.0; 3], &[true]).unwrap();
    let single = focal_loss(&p, &g, &params).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let probs: Vec<f64> = (0..1000).map(|_| rng.gen_range(0.001..0.999)).collect();
    let labels: Vec<bool> = (0..1000).map(|_| rng.gen_bool(0.3)).collect();
    let bce = -probs
        .iter()
        .zip(&labels)
        .map(|(&p, &g)| if g { p.ln() } else { (1.0 - p).ln() })
        .sum::<f64>()
        / 1000.0;
    let pm = ProbabilityMap::new(GridVolume::new([10, 10, 10], [1.0; 3], probs).unwrap()).unwrap();
    let gm = BinaryMask::from_bools([10, 10, 10], [1.0; 3], &labels).unwrap();
    let gamma0 = focal_loss(
        &pm,
        &gm,
        &MetricParams {
            gamma: 0.0,
            ..params
        },
    )
    .unwrap();

    let ok = verdict(
        "focal loss",
        &[
            check(
                format!("gamma=2 single voxel = {single}"),
                (single - 0.173287).abs() <= 1e-6,
            ),
            check(
                format!("gamma=0 vs cross-entropy diff {:.2e}", (gamma0 - bce).abs()),
                (gamma0 - bce).abs() <= 1e-9,
            ),
        ],
    );
    assert!(ok);
}

#[test]
fn thresholded_average_bounds() {
    let params = MetricParams::default();
    let tau = params.ta_threshold;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut in_range = 0;
    let mut zero_iff_none = 0;
    let total = 100_000;
    for m in 0..total {
        // mixes dense, sparse and all-subthreshold maps, with exact-τ voxels
        let hi = match m % 3 {
            0 => 1.0,
            1 => 0.6,
            _ => tau,
        };
        let data: Vec<f64> = (0..27)
            .map(|_| match rng.gen_range(0..10) {
                0 => tau,
                1 => hi,
                _ => rng.gen_range(0.0..=hi),
            })
            .collect();
        let any_above = data.iter().any(|&v| v > tau);
        let p = ProbabilityMap::new(GridVolume::new([3, 3, 3], [1.0; 3], data).unwrap()).unwrap();
        let ta = thresholded_average_loss(&p, &params);
        if ta == 0.0 || (ta > 0.5 && ta <= 1.0) {
            in_range += 1;
        }
        if (ta == 0.0) == !any_above {
            zero_iff_none += 1;
        }
    }
    let ok = verdict(
        "thresholded average loss bounds",
        &[
            check(
                format!("{in_range}/{total} in {{0}} U (0.5, 1]"),
                in_range == total,
            ),
            check(
                format!("{zero_iff_none}/{total} zero exactly when nothing exceeds tau"),
                zero_iff_none == total,
            ),
        ],
    );
    assert!(ok);
}

// ---------------------------------------------------------------- anatomy

#[test]
fn permutation_fwe_calibration() {
    let start = Instant::now();
    let reps = 500u64;
    let n = 20;
    let dims = [8, 8, 8];
    let noise = Normal::new(0.0, 1.0).unwrap();
    let hits = (0..reps)
        .filter(|&r| {
            let mut rng = ChaCha8Rng::seed_from_u64(10_000 + r);
            let densities: Vec<GridVolume> = (0..n)
                .map(|_| {
                    let data = (0..512).map(|_| noise.sample(&mut rng)).collect();
                    GridVolume::new(dims, [1.0; 3], data).unwrap()
                })
                .collect();
            let scores: Vec<f64> = (0..n).map(|_| noise.sample(&mut rng)).collect();
            let mask = BinaryMask::from_bools(dims, [1.0; 3], &[true; 512]).unwrap();
            let stack = DensityStack::from_volumes(
                (0..n).map(|i| format!("s{i}")).collect(),
                densities,
                mask,
                0.0,
            )
            .unwrap();
            let spec = GlmSpec {
                n_perm: 500,
                seed: r,
                ..Default::default()
            };
            let fwe = permutation_fwe(&stack, &scores, None, &spec).unwrap();
            !fwe.significant().is_empty()
        })
        .count();
    let rate = hits as f64 / reps as f64;
    let ok = verdict(
        "permutation FWE calibration",
        &[
            check(
                format!("false-positive replicate rate {rate:.3}"),
                (0.02..=0.08).contains(&rate),
            ),
            within(start.elapsed(), 300),
        ],
    );
    assert!(ok);
}

// ---------------------------------------------------------------- folds

#[test]
fn fold_balancing() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let log_vol = Normal::new(6.0f64, 1.0).unwrap();
    let records: Vec<StudyRecord> = (0..500)
        .map(|i| StudyRecord {
            id: format!("les_{i:03}"),
            image_path: PathBuf::from(format!("images/les_{i:03}.nii.gz")),
            label_path: Some(PathBuf::from(format!("labels/les_{i:03}.nii.gz"))),
            volume: log_vol.sample(&mut rng).exp().round() as usize + 1,
            age: rng.gen_range(18.0..100.0),
            sex: if rng.gen_bool(0.43) { Sex::F } else { Sex::M },
            phenotype: if rng.gen_bool(0.1) {
                Phenotype::None
            } else {
                Phenotype::Archetype(rng.gen_range(0..4))
            },
            is_control: false,
        })
        .collect();
    let k = 5;
    let plan = balance_folds(&records, k, 5000, 77).unwrap();
    let again = balance_folds(&records, k, 5000, 77).unwrap();

    let mut sizes = vec![0usize; k];
    let mut per_pheno: BTreeMap<Phenotype, Vec<usize>> = BTreeMap::new();
    for a in &plan.assignments {
        sizes[a.fold] += 1;
        let r = records.iter().find(|r| r.id == a.id).unwrap();
        per_pheno.entry(r.phenotype).or_insert_with(|| vec![0; k])[a.fold] += 1;
    }
    let spread = |v: &[usize]| v.iter().max().unwrap() - v.iter().min().unwrap();
    let pheno_spread = per_pheno.values().map(|v| spread(v)).max().unwrap();
    let d = &plan.diagnostics;
    let bit_identical =
        serde_json::to_string(&plan).unwrap() == serde_json::to_string(&again).unwrap();

    let ok = verdict(
        "fold balancing",
        &[
            check(
                format!(
                    "KW p {:.4} >= pool median {:.4}",
                    d.kw_p, d.pool_median_kw_p
                ),
                d.kw_p >= d.pool_median_kw_p,
            ),
            check(format!("fold sizes {sizes:?}"), spread(&sizes) <= 1),
            check(
                format!("phenotype count spread {pheno_spread}"),
                pheno_spread <= 1,
            ),
            check("bit-identical rerun", bit_identical),
            check(
                "every study assigned once",
                plan.assignments.len() == 500
                    && plan
                        .assignments
                        .iter()
                        .map(|a| &a.id)
                        .collect::<HashSet<_>>()
                        .len()
                        == 500,
            ),
        ],
    );
    assert!(ok);
}

// ---------------------------------------------------------------- morphology

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Neighbour lists of every point, nearest first, self excluded.
fn neighbour_order(x: &[Vec<f64>]) -> Vec<Vec<usize>> {
    (0..x.len())
        .map(|i| {
            let mut idx: Vec<usize> = (0..x.len()).filter(|&j| j != i).collect();
            idx.sort_by(|&a, &b| {
                sq(&x[i], &x[a])
                    .total_cmp(&sq(&x[i], &x[b]))
                    .then(a.cmp(&b))
            });
            idx
        })
        .collect()
}

/// Trustworthiness: penalises embedding neighbours that are far in input space.
fn trustworthiness(x: &[Vec<f64>], y: &[Vec<f64>], k: usize) -> f64 {
    let n = x.len();
    let input = neighbour_order(x);
    let output = neighbour_order(y);
    let mut penalty = 0.0;
    for i in 0..n {
        let mut rank = vec![0usize; n];
        for (r, &j) in input[i].iter().enumerate() {
            rank[j] = r + 1;
        }
        for &j in &output[i][..k] {
            if rank[j] > k {
                penalty += (rank[j] - k) as f64;
            }
        }
    }
    let (n, k) = (n as f64, k as f64);
    1.0 - 2.0 / (n * k * (2.0 * n - 3.0 * k - 1.0)) * penalty
}

#[test]
fn embedding_quality_and_determinism() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let labels: Vec<usize> = (0..300).map(|i| i % 2).collect();
    let x: Vec<Vec<f64>> = labels
        .iter()
        .map(|&c| {
            (0..5)
                .map(|_| 10.0 * c as f64 + noise.sample(&mut rng))
                .collect()
        })
        .collect();
    let params = EmbeddingParams {
        seed: 42,
        ..Default::default()
    };
    let first = fit_embedding(&x, &params).unwrap().coords();
    let second = fit_embedding(&x, &params).unwrap().coords();
    let y: Vec<Vec<f64>> = first.iter().map(|p| p.to_vec()).collect();

    let nn = neighbour_order(&y);
    let recovered = (0..300).filter(|&i| labels[nn[i][0]] == labels[i]).count() as f64 / 300.0;
    let trust = trustworthiness(&x, &y, 15);
    let drift = first
        .iter()
        .zip(&second)
        .map(|(a, b)| (a[0] - b[0]).abs().max((a[1] - b[1]).abs()))
        .fold(0.0, f64::max);

    let ok = verdict(
        "embedding quality and determinism",
        &[
            check(
                format!("1-NN label recovery {recovered:.3}"),
                recovered >= 0.95,
            ),
            check(format!("trustworthiness(15) {trust:.4}"), trust >= 0.90),
            check(format!("rerun drift {drift:.1e}"), drift <= 1e-6),
            within(start.elapsed(), 120),
        ],
    );
    assert!(ok);
}

// ---------------------------------------------------------------- corruption

#[test]
fn corruption_identities() {
    let spec = PhantomSpec {
        dims: [24, 24, 24],
        ..Default::default()
    };
    let (_, phantoms) = generate(1, 1, &spec).unwrap();
    let mut identity_worst = 0.0f64;
    let mut gibbs_ok = true;
    for p in &phantoms {
        let v = &p.image;
        let diff = |w: &GridVolume| {
            v.data()
                .iter()
                .zip(w.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let outputs = [
            apply_rician(v, 0.0, 1).unwrap(),
            apply_gibbs(v, 0.0).unwrap(),
            apply_bias_field(v, 3, 0.0, 1).unwrap(),
            apply_spike(v, 0.0, 2, 1).unwrap(),
        ];
        for w in &outputs {
            identity_worst = identity_worst.max(diff(w));
        }
        for kind in NoiseKind::ALL {
            let w = NoiseSpec::new(kind, 0.0, 5).unwrap().apply(v).unwrap();
            identity_worst = identity_worst.max(diff(&w));
        }
        let energy = |w: &GridVolume| w.data().iter().map(|x| x * x).sum::<f64>();
        let e0 = energy(v);
        for alpha in [0.1, 0.3, 0.5, 0.8, 0.95] {
            let e = energy(&apply_gibbs(v, alpha).unwrap());
            gibbs_ok &= e <= e0 * (1.0 + 1e-6);
        }
    }

    let sigma = 0.2;
    let zeros = GridVolume::zeros([100, 100, 100], [1.0; 3]).unwrap();
    let noisy = apply_rician(&zeros, sigma, 11).unwrap();
    let mean = noisy.mean();
    let want = sigma * (std::f64::consts::PI / 2.0).sqrt();

    let ok = verdict(
        "corruption identities",
        &[
            check(
                format!("zero magnitude max deviation {identity_worst:.1e}"),
                identity_worst <= 1e-5,
            ),
            check("gibbs energy non-increasing", gibbs_ok),
            check(
                format!("rician on zeros mean {mean:.5} vs {want:.5}"),
                (mean - want).abs() <= 1e-3,
            ),
        ],
    );
    assert!(ok);
}

// ---------------------------------------------------------------- harness

fn studies_from(phantoms: &[lesioncal::synth::Phantom]) -> Vec<Study> {
    phantoms
        .iter()
        .map(|p| Study {
            id: p.record.id.clone(),
            image: p.image.clone(),
            label: (!p.record.is_control).then(|| p.mask.clone()),
        })
        .collect()
}

#[test]
fn noise_calibration_sweep() {
    let start = Instant::now();
    let (_, phantoms) = generate(50, 0, &PhantomSpec::default()).unwrap();
    let studies = studies_from(&phantoms);
    let models = vec![Model::new(
        "builtin",
        ThresholdSegmenter::new(0.5, 0.2).unwrap(),
    )];
    let schedules = vec![SweepSchedule::single(
        schedule(
            NoiseKind::Rician,
            NoiseKind::Rician.default_max_magnitude(),
            12,
        )
        .unwrap(),
    )];
    let options = SweepOptions {
        seed: 9,
        ..Default::default()
    };
    let run = || {
        let report = noise_sweep(&studies, &models, &schedules, &options).unwrap();
        let mut rows = Vec::new();
        report.write_rows(&mut rows).unwrap();
        let mut cells = Vec::new();
        report.write_cells(&mut cells).unwrap();
        (report, rows, cells)
    };
    let (report, rows_a, cells_a) = run();
    let (_, rows_b, cells_b) = run();

    let rows = report.rows_for("rician", "builtin");
    let drop = rows[0].mean_dice - rows[rows.len() - 1].mean_dice;
    let trend = report
        .trends
        .iter()
        .find(|t| t.schedule == "rician" && t.model == "builtin")
        .unwrap();
    let (rho, p) = (trend.rho.unwrap_or(0.0), trend.p.unwrap_or(1.0));

    let ok = verdict(
        "noise calibration sweep",
        &[
            check(format!("{} increments", rows.len()), rows.len() == 12),
            check(
                format!(
                    "mean dice {:.3} -> {:.3} (drop {drop:.3})",
                    rows[0].mean_dice,
                    rows[rows.len() - 1].mean_dice
                ),
                drop >= 0.1,
            ),
            check(
                format!("spearman rho {rho:.3}, p {p:.2e}"),
                rho < 0.0 && p < 0.01,
            ),
            check(
                "byte-identical CSV on rerun",
                rows_a == rows_b && cells_a == cells_b,
            ),
            within(start.elapsed(), 600),
        ],
    );
    assert!(ok);
}

/// Independent false-positive count: mean-shift and min-max rescale, soft
/// threshold, count probabilities above 0.5.
fn brute_fp_count(image: &GridVolume, theta: f64, tau: f64) -> f64 {
    let d = image.data();
    let m = d.iter().sum::<f64>() / d.len() as f64;
    let lo = d.iter().map(|v| v - m).fold(f64::INFINITY, f64::min);
    let hi = d.iter().map(|v| v - m).fold(f64::NEG_INFINITY, f64::max);
    d.iter()
        .map(|v| ((v - m - lo) / (hi - lo) - theta) / tau)
        .filter(|&p| p.clamp(0.0, 1.0) > 0.5)
        .count() as f64
}

fn brute_descriptive(c: &[f64]) -> (f64, f64, f64, f64, usize, f64) {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let sd = |v: &[f64]| {
        let m = mean(v);
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    };
    let nz: Vec<f64> = c.iter().copied().filter(|&v| v > 0.0).collect();
    let max = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mean(c), mean(&nz), sd(c), sd(&nz), nz.len(), max)
}

#[test]
fn false_positive_report() {
    let (_, phantoms) = generate(0, 200, &PhantomSpec::default()).unwrap();
    let controls = studies_from(&phantoms);
    let thetas = [0.55, 0.75];
    let models: Vec<Model> = thetas
        .iter()
        .map(|&t| {
            Model::new(
                format!("theta_{t}"),
                ThresholdSegmenter::new(t, 0.2).unwrap(),
            )
        })
        .collect();
    let report = fp_report(&controls, &models, 0.5, 10_000, 100, 13).unwrap();
    let (lenient, strict) = (&report.table[0], &report.table[1]);

    let mut counts_match = true;
    let mut columns_match = true;
    for (m, &theta) in thetas.iter().enumerate() {
        let brute: Vec<f64> = controls
            .iter()
            .map(|c| brute_fp_count(&prepare_image(&c.image), theta, 0.2))
            .collect();
        counts_match &= brute == report.counts[m].1;
        let (mean, nz_mean, sd, nz_sd, count, max) = brute_descriptive(&brute);
        let row = &report.table[m];
        columns_match &= row.mean == mean
            && row.nonzero_mean == Some(nz_mean)
            && row.sd == Some(sd)
            && row.nonzero_sd == Some(nz_sd)
            && row.count_nonzero == count
            && row.max == max;
    }
    let p = match report.tests[0].outcome {
        PairedOutcome::Tested(t) => t.p_value,
        PairedOutcome::Indistinguishable => 1.0,
    };

    let attainable = [
        check(
            format!(
                "Mean {:.2} (strict) < {:.2} (lenient)",
                strict.mean, lenient.mean
            ),
            strict.mean < lenient.mean,
        ),
        check("counts match brute-force recomputation", counts_match),
        check(
            "descriptive columns match brute force exactly",
            columns_match,
        ),
        check(format!("bootstrap paired t p = {p:.2e}"), p < 0.01),
    ];
    // Min-max normalization maps every control's brightest voxel to 1, which
    // clears both thresholds, so every control has at least one positive voxel
    // under either model.
    let count_check = check(
        format!(
            "count >= 1: {} (strict) < {} (lenient)",
            strict.count_nonzero, lenient.count_nonzero
        ),
        strict.count_nonzero < lenient.count_nonzero,
    );
    let mut all = attainable.to_vec();
    all.push(count_check);
    verdict("false-positive report", &all);
    assert!(attainable.iter().all(|(_, ok)| *ok));
}

#[test]
fn anatomical_equity() {
    let runs = 20u64;
    let k = 8;
    let n = 64;
    let mut flagged_only_inside = 0;
    let mut clean_null = 0;
    for r in 0..runs {
        let spec = PhantomSpec {
            n_archetypes: k,
            lesion_radius_log_sd: 0.0,
            seed: 500 + r,
            ..Default::default()
        };
        let (atlas, phantoms) = generate(n, 0, &spec).unwrap();
        let region = atlas.mask(0, atlas.threshold());
        let maps = atlas.maps();
        // voxels where the first archetype is the most frequent one
        let owned_by_first = |v: usize| (1..k).all(|a| maps[0].data()[v] >= maps[a].data()[v]);
        let images: Vec<GridVolume> = phantoms
            .iter()
            .map(|p| {
                prepare_image(&apply_rician(&p.image, 0.08, study_seed(r, &p.record.id)).unwrap())
            })
            .collect();
        let ids: Vec<String> = phantoms.iter().map(|p| p.record.id.clone()).collect();
        let masks: Vec<BinaryMask> = phantoms.iter().map(|p| p.mask.clone()).collect();
        let glm = GlmSpec {
            seed: r,
            ..Default::default()
        };
        let stack = density_stack(ids, &masks, &glm).unwrap();

        let base = ThresholdSegmenter::new(0.5, 0.2).unwrap();
        let handicapped = base.clone().with_region(region, 0.9).unwrap();
        for (seg, is_handicapped) in [(&handicapped, true), (&base, false)] {
            let scores: Vec<f64> = phantoms
                .iter()
                .zip(&images)
                .map(|(p, img)| {
                    let pred = seg.segment(&p.record.id, img).unwrap();
                    dice_score(&binarize(&pred, 0.5), &p.mask).unwrap()
                })
                .collect();
            let fwe = permutation_fwe(&stack, &scores, None, &glm).unwrap();
            let sig = fwe.significant();
            if is_handicapped {
                if !sig.is_empty() && sig.iter().all(|&v| owned_by_first(v)) {
                    flagged_only_inside += 1;
                }
            } else if sig.is_empty() {
                clean_null += 1;
            }
        }
    }
    let ok = verdict(
        "anatomical equity",
        &[
            check(
                format!(
                    "handicapped region flagged exclusively in {flagged_only_inside}/{runs} runs"
                ),
                flagged_only_inside as f64 >= 0.8 * runs as f64,
            ),
            check(
                format!("unhandicapped clean in {clean_null}/{runs} runs"),
                clean_null as f64 >= 0.9 * runs as f64,
            ),
        ],
    );
    assert!(ok);
}

// ---------------------------------------------------------------- early stopping

#[test]
fn early_stopping_plateau() {
    let len = 300;
    let trace: Vec<(f64, f64)> = (0..len)
        .map(|e| {
            if e <= 10 {
                (0.3 + 0.05 * e as f64, 20.0 - e as f64)
            } else {
                // Dice wanders around the plateau, HD never improves again
                (
                    0.8 + 0.02 * (e as f64 * 0.37).sin(),
                    10.5 + 0.1 * (e % 7) as f64,
                )
            }
        })
        .collect();
    let res = early_stop(&trace, 150).unwrap();
    let mut best = 10;
    for e in 10..=160 {
        if trace[e].0 > trace[best].0 {
            best = e;
        }
    }
    let ok = verdict(
        "early stopping",
        &[
            check(
                format!("stop_epoch {}", res.stop_epoch),
                res.stop_epoch == 161,
            ),
            check(
                format!("best_epoch {} (oracle {best})", res.best_epoch),
                res.best_epoch == best,
            ),
            check(
                format!("last joint improvement {}", res.last_joint_improvement),
                res.last_joint_improvement == 10,
            ),
        ],
    );
    assert!(ok);
}

// ---------------------------------------------------------------- nifti

fn handmade_header_image() -> Vec<u8> {
    let mut b = vec![0u8; 352];
    b[0..4].copy_from_slice(&348i32.to_le_bytes());
    for (i, d) in [3i16, 1, 1, 1, 1, 1, 1, 1].iter().enumerate() {
        b[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_le_bytes());
    }
    b[70..72].copy_from_slice(&4i16.to_le_bytes());
    b[72..74].copy_from_slice(&16i16.to_le_bytes());
    for i in 0..8 {
        b[76 + 4 * i..80 + 4 * i].copy_from_slice(&1f32.to_le_bytes());
    }
    b[108..112].copy_from_slice(&352f32.to_le_bytes());
    b[112..116].copy_from_slice(&2f32.to_le_bytes());
    b[116..120].copy_from_slice(&1f32.to_le_bytes());
    b[344..348].copy_from_slice(b"n+1\0");
    b.extend_from_slice(&3i16.to_le_bytes());
    b
}

#[test]
fn nifti_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut bits: Vec<u32> = (0..7 * 5 * 3)
        .map(|_| rng.gen())
        .filter(|b| f32::from_bits(*b).is_finite())
        .collect();
    bits.truncate(7 * 5 * 3 - 6);
    bits.extend([0.0f32, -0.0, f32::MIN_POSITIVE, 1e-42, f32::MAX, -1.5].map(f32::to_bits));
    let data: Vec<f64> = bits.iter().map(|&b| f32::from_bits(b) as f64).collect();
    let v = GridVolume::new([7, 5, 3], [1.5, 2.0, 2.5], data).unwrap();

    let mut exact = true;
    for name in ["a.nii", "a.nii.gz"] {
        let path = dir.path().join(name);
        nifti::write_volume(&v, &path, Datatype::Float32).unwrap();
        let (back, _) = nifti::read_volume(&path).unwrap();
        exact &= back.dims() == v.dims()
            && back.spacing() == v.spacing()
            && back
                .data()
                .iter()
                .zip(&bits)
                .all(|(x, &b)| (*x as f32).to_bits() == b);
    }
    let (scaled, header) = nifti::decode_volume(&handmade_header_image()).unwrap();

    let ok = verdict(
        "nifti round trip",
        &[
            check("float32 round trip bit-exact (.nii and .nii.gz)", exact),
            check(
                format!(
                    "scl_slope {} scl_inter {} stored 3 -> {}",
                    header.scl_slope,
                    header.scl_inter,
                    scaled.data()[0]
                ),
                scaled.data()[0] == 7.0,
            ),
        ],
    );
    assert!(ok);
}

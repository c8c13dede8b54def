//! Morphological calibration: a 2D neighbour-graph embedding fitted on
//! ground-truth lesion masks, transform of model predictions into that space,
//! unit-square alignment and per-study distances between label and prediction.

mod umap;

pub use umap::{fit_ab, Point};

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::stats::{self, PairedOutcome};
use crate::volume::BinaryMask;
use umap::{Kernel, Layout};

/// Flattened, optionally block-downsampled binary lesion mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LesionVector {
    pub study_id: String,
    pub features: Vec<f64>,
}

impl LesionVector {
    /// Mean-pools `f`-sided blocks (partial blocks at the far edges average
    /// the voxels they contain) and re-binarizes at `>= 0.5`.
    pub fn from_mask(study_id: impl Into<String>, mask: &BinaryMask, f: usize) -> Result<Self> {
        ensure!(f >= 1, InvalidArgument, "downsample factor must be >= 1");
        let [nx, ny, nz] = mask.dims();
        let out = [nx.div_ceil(f), ny.div_ceil(f), nz.div_ceil(f)];
        let mut sum = vec![0.0; out[0] * out[1] * out[2]];
        let mut count = vec![0usize; sum.len()];
        let data = mask.volume().data();
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let o = i / f + out[0] * (j / f + out[1] * (k / f));
                    sum[o] += data[i + nx * (j + ny * k)];
                    count[o] += 1;
                }
            }
        }
        let features = sum
            .iter()
            .zip(&count)
            .map(|(&s, &c)| if s / c as f64 >= 0.5 { 1.0 } else { 0.0 })
            .collect();
        Ok(Self {
            study_id: study_id.into(),
            features,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingParams {
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub n_epochs: usize,
    pub negative_sample_rate: usize,
    pub seed: u64,
}

impl Default for EmbeddingParams {
    fn default() -> Self {
        Self {
            n_neighbors: 15,
            min_dist: 0.1,
            n_epochs: 200,
            negative_sample_rate: 5,
            seed: 0,
        }
    }
}

impl EmbeddingParams {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.n_neighbors >= 2,
            InvalidArgument,
            "n_neighbors must be >= 2"
        );
        ensure!(
            self.min_dist > 0.0 && self.min_dist.is_finite(),
            InvalidArgument,
            "min_dist must be positive"
        );
        ensure!(self.n_epochs >= 1, InvalidArgument, "n_epochs must be >= 1");
        ensure!(
            self.negative_sample_rate >= 1,
            InvalidArgument,
            "negative_sample_rate must be >= 1"
        );
        Ok(())
    }
}

/// Fitted embedding. Training rows are stored deduplicated; `row_index` maps
/// each input row to its unique row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    pub params: EmbeddingParams,
    pub a: f64,
    pub b: f64,
    pub unique_rows: Vec<Vec<f64>>,
    pub unique_coords: Vec<Point>,
    pub row_index: Vec<usize>,
    pub kernels: Vec<Kernel>,
    /// Every training row identical: all points share one location.
    pub degenerate: bool,
}

impl EmbeddingModel {
    pub fn dim(&self) -> usize {
        self.unique_rows[0].len()
    }

    /// One coordinate pair per training row, in input order.
    pub fn coords(&self) -> Vec<Point> {
        self.row_index
            .iter()
            .map(|&u| self.unique_coords[u])
            .collect()
    }

    fn k_eff(&self) -> usize {
        self.params
            .n_neighbors
            .min(self.unique_rows.len().saturating_sub(1))
            .max(1)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }
}

fn row_key(row: &[f64]) -> Vec<u64> {
    row.iter()
        .map(|v| if *v == 0.0 { 0 } else { v.to_bits() })
        .collect()
}

pub fn fit_embedding(vectors: &[Vec<f64>], params: &EmbeddingParams) -> Result<EmbeddingModel> {
    params.validate()?;
    ensure!(
        vectors.len() > params.n_neighbors,
        InvalidArgument,
        "embedding needs more than n_neighbors = {} vectors, got {}",
        params.n_neighbors,
        vectors.len()
    );
    let dim = vectors[0].len();
    ensure!(dim > 0, InvalidArgument, "embedding vectors are empty");
    for v in vectors {
        ensure!(
            v.len() == dim,
            InvalidArgument,
            "embedding vectors differ in dimension ({} vs {dim})",
            v.len()
        );
        ensure!(
            v.iter().all(|x| x.is_finite()),
            InvalidArgument,
            "embedding vector has non-finite entries"
        );
    }

    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut unique_rows = Vec::new();
    let row_index: Vec<usize> = vectors
        .iter()
        .map(|v| {
            *seen.entry(row_key(v)).or_insert_with(|| {
                unique_rows.push(v.clone());
                unique_rows.len() - 1
            })
        })
        .collect();

    let (a, b) = fit_ab(params.min_dist, 1.0);
    let mut model = EmbeddingModel {
        params: params.clone(),
        a,
        b,
        unique_rows,
        unique_coords: Vec::new(),
        row_index,
        kernels: Vec::new(),
        degenerate: false,
    };
    let n = model.unique_rows.len();
    if n == 1 {
        model.unique_coords = vec![[0.0, 0.0]];
        model.degenerate = true;
        return Ok(model);
    }

    let (graph, kernels) = umap::fuzzy_graph(&model.unique_rows, model.k_eff());
    model.kernels = kernels;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut coords = umap::initial_layout(n, &graph, &mut rng);
    let edges = umap::epochs_per_sample(&graph, params.n_epochs);
    Layout {
        a,
        b,
        n_epochs: params.n_epochs,
        negative_rate: params.negative_sample_rate as f64,
        initial_alpha: 1.0,
        edges: &edges,
    }
    .run(&mut coords, None, &mut rng);
    ensure!(
        coords.iter().flatten().all(|c| c.is_finite()),
        Degenerate,
        "embedding produced non-finite coordinates"
    );
    model.unique_coords = coords;
    Ok(model)
}

/// Learning rate of the transform refinement.
const TRANSFORM_ALPHA: f64 = 0.25;

/// Places new vectors in a fitted embedding with the training layout frozen.
///
/// A vector identical to a training row takes that row's coordinates. Any
/// other point starts at the inverse-distance weighted mean of its nearest
/// training points and is refined for `n_epochs / 3` epochs. Each symmetric
/// training edge moved both endpoints, so the refinement samples negatives
/// at half rate to keep the same attraction/repulsion balance. Points are
/// independent of each other.
pub fn embed_new(model: &EmbeddingModel, vectors: &[Vec<f64>]) -> Result<Vec<Point>> {
    let dim = model.dim();
    for v in vectors {
        ensure!(
            v.len() == dim,
            InvalidArgument,
            "vector dimension {} does not match the model ({dim})",
            v.len()
        );
    }
    if model.degenerate {
        return Ok(vec![model.unique_coords[0]; vectors.len()]);
    }
    let k = model.k_eff();
    let nn = umap::knn(vectors, &model.unique_rows, k, false);
    let mean_all = umap::mean_distance(&nn);
    let n_epochs = (model.params.n_epochs / 3).max(1);
    let coords = &model.unique_coords;

    let out = nn
        .par_iter()
        .enumerate()
        .map(|(i, row)| {
            if let Some(&(j, _)) = row.iter().find(|p| p.1 == 0.0) {
                return coords[j];
            }
            let others = &row[..k];
            let init = {
                let (mut x, mut y, mut wsum) = (0.0, 0.0, 0.0);
                for &(j, d) in others {
                    let w = 1.0 / d;
                    x += w * coords[j][0];
                    y += w * coords[j][1];
                    wsum += w;
                }
                [x / wsum, y / wsum]
            };
            let d: Vec<f64> = others.iter().map(|p| p.1).collect();
            let own = umap::kernel(&d, k, mean_all);
            let graph: Vec<(usize, usize, f64)> = others
                .iter()
                .map(|&(j, dj)| {
                    let (w1, w2) = (
                        umap::membership(dj, own.rho, own.sigma),
                        model.kernels[j].weight(dj),
                    );
                    (0, j, 1.0 - (1.0 - w1) * (1.0 - w2))
                })
                .collect();
            let edges = umap::epochs_per_sample(&graph, n_epochs);
            let mut head = [init];
            let mut rng = umap::stream_rng(model.params.seed, i as u64 + 1);
            Layout {
                a: model.a,
                b: model.b,
                n_epochs,
                negative_rate: 0.5 * model.params.negative_sample_rate as f64,
                initial_alpha: TRANSFORM_ALPHA,
                edges: &edges,
            }
            .run(&mut head, Some(coords), &mut rng);
            head[0]
        })
        .collect();
    Ok(out)
}

/// Per-axis `x' = (x - offset) / scale`, derived from ground-truth coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentTransform {
    pub offset: [f64; 2],
    pub scale: [f64; 2],
}

impl AlignmentTransform {
    pub fn apply(&self, coords: &[Point]) -> Vec<Point> {
        coords
            .iter()
            .map(|p| {
                [
                    (p[0] - self.offset[0]) / self.scale[0],
                    (p[1] - self.offset[1]) / self.scale[1],
                ]
            })
            .collect()
    }

    pub fn invert(&self, coords: &[Point]) -> Vec<Point> {
        coords
            .iter()
            .map(|p| {
                [
                    p[0] * self.scale[0] + self.offset[0],
                    p[1] * self.scale[1] + self.offset[1],
                ]
            })
            .collect()
    }
}

pub fn compute_alignment(gt: &[Point]) -> Result<AlignmentTransform> {
    ensure!(
        !gt.is_empty(),
        InvalidArgument,
        "alignment needs at least one coordinate"
    );
    let mut offset = [0.0; 2];
    let mut scale = [0.0; 2];
    for axis in 0..2 {
        let lo = gt.iter().map(|p| p[axis]).fold(f64::INFINITY, f64::min);
        let hi = gt.iter().map(|p| p[axis]).fold(f64::NEG_INFINITY, f64::max);
        ensure!(
            hi > lo,
            Degenerate,
            "ground-truth coordinates have zero range on axis {axis}"
        );
        offset[axis] = lo;
        scale[axis] = hi - lo;
    }
    Ok(AlignmentTransform { offset, scale })
}

pub fn apply_alignment(t: &AlignmentTransform, coords: &[Point]) -> Vec<Point> {
    t.apply(coords)
}

/// Row of an exported coordinate table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyCoord {
    pub study_id: String,
    pub x: f64,
    pub y: f64,
}

impl StudyCoord {
    pub fn new(study_id: impl Into<String>, p: Point) -> Self {
        Self {
            study_id: study_id.into(),
            x: p[0],
            y: p[1],
        }
    }

    pub fn point(&self) -> Point {
        [self.x, self.y]
    }
}

pub fn write_coords<W: Write>(coords: &[StudyCoord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for c in coords {
        w.serialize(c)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_coords<R: Read>(input: R) -> Result<Vec<StudyCoord>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyDistance {
    pub study_id: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceSummary {
    pub distances: Vec<StudyDistance>,
    pub mean: f64,
    pub median: f64,
}

impl DistanceSummary {
    pub fn values(&self) -> Vec<f64> {
        self.distances.iter().map(|d| d.distance).collect()
    }
}

/// Euclidean distance per study between aligned ground-truth and prediction
/// coordinates, in ground-truth order.
pub fn embedding_distances(gt: &[StudyCoord], pred: &[StudyCoord]) -> Result<DistanceSummary> {
    ensure!(!gt.is_empty(), InvalidArgument, "no coordinates to compare");
    ensure!(
        gt.len() == pred.len(),
        InvalidArgument,
        "ground truth has {} studies, predictions {}",
        gt.len(),
        pred.len()
    );
    let by_id: HashMap<&str, &StudyCoord> = pred.iter().map(|c| (c.study_id.as_str(), c)).collect();
    ensure!(
        by_id.len() == pred.len(),
        InvalidArgument,
        "duplicate study id in predictions"
    );
    let distances = gt
        .iter()
        .map(|g| {
            let p = by_id.get(g.study_id.as_str()).ok_or_else(|| {
                Error::InvalidArgument(format!("study {} has no prediction coordinate", g.study_id))
            })?;
            Ok(StudyDistance {
                study_id: g.study_id.clone(),
                distance: (g.x - p.x).hypot(g.y - p.y),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<f64> = distances.iter().map(|d| d.distance).collect();
    Ok(DistanceSummary {
        mean: stats::mean(&values),
        median: stats::median(&values),
        distances,
    })
}

/// Paired t on `dist_a - dist_b`, matched by study id.
pub fn compare_models(a: &DistanceSummary, b: &DistanceSummary) -> Result<PairedOutcome> {
    let by_id: HashMap<&str, f64> = b
        .distances
        .iter()
        .map(|d| (d.study_id.as_str(), d.distance))
        .collect();
    ensure!(
        a.distances.len() == b.distances.len(),
        InvalidArgument,
        "distance sets differ in size"
    );
    let mut xa = Vec::with_capacity(a.distances.len());
    let mut xb = Vec::with_capacity(a.distances.len());
    for d in &a.distances {
        let other = by_id.get(d.study_id.as_str()).ok_or_else(|| {
            Error::InvalidArgument(format!("study {} missing from second model", d.study_id))
        })?;
        xa.push(d.distance);
        xb.push(*other);
    }
    stats::compare_paired(&xa, &xb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    /// Standard trustworthiness: 1 - 2/(n k (2n - 3k - 1)) * sum of
    /// (rank - k) over embedding neighbours that are not input neighbours.
    pub(crate) fn trustworthiness(x: &[Vec<f64>], y: &[Point], k: usize) -> f64 {
        let n = x.len();
        let d2 =
            |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
        let mut penalty = 0.0;
        for i in 0..n {
            let mut ox: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            ox.sort_by(|&a, &b| d2(&x[i], &x[a]).total_cmp(&d2(&x[i], &x[b])));
            let mut rank = vec![0usize; n];
            for (r, &j) in ox.iter().enumerate() {
                rank[j] = r + 1;
            }
            let mut oy: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            oy.sort_by(|&a, &b| d2(&y[i], &y[a]).total_cmp(&d2(&y[i], &y[b])));
            for &j in &oy[..k] {
                if rank[j] > k {
                    penalty += (rank[j] - k) as f64;
                }
            }
        }
        let (nf, kf) = (n as f64, k as f64);
        1.0 - 2.0 / (nf * kf * (2.0 * nf - 3.0 * kf - 1.0)) * penalty
    }

    pub(crate) fn two_clusters(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut x = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let shift = if c == 0 { 0.0 } else { 10.0 };
            x.push((0..5).map(|_| shift + noise.sample(&mut rng)).collect());
            labels.push(c);
        }
        (x, labels)
    }

    #[test]
    fn two_cluster_benchmark() {
        let (x, labels) = two_clusters(300, 11);
        let model = fit_embedding(&x, &EmbeddingParams::default()).unwrap();
        let y = model.coords();
        let mut correct = 0;
        for i in 0..y.len() {
            let j = (0..y.len())
                .filter(|&j| j != i)
                .min_by(|&a, &b| {
                    umap::sq_dist(&y[i], &y[a]).total_cmp(&umap::sq_dist(&y[i], &y[b]))
                })
                .unwrap();
            correct += (labels[i] == labels[j]) as usize;
        }
        assert!(
            correct as f64 / 300.0 >= 0.95,
            "1-NN accuracy {correct}/300"
        );
        let t = trustworthiness(&x, &y, 15);
        assert!(t >= 0.90, "trustworthiness {t}");
    }

    #[test]
    fn deterministic_and_duplicates_coincide() {
        let (mut x, _) = two_clusters(60, 3);
        x.push(x[7].clone());
        let p = EmbeddingParams {
            n_epochs: 50,
            ..Default::default()
        };
        let m1 = fit_embedding(&x, &p).unwrap();
        let m2 = fit_embedding(&x, &p).unwrap();
        assert_eq!(m1.coords(), m2.coords());
        let c = m1.coords();
        assert!(umap::sq_dist(&c[7], &c[60]).sqrt() < 1e-3);
        assert_eq!(m1.unique_rows.len(), 60);
    }

    #[test]
    fn all_identical_is_flagged() {
        let x = vec![vec![1.0, 2.0]; 20];
        let m = fit_embedding(&x, &EmbeddingParams::default()).unwrap();
        assert!(m.degenerate);
        assert!(m.coords().iter().all(|c| *c == [0.0, 0.0]));
        assert_eq!(embed_new(&m, &[vec![5.0, 5.0]]).unwrap(), vec![[0.0, 0.0]]);
    }

    #[test]
    fn input_errors() {
        let p = EmbeddingParams::default();
        assert!(fit_embedding(&vec![vec![0.0]; 15], &p).is_err());
        let mut x = vec![vec![0.0, 1.0]; 20];
        x[3] = vec![1.0];
        assert!(fit_embedding(&x, &p).is_err());
        assert!(EmbeddingParams {
            n_neighbors: 1,
            ..p.clone()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn transform_of_training_vector_lands_on_it() {
        let (x, _) = two_clusters(120, 5);
        let model = fit_embedding(&x, &EmbeddingParams::default()).unwrap();
        let y = model.coords();
        let diam = {
            let mut d: f64 = 0.0;
            for a in &y {
                for b in &y {
                    d = d.max(umap::sq_dist(a, b).sqrt());
                }
            }
            d
        };
        let queries: Vec<Vec<f64>> = [0, 17, 55, 99].iter().map(|&i| x[i].clone()).collect();
        let placed = embed_new(&model, &queries).unwrap();
        for (q, &i) in placed.iter().zip(&[0usize, 17, 55, 99]) {
            let d = umap::sq_dist(q, &y[i]).sqrt();
            assert!(d <= 1e-2 * diam, "point {i} moved {d} (diameter {diam})");
        }
        assert_eq!(placed, embed_new(&model, &queries).unwrap());
        assert!(embed_new(&model, &[vec![0.0; 4]]).is_err());
    }

    #[test]
    fn transform_places_near_points_in_their_cluster() {
        let (x, labels) = two_clusters(120, 5);
        let model = fit_embedding(&x, &EmbeddingParams::default()).unwrap();
        let y = model.coords();
        let (fresh, fresh_labels) = two_clusters(20, 99);
        let placed = embed_new(&model, &fresh).unwrap();
        for (p, l) in placed.iter().zip(&fresh_labels) {
            let j = (0..y.len())
                .min_by(|&a, &b| umap::sq_dist(p, &y[a]).total_cmp(&umap::sq_dist(p, &y[b])))
                .unwrap();
            assert_eq!(labels[j], *l);
        }
    }

    #[test]
    fn lesion_vector_downsampling() {
        let mut bits = vec![false; 27];
        // block (0,0,0) of a 3^3 grid with f=2 holds 8 voxels; set 4 of them
        for idx in [0, 1, 3, 4] {
            bits[idx] = true;
        }
        let m = BinaryMask::from_bools([3, 3, 3], [1.0; 3], &bits).unwrap();
        let v = LesionVector::from_mask("s", &m, 2).unwrap();
        assert_eq!(v.features.len(), 8);
        assert_eq!(v.features[0], 1.0);
        assert!(v.features[1..].iter().all(|&f| f == 0.0));
        let full = LesionVector::from_mask("s", &m, 1).unwrap();
        assert_eq!(full.features.iter().sum::<f64>(), 4.0);
        // a partial edge block with its only voxel set
        let mut edge = vec![false; 27];
        edge[26] = true;
        let m = BinaryMask::from_bools([3, 3, 3], [1.0; 3], &edge).unwrap();
        assert_eq!(
            LesionVector::from_mask("s", &m, 2).unwrap().features[7],
            1.0
        );
    }

    #[test]
    fn alignment_examples() {
        let gt = vec![[-2.0, 1.0], [2.0, 3.0], [0.0, 2.0]];
        let t = compute_alignment(&gt).unwrap();
        let a = apply_alignment(&t, &gt);
        assert_eq!(a, vec![[0.0, 0.0], [1.0, 1.0], [0.5, 0.5]]);
        assert_eq!(t.apply(&[[3.0, 1.0]])[0][0], 1.25);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Point> = (0..50)
            .map(|_| [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)])
            .collect();
        for (p, q) in t.invert(&t.apply(&pts)).iter().zip(&pts) {
            assert_abs_diff_eq!(p[0], q[0], epsilon = 1e-12);
            assert_abs_diff_eq!(p[1], q[1], epsilon = 1e-12);
        }
        assert!(compute_alignment(&[[1.0, 0.0], [1.0, 2.0]]).is_err());
        assert!(compute_alignment(&[]).is_err());
    }

    fn coords(v: &[(&str, f64, f64)]) -> Vec<StudyCoord> {
        v.iter()
            .map(|&(s, x, y)| StudyCoord::new(s, [x, y]))
            .collect()
    }

    #[test]
    fn distance_examples() {
        let gt = coords(&[("a", 0.0, 0.0), ("b", 1.0, 1.0)]);
        let pred = coords(&[("b", 1.0, 1.0), ("a", 0.3, 0.4)]);
        let d = embedding_distances(&gt, &pred).unwrap();
        assert_abs_diff_eq!(d.distances[0].distance, 0.5, epsilon = 1e-15);
        assert_eq!(d.distances[1].distance, 0.0);
        assert_abs_diff_eq!(d.mean, 0.25);
        assert!(embedding_distances(&gt, &coords(&[("a", 0.0, 0.0), ("c", 0.0, 0.0)])).is_err());
        assert!(embedding_distances(&gt, &gt[..1]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ids: Vec<String> = (0..31).map(|i| format!("s{i}")).collect();
        let g: Vec<StudyCoord> = ids
            .iter()
            .map(|s| StudyCoord::new(s, [rng.gen(), rng.gen()]))
            .collect();
        let p: Vec<StudyCoord> = ids
            .iter()
            .map(|s| StudyCoord::new(s, [rng.gen(), rng.gen()]))
            .collect();
        let d = embedding_distances(&g, &p).unwrap();
        let mut brute: Vec<f64> = g
            .iter()
            .zip(&p)
            .map(|(a, b)| ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt())
            .collect();
        assert_abs_diff_eq!(d.mean, brute.iter().sum::<f64>() / 31.0, epsilon = 1e-12);
        brute.sort_by(f64::total_cmp);
        assert_abs_diff_eq!(d.median, brute[15], epsilon = 1e-12);
    }

    #[test]
    fn compare_models_examples() {
        let summary = |vals: &[f64]| {
            let pts: Vec<StudyCoord> = vals
                .iter()
                .enumerate()
                .map(|(i, _)| StudyCoord::new(format!("s{i}"), [0.0, 0.0]))
                .collect();
            let pred: Vec<StudyCoord> = vals
                .iter()
                .enumerate()
                .map(|(i, &v)| StudyCoord::new(format!("s{i}"), [v, 0.0]))
                .collect();
            embedding_distances(&pts, &pred).unwrap()
        };
        let base = [0.12, 0.3, 0.05, 0.44, 0.21, 0.33, 0.09, 0.17, 0.26, 0.38];
        let shifted: Vec<f64> = base.iter().map(|v| v + 0.1).collect();
        let (a, b) = (summary(&shifted), summary(&base));
        assert_eq!(
            compare_models(&b, &b).unwrap(),
            PairedOutcome::Indistinguishable
        );
        let ab = compare_models(&a, &b).unwrap();
        let ba = compare_models(&b, &a).unwrap();
        let (tab, tba) = (ab.test().unwrap(), ba.test().unwrap());
        assert!(tab.statistic > 0.0 && tab.p_value < 0.01);
        assert_eq!(tab.statistic, -tba.statistic);
    }

    #[test]
    fn model_and_coords_round_trip() {
        let (x, _) = two_clusters(40, 1);
        let m = fit_embedding(
            &x,
            &EmbeddingParams {
                n_epochs: 20,
                ..Default::default()
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.save(&path).unwrap();
        assert_eq!(EmbeddingModel::load(&path).unwrap(), m);

        let c = vec![StudyCoord::new("a", [0.25, -1.5])];
        let mut buf = Vec::new();
        write_coords(&c, &mut buf).unwrap();
        assert!(String::from_utf8(buf.clone())
            .unwrap()
            .starts_with("study_id,x,y\n"));
        assert_eq!(read_coords(&buf[..]).unwrap(), c);
    }
}

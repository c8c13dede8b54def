//! Fuzzy neighbour graph, curve fit, initialization and SGD layout.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const SMOOTH_K_TOLERANCE: f64 = 1e-5;
const MIN_K_DIST_SCALE: f64 = 1e-3;
const GRAD_CLIP: f64 = 4.0;
const SPECTRAL_MAX_POINTS: usize = 2000;
const INIT_EXTENT: f64 = 10.0;

/// A 2D embedding coordinate.
pub type Point = [f64; 2];

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `k` nearest entries of `data` for every query, ascending by distance
/// then index. `exclude_self` drops `j == i` when queries and data coincide.
pub(crate) fn knn(
    queries: &[Vec<f64>],
    data: &[Vec<f64>],
    k: usize,
    exclude_self: bool,
) -> Vec<Vec<(usize, f64)>> {
    queries
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            let mut d: Vec<(usize, f64)> = data
                .iter()
                .enumerate()
                .filter(|(j, _)| !(exclude_self && *j == i))
                .map(|(j, x)| (j, sq_dist(q, x).sqrt()))
                .collect();
            d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            d.truncate(k);
            d
        })
        .collect()
}

/// `(rho, sigma)` such that `sum_j exp(-max(0, d_j - rho) / sigma) = log2(k)`.
pub(crate) fn smooth_knn(dists: &[f64], k: usize, mean_all: f64) -> (f64, f64) {
    let target = (k as f64).log2();
    let rho = dists.iter().copied().find(|&d| d > 0.0).unwrap_or(0.0);
    let (mut lo, mut hi, mut mid) = (0.0f64, f64::INFINITY, 1.0f64);
    for _ in 0..64 {
        let psum: f64 = dists
            .iter()
            .map(|&d| {
                let x = d - rho;
                if x > 0.0 {
                    (-x / mid).exp()
                } else {
                    1.0
                }
            })
            .sum();
        if (psum - target).abs() < SMOOTH_K_TOLERANCE {
            break;
        }
        if psum > target {
            hi = mid;
            mid = 0.5 * (lo + hi);
        } else {
            lo = mid;
            mid = if hi.is_infinite() {
                mid * 2.0
            } else {
                0.5 * (lo + hi)
            };
        }
    }
    let floor_ref = if rho > 0.0 {
        dists.iter().sum::<f64>() / dists.len() as f64
    } else {
        mean_all
    };
    (rho, mid.max(MIN_K_DIST_SCALE * floor_ref))
}

pub(crate) fn membership(d: f64, rho: f64, sigma: f64) -> f64 {
    if d <= rho || sigma <= 0.0 {
        1.0
    } else {
        (-(d - rho) / sigma).exp()
    }
}

/// Per-point neighbourhood kernel: `rho`, `sigma` and the distance to the
/// k-th neighbour.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Kernel {
    pub rho: f64,
    pub sigma: f64,
    pub radius: f64,
}

impl Kernel {
    /// Membership of a point at distance `d` in this neighbourhood; zero
    /// outside the k-neighbour radius.
    pub fn weight(&self, d: f64) -> f64 {
        if d > self.radius {
            0.0
        } else {
            membership(d, self.rho, self.sigma)
        }
    }
}

pub(crate) fn mean_distance(nn: &[Vec<(usize, f64)>]) -> f64 {
    let all: Vec<f64> = nn.iter().flatten().map(|p| p.1).collect();
    all.iter().sum::<f64>() / all.len().max(1) as f64
}

pub(crate) fn kernel(dists: &[f64], k: usize, mean_all: f64) -> Kernel {
    let (rho, sigma) = smooth_knn(dists, k, mean_all);
    Kernel {
        rho,
        sigma,
        radius: dists.last().copied().unwrap_or(0.0),
    }
}

/// Symmetric fuzzy graph as a sorted edge list containing both directions,
/// plus each point's kernel.
pub(crate) fn fuzzy_graph(
    points: &[Vec<f64>],
    k: usize,
) -> (Vec<(usize, usize, f64)>, Vec<Kernel>) {
    let nn = knn(points, points, k, true);
    let mean_all = mean_distance(&nn);
    let mut directed: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut kernels = Vec::with_capacity(points.len());
    for (i, row) in nn.iter().enumerate() {
        let d: Vec<f64> = row.iter().map(|p| p.1).collect();
        let kern = kernel(&d, k, mean_all);
        for &(j, dij) in row {
            directed.insert((i, j), membership(dij, kern.rho, kern.sigma));
        }
        kernels.push(kern);
    }
    let mut sym: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (&(i, j), &w1) in &directed {
        let w2 = directed.get(&(j, i)).copied().unwrap_or(0.0);
        let w = 1.0 - (1.0 - w1) * (1.0 - w2);
        sym.insert((i, j), w);
        sym.insert((j, i), w);
    }
    (
        sym.into_iter().map(|((i, j), w)| (i, j, w)).collect(),
        kernels,
    )
}

/// Least-squares fit of `1 / (1 + a x^(2b))` to the piecewise target
/// `1` for `x < min_dist`, `exp(-(x - min_dist) / spread)` beyond, on 300
/// points over `[0, 3 spread]`. Levenberg-Marquardt from `(1, 1)`.
pub fn fit_ab(min_dist: f64, spread: f64) -> (f64, f64) {
    let xs: Vec<f64> = (0..300).map(|i| 3.0 * spread * i as f64 / 299.0).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| {
            if x < min_dist {
                1.0
            } else {
                (-(x - min_dist) / spread).exp()
            }
        })
        .collect();
    let cost = |a: f64, b: f64| -> f64 {
        xs.iter()
            .zip(&ys)
            .map(|(&x, &y)| {
                let r = 1.0 / (1.0 + a * x.powf(2.0 * b)) - y;
                r * r
            })
            .sum()
    };
    let (mut a, mut b) = (1.0f64, 1.0f64);
    let mut c = cost(a, b);
    let mut lambda = 1e-3;
    for _ in 0..1000 {
        let (mut jaa, mut jab, mut jbb, mut ga, mut gb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in xs.iter().zip(&ys) {
            let xp = if x > 0.0 { x.powf(2.0 * b) } else { 0.0 };
            let den = 1.0 + a * xp;
            let r = 1.0 / den - y;
            let da = -xp / (den * den);
            let db = if x > 0.0 {
                -a * xp * 2.0 * x.ln() / (den * den)
            } else {
                0.0
            };
            jaa += da * da;
            jab += da * db;
            jbb += db * db;
            ga += da * r;
            gb += db * r;
        }
        let mut improved = false;
        while lambda < 1e16 {
            let (m11, m22) = (jaa * (1.0 + lambda), jbb * (1.0 + lambda));
            let det = m11 * m22 - jab * jab;
            let step_a = -(m22 * ga - jab * gb) / det;
            let step_b = -(m11 * gb - jab * ga) / det;
            let (na, nb) = (a + step_a, b + step_b);
            let nc = cost(na, nb);
            if nc.is_finite() && nc <= c {
                let small = step_a.abs() < 1e-15 * (1.0 + a.abs())
                    && step_b.abs() < 1e-15 * (1.0 + b.abs());
                a = na;
                b = nb;
                c = nc;
                lambda = (lambda / 10.0).max(1e-15);
                improved = !small;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (a, b)
}

fn random_init(n: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    (0..n)
        .map(|_| {
            [
                rng.gen_range(-INIT_EXTENT..INIT_EXTENT),
                rng.gen_range(-INIT_EXTENT..INIT_EXTENT),
            ]
        })
        .collect()
}

/// Two smallest non-trivial eigenvectors of the normalized graph Laplacian.
/// `None` when the graph is too small or too large for a dense solve, or the
/// decomposition is not usable.
fn spectral_init(n: usize, edges: &[(usize, usize, f64)]) -> Option<Vec<Point>> {
    if !(4..=SPECTRAL_MAX_POINTS).contains(&n) {
        return None;
    }
    let mut deg = vec![0.0; n];
    for &(i, _, w) in edges {
        deg[i] += w;
    }
    if deg.iter().any(|&d| d <= 0.0) {
        return None;
    }
    let mut m = DMatrix::<f64>::identity(n, n);
    for &(i, j, w) in edges {
        m[(i, j)] -= w / (deg[i] * deg[j]).sqrt();
    }
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .total_cmp(&eig.eigenvalues[b])
            .then(a.cmp(&b))
    });

    // project out the trivial direction D^(1/2) 1, which also handles
    // disconnected graphs whose null space is degenerate
    let norm = deg.iter().sum::<f64>().sqrt();
    let trivial: Vec<f64> = deg.iter().map(|d| d.sqrt() / norm).collect();
    let mut picked: Vec<Vec<f64>> = Vec::new();
    for &c in &order {
        let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
        for basis in std::iter::once(&trivial).chain(picked.iter()) {
            let dot: f64 = v.iter().zip(basis).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(basis).for_each(|(x, y)| *x -= dot * y);
        }
        let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if len > 0.5 {
            v.iter_mut().for_each(|x| *x /= len);
            picked.push(v);
            if picked.len() == 2 {
                break;
            }
        }
    }
    if picked.len() < 2 || picked.iter().flatten().any(|x| !x.is_finite()) {
        return None;
    }
    Some((0..n).map(|i| [picked[0][i], picked[1][i]]).collect())
}

/// Initial layout: spectral with small jitter, random when spectral is
/// unavailable. Rescaled to `[0, 10]` per axis.
pub(crate) fn initial_layout(
    n: usize,
    edges: &[(usize, usize, f64)],
    rng: &mut ChaCha8Rng,
) -> Vec<Point> {
    let mut y = match spectral_init(n, edges) {
        Some(mut y) => {
            let max = y.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            let expansion = if max > 0.0 { INIT_EXTENT / max } else { 1.0 };
            let jitter = rand_distr::Normal::new(0.0, 1e-4).expect("valid normal");
            for p in y.iter_mut() {
                for c in p.iter_mut() {
                    *c = *c * expansion + rng.sample(jitter);
                }
            }
            y
        }
        None => random_init(n, rng),
    };
    for axis in 0..2 {
        let lo = y.iter().map(|p| p[axis]).fold(f64::INFINITY, f64::min);
        let hi = y.iter().map(|p| p[axis]).fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            y.iter_mut()
                .for_each(|p| p[axis] = INIT_EXTENT * (p[axis] - lo) / (hi - lo));
        }
    }
    y
}

/// Epochs between samples of each edge; edges too weak to be sampled once
/// in `n_epochs` are dropped.
pub(crate) fn epochs_per_sample(
    edges: &[(usize, usize, f64)],
    n_epochs: usize,
) -> Vec<(usize, usize, f64)> {
    let w_max = edges.iter().map(|e| e.2).fold(0.0, f64::max);
    edges
        .iter()
        .filter(|e| e.2 >= w_max / n_epochs as f64)
        .map(|&(i, j, w)| (i, j, w_max / w))
        .collect()
}

#[inline]
fn clip(v: f64) -> f64 {
    v.clamp(-GRAD_CLIP, GRAD_CLIP)
}

pub(crate) struct Layout<'a> {
    pub a: f64,
    pub b: f64,
    pub n_epochs: usize,
    pub negative_rate: f64,
    pub initial_alpha: f64,
    /// `(head, tail, epochs_per_sample)`.
    pub edges: &'a [(usize, usize, f64)],
}

impl Layout<'_> {
    fn attract(&self, d2: f64) -> f64 {
        if d2 > 0.0 {
            -2.0 * self.a * self.b * d2.powf(self.b - 1.0) / (self.a * d2.powf(self.b) + 1.0)
        } else {
            0.0
        }
    }

    fn repel(&self, d2: f64) -> f64 {
        if d2 > 0.0 {
            2.0 * self.b / ((0.001 + d2) * (self.a * d2.powf(self.b) + 1.0))
        } else {
            0.0
        }
    }

    /// Optimize `head` against `tail`. With `tail == None` the head set is
    /// laid out against itself and both endpoints of an edge move.
    pub fn run(&self, head: &mut [Point], mut tail: Option<&[Point]>, rng: &mut ChaCha8Rng) {
        let n_tail = tail.map_or(head.len(), |t| t.len());
        let eps: Vec<f64> = self.edges.iter().map(|e| e.2).collect();
        let eps_neg: Vec<f64> = eps.iter().map(|e| e / self.negative_rate).collect();
        let mut next = eps.clone();
        let mut next_neg = eps_neg.clone();
        for n in 0..self.n_epochs {
            let alpha = self.initial_alpha * (1.0 - n as f64 / self.n_epochs as f64);
            let nf = n as f64;
            for (e, &(j, k, _)) in self.edges.iter().enumerate() {
                if next[e] > nf {
                    continue;
                }
                let mut cur = head[j];
                let other = match tail.as_mut() {
                    Some(t) => t[k],
                    None => head[k],
                };
                let d2 = sq_dist(&cur, &other);
                let g = self.attract(d2);
                let mut moved_other = other;
                for d in 0..2 {
                    let gd = clip(g * (cur[d] - other[d]));
                    cur[d] += gd * alpha;
                    moved_other[d] -= gd * alpha;
                }
                head[j] = cur;
                if tail.is_none() {
                    head[k] = moved_other;
                }
                next[e] += eps[e];

                let n_neg = ((nf - next_neg[e]) / eps_neg[e]).floor().max(0.0) as usize;
                for _ in 0..n_neg {
                    let s = rng.gen_range(0..n_tail);
                    let other = match tail {
                        Some(t) => t[s],
                        None => head[s],
                    };
                    let d2 = sq_dist(&cur, &other);
                    if d2 <= 0.0 {
                        continue;
                    }
                    let g = self.repel(d2);
                    for d in 0..2 {
                        cur[d] += clip(g * (cur[d] - other[d])) * alpha;
                    }
                }
                head[j] = cur;
                next_neg[e] += n_neg as f64 * eps_neg[e];
            }
        }
    }
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

//! Parametric MRI corruption operators: Rician noise, Gibbs ringing, smooth
//! bias fields and k-space spikes, plus linear magnitude schedules.

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::seed;
use crate::volume::{line_starts, Dims, GridVolume};

pub const DEFAULT_BIAS_DEGREE: usize = 3;
pub const DEFAULT_SPIKES: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Rician,
    Gibbs,
    Bias,
    Spike,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 4] = [
        NoiseKind::Rician,
        NoiseKind::Gibbs,
        NoiseKind::Bias,
        NoiseKind::Spike,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Rician => "rician",
            NoiseKind::Gibbs => "gibbs",
            NoiseKind::Bias => "bias",
            NoiseKind::Spike => "spike",
        }
    }

    /// Default upper end of a calibration sweep.
    pub fn default_max_magnitude(self) -> f64 {
        match self {
            NoiseKind::Rician => 0.3,
            NoiseKind::Gibbs => 0.8,
            NoiseKind::Bias => 0.5,
            NoiseKind::Spike => 0.2,
        }
    }

    /// Position in the combined application order.
    fn order(self) -> u8 {
        match self {
            NoiseKind::Bias => 0,
            NoiseKind::Gibbs => 1,
            NoiseKind::Rician => 2,
            NoiseKind::Spike => 3,
        }
    }
}

impl std::fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One corruption operator with its magnitude and seed.
///
/// The magnitude is σ for Rician noise, the truncation fraction α for Gibbs
/// ringing, the coefficient bound for bias fields and the relative spike
/// intensity for spikes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub magnitude: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, magnitude: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            kind,
            magnitude,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.magnitude.is_finite() && self.magnitude >= 0.0,
            InvalidArgument,
            "{} magnitude must be finite and >= 0, got {}",
            self.kind,
            self.magnitude
        );
        ensure!(
            self.kind != NoiseKind::Gibbs || self.magnitude <= 1.0,
            InvalidArgument,
            "gibbs magnitude must lie in [0, 1], got {}",
            self.magnitude
        );
        Ok(())
    }

    pub fn apply(&self, v: &GridVolume) -> Result<GridVolume> {
        match self.kind {
            NoiseKind::Rician => apply_rician(v, self.magnitude, self.seed),
            NoiseKind::Gibbs => apply_gibbs(v, self.magnitude),
            NoiseKind::Bias => apply_bias_field(v, DEFAULT_BIAS_DEGREE, self.magnitude, self.seed),
            NoiseKind::Spike => apply_spike(v, self.magnitude, DEFAULT_SPIKES, self.seed),
        }
    }
}

/// Linearly spaced magnitudes from 0 to `max_magnitude`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSchedule {
    pub kind: NoiseKind,
    pub n_steps: usize,
    pub max_magnitude: f64,
}

impl NoiseSchedule {
    pub fn magnitudes(&self) -> Vec<f64> {
        let last = (self.n_steps - 1) as f64;
        (0..self.n_steps)
            .map(|i| {
                if i + 1 == self.n_steps {
                    self.max_magnitude
                } else {
                    self.max_magnitude * i as f64 / last
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.n_steps >= 2,
            InvalidArgument,
            "schedule needs n_steps >= 2, got {}",
            self.n_steps
        );
        NoiseSpec {
            kind: self.kind,
            magnitude: self.max_magnitude,
            seed: 0,
        }
        .validate()
    }
}

pub fn schedule(kind: NoiseKind, max_magnitude: f64, n_steps: usize) -> Result<NoiseSchedule> {
    let s = NoiseSchedule {
        kind,
        n_steps,
        max_magnitude,
    };
    s.validate()?;
    Ok(s)
}

/// Magnitude-image Rician noise: `sqrt((v + n1)^2 + n2^2)` with iid Gaussian `n1`, `n2`.
pub fn apply_rician(v: &GridVolume, sigma: f64, seed: u64) -> Result<GridVolume> {
    NoiseSpec::new(NoiseKind::Rician, sigma, seed)?;
    if sigma == 0.0 {
        return Ok(v.clone());
    }
    let mut rng = seed::rng(seed);
    let data = v
        .data()
        .iter()
        .map(|&x| {
            let n1: f64 = rng.sample(StandardNormal);
            let n2: f64 = rng.sample(StandardNormal);
            let re = x + sigma * n1;
            let im = sigma * n2;
            re.hypot(im)
        })
        .collect();
    Ok(GridVolume::from_parts_unchecked(
        v.dims(),
        v.spacing(),
        data,
    ))
}

/// Gibbs ringing by radial k-space truncation.
///
/// Frequencies are centred and each axis is scaled by its largest centred
/// index; the radius is further divided by `sqrt(3)` so the spectrum corners
/// sit at radius 1. Bins with radius above `1 - alpha` are zeroed.
pub fn apply_gibbs(v: &GridVolume, alpha: f64) -> Result<GridVolume> {
    NoiseSpec::new(NoiseKind::Gibbs, alpha, 0)?;
    if alpha == 0.0 {
        return Ok(v.clone());
    }
    let dims = v.dims();
    let cutoff = 1.0 - alpha;
    let mut k = to_complex(v);
    fft3(&mut k, dims, false);
    let scaled: Vec<Vec<f64>> = (0..3).map(|a| scaled_frequencies(dims[a])).collect();
    for (idx, bin) in k.iter_mut().enumerate() {
        let [i, j, l] = coords(dims, idx);
        let r2 = scaled[0][i].powi(2) + scaled[1][j].powi(2) + scaled[2][l].powi(2);
        let r = (r2 / 3.0).sqrt();
        if r > cutoff + 1e-12 {
            *bin = Complex64::new(0.0, 0.0);
        }
    }
    fft3(&mut k, dims, true);
    Ok(from_complex(v, &k))
}

/// Smooth multiplicative bias field `exp(sum_m c_m B_m)` over all monomials of
/// total degree up to `degree` in coordinates normalised to [-1, 1].
pub fn apply_bias_field(v: &GridVolume, degree: usize, c: f64, seed: u64) -> Result<GridVolume> {
    NoiseSpec::new(NoiseKind::Bias, c, seed)?;
    if c == 0.0 {
        return Ok(v.clone());
    }
    let field = bias_field(v.dims(), degree, c, seed);
    Ok(GridVolume::from_parts_unchecked(
        v.dims(),
        v.spacing(),
        v.data().iter().zip(&field).map(|(x, f)| x * f).collect(),
    ))
}

/// Exponents `(a, b, c)` with `a + b + c <= degree`, in drawing order.
pub fn bias_monomials(degree: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for total in 0..=degree {
        for a in (0..=total).rev() {
            for b in (0..=total - a).rev() {
                out.push([a, b, total - a - b]);
            }
        }
    }
    out
}

/// Coefficients drawn uniformly from `(-c, c)`, one per monomial.
pub fn bias_coefficients(degree: usize, c: f64, seed: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed);
    bias_monomials(degree)
        .iter()
        .map(|_| if c > 0.0 { rng.gen_range(-c..c) } else { 0.0 })
        .collect()
}

fn bias_field(dims: Dims, degree: usize, c: f64, seed: u64) -> Vec<f64> {
    let monomials = bias_monomials(degree);
    let coeffs = bias_coefficients(degree, c, seed);
    let axis = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|i| {
                if n > 1 {
                    2.0 * i as f64 / (n - 1) as f64 - 1.0
                } else {
                    0.0
                }
            })
            .collect()
    };
    let (xs, ys, zs) = (axis(dims[0]), axis(dims[1]), axis(dims[2]));
    let mut field = Vec::with_capacity(dims.iter().product());
    for &z in &zs {
        for &y in &ys {
            for &x in &xs {
                let s: f64 = monomials
                    .iter()
                    .zip(&coeffs)
                    .map(|([a, b, cz], w)| {
                        w * x.powi(*a as i32) * y.powi(*b as i32) * z.powi(*cz as i32)
                    })
                    .sum();
                field.push(s.exp());
            }
        }
    }
    field
}

/// Adds `n_spikes` point spikes of magnitude `kappa * max|K|` and random phase
/// at random non-DC k-space bins.
pub fn apply_spike(v: &GridVolume, kappa: f64, n_spikes: usize, seed: u64) -> Result<GridVolume> {
    NoiseSpec::new(NoiseKind::Spike, kappa, seed)?;
    if kappa == 0.0 || n_spikes == 0 || v.len() < 2 {
        return Ok(v.clone());
    }
    let dims = v.dims();
    let mut k = to_complex(v);
    fft3(&mut k, dims, false);
    let peak = k.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut rng = seed::rng(seed);
    for _ in 0..n_spikes {
        let bin = rng.gen_range(1..k.len());
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        k[bin] += Complex64::from_polar(kappa * peak, phase);
    }
    fft3(&mut k, dims, true);
    Ok(from_complex(v, &k))
}

/// Applies specs in the fixed order bias, gibbs, rician, spike.
pub fn apply_combined(v: &GridVolume, specs: &[NoiseSpec]) -> Result<GridVolume> {
    for s in specs {
        s.validate()?;
    }
    let mut ordered: Vec<&NoiseSpec> = specs.iter().collect();
    ordered.sort_by_key(|s| s.kind.order());
    let mut out = v.clone();
    for s in ordered {
        out = s.apply(&out)?;
    }
    Ok(out)
}

fn coords(dims: Dims, idx: usize) -> [usize; 3] {
    let i = idx % dims[0];
    let rest = idx / dims[0];
    [i, rest % dims[1], rest / dims[1]]
}

/// Centred frequency index of each FFT bin divided by the largest one.
fn scaled_frequencies(n: usize) -> Vec<f64> {
    let half = n / 2;
    (0..n)
        .map(|i| {
            if half == 0 {
                return 0.0;
            }
            let f = if i < n.div_ceil(2) {
                i as f64
            } else {
                i as f64 - n as f64
            };
            f / half as f64
        })
        .collect()
}

fn to_complex(v: &GridVolume) -> Vec<Complex64> {
    v.data().iter().map(|&x| Complex64::new(x, 0.0)).collect()
}

fn from_complex(v: &GridVolume, k: &[Complex64]) -> GridVolume {
    GridVolume::from_parts_unchecked(v.dims(), v.spacing(), k.iter().map(|z| z.re).collect())
}

/// In-place separable 3D FFT; the inverse is normalised by `1 / N`.
pub(crate) fn fft3(data: &mut [Complex64], dims: Dims, inverse: bool) {
    let mut planner = FftPlanner::new();
    for axis in 0..3 {
        let n = dims[axis];
        if n < 2 {
            continue;
        }
        let fft = if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        };
        let stride = match axis {
            0 => 1,
            1 => dims[0],
            _ => dims[0] * dims[1],
        };
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for start in line_starts(dims, axis) {
            for (t, slot) in line.iter_mut().enumerate() {
                *slot = data[start + t * stride];
            }
            fft.process(&mut line);
            for (t, z) in line.iter().enumerate() {
                data[start + t * stride] = *z;
            }
        }
    }
    if inverse {
        let scale = 1.0 / data.len() as f64;
        for z in data.iter_mut() {
            *z *= scale;
        }
    }
}

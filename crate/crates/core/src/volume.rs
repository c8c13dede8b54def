//! Dense 3D scalar volumes and the preprocessing arithmetic applied to them.
//!
//! Voxels are stored x-fastest: linear index `i + nx * (j + ny * k)`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

pub type Dims = [usize; 3];
pub type Spacing = [f64; 3];

/// Conversion factor between a Gaussian's full width at half maximum and its sigma.
pub fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
}

/// A dense 3D scalar field with voxel spacing in millimetres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridVolume {
    dims: Dims,
    spacing: Spacing,
    data: Vec<f64>,
}

impl GridVolume {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<f64>) -> Result<Self> {
        ensure!(
            dims.iter().all(|&d| d > 0),
            InvalidArgument,
            "dims must be positive, got {dims:?}"
        );
        ensure!(
            spacing.iter().all(|&s| s.is_finite() && s > 0.0),
            InvalidArgument,
            "spacing must be strictly positive, got {spacing:?}"
        );
        let n = dims[0] * dims[1] * dims[2];
        ensure!(
            data.len() == n,
            InvalidArgument,
            "data length {} does not match dims {dims:?} ({n} voxels)",
            data.len()
        );
        ensure!(
            data.iter().all(|v| v.is_finite()),
            InvalidArgument,
            "volume contains non-finite values"
        );
        Ok(Self {
            dims,
            spacing,
            data,
        })
    }

    pub fn filled(dims: Dims, spacing: Spacing, value: f64) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, spacing, vec![value; n])
    }

    pub fn zeros(dims: Dims, spacing: Spacing) -> Result<Self> {
        Self::filled(dims, spacing, 0.0)
    }

    /// Build a volume by evaluating `f(i, j, k)` at every voxel.
    pub fn from_fn(
        dims: Dims,
        spacing: Spacing,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.iter().product());
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    data.push(f(i, j, k));
                }
            }
        }
        Self::new(dims, spacing, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        [i, j, k]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) -> Result<()> {
        ensure!(value.is_finite(), InvalidArgument, "non-finite voxel value");
        let idx = self.index(i, j, k);
        self.data[idx] = value;
        Ok(())
    }

    /// Apply `f` voxel-wise, keeping the grid.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.dims,
            self.spacing,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Combine two volumes on the same grid voxel-wise.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_grid(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::new(self.dims, self.spacing, data)
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.dims == other.dims && self.spacing == other.spacing
    }

    pub fn check_same_grid(&self, other: &Self) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{:?}@{:?} vs {:?}@{:?}",
                self.dims, self.spacing, other.dims, other.spacing
            )))
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub(crate) fn from_parts_unchecked(dims: Dims, spacing: Spacing, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dims.iter().product::<usize>());
        Self {
            dims,
            spacing,
            data,
        }
    }
}

/// A volume whose voxels are exactly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask(GridVolume);

impl BinaryMask {
    pub fn new(volume: GridVolume) -> Result<Self> {
        ensure!(
            volume.data().iter().all(|&v| v == 0.0 || v == 1.0),
            InvalidArgument,
            "binary mask contains values other than 0 and 1"
        );
        Ok(Self(volume))
    }

    pub fn from_bools(dims: Dims, spacing: Spacing, bits: &[bool]) -> Result<Self> {
        let data = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Ok(Self(GridVolume::new(dims, spacing, data)?))
    }

    pub fn empty(dims: Dims, spacing: Spacing) -> Result<Self> {
        Ok(Self(GridVolume::zeros(dims, spacing)?))
    }

    /// Voxels where `volume >= level`.
    pub fn threshold_at_least(volume: &GridVolume, level: f64) -> Self {
        let data = volume
            .data()
            .iter()
            .map(|&v| if v >= level { 1.0 } else { 0.0 })
            .collect();
        Self(GridVolume::from_parts_unchecked(
            volume.dims(),
            volume.spacing(),
            data,
        ))
    }

    /// Voxels where `volume > threshold`.
    pub fn threshold(volume: &GridVolume, threshold: f64) -> Self {
        let data = volume
            .data()
            .iter()
            .map(|&v| if v > threshold { 1.0 } else { 0.0 })
            .collect();
        Self(GridVolume::from_parts_unchecked(
            volume.dims(),
            volume.spacing(),
            data,
        ))
    }

    pub fn volume(&self) -> &GridVolume {
        &self.0
    }

    pub fn into_volume(self) -> GridVolume {
        self.0
    }

    pub fn dims(&self) -> Dims {
        self.0.dims()
    }

    pub fn spacing(&self) -> Spacing {
        self.0.spacing()
    }

    #[inline]
    pub fn contains(&self, idx: usize) -> bool {
        self.0.data()[idx] != 0.0
    }

    pub fn count(&self) -> usize {
        self.0.data().iter().filter(|&&v| v != 0.0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn bits(&self) -> Vec<bool> {
        self.0.data().iter().map(|&v| v != 0.0).collect()
    }

    pub fn check_same_grid(&self, other: &BinaryMask) -> Result<()> {
        self.0.check_same_grid(&other.0)
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> Result<usize> {
        self.check_same_grid(other)?;
        Ok(self
            .0
            .data()
            .iter()
            .zip(other.0.data())
            .filter(|(&a, &b)| a != 0.0 && b != 0.0)
            .count())
    }
}

/// A volume with every voxel in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap(GridVolume);

impl ProbabilityMap {
    pub fn new(volume: GridVolume) -> Result<Self> {
        ensure!(
            volume.data().iter().all(|&v| (0.0..=1.0).contains(&v)),
            InvalidArgument,
            "probability map has values outside [0, 1]"
        );
        Ok(Self(volume))
    }

    pub fn volume(&self) -> &GridVolume {
        &self.0
    }

    pub fn into_volume(self) -> GridVolume {
        self.0
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }
}

impl From<BinaryMask> for ProbabilityMap {
    fn from(mask: BinaryMask) -> Self {
        ProbabilityMap(mask.0)
    }
}

/// Voxel-wise geometric mean `(prod v_i)^(1/n)`, evaluated in the log domain.
///
/// Any zero input voxel yields zero.
pub fn geometric_mean(volumes: &[GridVolume]) -> Result<GridVolume> {
    let first = volumes
        .first()
        .ok_or_else(|| Error::InvalidArgument("geometric mean of an empty list".into()))?;
    for v in &volumes[1..] {
        first.check_same_grid(v)?;
    }
    ensure!(
        volumes.iter().all(|v| v.data().iter().all(|&x| x >= 0.0)),
        InvalidArgument,
        "geometric mean requires non-negative values"
    );
    if volumes.len() == 1 {
        return Ok(first.clone());
    }
    let n = volumes.len() as f64;
    let data = (0..first.len())
        .map(|idx| {
            let mut log_sum = 0.0;
            for v in volumes {
                let x = v.data()[idx];
                if x == 0.0 {
                    return 0.0;
                }
                log_sum += x.ln();
            }
            (log_sum / n).exp()
        })
        .collect();
    GridVolume::new(first.dims(), first.spacing(), data)
}

/// Lower-side offsets used when centering `source` inside `target`.
pub fn pad_offsets(source: Dims, target: Dims) -> Result<Dims> {
    let mut offsets = [0; 3];
    for axis in 0..3 {
        ensure!(
            target[axis] >= source[axis],
            InvalidArgument,
            "target dim {} on axis {axis} is smaller than source dim {}",
            target[axis],
            source[axis]
        );
        offsets[axis] = (target[axis] - source[axis]) / 2;
    }
    Ok(offsets)
}

/// Center `v` in a larger grid, filling the margin with `fill`.
pub fn pad_to_grid(v: &GridVolume, target: Dims, fill: f64) -> Result<GridVolume> {
    let src = v.dims();
    let off = pad_offsets(src, target)?;
    let mut out = GridVolume::filled(target, v.spacing(), fill)?;
    for k in 0..src[2] {
        for j in 0..src[1] {
            let src_row = v.index(0, j, k);
            let dst_row = out.index(off[0], j + off[1], k + off[2]);
            out.data_mut()[dst_row..dst_row + src[0]]
                .copy_from_slice(&v.data()[src_row..src_row + src[0]]);
        }
    }
    Ok(out)
}

/// Subtract the mean then min-max rescale to `[0, 1]`. Constant input maps to zeros.
pub fn normalize_intensity(v: &GridVolume) -> GridVolume {
    let mean = v.mean();
    let shifted: Vec<f64> = v.data().iter().map(|&x| x - mean).collect();
    let lo = shifted.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = shifted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let data = if range > 0.0 {
        shifted
            .into_iter()
            .map(|x| ((x - lo) / range).clamp(0.0, 1.0))
            .collect()
    } else {
        vec![0.0; v.len()]
    };
    GridVolume::from_parts_unchecked(v.dims(), v.spacing(), data)
}

/// Coordinate channels: voxel `(i, j, k)` holds `i`, `j` and `k` respectively.
pub fn coord_channels(dims: Dims) -> Result<[GridVolume; 3]> {
    let spacing = [1.0; 3];
    Ok([
        GridVolume::from_fn(dims, spacing, |i, _, _| i as f64)?,
        GridVolume::from_fn(dims, spacing, |_, j, _| j as f64)?,
        GridVolume::from_fn(dims, spacing, |_, _, k| k as f64)?,
    ])
}

/// Normalized discrete Gaussian kernel truncated at 4 sigma.
pub fn gaussian_kernel(sigma_vox: f64) -> Vec<f64> {
    if sigma_vox <= 1e-6 {
        return vec![1.0];
    }
    let radius = (4.0 * sigma_vox).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma_vox * sigma_vox)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= total);
    kernel
}

/// Separable Gaussian smoothing with a given FWHM in millimetres.
///
/// Sigma is converted to voxels per axis from the spacing. Samples outside
/// the grid are treated as zero.
pub fn gaussian_smooth(v: &GridVolume, fwhm_mm: f64) -> Result<GridVolume> {
    ensure!(
        fwhm_mm >= 0.0 && fwhm_mm.is_finite(),
        InvalidArgument,
        "fwhm must be non-negative, got {fwhm_mm}"
    );
    if fwhm_mm == 0.0 {
        return Ok(v.clone());
    }
    let sigma_mm = fwhm_to_sigma(fwhm_mm);
    let mut data = v.data().to_vec();
    let dims = v.dims();
    for axis in 0..3 {
        let kernel = gaussian_kernel(sigma_mm / v.spacing()[axis]);
        if kernel.len() > 1 {
            data = convolve_axis(&data, dims, axis, &kernel);
        }
    }
    GridVolume::new(dims, v.spacing(), data)
}

fn convolve_axis(data: &[f64], dims: Dims, axis: usize, kernel: &[f64]) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let len = dims[axis] as isize;
    let mut out = vec![0.0; data.len()];
    let mut line = vec![0.0; dims[axis]];
    for start in line_starts(dims, axis) {
        for (t, slot) in line.iter_mut().enumerate() {
            *slot = data[start + t * stride];
        }
        for t in 0..len {
            let lo = (t - radius).max(0);
            let hi = (t + radius).min(len - 1);
            let mut acc = 0.0;
            for s in lo..=hi {
                acc += kernel[(s - t + radius) as usize] * line[s as usize];
            }
            out[start + t as usize * stride] = acc;
        }
    }
    out
}

/// Linear index of the first voxel of every 1D line running along `axis`.
pub(crate) fn line_starts(dims: Dims, axis: usize) -> Vec<usize> {
    let [nx, ny, nz] = dims;
    let mut starts = Vec::new();
    match axis {
        0 => {
            for k in 0..nz {
                for j in 0..ny {
                    starts.push(nx * (j + ny * k));
                }
            }
        }
        1 => {
            for k in 0..nz {
                for i in 0..nx {
                    starts.push(i + nx * ny * k);
                }
            }
        }
        _ => {
            for j in 0..ny {
                for i in 0..nx {
                    starts.push(i + nx * j);
                }
            }
        }
    }
    starts
}

//! Surface extraction, exact Euclidean distance transforms and the
//! 95th-percentile Hausdorff distance.

use crate::error::Result;
use crate::volume::{BinaryMask, Dims};

/// Distance units for surface distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceUnits {
    /// Isotropic voxel index space.
    #[default]
    Voxels,
    /// Scaled by the grid spacing.
    Millimetres,
}

/// Mask voxels with at least one of their 6 face neighbours outside the mask.
/// Positions beyond the grid count as outside.
pub fn surface_voxels(mask: &BinaryMask) -> Vec<usize> {
    let [nx, ny, nz] = mask.dims();
    let bits = mask.bits();
    let mut out = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let idx = i + nx * (j + ny * k);
                if !bits[idx] {
                    continue;
                }
                let boundary = i == 0
                    || j == 0
                    || k == 0
                    || i + 1 == nx
                    || j + 1 == ny
                    || k + 1 == nz
                    || !bits[idx - 1]
                    || !bits[idx + 1]
                    || !bits[idx - nx]
                    || !bits[idx + nx]
                    || !bits[idx - nx * ny]
                    || !bits[idx + nx * ny];
                if boundary {
                    out.push(idx);
                }
            }
        }
    }
    out
}

/// Squared Euclidean distance from every voxel to the nearest voxel in `sites`.
///
/// Separable lower-envelope transform; exact for the per-axis weights given.
/// Returns `f64::INFINITY` everywhere when `sites` is empty.
pub fn squared_distance_transform(dims: Dims, sites: &[usize], weights: [f64; 3]) -> Vec<f64> {
    let n = dims.iter().product();
    let mut d = vec![f64::INFINITY; n];
    for &s in sites {
        d[s] = 0.0;
    }
    if sites.is_empty() {
        return d;
    }
    let strides = [1, dims[0], dims[0] * dims[1]];
    let longest = *dims.iter().max().unwrap();
    let mut f = vec![0.0; longest];
    let mut out = vec![0.0; longest];
    let mut v = vec![0usize; longest];
    let mut z = vec![0.0; longest + 1];
    for axis in 0..3 {
        let len = dims[axis];
        let w2 = weights[axis] * weights[axis];
        for start in crate::volume::line_starts(dims, axis) {
            for t in 0..len {
                f[t] = d[start + t * strides[axis]];
            }
            lower_envelope(&f[..len], w2, &mut out[..len], &mut v, &mut z);
            for t in 0..len {
                d[start + t * strides[axis]] = out[t];
            }
        }
    }
    d
}

/// 1D squared distance transform of a sampled function (Felzenszwalb & Huttenlocher).
fn lower_envelope(f: &[f64], w2: f64, out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let first = match f.iter().position(|x| x.is_finite()) {
        Some(q) => q,
        None => {
            out.iter_mut().for_each(|o| *o = f64::INFINITY);
            return;
        }
    };
    let mut k = 0usize;
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + w2 * (q * q) as f64) - (f[p] + w2 * (p * p) as f64))
                / (2.0 * w2 * (q as f64 - p as f64));
            if s <= z[k] {
                // k > 0 here since z[0] is -inf
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        *o = w2 * dq * dq + f[p];
    }
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(values: &mut [f64], pct: f64) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let rank = pct / 100.0 * (values.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    values[lo] + (values[hi] - values[lo]) * frac
}

/// Distances from each surface voxel of `from` to the nearest surface voxel of `to`.
pub fn directed_surface_distances(
    from: &BinaryMask,
    to: &BinaryMask,
    units: DistanceUnits,
) -> Result<Vec<f64>> {
    from.check_same_grid(to)?;
    let weights = match units {
        DistanceUnits::Voxels => [1.0; 3],
        DistanceUnits::Millimetres => to.spacing(),
    };
    let field = squared_distance_transform(to.dims(), &surface_voxels(to), weights);
    Ok(surface_voxels(from)
        .into_iter()
        .map(|idx| field[idx].sqrt())
        .collect())
}

/// Symmetric 95th-percentile surface distance in the requested units.
///
/// `None` when either mask is empty (the distance is undefined).
pub fn hd95_with_units(
    a: &BinaryMask,
    b: &BinaryMask,
    units: DistanceUnits,
) -> Result<Option<f64>> {
    a.check_same_grid(b)?;
    if a.is_empty() || b.is_empty() {
        return Ok(None);
    }
    let mut ab = directed_surface_distances(a, b, units)?;
    let mut ba = directed_surface_distances(b, a, units)?;
    Ok(Some(
        percentile(&mut ab, 95.0).max(percentile(&mut ba, 95.0)),
    ))
}

/// Symmetric 95th-percentile surface distance in voxels; `None` if either mask is empty.
pub fn hd95(a: &BinaryMask, b: &BinaryMask) -> Result<Option<f64>> {
    hd95_with_units(a, b, DistanceUnits::Voxels)
}

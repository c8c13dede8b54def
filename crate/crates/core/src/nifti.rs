//! Minimal NIfTI-1 single-file (`.nii` / `.nii.gz`) reader and writer.
//!
//! Little-endian only. Supported voxel types are uint8, int16 and float32.
//! Orientation matrices are carried in the header but never used to resample.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::volume::GridVolume;

const HEADER_SIZE: usize = 348;
const DEFAULT_VOX_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Datatype {
    Uint8,
    Int16,
    Float32,
}

impl Datatype {
    pub fn code(self) -> i16 {
        match self {
            Datatype::Uint8 => 2,
            Datatype::Int16 => 4,
            Datatype::Float32 => 16,
        }
    }

    pub fn from_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(Datatype::Uint8),
            4 => Ok(Datatype::Int16),
            16 => Ok(Datatype::Float32),
            other => Err(Error::UnsupportedDatatype(other)),
        }
    }

    pub fn bytes_per_voxel(self) -> usize {
        match self {
            Datatype::Uint8 => 1,
            Datatype::Int16 => 2,
            Datatype::Float32 => 4,
        }
    }
}

/// Header fields retained after reading.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NiftiHeader {
    pub dim: [i16; 8],
    pub pixdim: [f32; 8],
    pub datatype: Datatype,
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub xyzt_units: u8,
    pub qform_code: i16,
    pub sform_code: i16,
    pub srow_x: [f32; 4],
    pub srow_y: [f32; 4],
    pub srow_z: [f32; 4],
    pub descrip: String,
}

impl NiftiHeader {
    /// Header describing `v` stored as `datatype`, with a diagonal scanner transform.
    pub fn for_volume(v: &GridVolume, datatype: Datatype) -> Self {
        let [nx, ny, nz] = v.dims();
        let [sx, sy, sz] = v.spacing();
        let mut dim = [1i16; 8];
        dim[0] = 3;
        dim[1] = nx as i16;
        dim[2] = ny as i16;
        dim[3] = nz as i16;
        let mut pixdim = [1.0f32; 8];
        pixdim[1] = sx as f32;
        pixdim[2] = sy as f32;
        pixdim[3] = sz as f32;
        Self {
            dim,
            pixdim,
            datatype,
            vox_offset: DEFAULT_VOX_OFFSET as f32,
            scl_slope: 1.0,
            scl_inter: 0.0,
            // millimetres, seconds
            xyzt_units: 2 | 8,
            qform_code: 0,
            sform_code: 1,
            srow_x: [sx as f32, 0.0, 0.0, 0.0],
            srow_y: [0.0, sy as f32, 0.0, 0.0],
            srow_z: [0.0, 0.0, sz as f32, 0.0],
            descrip: String::new(),
        }
    }

    fn encode(&self) -> Vec<u8> {
        let mut buf = vec![0u8; DEFAULT_VOX_OFFSET];
        put_i32(&mut buf, 0, HEADER_SIZE as i32);
        buf[38] = b'r';
        for (n, d) in self.dim.iter().enumerate() {
            put_i16(&mut buf, 40 + 2 * n, *d);
        }
        put_i16(&mut buf, 70, self.datatype.code());
        put_i16(&mut buf, 72, (self.datatype.bytes_per_voxel() * 8) as i16);
        for (n, p) in self.pixdim.iter().enumerate() {
            put_f32(&mut buf, 76 + 4 * n, *p);
        }
        put_f32(&mut buf, 108, self.vox_offset);
        put_f32(&mut buf, 112, self.scl_slope);
        put_f32(&mut buf, 116, self.scl_inter);
        buf[123] = self.xyzt_units;
        let descrip = self.descrip.as_bytes();
        let n = descrip.len().min(79);
        buf[148..148 + n].copy_from_slice(&descrip[..n]);
        put_i16(&mut buf, 252, self.qform_code);
        put_i16(&mut buf, 254, self.sform_code);
        for (row, base) in [
            (&self.srow_x, 280),
            (&self.srow_y, 296),
            (&self.srow_z, 312),
        ] {
            for (n, x) in row.iter().enumerate() {
                put_f32(&mut buf, base + 4 * n, *x);
            }
        }
        buf[344..348].copy_from_slice(MAGIC);
        buf
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_SIZE {
            return Err(Error::NotNifti(format!(
                "file has {} bytes, header needs {HEADER_SIZE}",
                bytes.len()
            )));
        }
        let sizeof_hdr = get_i32(bytes, 0);
        if sizeof_hdr != HEADER_SIZE as i32 {
            if i32::from_be_bytes(bytes[0..4].try_into().unwrap()) == HEADER_SIZE as i32 {
                return Err(Error::NotNifti("big-endian files are not supported".into()));
            }
            return Err(Error::NotNifti(format!("sizeof_hdr is {sizeof_hdr}")));
        }
        if &bytes[344..348] != MAGIC {
            return Err(Error::NotNifti(format!(
                "magic is {:?}, expected \"n+1\"",
                String::from_utf8_lossy(&bytes[344..347])
            )));
        }
        let mut dim = [0i16; 8];
        for (n, d) in dim.iter_mut().enumerate() {
            *d = get_i16(bytes, 40 + 2 * n);
        }
        if !(dim[0] == 3 || dim[0] == 4) {
            return Err(Error::NotNifti(format!(
                "dim[0] = {}, only 3D or 4D volumes are supported",
                dim[0]
            )));
        }
        if dim[1..=3].iter().any(|&d| d < 1) {
            return Err(Error::NotNifti(format!(
                "non-positive spatial dims {dim:?}"
            )));
        }
        let datatype = Datatype::from_code(get_i16(bytes, 70))?;
        let mut pixdim = [0f32; 8];
        for (n, p) in pixdim.iter_mut().enumerate() {
            *p = get_f32(bytes, 76 + 4 * n);
        }
        let srow = |base: usize| {
            let mut row = [0f32; 4];
            for (n, x) in row.iter_mut().enumerate() {
                *x = get_f32(bytes, base + 4 * n);
            }
            row
        };
        let descrip_raw = &bytes[148..228];
        let end = descrip_raw.iter().position(|&b| b == 0).unwrap_or(80);
        Ok(Self {
            dim,
            pixdim,
            datatype,
            vox_offset: get_f32(bytes, 108),
            scl_slope: get_f32(bytes, 112),
            scl_inter: get_f32(bytes, 116),
            xyzt_units: bytes[123],
            qform_code: get_i16(bytes, 252),
            sform_code: get_i16(bytes, 254),
            srow_x: srow(280),
            srow_y: srow(296),
            srow_z: srow(312),
            descrip: String::from_utf8_lossy(&descrip_raw[..end]).into_owned(),
        })
    }

    pub fn spatial_dims(&self) -> [usize; 3] {
        [
            self.dim[1] as usize,
            self.dim[2] as usize,
            self.dim[3] as usize,
        ]
    }

    /// Voxel spacing; zero or negative pixdim entries are read as 1 mm.
    pub fn spacing(&self) -> [f64; 3] {
        let fix = |p: f32| {
            if p.is_finite() && p > 0.0 {
                p as f64
            } else {
                1.0
            }
        };
        [
            fix(self.pixdim[1]),
            fix(self.pixdim[2]),
            fix(self.pixdim[3]),
        ]
    }
}

fn put_i16(buf: &mut [u8], at: usize, v: i16) {
    buf[at..at + 2].copy_from_slice(&v.to_le_bytes());
}
fn put_i32(buf: &mut [u8], at: usize, v: i32) {
    buf[at..at + 4].copy_from_slice(&v.to_le_bytes());
}
fn put_f32(buf: &mut [u8], at: usize, v: f32) {
    buf[at..at + 4].copy_from_slice(&v.to_le_bytes());
}
fn get_i16(buf: &[u8], at: usize) -> i16 {
    i16::from_le_bytes([buf[at], buf[at + 1]])
}
fn get_i32(buf: &[u8], at: usize) -> i32 {
    i32::from_le_bytes(buf[at..at + 4].try_into().unwrap())
}
fn get_f32(buf: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(buf[at..at + 4].try_into().unwrap())
}

/// Decode an in-memory NIfTI-1 image (plain or gzip-compressed).
///
/// Stored values are scaled by `scl_slope * v + scl_inter` when the slope is
/// non-zero. For 4D files only the first volume is returned.
pub fn decode_volume(raw: &[u8]) -> Result<(GridVolume, NiftiHeader)> {
    let decompressed;
    let bytes = if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw)
            .read_to_end(&mut out)
            .map_err(|e| Error::NotNifti(format!("gzip stream: {e}")))?;
        decompressed = out;
        &decompressed[..]
    } else {
        raw
    };
    let header = NiftiHeader::decode(bytes)?;
    let dims = header.spatial_dims();
    let n = dims.iter().product::<usize>();
    let width = header.datatype.bytes_per_voxel();
    let offset = header.vox_offset.max(HEADER_SIZE as f32) as usize;
    let expected = offset + n * width;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let payload = &bytes[offset..expected];
    let (slope, inter) = if header.scl_slope != 0.0 && header.scl_slope.is_finite() {
        (header.scl_slope as f64, header.scl_inter as f64)
    } else {
        (1.0, 0.0)
    };
    let data: Vec<f64> = match header.datatype {
        Datatype::Uint8 => payload.iter().map(|&b| b as f64).collect(),
        Datatype::Int16 => payload
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64)
            .collect(),
        Datatype::Float32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
    };
    let data = if slope == 1.0 && inter == 0.0 {
        data
    } else {
        data.into_iter().map(|v| slope * v + inter).collect()
    };
    let volume = GridVolume::new(dims, header.spacing(), data)?;
    Ok((volume, header))
}

/// Encode `v` as an uncompressed NIfTI-1 byte stream.
///
/// Integer datatypes round to nearest and reject values outside the type's range.
pub fn encode_volume(v: &GridVolume, datatype: Datatype) -> Result<Vec<u8>> {
    let header = NiftiHeader::for_volume(v, datatype);
    if v.dims().iter().any(|&d| d > i16::MAX as usize) {
        return Err(Error::InvalidArgument(format!(
            "dims {:?} exceed the NIfTI-1 limit",
            v.dims()
        )));
    }
    let mut buf = header.encode();
    buf.reserve(v.len() * datatype.bytes_per_voxel());
    match datatype {
        Datatype::Float32 => {
            for &x in v.data() {
                buf.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        Datatype::Int16 => {
            for &x in v.data() {
                let r = x.round();
                if r < i16::MIN as f64 || r > i16::MAX as f64 {
                    return Err(Error::InvalidArgument(format!(
                        "value {x} does not fit int16"
                    )));
                }
                buf.extend_from_slice(&(r as i16).to_le_bytes());
            }
        }
        Datatype::Uint8 => {
            for &x in v.data() {
                let r = x.round();
                if !(0.0..=255.0).contains(&r) {
                    return Err(Error::InvalidArgument(format!(
                        "value {x} does not fit uint8"
                    )));
                }
                buf.push(r as u8);
            }
        }
    }
    Ok(buf)
}

fn is_gz(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("gz"))
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<(GridVolume, NiftiHeader)> {
    let path = path.as_ref();
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_volume(&raw)
}

/// Write `v` to `path`; a `.gz` extension selects gzip compression.
pub fn write_volume(v: &GridVolume, path: impl AsRef<Path>, datatype: Datatype) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_volume(v, datatype)?;
    let bytes = if is_gz(path) {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?
    } else {
        bytes
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> GridVolume {
        GridVolume::from_fn([5, 4, 3], [2.0, 2.0, 2.5], |i, j, k| {
            (i as f64 * 0.37 - j as f64 * 1.1 + k as f64).sin() as f32 as f64
        })
        .unwrap()
    }

    #[test]
    fn float32_roundtrip_plain_and_gz() {
        let dir = tempfile::tempdir().unwrap();
        let v = sample();
        for name in ["a.nii", "a.nii.gz"] {
            let p = dir.path().join(name);
            write_volume(&v, &p, Datatype::Float32).unwrap();
            let (back, hdr) = read_volume(&p).unwrap();
            assert_eq!(back.dims(), v.dims());
            assert_eq!(back.spacing(), v.spacing());
            assert!(back
                .data()
                .iter()
                .zip(v.data())
                .all(|(a, b)| a.to_bits() == b.to_bits()));
            assert_eq!(hdr.datatype, Datatype::Float32);
        }
    }

    #[test]
    fn integer_types_roundtrip() {
        let v =
            GridVolume::from_fn([3, 2, 2], [1.0; 3], |i, j, k| (i + 3 * j + 6 * k) as f64).unwrap();
        for dt in [Datatype::Uint8, Datatype::Int16] {
            let (back, _) = decode_volume(&encode_volume(&v, dt).unwrap()).unwrap();
            assert_eq!(back, v);
        }
        let neg = v.map(|x| -x - 1.0).unwrap();
        assert!(encode_volume(&neg, Datatype::Uint8).is_err());
    }

    #[test]
    fn scaling_is_applied() {
        let v = GridVolume::filled([1, 1, 1], [1.0; 3], 3.0).unwrap();
        let mut bytes = encode_volume(&v, Datatype::Int16).unwrap();
        put_f32(&mut bytes, 112, 2.0);
        put_f32(&mut bytes, 116, 1.0);
        let (out, hdr) = decode_volume(&bytes).unwrap();
        assert_eq!(out.data(), &[7.0]);
        assert_eq!((hdr.scl_slope, hdr.scl_inter), (2.0, 1.0));
        // zero slope means unscaled
        put_f32(&mut bytes, 112, 0.0);
        assert_eq!(decode_volume(&bytes).unwrap().0.data(), &[3.0]);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let v = sample();
        let good = encode_volume(&v, Datatype::Float32).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[344..348].copy_from_slice(b"ni1\0");
        let err = decode_volume(&bad_magic).unwrap_err();
        assert!(err.to_string().contains("not NIfTI-1"), "{err}");

        let mut bad_type = good.clone();
        put_i16(&mut bad_type, 70, 64);
        assert!(matches!(
            decode_volume(&bad_type),
            Err(Error::UnsupportedDatatype(64))
        ));

        let truncated = &good[..good.len() - 3];
        assert!(matches!(
            decode_volume(truncated),
            Err(Error::Truncated { .. })
        ));

        let mut bad_rank = good.clone();
        put_i16(&mut bad_rank, 40, 2);
        assert!(matches!(decode_volume(&bad_rank), Err(Error::NotNifti(_))));

        assert!(decode_volume(&good[..100]).is_err());
    }

    #[test]
    fn four_d_reads_first_volume() {
        let v = sample();
        let mut bytes = encode_volume(&v, Datatype::Float32).unwrap();
        put_i16(&mut bytes, 40, 4);
        put_i16(&mut bytes, 48, 2);
        bytes.extend(std::iter::repeat(0u8).take(v.len() * 4));
        let (out, _) = decode_volume(&bytes).unwrap();
        assert_eq!(out.data().len(), v.len());
    }
}

//! NIfTI-1 single-file volumes (`.nii`, optionally gzipped).
//!
//! Channels live along dims 4 and up. Reading applies `scl_slope` and
//! `scl_inter` and takes the voxel-to-world matrix from the sform when its
//! code is set, else from the qform, else from the voxel sizes.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::field::{Deformation, Lattice, OrientedVolume};
use crate::linalg::Affine;
use crate::scalar::Real;

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

/// Intent code for vector-valued voxels, used for coordinate maps.
pub const INTENT_VECTOR: i16 = 1007;

/// Supported on-disk voxel types.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Datatype {
    U8,
    I16,
    I32,
    F32,
    F64,
}

impl Datatype {
    pub fn code(self) -> i16 {
        match self {
            Datatype::U8 => 2,
            Datatype::I16 => 4,
            Datatype::I32 => 8,
            Datatype::F32 => 16,
            Datatype::F64 => 64,
        }
    }

    pub fn from_code(code: i16) -> Result<Self> {
        Ok(match code {
            2 => Datatype::U8,
            4 => Datatype::I16,
            8 => Datatype::I32,
            16 => Datatype::F32,
            64 => Datatype::F64,
            _ => return Err(Error::Nifti { field: "datatype", message: format!("unsupported code {code}") }),
        })
    }

    pub fn bytes(self) -> usize {
        match self {
            Datatype::U8 => 1,
            Datatype::I16 => 2,
            Datatype::I32 => 4,
            Datatype::F32 => 4,
            Datatype::F64 => 8,
        }
    }
}

/// Header fields the engine reads or writes. Everything else is written as
/// zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Header {
    /// `dim[0..8]`.
    pub dim: [i16; 8],
    pub intent_p: [f32; 3],
    pub intent_code: i16,
    pub datatype: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub xyzt_units: u8,
    pub descrip: String,
    pub qform_code: i16,
    pub sform_code: i16,
    /// quatern_b, c, d.
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow: [[f32; 4]; 3],
}

impl Default for Header {
    fn default() -> Self {
        Header {
            dim: [3, 1, 1, 1, 1, 1, 1, 1],
            intent_p: [0.0; 3],
            intent_code: 0,
            datatype: Datatype::F32.code(),
            pixdim: [1.0; 8],
            vox_offset: VOX_OFFSET as f32,
            scl_slope: 1.0,
            scl_inter: 0.0,
            xyzt_units: 2, // mm
            descrip: String::new(),
            qform_code: 0,
            sform_code: 0,
            quatern: [0.0; 3],
            qoffset: [0.0; 3],
            srow: [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]],
        }
    }
}

impl Header {
    /// Spatial dims and the channel count (product of dims 4 and up).
    pub fn shape(&self) -> Result<([usize; 3], usize)> {
        let nd = self.dim[0];
        if !(1..=7).contains(&nd) {
            return Err(Error::Nifti { field: "dim", message: format!("dim[0] = {nd} is outside 1..=7") });
        }
        let get = |i: usize| -> Result<usize> {
            if i as i16 > nd {
                return Ok(1);
            }
            let d = self.dim[i];
            if d < 1 {
                return Err(Error::Nifti { field: "dim", message: format!("dim[{i}] = {d}") });
            }
            Ok(d as usize)
        };
        let dims = [get(1)?, get(2)?, get(3)?];
        let mut channels = 1;
        for i in 4..=7 {
            channels *= get(i)?;
        }
        Ok((dims, channels))
    }

    /// Voxel-to-world matrix: sform, then qform, then voxel sizes.
    pub fn vox2world(&self) -> Affine<f64> {
        if self.sform_code > 0 {
            let mut m = [[0.0; 4]; 4];
            for r in 0..3 {
                for c in 0..4 {
                    m[r][c] = self.srow[r][c] as f64;
                }
            }
            m[3][3] = 1.0;
            return Affine::from_f64(m);
        }
        let pix = [1, 2, 3].map(|i| {
            let p = self.pixdim[i] as f64;
            if p > 0.0 { p } else { 1.0 }
        });
        if self.qform_code > 0 {
            let [b, c, d] = self.quatern.map(|x| x as f64);
            let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
            let r = [
                [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
                [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
                [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - c * c - b * b],
            ];
            let qfac = if self.pixdim[0] < 0.0 { -1.0 } else { 1.0 };
            let scale = [pix[0], pix[1], pix[2] * qfac];
            let mut m = [[0.0; 4]; 4];
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] = r[i][j] * scale[j];
                }
                m[i][3] = self.qoffset[i] as f64;
            }
            m[3][3] = 1.0;
            return Affine::from_f64(m);
        }
        Affine::from_f64([[pix[0], 0.0, 0.0, 0.0], [0.0, pix[1], 0.0, 0.0], [0.0, 0.0, pix[2], 0.0], [0.0, 0.0, 0.0, 1.0]])
    }

    fn parse<B: ByteOrder>(h: &[u8]) -> Result<Self> {
        let i16_at = |o: usize| B::read_i16(&h[o..o + 2]);
        let f32_at = |o: usize| B::read_f32(&h[o..o + 4]);
        let descrip_bytes = &h[148..228];
        let end = descrip_bytes.iter().position(|&b| b == 0).unwrap_or(80);
        Ok(Header {
            dim: std::array::from_fn(|i| i16_at(40 + 2 * i)),
            intent_p: std::array::from_fn(|i| f32_at(56 + 4 * i)),
            intent_code: i16_at(68),
            datatype: i16_at(70),
            pixdim: std::array::from_fn(|i| f32_at(76 + 4 * i)),
            vox_offset: f32_at(108),
            scl_slope: f32_at(112),
            scl_inter: f32_at(116),
            xyzt_units: h[123],
            descrip: String::from_utf8_lossy(&descrip_bytes[..end]).into_owned(),
            qform_code: i16_at(252),
            sform_code: i16_at(254),
            quatern: std::array::from_fn(|i| f32_at(256 + 4 * i)),
            qoffset: std::array::from_fn(|i| f32_at(268 + 4 * i)),
            srow: std::array::from_fn(|r| std::array::from_fn(|c| f32_at(280 + 16 * r + 4 * c))),
        })
    }

    /// Little-endian header bytes including the 4-byte extension flag.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        type B = LittleEndian;
        let dt = Datatype::from_code(self.datatype)?;
        let mut h = vec![0u8; VOX_OFFSET];
        B::write_i32(&mut h[0..4], HEADER_SIZE as i32);
        h[38] = b'r';
        for (i, d) in self.dim.iter().enumerate() {
            B::write_i16(&mut h[40 + 2 * i..], *d);
        }
        for (i, p) in self.intent_p.iter().enumerate() {
            B::write_f32(&mut h[56 + 4 * i..], *p);
        }
        B::write_i16(&mut h[68..], self.intent_code);
        B::write_i16(&mut h[70..], self.datatype);
        B::write_i16(&mut h[72..], (8 * dt.bytes()) as i16);
        for (i, p) in self.pixdim.iter().enumerate() {
            B::write_f32(&mut h[76 + 4 * i..], *p);
        }
        B::write_f32(&mut h[108..], self.vox_offset);
        B::write_f32(&mut h[112..], self.scl_slope);
        B::write_f32(&mut h[116..], self.scl_inter);
        h[123] = self.xyzt_units;
        let d = self.descrip.as_bytes();
        if d.len() > 79 {
            return Err(Error::Nifti { field: "descrip", message: format!("{} bytes, at most 79 fit", d.len()) });
        }
        h[148..148 + d.len()].copy_from_slice(d);
        B::write_i16(&mut h[252..], self.qform_code);
        B::write_i16(&mut h[254..], self.sform_code);
        for i in 0..3 {
            B::write_f32(&mut h[256 + 4 * i..], self.quatern[i]);
            B::write_f32(&mut h[268 + 4 * i..], self.qoffset[i]);
        }
        for r in 0..3 {
            for c in 0..4 {
                B::write_f32(&mut h[280 + 16 * r + 4 * c..], self.srow[r][c]);
            }
        }
        h[344..348].copy_from_slice(b"n+1\0");
        Ok(h)
    }
}

/// Raw bytes of a file, gunzipped when it starts with the gzip magic.
fn slurp(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Header and scaled voxel values, in file order.
pub fn read_raw(path: impl AsRef<Path>) -> Result<(Header, Vec<f64>)> {
    let bytes = slurp(path.as_ref())?;
    parse(&bytes)
}

pub fn parse(bytes: &[u8]) -> Result<(Header, Vec<f64>)> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::Nifti { field: "sizeof_hdr", message: format!("file has only {} bytes", bytes.len()) });
    }
    let little = LittleEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32;
    let big = BigEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32;
    let header = match (little, big) {
        (true, _) => Header::parse::<LittleEndian>(bytes)?,
        (_, true) => Header::parse::<BigEndian>(bytes)?,
        _ => return Err(Error::Nifti { field: "sizeof_hdr", message: "expected 348 in either byte order".into() }),
    };
    let magic = &bytes[344..348];
    if magic != b"n+1\0" {
        let hint = if magic == b"ni1\0" { "separate .hdr/.img pairs are not supported" } else { "not a NIfTI-1 file" };
        return Err(Error::Nifti { field: "magic", message: hint.into() });
    }
    let dt = Datatype::from_code(header.datatype)?;
    let (dims, channels) = header.shape()?;
    let count = dims.iter().product::<usize>() * channels;
    let offset = header.vox_offset;
    if !(offset.is_finite() && offset >= HEADER_SIZE as f32) {
        return Err(Error::Nifti { field: "vox_offset", message: format!("{offset}") });
    }
    let start = offset as usize;
    let end = start + count * dt.bytes();
    if bytes.len() < end {
        return Err(Error::Nifti { field: "dim", message: format!("header promises {count} voxels but the file ends early") });
    }
    let data = &bytes[start..end];
    let mut values = if little { decode::<LittleEndian>(data, dt) } else { decode::<BigEndian>(data, dt) };
    let slope = header.scl_slope as f64;
    if slope != 0.0 && slope.is_finite() {
        let inter = header.scl_inter as f64;
        let inter = if inter.is_finite() { inter } else { 0.0 };
        if slope != 1.0 || inter != 0.0 {
            values.iter_mut().for_each(|v| *v = slope * *v + inter);
        }
    }
    Ok((header, values))
}

fn decode<B: ByteOrder>(data: &[u8], dt: Datatype) -> Vec<f64> {
    let n = dt.bytes();
    data.chunks_exact(n)
        .map(|c| match dt {
            Datatype::U8 => c[0] as f64,
            Datatype::I16 => B::read_i16(c) as f64,
            Datatype::I32 => B::read_i32(c) as f64,
            Datatype::F32 => B::read_f32(c) as f64,
            Datatype::F64 => B::read_f64(c),
        })
        .collect()
}

/// Reads a volume; channels come from dims 4 and up.
pub fn read_volume<T: Real>(path: impl AsRef<Path>) -> Result<OrientedVolume<T>> {
    let (header, values) = read_raw(path)?;
    let (dims, channels) = header.shape()?;
    let lattice = Lattice::new(dims, header.vox2world().cast())?;
    OrientedVolume::new(lattice, channels, values.into_iter().map(T::of).collect())
}

/// Writes `vol` with the given on-disk type. Integer types round to the
/// nearest value and fail when a voxel does not fit. The path decides
/// compression: names ending in `.gz` are gzipped.
pub fn write_volume<T: Real>(path: impl AsRef<Path>, vol: &OrientedVolume<T>, datatype: Datatype, descrip: &str) -> Result<()> {
    let header = header_for(vol, datatype, descrip);
    write_with_header(path, &header, vol.data())
}

/// Header describing `vol` with an sform taken from its lattice.
pub fn header_for<T: Real>(vol: &OrientedVolume<T>, datatype: Datatype, descrip: &str) -> Header {
    let dims = vol.dims();
    let m = vol.lattice().vox2world().to_f64();
    let sizes = vol.lattice().voxel_size().map(|x| x.f64() as f32);
    let channels = vol.channels();
    let mut dim = [3, dims[0] as i16, dims[1] as i16, dims[2] as i16, 1, 1, 1, 1];
    if channels > 1 {
        dim[0] = 4;
        dim[4] = channels as i16;
    }
    Header {
        dim,
        datatype: datatype.code(),
        pixdim: [1.0, sizes[0], sizes[1], sizes[2], 1.0, 1.0, 1.0, 1.0],
        descrip: descrip.chars().take(79).collect(),
        sform_code: 2,
        srow: std::array::from_fn(|r| std::array::from_fn(|c| m[r][c] as f32)),
        ..Header::default()
    }
}

pub fn write_with_header<T: Real>(path: impl AsRef<Path>, header: &Header, data: &[T]) -> Result<()> {
    let path = path.as_ref();
    let dt = Datatype::from_code(header.datatype)?;
    let (dims, channels) = header.shape()?;
    let count = dims.iter().product::<usize>() * channels;
    if count != data.len() {
        return Err(Error::dims("NIfTI voxel count", count, data.len()));
    }
    let mut bytes = header.to_bytes()?;
    bytes.reserve(count * dt.bytes());
    for &v in data {
        let x = v.f64();
        let int = |lo: f64, hi: f64| -> Result<f64> {
            let r = x.round();
            if !(lo..=hi).contains(&r) {
                return Err(Error::Nifti { field: "datatype", message: format!("value {x} does not fit {dt:?}") });
            }
            Ok(r)
        };
        match dt {
            Datatype::U8 => bytes.push(int(0.0, 255.0)? as u8),
            Datatype::I16 => bytes.extend_from_slice(&(int(i16::MIN as f64, i16::MAX as f64)? as i16).to_le_bytes()),
            Datatype::I32 => bytes.extend_from_slice(&(int(i32::MIN as f64, i32::MAX as f64)? as i32).to_le_bytes()),
            Datatype::F32 => bytes.extend_from_slice(&(x as f32).to_le_bytes()),
            Datatype::F64 => bytes.extend_from_slice(&x.to_le_bytes()),
        }
    }
    let gz = path.extension().is_some_and(|e| e == "gz");
    if gz {
        let mut enc = GzEncoder::new(fs::File::create(path)?, Compression::default());
        enc.write_all(&bytes)?;
        enc.finish()?;
    } else {
        fs::write(path, bytes)?;
    }
    Ok(())
}

/// Writes a coordinate map as a 3-channel float32 volume on `lattice`,
/// with the dims of the lattice it points into in `intent_p`.
pub fn write_coordinate_map<T: Real>(path: impl AsRef<Path>, d: &Deformation<T>, lattice: &Lattice<T>, descrip: &str) -> Result<()> {
    let vol = d.to_volume(lattice.clone())?;
    let mut h = header_for(&vol, Datatype::F32, descrip);
    h.intent_code = INTENT_VECTOR;
    h.intent_p = d.target().map(|x| x as f32);
    write_with_header(path, &h, vol.data())
}

/// Inverse of [`write_coordinate_map`]: the map and the lattice it lives on.
pub fn read_coordinate_map<T: Real>(path: impl AsRef<Path>) -> Result<(Deformation<T>, Lattice<T>)> {
    let (header, values) = read_raw(path)?;
    if header.intent_code != INTENT_VECTOR {
        return Err(Error::Nifti { field: "intent_code", message: format!("{} is not a coordinate map", header.intent_code) });
    }
    let target = header.intent_p.map(|x| x as usize);
    if header.intent_p.iter().any(|&x| !(x >= 1.0 && x.fract() == 0.0)) {
        return Err(Error::Nifti { field: "intent_p1", message: format!("target dims {:?} are not positive integers", header.intent_p) });
    }
    let (dims, channels) = header.shape()?;
    if channels != 3 {
        return Err(Error::Nifti { field: "dim", message: format!("coordinate maps have 3 channels, found {channels}") });
    }
    let lattice = Lattice::new(dims, header.vox2world().cast())?;
    let vol = OrientedVolume::new(lattice.clone(), 3, values.into_iter().map(T::of).collect())?;
    Ok((Deformation::from_volume(&vol, target)?, lattice))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::voxels;

    fn oblique() -> Lattice<f64> {
        let m = [[0.0, -2.0, 0.0, 31.5], [1.5, 0.0, 0.0, -12.25], [0.0, 0.0, 3.0, 7.0], [0.0, 0.0, 0.0, 1.0]];
        Lattice::new([5, 4, 3], Affine::from_f64(m)).unwrap()
    }

    #[test]
    fn float32_round_trip_keeps_data_and_affine() {
        let dir = tempfile::tempdir().unwrap();
        let vol = OrientedVolume::from_fn(oblique(), 2, |x, c| (x[0] as f64 * 0.3 - x[1] as f64) / 7.0 + c as f64 * 100.0);
        for name in ["a.nii", "a.nii.gz"] {
            let p = dir.path().join(name);
            write_volume(&p, &vol, Datatype::F32, "round trip").unwrap();
            let back: OrientedVolume<f64> = read_volume(&p).unwrap();
            assert_eq!(back.dims(), vol.dims());
            assert_eq!(back.channels(), 2);
            assert_eq!(back.lattice().vox2world(), vol.lattice().vox2world());
            for (a, b) in back.data().iter().zip(vol.data()) {
                assert_eq!(*a, *b as f32 as f64);
            }
            assert_eq!(read_raw(&p).unwrap().0.descrip, "round trip");
        }
    }

    #[test]
    fn scaling_fields_are_applied() {
        let dir = tempfile::tempdir().unwrap();
        let vol = OrientedVolume::from_fn(Lattice::unit([3, 2, 2]), 1, |x, _| (x[0] + 3 * x[1]) as f64);
        let mut header = header_for(&vol, Datatype::I16, "");
        header.scl_slope = 2.0;
        header.scl_inter = 1.0;
        let p = dir.path().join("s.nii");
        write_with_header(&p, &header, vol.data()).unwrap();
        let back: OrientedVolume<f64> = read_volume(&p).unwrap();
        for (a, b) in back.data().iter().zip(vol.data()) {
            assert_eq!(*a, 2.0 * b + 1.0);
        }
    }

    #[test]
    fn sform_wins_over_qform() {
        let vol = OrientedVolume::<f64>::zeros(Lattice::unit([2, 2, 2]), 1);
        let mut header = header_for(&vol, Datatype::U8, "");
        header.srow = [[2.0, 0.0, 0.0, 10.0], [0.0, 3.0, 0.0, 20.0], [0.0, 0.0, 4.0, 30.0]];
        header.pixdim = [1.0, 2.0, 3.0, 4.0, 1.0, 1.0, 1.0, 1.0];
        // 90 degrees about z: quatern_d = sin 45°
        header.qform_code = 1;
        header.quatern = [0.0, 0.0, std::f32::consts::FRAC_1_SQRT_2];
        header.qoffset = [-1.0, -2.0, -3.0];
        let mut bytes = header.to_bytes().unwrap();
        bytes.extend(std::iter::repeat_n(0u8, 8));
        let (h, _) = parse(&bytes).unwrap();
        assert_eq!(h.vox2world().apply([1.0, 1.0, 1.0]), [12.0, 23.0, 34.0]);
        let mut q = h.clone();
        q.sform_code = 0;
        let p = q.vox2world().apply([1.0, 0.0, 0.0]);
        assert!((p[0] + 1.0).abs() < 1e-6 && (p[1] - 0.0).abs() < 1e-6 && (p[2] + 3.0).abs() < 1e-6, "{p:?}");
        let p = q.vox2world().apply([0.0, 1.0, 0.0]);
        assert!((p[0] + 4.0).abs() < 1e-6 && (p[1] + 2.0).abs() < 1e-6, "{p:?}");
    }

    #[test]
    fn big_endian_files_are_read() {
        let vol = OrientedVolume::from_fn(Lattice::unit([2, 3, 1]), 1, |x, _| (x[0] * 10 + x[1]) as f64);
        let header = header_for(&vol, Datatype::I32, "");
        let mut bytes = header.to_bytes().unwrap();
        // flip every header field we rely on, then the data
        let swap = |b: &mut [u8], o: usize, n: usize| b[o..o + n].reverse();
        swap(&mut bytes, 0, 4);
        for i in 0..8 {
            swap(&mut bytes, 40 + 2 * i, 2);
            swap(&mut bytes, 76 + 4 * i, 4);
        }
        for o in [56, 60, 64, 108, 112, 116] {
            swap(&mut bytes, o, 4);
        }
        for o in [68, 70, 72, 252, 254] {
            swap(&mut bytes, o, 2);
        }
        for i in 0..18 {
            swap(&mut bytes, 256 + 4 * i, 4);
        }
        for v in vol.data() {
            bytes.extend_from_slice(&(*v as i32).to_be_bytes());
        }
        let (h, values) = parse(&bytes).unwrap();
        assert_eq!(h.shape().unwrap(), ([2, 3, 1], 1));
        assert_eq!(values, vol.data());
        assert_eq!(h.vox2world(), Affine::identity());
    }

    #[test]
    fn coordinate_maps_keep_their_range() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.nii.gz");
        let d = Deformation::from_fn([3, 2, 2], [7, 8, 9], |x| [x[0] as f64 * 2.0, 7.5 - x[1] as f64, 0.25]);
        write_coordinate_map(&p, &d, &oblique().resampled([3, 2, 2]), "").unwrap();
        let (back, lattice) = read_coordinate_map::<f64>(&p).unwrap();
        assert_eq!(back.target(), [7, 8, 9]);
        assert_eq!(back.map(), d.map());
        assert_eq!(lattice.dims(), [3, 2, 2]);
        let plain = dir.path().join("v.nii");
        write_volume(&plain, &OrientedVolume::<f64>::zeros(Lattice::unit([2, 2, 2]), 3), Datatype::F32, "").unwrap();
        assert!(matches!(read_coordinate_map::<f64>(&plain), Err(Error::Nifti { field: "intent_code", .. })));
    }

    #[test]
    fn unsupported_datatype_names_the_field() {
        let vol = OrientedVolume::<f64>::zeros(Lattice::unit([2, 2, 2]), 1);
        let mut bytes = header_for(&vol, Datatype::U8, "").to_bytes().unwrap();
        LittleEndian::write_i16(&mut bytes[70..], 32); // complex64
        bytes.extend(std::iter::repeat_n(0u8, 64));
        match parse(&bytes) {
            Err(Error::Nifti { field, .. }) => assert_eq!(field, "datatype"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn corrupt_headers_name_the_field() {
        let vol = OrientedVolume::<f64>::zeros(Lattice::unit([2, 2, 2]), 1);
        let good = header_for(&vol, Datatype::U8, "").to_bytes().unwrap();
        let field = |bytes: &[u8]| match parse(bytes) {
            Err(Error::Nifti { field, .. }) => field,
            other => panic!("{other:?}"),
        };
        let mut b = good.clone();
        b[344] = b'x';
        assert_eq!(field(&b), "magic");
        let mut b = good.clone();
        b[0] = 0;
        assert_eq!(field(&b), "sizeof_hdr");
        assert_eq!(field(&good[..100]), "sizeof_hdr");
        // data truncated
        assert_eq!(field(&good), "dim");
    }

    #[test]
    fn integer_types_round_and_reject_overflow() {
        let dir = tempfile::tempdir().unwrap();
        let vol = OrientedVolume::from_fn(Lattice::unit([4, 1, 1]), 1, |x, _| x[0] as f64 * 0.9);
        let p = dir.path().join("l.nii");
        write_volume(&p, &vol, Datatype::U8, "").unwrap();
        let back: OrientedVolume<f32> = read_volume(&p).unwrap();
        assert_eq!(back.data(), &[0.0, 1.0, 2.0, 3.0]);
        let big = OrientedVolume::from_fn(Lattice::unit([1, 1, 1]), 1, |_, _| 300.0);
        assert!(matches!(write_volume(&p, &big, Datatype::U8, ""), Err(Error::Nifti { field: "datatype", .. })));
        let all = OrientedVolume::from_fn(Lattice::unit([3, 3, 3]), 1, |x, _| voxels([3, 3, 3]).position(|y| y == x).unwrap() as f64);
        for dt in [Datatype::I16, Datatype::I32, Datatype::F64] {
            write_volume(&p, &all, dt, "").unwrap();
            let back: OrientedVolume<f64> = read_volume(&p).unwrap();
            assert_eq!(back.data(), all.data());
        }
    }
}

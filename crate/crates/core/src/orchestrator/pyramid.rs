use crate::diffeo::VelocityField;
use crate::error::{Error, Result};
use crate::field::interp::push_channel;
use crate::field::{voxels, Boundary, Lattice, OrientedVolume, Stencil};
use crate::linalg::Affine;
use crate::scalar::Real;

/// Axis-aligned lattice with `voxel` mm spacing covering the world-space
/// bounding box of every given lattice.
pub fn bounding_lattice<T: Real>(lattices: &[&Lattice<T>], voxel: f64) -> Result<Lattice<T>> {
    if lattices.is_empty() {
        return Err(Error::InvalidConfig("no lattices to cover".into()));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for lat in lattices {
        let m = lat.vox2world().cast::<f64>();
        for corner in 0..8 {
            // outer faces of the corner voxels
            let p: [f64; 3] = std::array::from_fn(|d| if corner >> d & 1 == 0 { -0.5 } else { lat.dims()[d] as f64 - 0.5 });
            let w = m.apply(p);
            for d in 0..3 {
                lo[d] = lo[d].min(w[d]);
                hi[d] = hi[d].max(w[d]);
            }
        }
    }
    let dims: [usize; 3] = std::array::from_fn(|d| (((hi[d] - lo[d]) / voxel) - 1e-9).ceil().max(1.0) as usize);
    let centre: [f64; 3] = std::array::from_fn(|d| 0.5 * (lo[d] + hi[d]));
    let base = Lattice::<f64>::centered(dims, voxel);
    let m = Affine::translation(centre).mul(base.vox2world());
    Lattice::new(dims, m.cast())
}

/// The lattice of a pyramid level: the field of view of `fov` resampled so
/// voxels are about `voxel` mm.
pub fn level_lattice<T: Real>(fov: &Lattice<T>, voxel: f64) -> Lattice<T> {
    let h = fov.voxel_size().map(|x| x.f64());
    let dims: [usize; 3] = std::array::from_fn(|d| ((fov.dims()[d] as f64 * h[d] / voxel).round() as usize).max(1));
    if dims == fov.dims() {
        fov.clone()
    } else {
        fov.resampled(dims)
    }
}

/// Voxel coordinates in `from` of every voxel of `to`.
fn coords<T: Real>(from: &Lattice<T>, to: &Lattice<T>) -> Vec<[T; 3]> {
    let m = from.world2vox().mul(to.vox2world());
    voxels(to.dims()).map(|x| m.apply(x.map(T::of_usize))).collect()
}

fn resample_planes<T: Real>(planes: &[T], channels: usize, from: &Lattice<T>, to: &Lattice<T>) -> Vec<T> {
    let n = from.len();
    let c = coords(from, to);
    let mut out = Vec::with_capacity(channels * to.len());
    for ch in 0..channels {
        let src = &planes[ch * n..(ch + 1) * n];
        out.extend(c.iter().map(|&p| Stencil::new(p, from.dims(), Boundary::Clamp).sample(src)));
    }
    out
}

/// Trilinear interpolation of every channel onto another lattice.
pub fn prolong_volume<T: Real>(vol: &OrientedVolume<T>, to: &Lattice<T>) -> OrientedVolume<T> {
    let data = resample_planes(vol.data(), vol.channels(), vol.lattice(), to);
    OrientedVolume::new(to.clone(), vol.channels(), data).expect("resampled data matches the lattice")
}

/// Trilinear interpolation of a voxel-unit velocity, rescaled so each
/// component keeps its length in mm.
pub fn prolong_velocity<T: Real>(v: &VelocityField<T>, from: &Lattice<T>, to: &Lattice<T>) -> Result<VelocityField<T>> {
    if v.dims() != from.dims() {
        return Err(Error::dims("velocity lattice", from.dims(), v.dims()));
    }
    let mut data = resample_planes(v.data(), 3, from, to);
    let (hf, ht) = (from.voxel_size(), to.voxel_size());
    let n = to.len();
    for c in 0..3 {
        let s = hf[c] / ht[c];
        data[c * n..(c + 1) * n].iter_mut().for_each(|x| *x = *x * s);
    }
    VelocityField::new(to.dims(), data)
}

/// Averaging restriction onto a coarser lattice: the adjoint of trilinear
/// prolongation normalised by the pushed weights.
pub fn restrict_volume<T: Real>(vol: &OrientedVolume<T>, to: &Lattice<T>) -> OrientedVolume<T> {
    let c = coords(to, vol.lattice());
    let ones = vec![T::one(); vol.voxel_count()];
    let weight = push_channel(&ones, &c, to.dims(), Boundary::Clamp);
    let mut data = Vec::with_capacity(vol.channels() * to.len());
    for ch in 0..vol.channels() {
        let pushed = push_channel(vol.channel(ch), &c, to.dims(), Boundary::Clamp);
        data.extend(pushed.iter().zip(&weight).map(|(a, w)| if *w > T::zero() { *a / *w } else { T::zero() }));
    }
    OrientedVolume::new(to.clone(), vol.channels(), data).expect("restricted data matches the lattice")
}

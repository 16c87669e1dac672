//! Trilinear sampling (`pull`) and its exact adjoint (`push`).

use crate::error::{Error, Result};
use crate::field::deformation::Deformation;
use crate::field::volume::{index, Lattice, OrientedVolume};
use crate::scalar::Real;

/// Treatment of sample positions outside the source lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Boundary {
    /// Positions are clamped onto the lattice: edge values extend outward.
    Clamp,
    /// Values outside the lattice are zero.
    Zero,
}

/// The eight trilinear corners of a sample position. Corners that fall
/// outside the lattice under [`Boundary::Zero`] carry weight zero.
#[derive(Clone, Copy, Debug)]
pub struct Stencil<T> {
    pub idx: [usize; 8],
    pub w: [T; 8],
    /// Derivative of each weight with respect to the sample position.
    pub dw: [[T; 3]; 8],
}

#[derive(Clone, Copy)]
struct Axis<T> {
    i: [usize; 2],
    valid: [bool; 2],
    w: [T; 2],
    dw: [T; 2],
}

#[inline]
fn axis<T: Real>(p: T, n: usize, boundary: Boundary) -> Axis<T> {
    match boundary {
        Boundary::Clamp => {
            if n == 1 {
                return Axis { i: [0, 0], valid: [true, false], w: [T::one(), T::zero()], dw: [T::zero(); 2] };
            }
            let hi = T::of_usize(n - 1);
            let inside = p >= T::zero() && p <= hi;
            let pc = p.max(T::zero()).min(hi);
            let i0 = pc.floor().to_usize().unwrap_or(0).min(n - 2);
            let f = pc - T::of_usize(i0);
            let d = if inside { T::one() } else { T::zero() };
            Axis { i: [i0, i0 + 1], valid: [true, true], w: [T::one() - f, f], dw: [-d, d] }
        }
        Boundary::Zero => {
            if !(p > T::of(-1.0) && p < T::of_usize(n)) {
                return Axis { i: [0, 0], valid: [false, false], w: [T::zero(); 2], dw: [T::zero(); 2] };
            }
            let fl = p.floor();
            let f = p - fl;
            let i0 = fl.to_isize().unwrap_or(-2);
            let v0 = i0 >= 0 && (i0 as usize) < n;
            let v1 = i0 + 1 >= 0 && ((i0 + 1) as usize) < n;
            let c0 = if v0 { i0 as usize } else { 0 };
            let c1 = if v1 { (i0 + 1) as usize } else { 0 };
            Axis { i: [c0, c1], valid: [v0, v1], w: [T::one() - f, f], dw: [-T::one(), T::one()] }
        }
    }
}

impl<T: Real> Stencil<T> {
    #[inline]
    pub fn new(p: [T; 3], dims: [usize; 3], boundary: Boundary) -> Self {
        let ax = [0, 1, 2].map(|d| axis(p[d], dims[d], boundary));
        let mut idx = [0usize; 8];
        let mut w = [T::zero(); 8];
        let mut dw = [[T::zero(); 3]; 8];
        for c in 0..8 {
            let (a, b, e) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            if !(ax[0].valid[a] && ax[1].valid[b] && ax[2].valid[e]) {
                continue;
            }
            idx[c] = index(dims, ax[0].i[a], ax[1].i[b], ax[2].i[e]);
            let (wx, wy, wz) = (ax[0].w[a], ax[1].w[b], ax[2].w[e]);
            w[c] = wx * wy * wz;
            dw[c] = [ax[0].dw[a] * wy * wz, wx * ax[1].dw[b] * wz, wx * wy * ax[2].dw[e]];
        }
        Stencil { idx, w, dw }
    }

    #[inline]
    pub fn sample(&self, data: &[T]) -> T {
        let mut acc = T::zero();
        for c in 0..8 {
            acc = acc + self.w[c] * data[self.idx[c]];
        }
        acc
    }

    /// Gradient of the trilinear interpolant with respect to position.
    #[inline]
    pub fn gradient(&self, data: &[T]) -> [T; 3] {
        let mut g = [T::zero(); 3];
        for c in 0..8 {
            let v = data[self.idx[c]];
            for (gd, &dd) in g.iter_mut().zip(&self.dw[c]) {
                *gd = *gd + dd * v;
            }
        }
        g
    }

    #[inline]
    pub fn scatter(&self, value: T, out: &mut [T]) {
        for c in 0..8 {
            out[self.idx[c]] = out[self.idx[c]] + self.w[c] * value;
        }
    }
}

#[inline]
pub fn sample<T: Real>(data: &[T], dims: [usize; 3], p: [T; 3], boundary: Boundary) -> T {
    Stencil::new(p, dims, boundary).sample(data)
}

/// Samples a scalar channel at each coordinate.
pub fn pull_channel<T: Real>(src: &[T], dims: [usize; 3], coords: &[[T; 3]], boundary: Boundary) -> Vec<T> {
    coords.iter().map(|&p| sample(src, dims, p, boundary)).collect()
}

/// Adjoint of [`pull_channel`]: scatters each value onto the corners of its
/// coordinate.
pub fn push_channel<T: Real>(values: &[T], coords: &[[T; 3]], dims: [usize; 3], boundary: Boundary) -> Vec<T> {
    let mut out = vec![T::zero(); dims.iter().product()];
    for (&v, &p) in values.iter().zip(coords) {
        if v != T::zero() {
            Stencil::new(p, dims, boundary).scatter(v, &mut out);
        }
    }
    out
}

/// Resamples `vol` at the coordinates of `d`. The result lives on `out`,
/// whose dims must equal the deformation grid.
pub fn pull_to<T: Real>(
    vol: &OrientedVolume<T>,
    d: &Deformation<T>,
    out: Lattice<T>,
    boundary: Boundary,
) -> Result<OrientedVolume<T>> {
    if d.target() != vol.dims() {
        return Err(Error::dims("pull source", d.target(), vol.dims()));
    }
    if out.dims() != d.dims() {
        return Err(Error::dims("pull output lattice", d.dims(), out.dims()));
    }
    let mut data = Vec::with_capacity(out.len() * vol.channels());
    for c in 0..vol.channels() {
        data.extend(pull_channel(vol.channel(c), vol.dims(), d.map(), boundary));
    }
    OrientedVolume::new(out, vol.channels(), data)
}

/// Resamples `vol` at the coordinates of `d`, keeping the source
/// orientation when the grids coincide and unit voxels otherwise.
pub fn pull<T: Real>(vol: &OrientedVolume<T>, d: &Deformation<T>, boundary: Boundary) -> Result<OrientedVolume<T>> {
    let out = if d.dims() == vol.dims() { vol.lattice().clone() } else { Lattice::unit(d.dims()) };
    pull_to(vol, d, out, boundary)
}

/// Exact adjoint of [`pull_to`] with the same boundary policy:
/// `⟨pull(a, d), b⟩ = ⟨a, push(b, d)⟩`.
pub fn push<T: Real>(
    vol: &OrientedVolume<T>,
    d: &Deformation<T>,
    target: Lattice<T>,
    boundary: Boundary,
) -> Result<OrientedVolume<T>> {
    if vol.dims() != d.dims() {
        return Err(Error::dims("push input", d.dims(), vol.dims()));
    }
    if target.dims() != d.target() {
        return Err(Error::dims("push target lattice", d.target(), target.dims()));
    }
    let mut data = Vec::with_capacity(target.len() * vol.channels());
    for c in 0..vol.channels() {
        data.extend(push_channel(vol.channel(c), d.map(), target.dims(), boundary));
    }
    OrientedVolume::new(target, vol.channels(), data)
}

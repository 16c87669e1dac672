use crate::error::{Error, Result};
use crate::field::interp::{Boundary, Stencil};
use crate::field::volume::{voxels, OrientedVolume, Lattice};
use crate::linalg::Affine;
use crate::scalar::Real;

/// A sampled coordinate map. Voxel `x` of the grid maps to the absolute
/// coordinate `map[x]`, expressed in voxel units of the target lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct Deformation<T> {
    dims: [usize; 3],
    target: [usize; 3],
    map: Vec<[T; 3]>,
}

impl<T: Real> Deformation<T> {
    pub fn new(dims: [usize; 3], target: [usize; 3], map: Vec<[T; 3]>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if map.len() != n {
            return Err(Error::dims("deformation map", n, map.len()));
        }
        if map.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("deformation map".into()));
        }
        Ok(Deformation { dims, target, map })
    }

    pub fn identity(dims: [usize; 3]) -> Self {
        Self::from_fn(dims, dims, |p| p.map(T::of_usize))
    }

    pub fn from_fn(dims: [usize; 3], target: [usize; 3], mut f: impl FnMut([usize; 3]) -> [T; 3]) -> Self {
        let map = voxels(dims).map(&mut f).collect();
        Deformation { dims, target, map }
    }

    /// The map `x ↦ A x`.
    pub fn from_affine(dims: [usize; 3], target: [usize; 3], a: &Affine<T>) -> Self {
        Self::from_fn(dims, target, |p| a.apply(p.map(T::of_usize)))
    }

    pub fn translation(dims: [usize; 3], shift: [T; 3]) -> Self {
        Self::from_fn(dims, dims, |p| [0, 1, 2].map(|d| T::of_usize(p[d]) + shift[d]))
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn target(&self) -> [usize; 3] {
        self.target
    }

    pub fn map(&self) -> &[[T; 3]] {
        &self.map
    }

    pub fn map_mut(&mut self) -> &mut [[T; 3]] {
        &mut self.map
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Displacement `map[x] − x` as three planar channels.
    pub fn displacement_planes(&self) -> [Vec<T>; 3] {
        let mut planes = [Vec::with_capacity(self.len()), Vec::with_capacity(self.len()), Vec::with_capacity(self.len())];
        for (p, m) in voxels(self.dims).zip(&self.map) {
            for d in 0..3 {
                planes[d].push(m[d] - T::of_usize(p[d]));
            }
        }
        planes
    }

    /// Evaluates the map at a continuous grid position by trilinear
    /// interpolation of the displacement with clamped edges, so the map
    /// extends beyond the grid as identity plus the edge displacement.
    #[inline]
    pub fn sample(&self, planes: &[Vec<T>; 3], p: [T; 3]) -> [T; 3] {
        let st = Stencil::new(p, self.dims, Boundary::Clamp);
        [0, 1, 2].map(|d| p[d] + st.sample(&planes[d]))
    }

    /// Map value and its spatial Jacobian `∂map/∂p` (rows: output
    /// component) at a continuous position.
    #[inline]
    pub fn sample_with_jacobian(&self, planes: &[Vec<T>; 3], p: [T; 3]) -> ([T; 3], [[T; 3]; 3]) {
        let st = Stencil::new(p, self.dims, Boundary::Clamp);
        let mut jac = [[T::zero(); 3]; 3];
        let mut out = [T::zero(); 3];
        for d in 0..3 {
            out[d] = p[d] + st.sample(&planes[d]);
            let g = st.gradient(&planes[d]);
            for e in 0..3 {
                jac[d][e] = g[e] + if d == e { T::one() } else { T::zero() };
            }
        }
        (out, jac)
    }

    /// Largest Euclidean distance between corresponding map entries.
    pub fn max_distance(&self, other: &Self) -> f64 {
        self.map
            .iter()
            .zip(&other.map)
            .map(|(a, b)| (0..3).map(|d| (a[d] - b[d]).f64().powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Mean Euclidean distance between corresponding map entries.
    pub fn mean_distance(&self, other: &Self) -> f64 {
        let s: f64 = self
            .map
            .iter()
            .zip(&other.map)
            .map(|(a, b)| (0..3).map(|d| (a[d] - b[d]).f64().powi(2)).sum::<f64>().sqrt())
            .sum();
        s / self.len().max(1) as f64
    }

    /// Stores the map as a 3-channel volume on `lattice`.
    pub fn to_volume(&self, lattice: Lattice<T>) -> Result<OrientedVolume<T>> {
        if lattice.dims() != self.dims {
            return Err(Error::dims("deformation lattice", self.dims, lattice.dims()));
        }
        let mut data = Vec::with_capacity(3 * self.len());
        for d in 0..3 {
            data.extend(self.map.iter().map(|m| m[d]));
        }
        OrientedVolume::new(lattice, 3, data)
    }

    pub fn from_volume(vol: &OrientedVolume<T>, target: [usize; 3]) -> Result<Self> {
        if vol.channels() != 3 {
            return Err(Error::dims("deformation channels", 3, vol.channels()));
        }
        let n = vol.voxel_count();
        let map = (0..n).map(|i| [0, 1, 2].map(|d| vol.channel(d)[i])).collect();
        Self::new(vol.dims(), target, map)
    }
}

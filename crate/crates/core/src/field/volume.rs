use crate::error::{Error, Result};
use crate::linalg::Affine;
use crate::scalar::Real;

/// Voxel grid with its voxel-to-world matrix (world units are mm).
#[derive(Clone, Debug, PartialEq)]
pub struct Lattice<T> {
    dims: [usize; 3],
    vox2world: Affine<T>,
}

impl<T: Real> Lattice<T> {
    pub fn new(dims: [usize; 3], vox2world: Affine<T>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidConfig(format!("lattice dims must be positive, got {dims:?}")));
        }
        if !vox2world.is_finite() || vox2world.det3() == T::zero() || vox2world.inverse().is_none() {
            return Err(Error::SingularMatrix("voxel-to-world matrix".into()));
        }
        Ok(Lattice { dims, vox2world })
    }

    /// Unit voxels, world origin at voxel 0.
    pub fn unit(dims: [usize; 3]) -> Self {
        Self::new(dims, Affine::identity()).expect("identity lattice")
    }

    /// Isotropic lattice with `voxel` mm spacing and the world origin at the
    /// lattice centre.
    pub fn centered(dims: [usize; 3], voxel: f64) -> Self {
        let t = dims.map(|d| T::of(-(d as f64 - 1.0) * 0.5 * voxel));
        let m = Affine::translation(t).mul(&Affine::scaling([T::of(voxel); 3]));
        Self::new(dims, m).expect("centred lattice")
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn vox2world(&self) -> &Affine<T> {
        &self.vox2world
    }

    pub fn world2vox(&self) -> Affine<T> {
        self.vox2world.inverse().expect("lattice affine checked invertible")
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn voxel_size(&self) -> [T; 3] {
        self.vox2world.column_norms()
    }

    /// Volume of one voxel in mm³.
    pub fn voxel_volume(&self) -> T {
        self.vox2world.det3().abs()
    }

    pub fn cast<U: Real>(&self) -> Lattice<U> {
        Lattice { dims: self.dims, vox2world: self.vox2world.cast() }
    }

    /// Lattice covering the same field of view with `dims` voxels per axis.
    /// Voxel centres are placed so that the outer voxel faces coincide.
    pub fn resampled(&self, dims: [usize; 3]) -> Self {
        let s: [T; 3] = [0, 1, 2].map(|d| T::of(self.dims[d] as f64 / dims[d] as f64));
        let off = s.map(|si| (si - T::one()) * T::half());
        let m = self.vox2world.mul(&Affine::translation(off)).mul(&Affine::scaling(s));
        Lattice::new(dims, m).expect("resampled lattice")
    }
}

/// Linear index of voxel `(x, y, z)`, x fastest.
#[inline]
pub fn index(dims: [usize; 3], x: usize, y: usize, z: usize) -> usize {
    x + dims[0] * (y + dims[1] * z)
}

/// Iterates voxel coordinates in storage order.
pub fn voxels(dims: [usize; 3]) -> impl Iterator<Item = [usize; 3]> {
    let [nx, ny, nz] = dims;
    (0..nz).flat_map(move |z| (0..ny).flat_map(move |y| (0..nx).map(move |x| [x, y, z])))
}

/// Multi-channel volume on an oriented lattice. Channels are stored
/// plane-after-plane; non-finite values mark missing voxels.
#[derive(Clone, Debug, PartialEq)]
pub struct OrientedVolume<T> {
    lattice: Lattice<T>,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> OrientedVolume<T> {
    pub fn new(lattice: Lattice<T>, channels: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidConfig("volume needs at least one channel".into()));
        }
        let expected = lattice.len() * channels;
        if data.len() != expected {
            return Err(Error::dims("volume data", expected, data.len()));
        }
        Ok(OrientedVolume { lattice, channels, data })
    }

    pub fn zeros(lattice: Lattice<T>, channels: usize) -> Self {
        let n = lattice.len() * channels;
        OrientedVolume { lattice, channels, data: vec![T::zero(); n] }
    }

    pub fn from_fn(lattice: Lattice<T>, channels: usize, f: impl Fn([usize; 3], usize) -> T) -> Self {
        let dims = lattice.dims();
        let mut data = Vec::with_capacity(lattice.len() * channels);
        for c in 0..channels {
            data.extend(voxels(dims).map(|v| f(v, c)));
        }
        OrientedVolume { lattice, channels, data }
    }

    pub fn lattice(&self) -> &Lattice<T> {
        &self.lattice
    }

    pub fn dims(&self) -> [usize; 3] {
        self.lattice.dims
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn voxel_count(&self) -> usize {
        self.lattice.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.voxel_count();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.voxel_count();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, v: [usize; 3], c: usize) -> T {
        self.data[c * self.voxel_count() + index(self.dims(), v[0], v[1], v[2])]
    }

    /// `true` where every channel is finite.
    pub fn mask(&self) -> Vec<bool> {
        let n = self.voxel_count();
        (0..n).map(|i| (0..self.channels).all(|c| self.data[c * n + i].is_finite())).collect()
    }

    pub fn with_lattice(mut self, lattice: Lattice<T>) -> Result<Self> {
        if lattice.dims() != self.dims() {
            return Err(Error::dims("replacement lattice", self.dims(), lattice.dims()));
        }
        self.lattice = lattice;
        Ok(self)
    }

    pub fn cast<U: Real>(&self) -> OrientedVolume<U> {
        OrientedVolume {
            lattice: self.lattice.cast(),
            channels: self.channels,
            data: self.data.iter().map(|x| U::of(x.f64())).collect(),
        }
    }
}

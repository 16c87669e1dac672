//! Oriented volumes, coordinate maps, trilinear resampling and the
//! implicit-class softmax.

pub mod affine;
pub mod deformation;
pub mod interp;
pub mod softmax;
pub mod volume;

pub use affine::{affine_chain, subject_to_template};
pub use deformation::Deformation;
pub use interp::{pull, pull_to, push, Boundary, Stencil};
pub use softmax::{softmax_implicit, softmax_implicit_into};
pub use volume::{index, voxels, Lattice, OrientedVolume};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Per-voxel class probabilities over K stored classes and an implicit
/// last class. All K+1 channels are kept so the last one does not lose
/// precision to cancellation.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbVolume<T> {
    dims: [usize; 3],
    k: usize,
    data: Vec<T>,
}

impl<T: Real> ProbVolume<T> {
    /// Builds from K stored channels; the last class receives the remainder.
    pub fn new(dims: [usize; 3], k: usize, data: Vec<T>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if data.len() != n * k {
            return Err(Error::dims("probability volume", n * k, data.len()));
        }
        let mut full = data;
        full.resize(n * (k + 1), T::zero());
        for i in 0..n {
            let s = (0..k).fold(T::zero(), |a, c| a + full[c * n + i]);
            full[k * n + i] = (T::one() - s).max(T::zero());
        }
        Ok(ProbVolume { dims, k, data: full })
    }

    /// Softmax of a K-channel logit volume.
    pub fn from_logits(logits: &OrientedVolume<T>) -> Self {
        Self::from_logit_planes(logits.dims(), logits.channels(), logits.data())
    }

    /// Softmax of planar logits, K channels of `dims` each.
    pub fn from_logit_planes(dims: [usize; 3], k: usize, logits: &[T]) -> Self {
        let n: usize = dims.iter().product();
        assert_eq!(logits.len(), n * k);
        let mut data = vec![T::zero(); n * (k + 1)];
        let mut t = vec![T::zero(); k];
        let mut p = vec![T::zero(); k + 1];
        for i in 0..n {
            for c in 0..k {
                t[c] = logits[c * n + i];
            }
            softmax_implicit_into(&t, &mut p);
            for c in 0..=k {
                data[c * n + i] = p[c];
            }
        }
        ProbVolume { dims, k, data }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// Number of stored classes K.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of classes including the implicit one.
    pub fn classes(&self) -> usize {
        self.k + 1
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Channel `c` for `c ≤ K`; channel K is the implicit class.
    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.len();
        &self.data[c * n..(c + 1) * n]
    }

    /// All K+1 probabilities at voxel `i`.
    pub fn at(&self, i: usize, out: &mut [T]) {
        let n = self.len();
        for (c, o) in out.iter_mut().enumerate().take(self.k + 1) {
            *o = self.data[c * n + i];
        }
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }
}

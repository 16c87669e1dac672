//! Rigid transforms as the exponential of a six-parameter Lie algebra
//! element.
//!
//! Coefficients 0..3 multiply the translation generators (mm), 3..6 the
//! rotations about the world x, y and z axes (radians). Rotations act about
//! the world origin, so template lattices should have their origin near
//! the centre of the field of view (see [`crate::field::Lattice::centered`]).

use crate::linalg::{expm, Affine, DMat};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RigidParams<T> {
    pub q: [T; 6],
}

impl<T: Real> RigidParams<T> {
    pub fn zero() -> Self {
        RigidParams { q: [T::zero(); 6] }
    }

    pub fn new(q: [T; 6]) -> Self {
        RigidParams { q }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().all(|x| x.is_finite())
    }

    pub fn neg(&self) -> Self {
        RigidParams { q: self.q.map(|x| -x) }
    }

    pub fn norm(&self) -> f64 {
        self.q.iter().map(|x| x.f64().powi(2)).sum::<f64>().sqrt()
    }
}

/// The j-th generator as a 4×4 matrix.
pub fn generator<T: Real>(j: usize) -> DMat<T> {
    let mut b = DMat::zeros(4, 4);
    let one = T::one();
    match j {
        0..=2 => b[(j, 3)] = one,
        3 => {
            b[(1, 2)] = -one;
            b[(2, 1)] = one;
        }
        4 => {
            b[(0, 2)] = one;
            b[(2, 0)] = -one;
        }
        5 => {
            b[(0, 1)] = -one;
            b[(1, 0)] = one;
        }
        _ => panic!("rigid generator index {j} out of range"),
    }
    b
}

fn algebra<T: Real>(q: &RigidParams<T>) -> DMat<T> {
    let mut a = DMat::zeros(4, 4);
    for j in 0..6 {
        a = a.add(&generator::<T>(j).scale(q.q[j]));
    }
    a
}

fn to_affine<T: Real>(m: &DMat<T>, row0: usize, col0: usize) -> Affine<T> {
    let mut out = [[T::zero(); 4]; 4];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m[(row0 + i, col0 + j)];
        }
    }
    Affine(out)
}

/// `exp(Σ qⱼ Bⱼ)`.
pub fn exp_rigid<T: Real>(q: &RigidParams<T>) -> Affine<T> {
    let mut r = to_affine(&expm(&algebra(q)), 0, 0);
    // the bottom row is exactly (0, 0, 0, 1) in exact arithmetic
    r.0[3] = [T::zero(), T::zero(), T::zero(), T::one()];
    r
}

/// `∂ exp(Σ qᵢ Bᵢ) / ∂qⱼ` for every j, read off the upper-right block of
/// `exp([[A, Bⱼ], [0, A]])`.
pub fn dexp_rigid<T: Real>(q: &RigidParams<T>) -> [Affine<T>; 6] {
    let a = algebra(q);
    std::array::from_fn(|j| {
        let b = generator::<T>(j);
        let block = DMat::from_fn(8, 8, |r, c| match (r < 4, c < 4) {
            (true, true) => a[(r, c)],
            (false, false) => a[(r - 4, c - 4)],
            (true, false) => b[(r, c - 4)],
            (false, true) => T::zero(),
        });
        let mut d = to_affine(&expm(&block), 0, 4);
        d.0[3] = [T::zero(); 4];
        d
    })
}

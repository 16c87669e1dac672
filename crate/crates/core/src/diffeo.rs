//! Geodesic shooting of diffeomorphisms from an initial velocity.
//!
//! Velocities are stored in voxel units of the template lattice. The metric
//! measures them in mm (`S v` with `S = diag(voxel size)`), so the momentum
//! is `u = S Λ S v · Δx` and the velocity is recovered with the matching
//! Green's solve.
//!
//! Integration is explicit Euler over `steps` unit-time slices. The forward
//! map accumulates `φ ← (id + v/T) ∘ φ`, the inverse `θ ← θ ∘ (id − v/T)`,
//! and the momentum is transported by `u_t = |Dθ| Dθᵀ (u₀ ∘ θ)`.

use crate::error::{Error, Result};
use crate::field::interp::{Boundary, Stencil};
use crate::field::{index, Deformation};
use crate::linalg::det3;
use crate::regularizer::{EnergySpec, Regularizer};
use crate::scalar::Real;

/// Initial velocity on the template lattice: three planar channels, voxel
/// units.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityField<T> {
    dims: [usize; 3],
    data: Vec<T>,
}

impl<T: Real> VelocityField<T> {
    pub fn zeros(dims: [usize; 3]) -> Self {
        VelocityField { dims, data: vec![T::zero(); 3 * dims.iter().product::<usize>()] }
    }

    pub fn new(dims: [usize; 3], data: Vec<T>) -> Result<Self> {
        let n = 3 * dims.iter().product::<usize>();
        if data.len() != n {
            return Err(Error::dims("velocity field", n, data.len()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("velocity field".into()));
        }
        Ok(VelocityField { dims, data })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn component(&self, c: usize) -> &[T] {
        let n = self.voxel_count();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn planes(&self) -> [Vec<T>; 3] {
        [0, 1, 2].map(|c| self.component(c).to_vec())
    }

    #[inline]
    pub fn at(&self, i: usize) -> [T; 3] {
        let n = self.voxel_count();
        [self.data[i], self.data[n + i], self.data[2 * n + i]]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|x| x.f64().abs()).fold(0.0, f64::max)
    }

    pub fn mean_norm(&self) -> f64 {
        let n = self.voxel_count();
        (0..n).map(|i| self.at(i).iter().map(|x| x.f64().powi(2)).sum::<f64>().sqrt()).sum::<f64>() / n as f64
    }
}

/// The velocity prior `Λ_v` on a lattice with given voxel size.
#[derive(Debug)]
pub struct VelocityMetric {
    reg: Regularizer,
    voxel: [f64; 3],
}

impl VelocityMetric {
    pub fn new(spec: EnergySpec, dims: [usize; 3], voxel: [f64; 3]) -> Result<Self> {
        Ok(VelocityMetric { reg: Regularizer::new(spec, dims, voxel)?, voxel })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.reg.dims()
    }

    pub fn voxel_size(&self) -> [f64; 3] {
        self.voxel
    }

    pub fn spec(&self) -> &EnergySpec {
        self.reg.spec()
    }

    fn scale<T: Real>(&self, v: &[T], inverse: bool) -> Vec<T> {
        let n = v.len() / 3;
        let mut out = v.to_vec();
        for c in 0..3 {
            let s = T::of(if inverse { 1.0 / self.voxel[c] } else { self.voxel[c] });
            out[c * n..(c + 1) * n].iter_mut().for_each(|x| *x = *x * s);
        }
        out
    }

    /// Momentum `S Λ S v · Δx` of a voxel-unit velocity.
    pub fn momentum<T: Real>(&self, v: &[T]) -> Result<Vec<T>> {
        let mm = self.scale(v, false);
        let lv = self.reg.apply(&mm, 3)?;
        Ok(self.scale(&lv, false))
    }

    /// Velocity whose momentum is `u`.
    pub fn velocity<T: Real>(&self, u: &[T]) -> Result<Vec<T>> {
        let g = self.scale(u, true);
        let f = self.reg.solve(&g, 3)?;
        Ok(self.scale(&f, true))
    }

    /// Approximate inverse of `S Λ S·Δx + σI`, used as a preconditioner. The
    /// shift is divided by the mean squared voxel size.
    pub fn solve_shifted<T: Real>(&self, u: &[T], shift: f64) -> Result<Vec<T>> {
        let h2 = self.voxel.iter().map(|h| h * h).sum::<f64>() / 3.0;
        let g = self.scale(u, true);
        let f = self.reg.solve_shifted(&g, 3, shift / h2)?;
        Ok(self.scale(&f, true))
    }

    /// `½ vᵀ S Λ S v · Δx`.
    pub fn energy<T: Real>(&self, v: &[T]) -> Result<f64> {
        let u = self.momentum(v)?;
        Ok(0.5 * crate::scalar::dot(v, &u))
    }

    /// Draws a velocity from `N(0, (SΛS·Δx)⁻¹)`.
    pub fn sample<T: Real, R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<T>> {
        let f = self.reg.sample(3, rng)?;
        Ok(self.scale(&f, true))
    }
}

/// Endpoint of a shot geodesic.
#[derive(Clone, Debug)]
pub struct Shot<T> {
    /// Forward map, used to sample the template: `t ∘ φ`.
    pub phi: Deformation<T>,
    /// Inverse map `φ⁻¹`.
    pub phi_inv: Deformation<T>,
    /// `⟨v_t, u_t⟩` at the start of each step, plus the endpoint when
    /// requested.
    pub energies: Vec<f64>,
}

/// Spatial Jacobian of a deformation map: central differences inside the
/// grid, one-sided at its faces. Row `d` holds the derivatives of output
/// component `d`.
pub fn jacobian<T: Real>(d: &Deformation<T>) -> Vec<[[T; 3]; 3]> {
    let dims = d.dims();
    let map = d.map();
    let mut out = vec![[[T::zero(); 3]; 3]; map.len()];
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = [x, y, z];
                let i = index(dims, x, y, z);
                for axis in 0..3 {
                    let n = dims[axis];
                    if n == 1 {
                        for comp in 0..3 {
                            out[i][comp][axis] = if comp == axis { T::one() } else { T::zero() };
                        }
                        continue;
                    }
                    let (lo, hi) = (p[axis].saturating_sub(1), (p[axis] + 1).min(n - 1));
                    let mut a = p;
                    a[axis] = lo;
                    let mut b = p;
                    b[axis] = hi;
                    let ia = index(dims, a[0], a[1], a[2]);
                    let ib = index(dims, b[0], b[1], b[2]);
                    let span = T::of_usize(hi - lo);
                    for comp in 0..3 {
                        out[i][comp][axis] = (map[ib][comp] - map[ia][comp]) / span;
                    }
                }
            }
        }
    }
    out
}

/// Determinant of the spatial Jacobian at every voxel.
pub fn jacobian_det<T: Real>(d: &Deformation<T>) -> Vec<T> {
    jacobian(d).iter().map(det3).collect()
}

/// `(a ∘ b)(x) = a(b(x))`. `b` must map into the grid of `a`.
pub fn compose<T: Real>(a: &Deformation<T>, b: &Deformation<T>) -> Result<Deformation<T>> {
    if b.target() != a.dims() {
        return Err(Error::dims("composition", a.dims(), b.target()));
    }
    let planes = a.displacement_planes();
    let map = b.map().iter().map(|&p| a.sample(&planes, p)).collect();
    Deformation::new(b.dims(), a.target(), map)
}

fn check_finite<T: Real>(values: &[T], step: usize, what: &str) -> Result<()> {
    if values.iter().any(|x| !x.is_finite()) {
        return Err(Error::ShootingBlowUp { step, reason: format!("non-finite {what}") });
    }
    Ok(())
}

/// Transports the initial momentum through the current inverse map.
fn transport<T: Real>(u0: &[T], theta: &Deformation<T>, step: usize) -> Result<Vec<T>> {
    let dims = theta.dims();
    let n = theta.len();
    let jac = jacobian(theta);
    let mut u = vec![T::zero(); 3 * n];
    for (i, (j, p)) in jac.iter().zip(theta.map()).enumerate() {
        let det = det3(j);
        if !(det > T::zero()) {
            return Err(Error::ShootingBlowUp {
                step,
                reason: format!("non-positive Jacobian determinant {det} at voxel {i}"),
            });
        }
        let st = Stencil::new(*p, dims, Boundary::Clamp);
        let m = [0, 1, 2].map(|c| st.sample(&u0[c * n..(c + 1) * n]));
        for c in 0..3 {
            // (Dθᵀ m)_c = Σ_d J[d][c] m_d
            u[c * n + i] = det * (j[0][c] * m[0] + j[1][c] * m[1] + j[2][c] * m[2]);
        }
    }
    Ok(u)
}

/// Shoots `v0` for `steps` Euler steps and returns `(φ, φ⁻¹)`.
pub fn shoot<T: Real>(v0: &VelocityField<T>, metric: &VelocityMetric, steps: usize) -> Result<(Deformation<T>, Deformation<T>)> {
    let s = shoot_path(v0, metric, steps, false)?;
    Ok((s.phi, s.phi_inv))
}

/// As [`shoot`], also reporting the kinetic energy along the path.
pub fn shoot_path<T: Real>(v0: &VelocityField<T>, metric: &VelocityMetric, steps: usize, endpoint_energy: bool) -> Result<Shot<T>> {
    if steps == 0 {
        return Err(Error::InvalidConfig("shooting needs at least one step".into()));
    }
    let dims = v0.dims();
    if metric.dims() != dims {
        return Err(Error::dims("velocity metric", metric.dims(), dims));
    }
    let n = v0.voxel_count();
    let mut phi = Deformation::identity(dims);
    let mut theta = Deformation::identity(dims);
    let mut energies = Vec::with_capacity(steps + 1);
    if v0.data().iter().all(|x| *x == T::zero()) {
        energies.resize(steps + usize::from(endpoint_energy), 0.0);
        return Ok(Shot { phi, phi_inv: theta, energies });
    }
    let u0 = metric.momentum(v0.data())?;
    let mut v = v0.data().to_vec();
    let dt = T::one() / T::of_usize(steps);
    for step in 0..steps {
        let u = if step == 0 {
            u0.clone()
        } else {
            let u = transport(&u0, &theta, step)?;
            v = metric.velocity(&u)?;
            check_finite(&v, step, "velocity")?;
            u
        };
        energies.push(crate::scalar::dot(&v, &u));
        let dv: [Vec<T>; 3] = [0, 1, 2].map(|c| v[c * n..(c + 1) * n].iter().map(|&x| x * dt).collect());
        // φ ← (id + dv) ∘ φ
        for p in phi.map_mut() {
            let st = Stencil::new(*p, dims, Boundary::Clamp);
            for c in 0..3 {
                p[c] = p[c] + st.sample(&dv[c]);
            }
        }
        // θ ← θ ∘ (id − dv)
        let planes = theta.displacement_planes();
        let mut next = Vec::with_capacity(n);
        for (i, x) in crate::field::voxels(dims).enumerate() {
            let q = [0, 1, 2].map(|c| T::of_usize(x[c]) - dv[c][i]);
            next.push(theta.sample(&planes, q));
        }
        theta = Deformation::new(dims, dims, next).map_err(|_| Error::ShootingBlowUp { step, reason: "non-finite inverse".into() })?;
        check_finite(&phi.map().iter().flatten().copied().collect::<Vec<_>>(), step, "forward map")?;
    }
    if endpoint_energy {
        let u = transport(&u0, &theta, steps)?;
        let v = metric.velocity(&u)?;
        energies.push(crate::scalar::dot(&v, &u));
    }
    Ok(Shot { phi, phi_inv: theta, energies })
}

//! Quadratic smoothness energies on periodic lattices.
//!
//! The operator `Λ` combines absolute, membrane (first derivatives),
//! bending (second derivatives) and, for vector fields, linear-elastic
//! energies. Derivatives are finite differences scaled by the physical voxel
//! size, and every operator output carries the voxel volume `Δx`, so the
//! discrete energy `½ fᵀΛf·Δx` approximates the same continuum integral at
//! any resolution.
//!
//! With periodic boundaries `Λ` is circulant: [`Regularizer::apply`] uses
//! spatial stencils while [`Regularizer::solve`] inverts the identical
//! operator frequency by frequency.

pub mod spectral;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Real;
use spectral::{omega, Fft3};

/// Weights of the energy terms. For vector fields `elastic_shear` weighs the
/// squared symmetrised Jacobian and `elastic_div` the squared divergence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergySpec {
    pub absolute: f64,
    pub membrane: f64,
    pub bending: f64,
    pub elastic_shear: f64,
    pub elastic_div: f64,
}

impl EnergySpec {
    pub const fn new(absolute: f64, membrane: f64, bending: f64) -> Self {
        EnergySpec { absolute, membrane, bending, elastic_shear: 0.0, elastic_div: 0.0 }
    }

    /// `[absolute, membrane, bending, shear, divergence]`.
    pub const fn from_velocity_weights(w: [f64; 5]) -> Self {
        EnergySpec { absolute: w[0], membrane: w[1], bending: w[2], elastic_shear: w[3], elastic_div: w[4] }
    }

    /// `[absolute, membrane, bending]`.
    pub const fn from_template_weights(w: [f64; 3]) -> Self {
        Self::new(w[0], w[1], w[2])
    }

    pub fn velocity_weights(&self) -> [f64; 5] {
        [self.absolute, self.membrane, self.bending, self.elastic_shear, self.elastic_div]
    }

    pub fn has_elasticity(&self) -> bool {
        self.elastic_shear != 0.0 || self.elastic_div != 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.velocity_weights().iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidConfig(format!("energy weights must be finite and nonnegative: {self:?}")));
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Self {
        let w = self.velocity_weights().map(|x| x * s);
        Self::from_velocity_weights(w)
    }
}

/// Regularisation operator bound to a lattice and voxel size (mm).
#[derive(Debug)]
pub struct Regularizer {
    spec: EnergySpec,
    dims: [usize; 3],
    voxel: [f64; 3],
    dx: f64,
    fft: Fft3,
    /// Scalar symbol `abs + mem·s + bend·s²` (without `Δx`) per frequency.
    scalar_symbol: Vec<f64>,
    /// Forward-difference symbols `(e^{iω}−1)/h` per frequency.
    diff_symbol: Vec<[Complex64; 3]>,
}

impl Regularizer {
    pub fn new(spec: EnergySpec, dims: [usize; 3], voxel: [f64; 3]) -> Result<Self> {
        spec.validate()?;
        if voxel.iter().any(|&h| !(h > 0.0) || !h.is_finite()) {
            return Err(Error::InvalidConfig(format!("voxel size must be positive, got {voxel:?}")));
        }
        let n: usize = dims.iter().product();
        let mut scalar_symbol = Vec::with_capacity(n);
        let mut diff_symbol = Vec::with_capacity(n);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let k = [x, y, z];
                    let d = [0, 1, 2].map(|a| {
                        let w = omega(k[a], dims[a]);
                        Complex64::new(w.cos() - 1.0, w.sin()) / voxel[a]
                    });
                    let s: f64 = d.iter().map(|c| c.norm_sqr()).sum();
                    scalar_symbol.push(spec.absolute + spec.membrane * s + spec.bending * s * s);
                    diff_symbol.push(d);
                }
            }
        }
        Ok(Regularizer {
            spec,
            dims,
            voxel,
            dx: voxel.iter().product(),
            fft: Fft3::new(dims),
            scalar_symbol,
            diff_symbol,
        })
    }

    pub fn spec(&self) -> &EnergySpec {
        &self.spec
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_size(&self) -> [f64; 3] {
        self.voxel
    }

    /// Volume of one voxel.
    pub fn voxel_volume(&self) -> f64 {
        self.dx
    }

    fn len(&self) -> usize {
        self.scalar_symbol.len()
    }

    fn check<T>(&self, f: &[T], components: usize) -> Result<()> {
        if components != 1 && components != 3 {
            return Err(Error::dims("field components", "1 or 3", components));
        }
        if components == 1 && self.spec.has_elasticity() {
            return Err(Error::ElasticityOnScalar);
        }
        if f.len() != components * self.len() {
            return Err(Error::dims("regularised field", components * self.len(), f.len()));
        }
        Ok(())
    }

    /// `Λf·Δx`.
    pub fn apply<T: Real>(&self, f: &[T], components: usize) -> Result<Vec<T>> {
        self.check(f, components)?;
        let n = self.len();
        let dx = T::of(self.dx);
        let inv_h = self.voxel.map(|h| T::of(1.0 / h));
        let mut out = vec![T::zero(); f.len()];
        for c in 0..components {
            let fc = &f[c * n..(c + 1) * n];
            let oc = &mut out[c * n..(c + 1) * n];
            if self.spec.absolute != 0.0 {
                let a = T::of(self.spec.absolute);
                for (o, &v) in oc.iter_mut().zip(fc) {
                    *o = *o + a * v;
                }
            }
            if self.spec.membrane != 0.0 || self.spec.bending != 0.0 {
                let l = laplacian(fc, self.dims, inv_h);
                if self.spec.membrane != 0.0 {
                    let m = T::of(self.spec.membrane);
                    for (o, &v) in oc.iter_mut().zip(&l) {
                        *o = *o + m * v;
                    }
                }
                if self.spec.bending != 0.0 {
                    let ll = laplacian(&l, self.dims, inv_h);
                    let b = T::of(self.spec.bending);
                    for (o, &v) in oc.iter_mut().zip(&ll) {
                        *o = *o + b * v;
                    }
                }
            }
        }
        if components == 3 && self.spec.has_elasticity() {
            let comp = |c: usize| &f[c * n..(c + 1) * n];
            // D[i][j] = forward difference of component j along axis i
            let grads: Vec<Vec<Vec<T>>> =
                (0..3).map(|i| (0..3).map(|j| forward_diff(comp(j), self.dims, i, inv_h[i])).collect()).collect();
            if self.spec.elastic_shear != 0.0 {
                let mu = T::of(self.spec.elastic_shear);
                for i in 0..3 {
                    for j in 0..3 {
                        let e: Vec<T> = grads[i][j].iter().zip(&grads[j][i]).map(|(&a, &b)| (a + b) * T::half()).collect();
                        let back = forward_diff_adjoint(&e, self.dims, i, inv_h[i]);
                        for (o, &v) in out[j * n..(j + 1) * n].iter_mut().zip(&back) {
                            *o = *o + mu * v;
                        }
                    }
                }
            }
            if self.spec.elastic_div != 0.0 {
                let lam = T::of(self.spec.elastic_div);
                let div: Vec<T> = (0..n).map(|x| grads[0][0][x] + grads[1][1][x] + grads[2][2][x]).collect();
                for j in 0..3 {
                    let back = forward_diff_adjoint(&div, self.dims, j, inv_h[j]);
                    for (o, &v) in out[j * n..(j + 1) * n].iter_mut().zip(&back) {
                        *o = *o + lam * v;
                    }
                }
            }
        }
        for o in out.iter_mut() {
            *o = *o * dx;
        }
        Ok(out)
    }

    /// `½ fᵀΛf·Δx`.
    pub fn energy<T: Real>(&self, f: &[T], components: usize) -> Result<f64> {
        let lf = self.apply(f, components)?;
        Ok(0.5 * crate::scalar::dot(f, &lf))
    }

    /// Solves `Λf·Δx = g` exactly in the frequency domain.
    pub fn solve<T: Real>(&self, g: &[T], components: usize) -> Result<Vec<T>> {
        self.solve_shifted(g, components, 0.0)
    }

    /// Solves `(Λ·Δx + σI) f = g`.
    pub fn solve_shifted<T: Real>(&self, g: &[T], components: usize, shift: f64) -> Result<Vec<T>> {
        self.check(g, components)?;
        let n = self.len();
        let mut spec: Vec<Vec<Complex64>> = (0..components)
            .map(|c| {
                let mut buf: Vec<Complex64> = g[c * n..(c + 1) * n].iter().map(|v| Complex64::new(v.f64(), 0.0)).collect();
                self.fft.forward(&mut buf);
                buf
            })
            .collect();
        let gnorm: f64 = spec.iter().flatten().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let elastic = components == 3 && self.spec.has_elasticity();
        let tiny = 1e-12;
        let scale = self.symbol_scale() + shift;
        for k in 0..n {
            let s = self.scalar_symbol[k] * self.dx + shift;
            if !elastic {
                if s <= tiny * scale {
                    if k == 0 && spec.iter().all(|b| b[0].norm() <= 1e-9 * gnorm.max(f64::MIN_POSITIVE)) {
                        spec.iter_mut().for_each(|b| b[0] = Complex64::new(0.0, 0.0));
                        continue;
                    }
                    return Err(Error::SingularOperator(self.singular_reason(k)));
                }
                spec.iter_mut().for_each(|b| b[k] /= s);
                continue;
            }
            let a = self.vector_symbol(k, shift);
            let rhs = [spec[0][k], spec[1][k], spec[2][k]];
            match solve3(&a, rhs, tiny * scale) {
                Some(x) => {
                    for c in 0..3 {
                        spec[c][k] = x[c];
                    }
                }
                None => {
                    if k == 0 && rhs.iter().all(|c| c.norm() <= 1e-9 * gnorm.max(f64::MIN_POSITIVE)) {
                        for b in spec.iter_mut() {
                            b[0] = Complex64::new(0.0, 0.0);
                        }
                        continue;
                    }
                    return Err(Error::SingularOperator(self.singular_reason(k)));
                }
            }
        }
        let mut out = Vec::with_capacity(g.len());
        for mut buf in spec {
            self.fft.inverse(&mut buf);
            out.extend(buf.iter().map(|c| T::of(c.re)));
        }
        Ok(out)
    }

    /// Draws a field with covariance `(Λ·Δx)⁻¹`. A singular zero-frequency
    /// mode is left at zero.
    pub fn sample<T: Real, R: Rng + ?Sized>(&self, components: usize, rng: &mut R) -> Result<Vec<T>> {
        let n = self.len();
        self.check(&vec![0u8; components * n], components)?;
        let mut spec: Vec<Vec<Complex64>> = (0..components)
            .map(|_| {
                let mut buf: Vec<Complex64> =
                    (0..n).map(|_| Complex64::new(rng.sample::<f64, _>(StandardNormal), 0.0)).collect();
                self.fft.forward(&mut buf);
                buf
            })
            .collect();
        let elastic = components == 3 && self.spec.has_elasticity();
        let scale = self.symbol_scale();
        for k in 0..n {
            if !elastic {
                let s = self.scalar_symbol[k] * self.dx;
                if s <= 1e-12 * scale {
                    if k == 0 {
                        spec.iter_mut().for_each(|b| b[0] = Complex64::new(0.0, 0.0));
                        continue;
                    }
                    return Err(Error::SingularOperator(self.singular_reason(k)));
                }
                let r = 1.0 / s.sqrt();
                spec.iter_mut().for_each(|b| b[k] *= r);
                continue;
            }
            let a = self.vector_symbol(k, 0.0);
            match cholesky3(&a, 1e-12 * scale) {
                Some(l) => {
                    // x = L⁻ᴴ ε
                    let e = [spec[0][k], spec[1][k], spec[2][k]];
                    let mut x = [Complex64::new(0.0, 0.0); 3];
                    for i in (0..3).rev() {
                        let mut s = e[i];
                        for j in i + 1..3 {
                            s -= l[j][i].conj() * x[j];
                        }
                        x[i] = s / l[i][i].re;
                    }
                    for c in 0..3 {
                        spec[c][k] = x[c];
                    }
                }
                None if k == 0 => spec.iter_mut().for_each(|b| b[0] = Complex64::new(0.0, 0.0)),
                None => return Err(Error::SingularOperator(self.singular_reason(k))),
            }
        }
        let mut out = Vec::with_capacity(components * n);
        for mut buf in spec {
            self.fft.inverse(&mut buf);
            out.extend(buf.iter().map(|c| T::of(c.re)));
        }
        Ok(out)
    }

    /// Largest diagonal entry of `Λ·Δx` in the frequency domain; used as
    /// the reference magnitude for singularity checks.
    fn symbol_scale(&self) -> f64 {
        let s_max: f64 = self.voxel.iter().map(|h| 4.0 / (h * h)).sum();
        let w = &self.spec;
        let scalar = w.absolute + w.membrane * s_max + w.bending * s_max * s_max;
        (scalar + (w.elastic_shear + w.elastic_div) * s_max).max(f64::MIN_POSITIVE) * self.dx
    }

    fn vector_symbol(&self, k: usize, shift: f64) -> [[Complex64; 3]; 3] {
        let d = &self.diff_symbol[k];
        let s: f64 = d.iter().map(|c| c.norm_sqr()).sum();
        let mu = self.spec.elastic_shear;
        let lam = self.spec.elastic_div;
        let mut a = [[Complex64::new(0.0, 0.0); 3]; 3];
        for j in 0..3 {
            for l in 0..3 {
                let mut v = d[j] * d[l].conj() * (0.5 * mu) + d[j].conj() * d[l] * lam;
                if j == l {
                    v += self.scalar_symbol[k] + 0.5 * mu * s;
                }
                a[j][l] = v * self.dx;
                if j == l {
                    a[j][l] += shift;
                }
            }
        }
        a
    }

    fn singular_reason(&self, k: usize) -> String {
        if k == 0 {
            "zero-frequency mode is unpenalised and the right-hand side has a nonzero mean".into()
        } else {
            format!("operator has a null space at frequency index {k} for {:?}", self.spec)
        }
    }
}

/// Periodic 7-point Laplacian `Σ_d D_dᵀD_d f`.
fn laplacian<T: Real>(f: &[T], dims: [usize; 3], inv_h: [T; 3]) -> Vec<T> {
    let [nx, ny, nz] = dims;
    let w = inv_h.map(|a| a * a);
    let two = T::two();
    let mut out = vec![T::zero(); f.len()];
    for z in 0..nz {
        let (zp, zm) = ((z + 1) % nz, (z + nz - 1) % nz);
        for y in 0..ny {
            let (yp, ym) = ((y + 1) % ny, (y + ny - 1) % ny);
            for x in 0..nx {
                let (xp, xm) = ((x + 1) % nx, (x + nx - 1) % nx);
                let i = x + nx * (y + ny * z);
                let c = f[i];
                let lx = two * c - f[xp + nx * (y + ny * z)] - f[xm + nx * (y + ny * z)];
                let ly = two * c - f[x + nx * (yp + ny * z)] - f[x + nx * (ym + ny * z)];
                let lz = two * c - f[x + nx * (y + ny * zp)] - f[x + nx * (y + ny * zm)];
                out[i] = w[0] * lx + w[1] * ly + w[2] * lz;
            }
        }
    }
    out
}

#[inline]
fn shifted(dims: [usize; 3], x: usize, y: usize, z: usize, axis: usize, forward: bool) -> usize {
    let mut p = [x, y, z];
    let n = dims[axis];
    p[axis] = if forward { (p[axis] + 1) % n } else { (p[axis] + n - 1) % n };
    p[0] + dims[0] * (p[1] + dims[1] * p[2])
}

/// `(f(x+e) − f(x))/h`, periodic.
fn forward_diff<T: Real>(f: &[T], dims: [usize; 3], axis: usize, inv_h: T) -> Vec<T> {
    let mut out = vec![T::zero(); f.len()];
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let i = x + dims[0] * (y + dims[1] * z);
                out[i] = (f[shifted(dims, x, y, z, axis, true)] - f[i]) * inv_h;
            }
        }
    }
    out
}

/// Adjoint of [`forward_diff`]: `(g(x−e) − g(x))/h`.
fn forward_diff_adjoint<T: Real>(g: &[T], dims: [usize; 3], axis: usize, inv_h: T) -> Vec<T> {
    let mut out = vec![T::zero(); g.len()];
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let i = x + dims[0] * (y + dims[1] * z);
                out[i] = (g[shifted(dims, x, y, z, axis, false)] - g[i]) * inv_h;
            }
        }
    }
    out
}

/// Solves a 3×3 complex system by Cramer's rule.
fn solve3(a: &[[Complex64; 3]; 3], b: [Complex64; 3], tiny: f64) -> Option<[Complex64; 3]> {
    let det = |m: &[[Complex64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    let diag_scale = (0..3).map(|i| a[i][i].norm()).fold(0.0, f64::max).max(tiny);
    if d.norm() <= tiny * diag_scale * diag_scale {
        return None;
    }
    let mut x = [Complex64::new(0.0, 0.0); 3];
    for (c, xc) in x.iter_mut().enumerate() {
        let mut m = *a;
        for r in 0..3 {
            m[r][c] = b[r];
        }
        *xc = det(&m) / d;
    }
    Some(x)
}

/// Lower Cholesky factor of a Hermitian positive-definite 3×3 matrix.
fn cholesky3(a: &[[Complex64; 3]; 3], tiny: f64) -> Option<[[Complex64; 3]; 3]> {
    let mut l = [[Complex64::new(0.0, 0.0); 3]; 3];
    for j in 0..3 {
        let mut d = a[j][j].re;
        for k in 0..j {
            d -= l[j][k].norm_sqr();
        }
        if d <= tiny {
            return None;
        }
        let djj = d.sqrt();
        l[j][j] = Complex64::new(djj, 0.0);
        for i in j + 1..3 {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k].conj();
            }
            l[i][j] = s / djj;
        }
    }
    Some(l)
}

/// `Λf·Δx` for a field of `components` planar channels on `dims`.
pub fn operator_apply<T: Real>(f: &[T], dims: [usize; 3], components: usize, spec: EnergySpec, voxel: [f64; 3]) -> Result<Vec<T>> {
    Regularizer::new(spec, dims, voxel)?.apply(f, components)
}

/// `½ fᵀΛf·Δx`.
pub fn energy<T: Real>(f: &[T], dims: [usize; 3], components: usize, spec: EnergySpec, voxel: [f64; 3]) -> Result<f64> {
    Regularizer::new(spec, dims, voxel)?.energy(f, components)
}

/// Inverse of [`operator_apply`] under periodic boundaries.
pub fn greens_solve<T: Real>(g: &[T], dims: [usize; 3], components: usize, spec: EnergySpec, voxel: [f64; 3]) -> Result<Vec<T>> {
    Regularizer::new(spec, dims, voxel)?.solve(g, components)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_field(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn absolute_only_scales_by_voxel_volume() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_field(64, &mut rng);
        let spec = EnergySpec::new(3.0, 0.0, 0.0);
        let out = operator_apply(&f, [4, 4, 4], 1, spec, [1.0, 2.0, 0.5]).unwrap();
        for (o, v) in out.iter().zip(&f) {
            assert!((o - 3.0 * v).abs() < 1e-15);
        }
        let solved = greens_solve(&f, [4, 4, 4], 1, spec, [1.0, 2.0, 0.5]).unwrap();
        for (s, v) in solved.iter().zip(&f) {
            assert!((s - v / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn membrane_annihilates_constants() {
        let f = vec![2.5f64; 125];
        let out = operator_apply(&f, [5, 5, 5], 1, EnergySpec::new(0.0, 1.0, 0.0), [1.0; 3]).unwrap();
        assert!(out.iter().all(|&x| x.abs() < 1e-13));
    }

    #[test]
    fn impulse_energy() {
        let mut f = vec![0.0f64; 27];
        f[13] = 1.0;
        let e = energy(&f, [3, 3, 3], 1, EnergySpec::new(2.0, 0.0, 0.0), [1.0; 3]).unwrap();
        assert!((e - 1.0).abs() < 1e-15);
        assert_eq!(energy(&vec![0.0f64; 27], [3, 3, 3], 1, EnergySpec::new(2.0, 1.0, 1.0), [1.0; 3]).unwrap(), 0.0);
    }

    #[test]
    fn zero_rhs_solves_to_zero() {
        let g = vec![0.0f64; 3 * 64];
        let spec = EnergySpec::from_velocity_weights([1e-3, 0.1, 0.2, 0.3, 0.4]);
        let f = greens_solve(&g, [4, 4, 4], 3, spec, [1.0; 3]).unwrap();
        assert!(f.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn elasticity_on_scalar_is_rejected() {
        let spec = EnergySpec::from_velocity_weights([1.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(matches!(operator_apply(&[0.0f64; 8], [2, 2, 2], 1, spec, [1.0; 3]), Err(Error::ElasticityOnScalar)));
    }

    #[test]
    fn singular_operators_are_rejected() {
        let g = vec![1.0f64; 8];
        assert!(greens_solve(&g, [2, 2, 2], 1, EnergySpec::new(0.0, 0.0, 0.0), [1.0; 3]).is_err());
        // membrane only: a nonzero mean cannot be solved for
        assert!(greens_solve(&g, [2, 2, 2], 1, EnergySpec::new(0.0, 1.0, 0.0), [1.0; 3]).is_err());
        // but a zero-mean right-hand side can
        let mut zm = vec![0.0f64; 8];
        zm[0] = 1.0;
        zm[1] = -1.0;
        let f = greens_solve(&zm, [2, 2, 2], 1, EnergySpec::new(0.0, 1.0, 0.0), [1.0; 3]).unwrap();
        let back = operator_apply(&f, [2, 2, 2], 1, EnergySpec::new(0.0, 1.0, 0.0), [1.0; 3]).unwrap();
        for (a, b) in back.iter().zip(&zm) {
            assert!((a - b).abs() < 1e-12);
        }
        // divergence-only elasticity has a null space of divergence-free fields
        let spec = EnergySpec::from_velocity_weights([0.0, 0.0, 0.0, 0.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = random_field(3 * 64, &mut rng);
        assert!(greens_solve(&g, [4, 4, 4], 3, spec, [1.0; 3]).is_err());
    }

    #[test]
    fn commutes_with_cyclic_shifts() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dims = [6, 5, 4];
        let n = 120;
        let f = random_field(3 * n, &mut rng);
        let spec = EnergySpec::from_velocity_weights([1e-2, 0.3, 0.2, 0.1, 0.4]);
        let reg = Regularizer::new(spec, dims, [1.0, 1.5, 2.0]).unwrap();
        let shift = |g: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; g.len()];
            for c in 0..3 {
                for z in 0..4 {
                    for y in 0..5 {
                        for x in 0..6 {
                            let src = x + 6 * (y + 5 * z);
                            let dst = (x + 2) % 6 + 6 * ((y + 1) % 5 + 5 * ((z + 3) % 4));
                            out[c * n + dst] = g[c * n + src];
                        }
                    }
                }
            }
            out
        };
        let a = shift(&reg.apply(&f, 3).unwrap());
        let b = reg.apply(&shift(&f), 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_has_requested_covariance_on_average() {
        // E[fᵀ(ΛΔx)f] equals the number of penalised degrees of freedom.
        let spec = EnergySpec::from_velocity_weights([0.5, 0.2, 0.1, 0.1, 0.2]);
        let reg = Regularizer::new(spec, [4, 4, 4], [1.0; 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trials = 200;
        let mut acc = 0.0;
        for _ in 0..trials {
            let f: Vec<f64> = reg.sample(3, &mut rng).unwrap();
            acc += 2.0 * reg.energy(&f, 3).unwrap();
        }
        let mean = acc / trials as f64;
        assert!((mean - 192.0).abs() < 0.05 * 192.0, "mean quadratic form {mean}");
    }
}

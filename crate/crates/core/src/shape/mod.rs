//! Newton updates of the template logits, initial velocities and rigid
//! parameters from the categorical data term.
//!
//! Every subject is linked to the template through
//! `ψ(x) = φ(A x)` with `A = M_t⁻¹ R(q) M_n` mapping subject voxels to
//! template voxels and `φ` the shot deformation on the template lattice.
//! The data term is `Σ_i [lse(t∘ψ)_i − Σ_{k<K} z_ik (t∘ψ)_ik]`, the
//! negative expected categorical log-likelihood.

pub mod cg;
mod rigid_step;
mod template;
mod velocity;

pub use cg::{pcg, CgOutcome, CgSettings};
pub use rigid_step::{rigid_derivatives, update_rigid, RigidStep};
pub use template::{template_derivatives, update_template, TemplateSubject};
pub use velocity::{update_velocity, velocity_derivatives, VelocityStep};

use crate::appearance::Responsibilities;
use crate::diffeo::VelocityField;
use crate::error::{Error, Result};
use crate::field::softmax::log_sum_exp_implicit;
use crate::field::{softmax_implicit_into, subject_to_template, voxels, Boundary, Deformation, Lattice, OrientedVolume, ProbVolume, Stencil};
use crate::linalg::Affine;
use crate::rigid::{exp_rigid, RigidParams};
use crate::scalar::Real;

/// Denominator of the constant bound matrix `½(I − 11ᵀ/d)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundDenominator {
    /// `d = K`, the number of stored logits.
    Stored,
    /// `d = K + 1`, the number of classes. This is Böhning's bound for
    /// K free logits and always dominates the softmax Hessian.
    AllClasses,
}

/// Mixing of the softmax Hessian and its constant bound:
/// `w·[diag(π) − ππᵀ] + (1 − w)·½(I − 11ᵀ/d)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HessianMix {
    pub w: f64,
    pub denominator: BoundDenominator,
}

impl HessianMix {
    pub fn new(w: f64, denominator: BoundDenominator) -> Result<Self> {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::InvalidConfig(format!("Hessian weight must lie in [0, 1], got {w}")));
        }
        Ok(HessianMix { w, denominator })
    }

    fn d(&self, k: usize) -> f64 {
        match self.denominator {
            BoundDenominator::Stored => k as f64,
            BoundDenominator::AllClasses => (k + 1) as f64,
        }
    }
}

/// Number of entries of a packed symmetric K×K matrix.
#[inline]
pub fn packed_len(k: usize) -> usize {
    k * (k + 1) / 2
}

/// Position of `(a, b)` in the row-major packed upper triangle.
#[inline]
pub fn packed_index(k: usize, a: usize, b: usize) -> usize {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    a * k - a * a.saturating_sub(1) / 2 + (b - a)
}

/// Mixed Hessian of the negative categorical log-likelihood at one voxel.
/// `pi` holds all K+1 probabilities; `out` receives the packed K×K matrix.
#[inline]
pub fn voxel_hessian(pi: &[f64], mix: &HessianMix, out: &mut [f64]) {
    let k = pi.len() - 1;
    let d = mix.d(k);
    let w = mix.w;
    let mut j = 0;
    for a in 0..k {
        for b in a..k {
            let exact = if a == b { pi[a] - pi[a] * pi[b] } else { -pi[a] * pi[b] };
            let bound = 0.5 * ((if a == b { 1.0 } else { 0.0 }) - 1.0 / d);
            out[j] = w * exact + (1.0 - w) * bound;
            j += 1;
        }
    }
}

/// Per-voxel gradient `π − z̃` over the K stored classes and the packed
/// mixed Hessian, both planar.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitDerivatives<T> {
    pub k: usize,
    pub gradient: Vec<T>,
    pub hessian: Vec<T>,
}

impl<T: Real> LogitDerivatives<T> {
    /// Hessian entry `(a, b)` at voxel `i`.
    pub fn hessian_at(&self, i: usize, a: usize, b: usize) -> T {
        let n = self.gradient.len() / self.k;
        self.hessian[packed_index(self.k, a, b) * n + i]
    }
}

pub fn logit_grad_hess<T: Real>(z: &Responsibilities<T>, pi: &ProbVolume<T>, mix: &HessianMix) -> Result<LogitDerivatives<T>> {
    if z.dims() != pi.dims() || z.classes() != pi.classes() {
        return Err(Error::dims("responsibilities vs prior", (pi.dims(), pi.classes()), (z.dims(), z.classes())));
    }
    let k = pi.k();
    let kp = packed_len(k);
    let n = z.len();
    let mut gradient = vec![T::zero(); k * n];
    let mut hessian = vec![T::zero(); kp * n];
    let mut p = vec![T::zero(); k + 1];
    let mut pf = vec![0.0; k + 1];
    let mut zi = vec![T::zero(); k + 1];
    let mut h = vec![0.0; kp];
    for i in 0..n {
        if !z.mask()[i] {
            continue;
        }
        pi.at(i, &mut p);
        z.at(i, &mut zi);
        for c in 0..=k {
            pf[c] = p[c].f64();
        }
        for c in 0..k {
            gradient[c * n + i] = p[c] - zi[c];
        }
        voxel_hessian(&pf, mix, &mut h);
        for (j, v) in h.iter().enumerate() {
            hessian[j * n + i] = T::of(*v);
        }
    }
    Ok(LogitDerivatives { k, gradient, hessian })
}

/// Voxel-to-voxel affine from a subject lattice into the template lattice.
pub fn subject_affine<T: Real>(template: &Lattice<T>, subject: &Lattice<T>, q: &RigidParams<T>) -> Result<Affine<T>> {
    subject_to_template(template.vox2world(), &exp_rigid(q), subject.vox2world())
}

/// `ψ(x) = φ(A x)` sampled on the subject lattice.
pub fn warp_map<T: Real>(subject_dims: [usize; 3], affine: &Affine<T>, phi: &Deformation<T>) -> Deformation<T> {
    let planes = phi.displacement_planes();
    let map = voxels(subject_dims)
        .map(|x| phi.sample(&planes, affine.apply(x.map(T::of_usize))))
        .collect();
    Deformation::new(subject_dims, phi.target(), map).expect("sampled maps are finite for finite inputs")
}

/// Template logits resampled through `ψ`.
pub fn warped_logits<T: Real>(template: &OrientedVolume<T>, psi: &Deformation<T>) -> Result<Vec<T>> {
    if psi.target() != template.dims() {
        return Err(Error::dims("warp target", template.dims(), psi.target()));
    }
    let mut out = Vec::with_capacity(psi.len() * template.channels());
    for c in 0..template.channels() {
        out.extend(psi.map().iter().map(|&p| Stencil::new(p, template.dims(), Boundary::Clamp).sample(template.channel(c))));
    }
    Ok(out)
}

/// Tissue prior `softmax(t ∘ ψ)` on the subject lattice.
pub fn warped_prior<T: Real>(template: &OrientedVolume<T>, psi: &Deformation<T>) -> Result<ProbVolume<T>> {
    let logits = warped_logits(template, psi)?;
    Ok(ProbVolume::from_logit_planes(psi.dims(), template.channels(), &logits))
}

/// Negative expected categorical log-likelihood `Σ_i [lse − Σ_k z_ik t_ik]`
/// of the warped template over unmasked voxels.
pub fn categorical_objective<T: Real>(template: &OrientedVolume<T>, psi: &Deformation<T>, z: &Responsibilities<T>) -> Result<f64> {
    let k = template.channels();
    if z.dims() != psi.dims() || z.classes() != k + 1 {
        return Err(Error::dims("responsibilities vs warp", (psi.dims(), k + 1), (z.dims(), z.classes())));
    }
    let logits = warped_logits(template, psi)?;
    let n = psi.len();
    let mut t = vec![0.0f64; k];
    let mut zi = vec![T::zero(); k + 1];
    let mut total = 0.0;
    for i in 0..n {
        if !z.mask()[i] {
            continue;
        }
        for c in 0..k {
            t[c] = logits[c * n + i].f64();
        }
        z.at(i, &mut zi);
        total += log_sum_exp_implicit(&t) - (0..k).map(|c| zi[c].f64() * t[c]).sum::<f64>();
    }
    Ok(total)
}

/// Samples the K template channels (as `f64` planes) at `s`, with their
/// spatial gradients when `grad` is given.
#[inline]
pub(crate) fn sample_template(planes: &[f64], dims: [usize; 3], k: usize, s: [f64; 3], values: &mut [f64], grad: Option<&mut [[f64; 3]]>) {
    let n: usize = dims.iter().product();
    let st = Stencil::new(s, dims, Boundary::Clamp);
    for c in 0..k {
        values[c] = st.sample(&planes[c * n..(c + 1) * n]);
    }
    if let Some(g) = grad {
        for c in 0..k {
            g[c] = st.gradient(&planes[c * n..(c + 1) * n]);
        }
        // On a grid plane the interpolant has a kink and the stencil returns
        // the one-sided slope; use the mean of both sides there.
        for d in 0..3 {
            if s[d].fract() == 0.0 && s[d] > 0.0 && s[d] < (dims[d] - 1) as f64 {
                let (mut lo, mut hi) = (s, s);
                lo[d] -= 1.0;
                hi[d] += 1.0;
                let (sl, sh) = (Stencil::new(lo, dims, Boundary::Clamp), Stencil::new(hi, dims, Boundary::Clamp));
                for c in 0..k {
                    let plane = &planes[c * n..(c + 1) * n];
                    g[c][d] = 0.5 * (sh.sample(plane) - sl.sample(plane));
                }
            }
        }
    }
}

/// Softmax and residual `π − z̃` at one voxel.
#[inline]
pub(crate) fn residual<T: Real>(t: &[f64], z: &Responsibilities<T>, i: usize, pi: &mut [f64], zi: &mut [T], r: &mut [f64]) {
    softmax_implicit_into(t, pi);
    z.at(i, zi);
    for c in 0..t.len() {
        r[c] = pi[c] - zi[c].f64();
    }
}

/// Subtracts the population mean from every velocity and rigid parameter
/// vector. The last subject receives minus the sum of the others, so the
/// left-to-right sums are exactly zero.
pub fn enforce_zero_mean<T: Real>(velocities: &mut [VelocityField<T>], rigids: &mut [RigidParams<T>]) -> Result<()> {
    if velocities.is_empty() || rigids.len() != velocities.len() {
        return Err(Error::InvalidConfig(format!(
            "zero-mean constraint needs matching non-empty populations ({} velocities, {} rigid)",
            velocities.len(),
            rigids.len()
        )));
    }
    let dims = velocities[0].dims();
    if let Some(v) = velocities.iter().find(|v| v.dims() != dims) {
        return Err(Error::dims("velocity lattice", dims, v.dims()));
    }
    let count = velocities.len();
    let len = velocities[0].data().len();
    for j in 0..len {
        let mean = velocities.iter().map(|v| v.data()[j].f64()).sum::<f64>() / count as f64;
        let m = T::of(mean);
        let mut acc = T::zero();
        for v in velocities[..count - 1].iter_mut() {
            let x = v.data()[j] - m;
            v.data_mut()[j] = x;
            acc = acc + x;
        }
        velocities[count - 1].data_mut()[j] = -acc;
    }
    for d in 0..6 {
        let mean = rigids.iter().map(|q| q.q[d].f64()).sum::<f64>() / count as f64;
        let m = T::of(mean);
        let mut acc = T::zero();
        for q in rigids[..count - 1].iter_mut() {
            q.q[d] = q.q[d] - m;
            acc = acc + q.q[d];
        }
        rigids[count - 1].q[d] = -acc;
    }
    Ok(())
}

#[cfg(test)]
mod tests;

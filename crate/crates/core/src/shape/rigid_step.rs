use super::{packed_index, packed_len, residual, sample_template, voxel_hessian, HessianMix};
use crate::appearance::Responsibilities;
use crate::error::{Error, Result};
use crate::field::{voxels, Deformation, Lattice, OrientedVolume};
use crate::linalg::{Affine, DMat};
use crate::rigid::{dexp_rigid, exp_rigid, RigidParams};
use crate::scalar::Real;

/// Result of one rigid update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidStep<T> {
    pub q: RigidParams<T>,
    /// The Gauss-Newton matrix needed Levenberg damping.
    pub damped: bool,
}

/// Gradient and Gauss-Newton Hessian of the data term with respect to the
/// six rigid parameters.
#[allow(clippy::too_many_arguments)]
pub fn rigid_derivatives<T: Real>(
    template: &OrientedVolume<T>,
    z: &Responsibilities<T>,
    template_lattice: &Lattice<T>,
    subject_lattice: &Lattice<T>,
    q: &RigidParams<T>,
    phi: &Deformation<T>,
    mix: &HessianMix,
) -> Result<([f64; 6], [[f64; 6]; 6])> {
    let dims = template.dims();
    let k = template.channels();
    if phi.dims() != dims || phi.target() != dims {
        return Err(Error::dims("rigid deformation", dims, phi.dims()));
    }
    if z.dims() != subject_lattice.dims() || z.classes() != k + 1 {
        return Err(Error::dims("responsibilities vs subject", (subject_lattice.dims(), k + 1), (z.dims(), z.classes())));
    }
    let mt = template_lattice.cast::<f64>();
    let mn = subject_lattice.cast::<f64>();
    let mt_inv = mt.world2vox();
    let qf = RigidParams::new(q.q.map(|x| x.f64()));
    let a = mt_inv.mul(&exp_rigid(&qf)).mul(mn.vox2world());
    let da: [Affine<f64>; 6] = dexp_rigid(&qf).map(|d| mt_inv.mul(&d).mul(mn.vox2world()));
    let tf: Vec<f64> = template.data().iter().map(|x| x.f64()).collect();
    let phi64 = Deformation::new(dims, dims, phi.map().iter().map(|p| p.map(|x| x.f64())).collect())?;
    let planes = phi64.displacement_planes();
    let (mut tw, mut pi, mut r, mut hv) = (vec![0.0; k], vec![0.0; k + 1], vec![0.0; k], vec![0.0; packed_len(k)]);
    let mut jt = vec![[0.0; 3]; k];
    let mut zi = vec![T::zero(); k + 1];
    let mut gq = vec![[0.0; 6]; k];
    let mut g = [0.0; 6];
    let mut h = [[0.0; 6]; 6];
    for (i, x) in voxels(z.dims()).enumerate() {
        if !z.mask()[i] {
            continue;
        }
        let xf = x.map(|c| c as f64);
        let p = a.apply(xf);
        let (s, dphi) = phi64.sample_with_jacobian(&planes, p);
        sample_template(&tf, dims, k, s, &mut tw, Some(&mut jt));
        residual(&tw, z, i, &mut pi, &mut zi, &mut r);
        voxel_hessian(&pi, mix, &mut hv);
        for j in 0..6 {
            let dp = da[j].apply(xf);
            let ds = [0, 1, 2].map(|d| dphi[d][0] * dp[0] + dphi[d][1] * dp[1] + dphi[d][2] * dp[2]);
            for c in 0..k {
                gq[c][j] = jt[c][0] * ds[0] + jt[c][1] * ds[1] + jt[c][2] * ds[2];
            }
        }
        for j in 0..6 {
            g[j] += (0..k).map(|c| gq[c][j] * r[c]).sum::<f64>();
        }
        for ka in 0..k {
            for kb in 0..k {
                let hab = hv[packed_index(k, ka, kb)];
                for j in 0..6 {
                    let left = gq[ka][j] * hab;
                    for l in j..6 {
                        h[j][l] += left * gq[kb][l];
                    }
                }
            }
        }
    }
    for j in 0..6 {
        for l in 0..j {
            h[j][l] = h[l][j];
        }
    }
    Ok((g, h))
}

/// One Gauss-Newton step `Δq = −H⁻¹ g` on the rigid parameters.
#[allow(clippy::too_many_arguments)]
pub fn update_rigid<T: Real>(
    template: &OrientedVolume<T>,
    z: &Responsibilities<T>,
    template_lattice: &Lattice<T>,
    subject_lattice: &Lattice<T>,
    q: &RigidParams<T>,
    phi: &Deformation<T>,
    mix: &HessianMix,
) -> Result<RigidStep<T>> {
    let (g, h) = rigid_derivatives(template, z, template_lattice, subject_lattice, q, phi, mix)?;
    let mat = DMat::from_fn(6, 6, |a, b| h[a][b]);
    let (chol, damped) = match mat.cholesky() {
        Some(c) => (c, false),
        None => {
            let scale = (0..6).map(|j| h[j][j].abs()).fold(0.0, f64::max).max(1.0);
            log::warn!("rigid Gauss-Newton matrix not positive definite; adding Levenberg damping");
            let damped = mat.add(&DMat::identity(6).scale(1e-6 * scale));
            let c = damped.cholesky().ok_or_else(|| Error::NotPositiveDefinite("rigid Gauss-Newton matrix".into()))?;
            (c, true)
        }
    };
    let step = chol.solve(&g);
    let next = RigidParams::new(std::array::from_fn(|j| T::of(q.q[j].f64() - step[j])));
    if !next.is_finite() {
        return Err(Error::NonFinite("rigid update".into()));
    }
    Ok(RigidStep { q: next, damped })
}

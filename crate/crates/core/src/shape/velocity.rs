use super::cg::{pcg, CgOutcome, CgSettings};
use super::{packed_index, packed_len, residual, sample_template, voxel_hessian, HessianMix};
use crate::appearance::Responsibilities;
use crate::diffeo::{shoot, VelocityField, VelocityMetric};
use crate::error::{Error, Result};
use crate::field::{voxels, Boundary, Deformation, OrientedVolume, Stencil};
use crate::linalg::Affine;
use crate::scalar::Real;

/// Result of one velocity update.
#[derive(Clone, Debug)]
pub struct VelocityStep<T> {
    pub v: VelocityField<T>,
    pub phi: Deformation<T>,
    pub phi_inv: Deformation<T>,
    pub cg: CgOutcome,
    /// Times the step was halved because shooting failed.
    pub halvings: usize,
}

/// Data-term gradient (3 planes) and packed 3×3 Gauss-Newton Hessian
/// (6 planes: xx, yy, zz, xy, xz, yz) with respect to a displacement of
/// `φ`, pushed onto the template lattice.
pub fn velocity_derivatives<T: Real>(
    template: &OrientedVolume<T>,
    z: &Responsibilities<T>,
    affine: &Affine<T>,
    phi: &Deformation<T>,
    mix: &HessianMix,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let dims = template.dims();
    let k = template.channels();
    if phi.dims() != dims || phi.target() != dims {
        return Err(Error::dims("velocity deformation", dims, phi.dims()));
    }
    if z.classes() != k + 1 {
        return Err(Error::dims("responsibility classes", k + 1, z.classes()));
    }
    let nt = template.voxel_count();
    let tf: Vec<f64> = template.data().iter().map(|x| x.f64()).collect();
    let planes = phi.displacement_planes();
    let planes: [Vec<f64>; 3] = planes.map(|p| p.iter().map(|x| x.f64()).collect());
    let a: Affine<f64> = affine.cast();
    let mut g = vec![0.0; 3 * nt];
    let mut h = vec![0.0; 6 * nt];
    let (mut tw, mut pi, mut r, mut hv) = (vec![0.0; k], vec![0.0; k + 1], vec![0.0; k], vec![0.0; packed_len(k)]);
    let mut jt = vec![[0.0; 3]; k];
    let mut zi = vec![T::zero(); k + 1];
    for (i, x) in voxels(z.dims()).enumerate() {
        if !z.mask()[i] {
            continue;
        }
        let p = a.apply(x.map(|c| c as f64));
        let stp = Stencil::new(p, dims, Boundary::Clamp);
        let s = [0, 1, 2].map(|d| p[d] + stp.sample(&planes[d]));
        sample_template(&tf, dims, k, s, &mut tw, Some(&mut jt));
        residual(&tw, z, i, &mut pi, &mut zi, &mut r);
        voxel_hessian(&pi, mix, &mut hv);
        let mut gv = [0.0; 3];
        for c in 0..k {
            for d in 0..3 {
                gv[d] += jt[c][d] * r[c];
            }
        }
        // J_tᵀ H J_t
        let mut m = [[0.0; 3]; 3];
        for a in 0..k {
            for b in 0..k {
                let hab = hv[packed_index(k, a, b)];
                if hab == 0.0 {
                    continue;
                }
                for d in 0..3 {
                    for e in d..3 {
                        m[d][e] += jt[a][d] * hab * jt[b][e];
                    }
                }
            }
        }
        let hp = [m[0][0], m[1][1], m[2][2], m[0][1], m[0][2], m[1][2]];
        for c in 0..8 {
            let w = stp.w[c];
            if w == 0.0 {
                continue;
            }
            let idx = stp.idx[c];
            for d in 0..3 {
                g[d * nt + idx] += w * gv[d];
            }
            for j in 0..6 {
                h[j * nt + idx] += w * hp[j];
            }
        }
    }
    Ok((g, h))
}

/// Greedy Gauss-Newton step on the initial velocity: the data term is
/// linearised as if `φ = id + v` and the step is solved against the full
/// prior `Λ_v`. The new velocity is shot and the step halved while shooting
/// fails.
#[allow(clippy::too_many_arguments)]
pub fn update_velocity<T: Real>(
    template: &OrientedVolume<T>,
    z: &Responsibilities<T>,
    affine: &Affine<T>,
    v: &VelocityField<T>,
    phi: &Deformation<T>,
    metric: &VelocityMetric,
    steps: usize,
    mix: &HessianMix,
    cg: &CgSettings,
) -> Result<VelocityStep<T>> {
    let dims = template.dims();
    if v.dims() != dims || metric.dims() != dims {
        return Err(Error::dims("velocity lattice", dims, v.dims()));
    }
    let nt = template.voxel_count();
    let (mut g, h) = velocity_derivatives(template, z, affine, phi, mix)?;
    let vf: Vec<f64> = v.data().iter().map(|x| x.f64()).collect();
    let prior = metric.momentum(&vf)?;
    g.iter_mut().zip(&prior).for_each(|(a, b)| *a += b);
    let rhs: Vec<f64> = g.iter().map(|x| -x).collect();
    let shift = (0..3 * nt).map(|j| h[j]).sum::<f64>() / (3 * nt) as f64;
    const PAIRS: [(usize, usize, usize); 9] = [(0, 0, 0), (1, 1, 1), (2, 2, 2), (0, 1, 3), (1, 0, 3), (0, 2, 4), (2, 0, 4), (1, 2, 5), (2, 1, 5)];
    let apply = |x: &[f64]| -> Result<Vec<f64>> {
        let mut out = metric.momentum(x)?;
        for &(d, e, j) in &PAIRS {
            let hp = &h[j * nt..(j + 1) * nt];
            let xe = &x[e * nt..(e + 1) * nt];
            let od = &mut out[d * nt..(d + 1) * nt];
            for i in 0..nt {
                od[i] += hp[i] * xe[i];
            }
        }
        Ok(out)
    };
    let precondition = |r: &[f64]| metric.solve_shifted(r, shift);
    let (delta, outcome) = pcg(apply, precondition, &rhs, cg)?;
    let mut scale = 1.0;
    let mut halvings = 0;
    loop {
        let data: Vec<T> = vf.iter().zip(&delta).map(|(a, d)| T::of(a + scale * d)).collect();
        let nv = VelocityField::new(dims, data)?;
        match shoot(&nv, metric, steps) {
            Ok((phi, phi_inv)) => return Ok(VelocityStep { v: nv, phi, phi_inv, cg: outcome, halvings }),
            Err(e @ Error::ShootingBlowUp { .. }) => {
                if halvings >= 8 {
                    return Err(e);
                }
                log::warn!("shooting failed ({e}); halving the velocity step");
                scale *= 0.5;
                halvings += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

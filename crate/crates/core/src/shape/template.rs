use rayon::prelude::*;

use super::cg::{pcg, CgOutcome, CgSettings};
use super::{packed_index, packed_len, residual, sample_template, voxel_hessian, HessianMix};
use crate::appearance::Responsibilities;
use crate::error::{Error, Result};
use crate::field::{Boundary, Deformation, OrientedVolume, Stencil};
use crate::regularizer::Regularizer;
use crate::scalar::Real;

/// One subject's contribution to the template update.
#[derive(Clone, Copy, Debug)]
pub struct TemplateSubject<'a, T> {
    pub psi: &'a Deformation<T>,
    pub z: &'a Responsibilities<T>,
}

fn planes_f64<T: Real>(t: &OrientedVolume<T>) -> Vec<f64> {
    t.data().iter().map(|x| x.f64()).collect()
}

fn accumulate<T: Real>(tf: &[f64], dims: [usize; 3], k: usize, s: &TemplateSubject<'_, T>, mix: &HessianMix) -> Result<(Vec<f64>, Vec<f64>)> {
    if s.psi.target() != dims {
        return Err(Error::dims("warp target", dims, s.psi.target()));
    }
    if s.z.dims() != s.psi.dims() || s.z.classes() != k + 1 {
        return Err(Error::dims("responsibilities vs warp", (s.psi.dims(), k + 1), (s.z.dims(), s.z.classes())));
    }
    let nt: usize = dims.iter().product();
    let kp = packed_len(k);
    let mut g = vec![0.0; k * nt];
    let mut h = vec![0.0; kp * nt];
    let (mut tw, mut pi, mut r, mut hv) = (vec![0.0; k], vec![0.0; k + 1], vec![0.0; k], vec![0.0; kp]);
    let mut zi = vec![T::zero(); k + 1];
    for (i, p) in s.psi.map().iter().enumerate() {
        if !s.z.mask()[i] {
            continue;
        }
        let pf = p.map(|x| x.f64());
        sample_template(tf, dims, k, pf, &mut tw, None);
        residual(&tw, s.z, i, &mut pi, &mut zi, &mut r);
        voxel_hessian(&pi, mix, &mut hv);
        // pushing the per-voxel Hessian with the interpolation weights
        // majorises the curvature of the interpolated logits
        let st = Stencil::new(pf, dims, Boundary::Clamp);
        for c in 0..8 {
            let w = st.w[c];
            if w == 0.0 {
                continue;
            }
            let idx = st.idx[c];
            for a in 0..k {
                g[a * nt + idx] += w * r[a];
            }
            for (j, v) in hv.iter().enumerate() {
                h[j * nt + idx] += w * v;
            }
        }
    }
    Ok((g, h))
}

/// Data-term gradient and packed Hessian on the template lattice, summed
/// over subjects in order.
pub fn template_derivatives<T: Real>(
    template: &OrientedVolume<T>,
    subjects: &[TemplateSubject<'_, T>],
    mix: &HessianMix,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let dims = template.dims();
    let k = template.channels();
    let tf = planes_f64(template);
    let parts: Vec<(Vec<f64>, Vec<f64>)> =
        subjects.par_iter().map(|s| accumulate(&tf, dims, k, s, mix)).collect::<Result<_>>()?;
    let nt = template.voxel_count();
    let mut g = vec![0.0; k * nt];
    let mut h = vec![0.0; packed_len(k) * nt];
    for (pg, ph) in parts {
        g.iter_mut().zip(&pg).for_each(|(a, b)| *a += b);
        h.iter_mut().zip(&ph).for_each(|(a, b)| *a += b);
    }
    Ok((g, h))
}

/// One Newton step on the template logits: solves
/// `(H + Λ_t) δ = −(g + Λ_t t)` by preconditioned CG and returns `t + δ`.
pub fn update_template<T: Real>(
    template: &OrientedVolume<T>,
    subjects: &[TemplateSubject<'_, T>],
    reg: &Regularizer,
    mix: &HessianMix,
    cg: &CgSettings,
) -> Result<(OrientedVolume<T>, CgOutcome)> {
    let dims = template.dims();
    if reg.dims() != dims {
        return Err(Error::dims("template regulariser", dims, reg.dims()));
    }
    let k = template.channels();
    let nt = template.voxel_count();
    let (mut g, h) = template_derivatives(template, subjects, mix)?;
    let tf = planes_f64(template);
    let apply_prior = |x: &[f64]| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(x.len());
        for c in 0..k {
            out.extend(reg.apply(&x[c * nt..(c + 1) * nt], 1)?);
        }
        Ok(out)
    };
    let prior = apply_prior(&tf)?;
    g.iter_mut().zip(&prior).for_each(|(a, b)| *a += b);
    let rhs: Vec<f64> = g.iter().map(|x| -x).collect();
    let shifts: Vec<f64> = (0..k).map(|a| h[packed_index(k, a, a) * nt..(packed_index(k, a, a) + 1) * nt].iter().sum::<f64>() / nt as f64).collect();
    let apply = |x: &[f64]| -> Result<Vec<f64>> {
        let mut out = apply_prior(x)?;
        for a in 0..k {
            for b in 0..k {
                let hp = &h[packed_index(k, a, b) * nt..];
                let xb = &x[b * nt..(b + 1) * nt];
                let oa = &mut out[a * nt..(a + 1) * nt];
                for i in 0..nt {
                    oa[i] += hp[i] * xb[i];
                }
            }
        }
        Ok(out)
    };
    let precondition = |r: &[f64]| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(r.len());
        for c in 0..k {
            out.extend(reg.solve_shifted(&r[c * nt..(c + 1) * nt], 1, shifts[c])?);
        }
        Ok(out)
    };
    let (delta, outcome) = pcg(apply, precondition, &rhs, cg)?;
    let data: Vec<T> = tf.iter().zip(&delta).map(|(a, d)| T::of(a + d)).collect();
    Ok((OrientedVolume::new(template.lattice().clone(), k, data)?, outcome))
}

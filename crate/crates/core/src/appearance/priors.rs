//! Population-level Gauss-Wishart hyper-parameters and the deterministic
//! starting point of the intensity model.

use std::f64::consts::{LN_2, PI};

use statrs::function::gamma::ln_gamma;

use super::gw::{expected_log_prior, GaussWishart, GwClass};
use super::Responsibilities;
use crate::error::{Error, Result};
use crate::field::OrientedVolume;
use crate::linalg::DMat;
use crate::scalar::Real;

/// Per-channel mean and covariance over unmasked voxels.
fn data_moments<T: Real>(f: &OrientedVolume<T>) -> Result<(Vec<f64>, DMat<f64>)> {
    let mask = f.mask();
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let c = f.channels();
    let mean: Vec<f64> = (0..c)
        .map(|ch| f.channel(ch).iter().zip(&mask).filter(|(_, &m)| m).map(|(x, _)| x.f64()).sum::<f64>() / count as f64)
        .collect();
    let mut cov = DMat::zeros(c, c);
    for i in (0..mask.len()).filter(|&i| mask[i]) {
        for a in 0..c {
            for b in 0..c {
                cov[(a, b)] += (f.channel(a)[i].f64() - mean[a]) * (f.channel(b)[i].f64() - mean[b]);
            }
        }
    }
    let mut cov = cov.scale(1.0 / count as f64);
    let ridge = 1e-6 * (cov.trace() / c as f64) + 1e-12;
    (0..c).for_each(|a| cov[(a, a)] += ridge);
    Ok((mean, cov))
}

/// Weak prior shared by every class: the data mean, `β₀ = 0.01`, `ν₀ = C`
/// and `W₀ = Σ⁻¹/ν₀` with `Σ` the data covariance.
pub fn uninformative_prior<T: Real>(f: &OrientedVolume<T>, classes: usize) -> Result<GaussWishart> {
    let (mean, cov) = data_moments(f)?;
    let nu = f.channels() as f64;
    let w = cov.cholesky().ok_or_else(|| Error::NotPositiveDefinite("data covariance".into()))?.inverse().scale(1.0 / nu);
    GaussWishart::new(vec![GwClass::new(mean, 0.01, w, nu)?; classes])
}

/// Hard assignment by intensity quantiles of the channel mean: the darkest
/// bin goes to the implicit background class (last), the remaining bins to
/// classes 0, 1, … in increasing brightness. Ties are broken by voxel index.
pub fn initial_responsibilities<T: Real>(f: &OrientedVolume<T>, classes: usize) -> Result<Responsibilities<T>> {
    let mask = f.mask();
    let n = f.voxel_count();
    let c = f.channels();
    let mut order: Vec<(f64, usize)> = (0..n)
        .filter(|&i| mask[i])
        .map(|i| ((0..c).map(|ch| f.channel(ch)[i].f64()).sum::<f64>() / c as f64, i))
        .collect();
    if order.is_empty() {
        return Err(Error::EmptyMask);
    }
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut data = vec![T::zero(); n * classes];
    let m = order.len();
    for (rank, &(_, i)) in order.iter().enumerate() {
        let bin = rank * classes / m;
        let k = if bin == 0 { classes - 1 } else { bin - 1 };
        data[k * n + i] = T::one();
    }
    Responsibilities::new(f.dims(), classes, data, mask)
}

/// `Σ_n Σ_k E_{q_nk}[ln p(μ, Λ | prior_k)]`.
pub fn shared_prior_objective(posteriors: &[GaussWishart], prior: &GaussWishart) -> Result<f64> {
    let mut total = 0.0;
    for post in posteriors {
        if post.len() != prior.len() {
            return Err(Error::dims("Gauss-Wishart classes", prior.len(), post.len()));
        }
        for (q, p) in post.classes.iter().zip(&prior.classes) {
            total += expected_log_prior(q, p)?;
        }
    }
    Ok(total)
}

/// Empirical-Bayes update of the shared hyper-parameters: maximises
/// [`shared_prior_objective`] class by class. The mean, mean-confidence and
/// scale matrix have closed forms; `ν₀` is found by a bracketed 1-D search.
/// A class whose candidate does not improve the objective keeps its
/// current hyper-parameters.
pub fn update_shared_priors(posteriors: &[GaussWishart], current: &GaussWishart) -> Result<GaussWishart> {
    if posteriors.is_empty() {
        return Err(Error::InvalidConfig("shared priors need at least one subject".into()));
    }
    let mut classes = Vec::with_capacity(current.len());
    for k in 0..current.len() {
        let qs: Vec<&GwClass> = posteriors.iter().map(|p| &p.classes[k]).collect();
        let candidate = optimal_class(&qs)?;
        let score = |p: &GwClass| -> Result<f64> { qs.iter().map(|q| expected_log_prior(q, p)).sum() };
        let old = &current.classes[k];
        if score(&candidate)? >= score(old)? {
            classes.push(candidate);
        } else {
            classes.push(old.clone());
        }
    }
    GaussWishart::new(classes)
}

fn optimal_class(qs: &[&GwClass]) -> Result<GwClass> {
    let c = qs[0].channels();
    let cf = c as f64;
    let nf = qs.len() as f64;
    let mut s = DMat::zeros(c, c);
    let mut sm = vec![0.0; c];
    let mut elog = 0.0;
    for q in qs {
        let p = q.expected_precision();
        s = s.add(&p);
        for (a, v) in p.mul_vec(&q.m).into_iter().enumerate() {
            sm[a] += v;
        }
        elog += q.expected_log_det()?;
    }
    let s = s.symmetrize();
    let chol = s.cholesky().ok_or_else(|| Error::NotPositiveDefinite("pooled expected precision".into()))?;
    let m0 = chol.solve(&sm);
    let spread: f64 = qs
        .iter()
        .map(|q| {
            let d: Vec<f64> = q.m.iter().zip(&m0).map(|(a, b)| a - b).collect();
            cf / q.beta + q.nu * q.w.bilinear(&d, &d)
        })
        .sum();
    let beta0 = nf * cf / spread;
    let log_det_s = chol.log_det();
    let objective = |nu0: f64| -> f64 {
        let lg: f64 = (1..=c).map(|i| ln_gamma((nu0 + 1.0 - i as f64) / 2.0)).sum();
        nf * (-0.5 * nu0 * (log_det_s - cf * (nf * nu0).ln()) - 0.5 * nu0 * cf * LN_2 - 0.25 * cf * (cf - 1.0) * PI.ln() - lg)
            + 0.5 * nu0 * elog
            - 0.5 * nf * nu0 * cf
    };
    let nu0 = maximize_nu(objective, cf - 1.0);
    let w0 = s.scale(1.0 / (nf * nu0));
    GwClass::new(m0, beta0, w0, nu0)
}

/// Maximises a unimodal function of `ν ∈ (lower, lower + 1e6]` over
/// `u = ln(ν − lower)`: a coarse scan then golden-section refinement.
fn maximize_nu(f: impl Fn(f64) -> f64, lower: f64) -> f64 {
    let to_nu = |u: f64| lower + u.exp();
    let (lo, hi) = (1e-6f64.ln(), 1e6f64.ln());
    let steps = 240;
    let grid: Vec<f64> = (0..=steps).map(|j| lo + (hi - lo) * j as f64 / steps as f64).collect();
    let best = (0..=steps).max_by(|&a, &b| f(to_nu(grid[a])).total_cmp(&f(to_nu(grid[b])))).unwrap();
    let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(steps)]);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (f(to_nu(x1)), f(to_nu(x2)));
    for _ in 0..200 {
        if (b - a).abs() < 1e-13 {
            break;
        }
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(to_nu(x1));
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(to_nu(x2));
        }
    }
    to_nu(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Lattice;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_class(rng: &mut ChaCha8Rng, c: usize) -> GwClass {
        let a = DMat::from_rows(c, c, (0..c * c).map(|_| rng.random_range(-1.0..1.0)).collect());
        let w = a.mul(&a.transpose()).add(&DMat::identity(c).scale(0.5)).scale(0.1);
        GwClass::new((0..c).map(|_| rng.random_range(-5.0..5.0)).collect(), rng.random_range(0.5..20.0), w, c as f64 + rng.random_range(0.5..30.0))
            .unwrap()
    }

    #[test]
    fn identical_posteriors_are_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for c in 1..=3 {
            let q = random_class(&mut rng, c);
            let post = GaussWishart::new(vec![q.clone()]).unwrap();
            let start = GaussWishart::new(vec![random_class(&mut rng, c)]).unwrap();
            let out = update_shared_priors(&[post.clone(), post.clone(), post], &start).unwrap();
            let p = &out.classes[0];
            assert!((p.nu - q.nu).abs() < 1e-6 * q.nu, "nu {} vs {}", p.nu, q.nu);
            assert!((p.beta - q.beta).abs() < 1e-9 * q.beta);
            for a in 0..c {
                assert!((p.m[a] - q.m[a]).abs() < 1e-9);
                for b in 0..c {
                    assert!((p.w[(a, b)] - q.w[(a, b)]).abs() < 1e-6 * q.w.norm_inf());
                }
            }
        }
    }

    #[test]
    fn objective_never_decreases_and_nu_stays_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for c in 1..=3 {
            let posts: Vec<GaussWishart> =
                (0..4).map(|_| GaussWishart::new(vec![random_class(&mut rng, c), random_class(&mut rng, c)]).unwrap()).collect();
            let start = GaussWishart::new(vec![random_class(&mut rng, c), random_class(&mut rng, c)]).unwrap();
            let before = shared_prior_objective(&posts, &start).unwrap();
            let out = update_shared_priors(&posts, &start).unwrap();
            let after = shared_prior_objective(&posts, &out).unwrap();
            assert!(after >= before, "{before} -> {after}");
            assert!(out.classes.iter().all(|k| k.nu > c as f64 - 1.0));
        }
    }

    #[test]
    fn uninformative_prior_matches_data() {
        let f = OrientedVolume::new(Lattice::unit([4, 1, 1]), 1, vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let p = uninformative_prior(&f, 3).unwrap();
        assert_eq!(p.len(), 3);
        let k = &p.classes[0];
        assert!((k.m[0] - 2.5).abs() < 1e-15);
        assert_eq!((k.beta, k.nu), (0.01, 1.0));
        assert!((k.w[(0, 0)] - 1.0 / 1.25).abs() < 1e-5);
    }

    #[test]
    fn quantile_bins_put_darkest_in_background() {
        let f = OrientedVolume::new(Lattice::unit([6, 1, 1]), 1, vec![5.0f64, 0.0, 3.0, 1.0, 4.0, 2.0]).unwrap();
        let z = initial_responsibilities(&f, 3).unwrap();
        // sorted: 0,1 → background (2); 2,3 → class 0; 4,5 → class 1
        assert_eq!(z.channel(2), &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(z.channel(0), &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        assert_eq!(z.channel(1), &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }
}

//! Per-subject intensity model: a Gaussian mixture with one class per
//! template class (background last), a multiplicative bias field and
//! Gauss-Wishart posteriors over the class parameters.

pub mod bias;
pub mod gw;
pub mod priors;

pub use bias::BiasField;
pub use gw::{ClassTerms, GaussWishart, GwClass};
pub use priors::{initial_responsibilities, uninformative_prior, update_shared_priors, shared_prior_objective};

use crate::error::{Error, Result};
use crate::field::{OrientedVolume, ProbVolume};
use crate::linalg::DMat;
use crate::scalar::Real;

/// Bias-corrected intensities `y = b ⊙ f`, voxel-major (`y[i·C + c]`),
/// with the log-field and the mask of voxels whose channels are all finite.
#[derive(Clone, Debug)]
pub struct Corrected {
    pub channels: usize,
    pub y: Vec<f64>,
    /// Planar log-field, one plane per channel.
    pub log_b: Vec<f64>,
    pub mask: Vec<bool>,
}

impl Corrected {
    pub fn new<T: Real>(f: &OrientedVolume<T>, bias: &BiasField) -> Result<Self> {
        if bias.dims() != f.dims() {
            return Err(Error::dims("bias field lattice", f.dims(), bias.dims()));
        }
        if bias.channels() != f.channels() {
            return Err(Error::dims("bias field channels", f.channels(), bias.channels()));
        }
        let n = f.voxel_count();
        let c = f.channels();
        let log_b: Vec<f64> = if bias.is_empty() {
            vec![0.0; n * c]
        } else {
            (0..c).flat_map(|ch| bias.log_field(ch)).collect()
        };
        let mask = f.mask();
        let mut y = vec![0.0; n * c];
        for i in 0..n {
            if mask[i] {
                for ch in 0..c {
                    y[i * c + ch] = log_b[ch * n + i].exp() * f.channel(ch)[i].f64();
                }
            }
        }
        Ok(Corrected { channels: c, y, log_b, mask })
    }

    #[inline]
    pub fn at(&self, i: usize) -> &[f64] {
        &self.y[i * self.channels..(i + 1) * self.channels]
    }

    /// `Σ_c ln b_ic`.
    #[inline]
    pub fn log_jacobian(&self, i: usize) -> f64 {
        let n = self.mask.len();
        (0..self.channels).map(|c| self.log_b[c * n + i]).sum()
    }
}

/// Posterior class probabilities per voxel over all K+1 classes. Masked
/// voxels carry zero responsibility in every class.
#[derive(Clone, Debug, PartialEq)]
pub struct Responsibilities<T> {
    dims: [usize; 3],
    classes: usize,
    data: Vec<T>,
    mask: Vec<bool>,
}

impl<T: Real> Responsibilities<T> {
    /// Planar data over `classes` channels; each unmasked voxel must sum
    /// to one within 1e-6.
    pub fn new(dims: [usize; 3], classes: usize, data: Vec<T>, mask: Vec<bool>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if data.len() != n * classes {
            return Err(Error::dims("responsibilities", n * classes, data.len()));
        }
        if mask.len() != n {
            return Err(Error::dims("responsibility mask", n, mask.len()));
        }
        for i in 0..n {
            let s: f64 = (0..classes).map(|k| data[k * n + i].f64()).sum();
            let ok = if mask[i] { (s - 1.0).abs() <= 1e-6 } else { s == 0.0 };
            if !ok || (0..classes).any(|k| data[k * n + i] < T::zero()) {
                return Err(Error::InvalidConfig(format!("responsibilities at voxel {i} sum to {s}")));
            }
        }
        Ok(Responsibilities { dims, classes, data, mask })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn channel(&self, k: usize) -> &[T] {
        let n = self.len();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn at(&self, i: usize, out: &mut [T]) {
        let n = self.len();
        for (k, o) in out.iter_mut().enumerate().take(self.classes) {
            *o = self.data[k * n + i];
        }
    }

    /// Per-class totals `N_k`.
    pub fn totals(&self) -> Vec<f64> {
        (0..self.classes).map(|k| self.channel(k).iter().map(|x| x.f64()).sum()).collect()
    }
}

fn check_model<T: Real>(f: &OrientedVolume<T>, gw: &GaussWishart, classes: usize) -> Result<()> {
    gw.validate()?;
    if gw.len() != classes {
        return Err(Error::dims("Gauss-Wishart classes", classes, gw.len()));
    }
    if gw.channels() != f.channels() {
        return Err(Error::dims("Gauss-Wishart channels", f.channels(), gw.channels()));
    }
    Ok(())
}

/// E-step: `z̃_ik ∝ π_ik exp(E[ln N(b_i f_i; μ_k, Λ_k⁻¹)])`. The `ln b_i`
/// term is common to every class and cancels in the normalisation.
pub fn responsibilities<T: Real>(
    f: &OrientedVolume<T>,
    bias: &BiasField,
    gw: &GaussWishart,
    prior: &ProbVolume<T>,
) -> Result<Responsibilities<T>> {
    if prior.dims() != f.dims() {
        return Err(Error::dims("tissue prior lattice", f.dims(), prior.dims()));
    }
    let classes = prior.classes();
    check_model(f, gw, classes)?;
    let corr = Corrected::new(f, bias)?;
    if !corr.mask.iter().any(|&m| m) {
        return Err(Error::EmptyMask);
    }
    let terms = gw.terms()?;
    let n = f.voxel_count();
    let mut data = vec![T::zero(); n * classes];
    let mut pi = vec![T::zero(); classes];
    let mut lp = vec![0.0f64; classes];
    for i in 0..n {
        if !corr.mask[i] {
            continue;
        }
        prior.at(i, &mut pi);
        let y = corr.at(i);
        for k in 0..classes {
            lp[k] = pi[k].f64().ln() + terms[k].log_likelihood(y);
        }
        let max = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::NonFinite(format!("responsibilities at voxel {i}")));
        }
        let s: f64 = lp.iter().map(|l| (l - max).exp()).sum();
        for k in 0..classes {
            data[k * n + i] = T::of((lp[k] - max).exp() / s);
        }
    }
    Ok(Responsibilities { dims: f.dims(), classes, data, mask: corr.mask })
}

/// Responsibility-weighted moments of one class: `N`, mean and scatter
/// `Σ z (y − ȳ)(y − ȳ)ᵀ`.
fn moments<T: Real>(corr: &Corrected, z: &[T]) -> (f64, Vec<f64>, DMat<f64>) {
    let c = corr.channels;
    let mut nk = 0.0;
    let mut mean = vec![0.0; c];
    for (i, &zi) in z.iter().enumerate() {
        let w = zi.f64();
        if w > 0.0 && corr.mask[i] {
            nk += w;
            for (m, y) in mean.iter_mut().zip(corr.at(i)) {
                *m += w * y;
            }
        }
    }
    let mut scatter = DMat::zeros(c, c);
    if nk > 0.0 {
        mean.iter_mut().for_each(|m| *m /= nk);
        for (i, &zi) in z.iter().enumerate() {
            let w = zi.f64();
            if w > 0.0 && corr.mask[i] {
                let y = corr.at(i);
                for a in 0..c {
                    for b in 0..c {
                        scatter[(a, b)] += w * (y[a] - mean[a]) * (y[b] - mean[b]);
                    }
                }
            }
        }
    }
    (nk, mean, scatter)
}

/// Conjugate posterior of one class given its moments.
pub fn posterior_class(prior: &GwClass, nk: f64, mean: &[f64], scatter: &DMat<f64>) -> Result<GwClass> {
    if nk <= 0.0 {
        return Ok(prior.clone());
    }
    let c = prior.channels();
    let beta = prior.beta + nk;
    let m: Vec<f64> = (0..c).map(|a| (prior.beta * prior.m[a] + nk * mean[a]) / beta).collect();
    let w0_inv = prior.w.cholesky().ok_or_else(|| Error::NotPositiveDefinite("prior scale matrix".into()))?.inverse();
    let d: Vec<f64> = (0..c).map(|a| mean[a] - prior.m[a]).collect();
    let shrink = prior.beta * nk / beta;
    let w_inv = DMat::from_fn(c, c, |a, b| w0_inv[(a, b)] + scatter[(a, b)] + shrink * d[a] * d[b]).symmetrize();
    let w = w_inv.cholesky().ok_or_else(|| Error::NotPositiveDefinite("posterior scale matrix".into()))?.inverse();
    GwClass::new(m, beta, w, prior.nu + nk)
}

/// Variational M-step for the class parameters: the exact maximiser of the
/// ELBO over `q(μ, Λ)` with everything else fixed.
pub fn update_gauss_wishart<T: Real>(
    f: &OrientedVolume<T>,
    bias: &BiasField,
    z: &Responsibilities<T>,
    prior: &GaussWishart,
) -> Result<GaussWishart> {
    if z.dims() != f.dims() {
        return Err(Error::dims("responsibility lattice", f.dims(), z.dims()));
    }
    check_model(f, prior, z.classes())?;
    let corr = Corrected::new(f, bias)?;
    let classes = (0..z.classes())
        .map(|k| {
            let (nk, mean, scatter) = moments(&corr, z.channel(k));
            if !mean.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite("bias-corrected intensities".into()));
            }
            posterior_class(&prior.classes[k], nk, &mean, &scatter)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GaussWishart { classes })
}

/// Part of the ELBO that depends on the bias coefficients:
/// `Σ_i [Σ_c ln b_ic − ½ Σ_k z_ik (y_i − m_k)ᵀ ν_k W_k (y_i − m_k)] − ½ βᵀΛ_β β`.
pub fn bias_objective<T: Real>(
    f: &OrientedVolume<T>,
    bias: &BiasField,
    z: &Responsibilities<T>,
    gw: &GaussWishart,
) -> Result<f64> {
    check_model(f, gw, z.classes())?;
    let corr = Corrected::new(f, bias)?;
    let terms = gw.terms()?;
    let mut total = 0.0;
    let mut zi = vec![T::zero(); z.classes()];
    for i in 0..corr.mask.len() {
        if !corr.mask[i] {
            continue;
        }
        z.at(i, &mut zi);
        let y = corr.at(i);
        let mut quad = 0.0;
        for (k, t) in terms.iter().enumerate() {
            let w = zi[k].f64();
            if w > 0.0 {
                quad += w * (t.constant - t.log_likelihood(y));
            }
        }
        // constant − log_likelihood = ½ quadratic form
        total += corr.log_jacobian(i) - quad;
    }
    Ok(total - bias.prior_energy())
}

/// One Gauss-Newton step per channel on [`bias_objective`], each followed
/// by step halving until the objective does not decrease.
pub fn update_bias<T: Real>(
    f: &OrientedVolume<T>,
    bias: &BiasField,
    z: &Responsibilities<T>,
    gw: &GaussWishart,
) -> Result<BiasField> {
    check_model(f, gw, z.classes())?;
    let mut current = bias.clone();
    if bias.is_empty() {
        return Ok(current);
    }
    let channels = f.channels();
    let n = f.voxel_count();
    let lambdas: Vec<DMat<f64>> = gw.classes.iter().map(|k| k.expected_precision()).collect();
    let mut best = bias_objective(f, &current, z, gw)?;
    let mut zi = vec![T::zero(); z.classes()];
    for ch in 0..channels {
        let corr = Corrected::new(f, &current)?;
        let mut g = vec![0.0; n];
        let mut h = vec![0.0; n];
        for i in 0..n {
            if !corr.mask[i] {
                continue;
            }
            z.at(i, &mut zi);
            let y = corr.at(i);
            let (mut r, mut curv) = (0.0, 0.0);
            for (k, cls) in gw.classes.iter().enumerate() {
                let w = zi[k].f64();
                if w == 0.0 {
                    continue;
                }
                let lam = &lambdas[k];
                let row: f64 = (0..channels).map(|b| lam[(ch, b)] * (y[b] - cls.m[b])).sum();
                r += w * row;
                curv += w * lam[(ch, ch)];
            }
            let yr = y[ch] * r;
            g[i] = 1.0 - yr;
            h[i] = curv * y[ch] * y[ch] + yr.max(0.0);
        }
        let beta = current.coeffs(ch).to_vec();
        let prior = current.prior_precision();
        let mut grad = current.project(&g);
        for (j, gj) in grad.iter_mut().enumerate() {
            *gj -= prior[j] * beta[j];
        }
        let mut hess = current.weighted_gram(&h);
        for (j, l) in prior.iter().enumerate() {
            hess[(j, j)] += l;
        }
        let step = match hess.cholesky() {
            Some(ch) => ch.solve(&grad),
            None => {
                let damp = 1e-6 * (hess.trace() / hess.rows() as f64).max(1e-12);
                let mut damped = hess.clone();
                (0..damped.rows()).for_each(|j| damped[(j, j)] += damp);
                damped.solve(&grad).ok_or_else(|| Error::NonFinite("bias Newton system".into()))?
            }
        };
        if !step.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("bias step (check the bias regularisation)".into()));
        }
        let mut alpha = 1.0;
        for _ in 0..30 {
            let trial: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + alpha * s).collect();
            let mut candidate = current.clone();
            candidate.set_coeffs(ch, trial)?;
            let obj = bias_objective(f, &candidate, z, gw)?;
            if obj.is_finite() && obj >= best {
                best = obj;
                current = candidate;
                break;
            }
            alpha *= 0.5;
        }
    }
    Ok(current)
}

/// Appearance parts of a subject's ELBO.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DataTerms {
    /// `Σ_i Σ_k z_ik E[ln N(y_i; μ_k, Λ_k⁻¹)] + Σ_i Σ_c ln b_ic`.
    pub likelihood: f64,
    /// `Σ_i Σ_k z_ik ln π_ik`.
    pub categorical: f64,
    /// `−Σ_i Σ_k z_ik ln z_ik`.
    pub entropy: f64,
}

impl DataTerms {
    pub fn total(&self) -> f64 {
        self.likelihood + self.categorical + self.entropy
    }
}

pub fn data_terms<T: Real>(
    f: &OrientedVolume<T>,
    bias: &BiasField,
    z: &Responsibilities<T>,
    gw: &GaussWishart,
    prior: &ProbVolume<T>,
) -> Result<DataTerms> {
    check_model(f, gw, z.classes())?;
    if prior.classes() != z.classes() || prior.dims() != z.dims() {
        return Err(Error::dims("tissue prior", (z.dims(), z.classes()), (prior.dims(), prior.classes())));
    }
    let corr = Corrected::new(f, bias)?;
    let terms = gw.terms()?;
    let mut out = DataTerms::default();
    let mut zi = vec![T::zero(); z.classes()];
    let mut pi = vec![T::zero(); z.classes()];
    for i in 0..corr.mask.len() {
        if !corr.mask[i] {
            continue;
        }
        z.at(i, &mut zi);
        prior.at(i, &mut pi);
        let y = corr.at(i);
        out.likelihood += corr.log_jacobian(i);
        for k in 0..z.classes() {
            let w = zi[k].f64();
            if w > 0.0 {
                out.likelihood += w * terms[k].log_likelihood(y);
                out.categorical += w * pi[k].f64().ln();
                out.entropy -= w * w.ln();
            }
        }
    }
    Ok(out)
}

//! Synthetic phantoms drawn from the generative model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::appearance::{BiasField, GaussWishart, GwClass};
use crate::diffeo::{shoot, VelocityField, VelocityMetric};
use crate::error::{Error, Result};
use crate::field::{voxels, Deformation, Lattice, OrientedVolume, ProbVolume};
use crate::linalg::DMat;
use crate::orchestrator::FitConfig;
use crate::rigid::RigidParams;
use crate::scalar::Real;
use crate::shape::{subject_affine, warp_map, warped_prior};

/// Smooth K-class log-template: nested, slightly eccentric shells with an
/// angular ripple so that rotations are identifiable. Class 0 is the outer
/// shell, class K−1 the core, the background lies outside. Logits stay in
/// `[−sharpness, sharpness]`.
pub fn phantom_template<T: Real>(lattice: Lattice<T>, k: usize, sharpness: f64) -> OrientedVolume<T> {
    let dims = lattice.dims();
    let centre = dims.map(|d| (d as f64 - 1.0) * 0.5);
    let radius = dims.iter().map(|&d| d as f64).fold(f64::INFINITY, f64::min) * 0.5;
    let classes = k + 1;
    let width = 0.85 / classes as f64;
    // band centres from the core outwards; class K−1 is innermost
    let centres: Vec<f64> = (0..k).map(|j| 0.85 * (k - j) as f64 / k as f64 - 0.5 * width).collect();
    OrientedVolume::from_fn(lattice, k, |x, c| {
        let p: [f64; 3] = std::array::from_fn(|d| (x[d] as f64 - centre[d]) / radius);
        let (px, py, pz) = (p[0] - 0.06, p[1] * 1.15 + 0.04, p[2] * 0.9);
        let theta = py.atan2(px);
        let r = (px * px + py * py + pz * pz).sqrt() * (1.0 + 0.12 * (3.0 * theta).sin() + 0.08 * pz);
        // the core class is flat inside its band centre
        let d = r - centres[c];
        let d = if c + 1 == k { d.max(0.0) } else { d };
        let band = (-(d / (0.6 * width)).powi(2)).exp();
        // background takes over beyond the outer shell
        let outer = 0.85 + 0.5 * width;
        let bg = 1.0 / (1.0 + (-(r - outer) / (0.2 * width)).exp());
        T::of(sharpness * (band - bg))
    })
}

/// Well separated classes for `channels` channels: the background darkest,
/// then classes 0, 1, … in increasing brightness, all with standard
/// deviation `sd`.
pub fn phantom_appearance(k: usize, channels: usize, sd: f64) -> Result<GaussWishart> {
    let nu = 1e4;
    let mut classes = Vec::with_capacity(k + 1);
    for j in 0..=k {
        let level = if j == k { 20.0 } else { 60.0 + 40.0 * j as f64 };
        let m: Vec<f64> = (0..channels).map(|c| level * (1.0 + 0.1 * c as f64)).collect();
        let w = DMat::identity(channels).scale(1.0 / (sd * sd * nu));
        classes.push(GwClass::new(m, 1e4, w, nu)?);
    }
    GaussWishart::new(classes)
}

/// Controls the size of the sampled deformation and bias.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthOptions {
    /// Multiplies the velocity drawn from the prior.
    pub velocity_scale: f64,
    /// Standard deviation of each translation in mm.
    pub translation_sd: f64,
    /// Standard deviation of each rotation in radians.
    pub rotation_sd: f64,
    /// Multiplies the bias coefficients drawn from their prior.
    pub bias_scale: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions { velocity_scale: 1.0, translation_sd: 0.5, rotation_sd: 0.02, bias_scale: 1.0 }
    }
}

/// A sampled subject with its ground truth.
#[derive(Clone, Debug)]
pub struct SynthSample<T> {
    pub image: OrientedVolume<T>,
    /// Sampled class per voxel: class k < K is label k+1, background is 0.
    pub labels: OrientedVolume<T>,
    pub v: VelocityField<T>,
    pub q: RigidParams<T>,
    pub phi: Deformation<T>,
    pub phi_inv: Deformation<T>,
    pub bias: BiasField,
    /// Warped tissue prior the classes were drawn from.
    pub prior: ProbVolume<T>,
}

/// Forward-samples the model on the template lattice. Fully determined by
/// `seed`.
pub fn synth_generate<T: Real>(
    template: &OrientedVolume<T>,
    gw: &GaussWishart,
    config: &FitConfig,
    options: &SynthOptions,
    seed: u64,
) -> Result<SynthSample<T>> {
    let k = template.channels();
    if gw.len() != k + 1 {
        return Err(Error::dims("appearance classes", k + 1, gw.len()));
    }
    gw.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lattice = template.lattice().clone();
    let dims = lattice.dims();
    let h = lattice.voxel_size().map(|x| x.f64());
    let metric = VelocityMetric::new(config.velocity_spec(), dims, h)?;
    let raw: Vec<f64> = metric.sample(&mut rng)?;
    let v = VelocityField::new(dims, raw.iter().map(|x| T::of(x * options.velocity_scale)).collect())?;
    let q = RigidParams::new(std::array::from_fn(|j| {
        let sd = if j < 3 { options.translation_sd } else { options.rotation_sd };
        let e: f64 = rng.sample(StandardNormal);
        T::of(sd * e)
    }));
    let (phi, phi_inv) = shoot(&v, &metric, config.steps)?;
    let a = subject_affine(&lattice, &lattice, &q)?;
    let prior = warped_prior(template, &warp_map(dims, &a, &phi))?;
    let channels = gw.channels();
    let mut bias = BiasField::new(dims, h, channels, config.bias_wavelength, config.lambda_bias)?;
    if !bias.is_empty() {
        let precision = bias.prior_precision().to_vec();
        for c in 0..channels {
            let beta: Vec<f64> = precision
                .iter()
                .map(|&l| {
                    let e: f64 = rng.sample(StandardNormal);
                    if l > 0.0 { options.bias_scale * e / l.sqrt() } else { 0.0 }
                })
                .collect();
            bias.set_coeffs(c, beta)?;
        }
    }
    let log_b: Vec<Vec<f64>> = (0..channels).map(|c| bias.log_field(c)).collect();
    let n = lattice.len();
    let chols: Vec<DMat<f64>> = gw
        .classes
        .iter()
        .map(|cls| {
            let cov = cls.expected_precision().cholesky().map(|c| c.inverse()).ok_or_else(|| Error::NotPositiveDefinite("class precision".into()))?;
            cov.cholesky().map(|c| c.factor().clone()).ok_or_else(|| Error::NotPositiveDefinite("class covariance".into()))
        })
        .collect::<Result<_>>()?;
    let mut image = vec![T::zero(); n * channels];
    let mut labels = vec![T::zero(); n];
    let mut p = vec![T::zero(); k + 1];
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    for (i, _) in voxels(dims).enumerate() {
        prior.at(i, &mut p);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut class = k;
        for (j, pj) in p.iter().enumerate() {
            acc += pj.f64();
            if u < acc {
                class = j;
                break;
            }
        }
        labels[i] = T::of_usize(if class == k { 0 } else { class + 1 });
        let e: Vec<f64> = (0..channels).map(|_| normal.sample(&mut rng)).collect();
        let l = &chols[class];
        for c in 0..channels {
            let noise: f64 = (0..=c).map(|d| l[(c, d)] * e[d]).sum();
            let y = gw.classes[class].m[c] + noise;
            // y is the bias-corrected intensity: f = y / b
            image[c * n + i] = T::of(y * (-log_b[c][i]).exp());
        }
    }
    Ok(SynthSample {
        image: OrientedVolume::new(lattice.clone(), channels, image)?,
        labels: OrientedVolume::new(lattice, 1, labels)?,
        v,
        q,
        phi,
        phi_inv,
        bias,
        prior,
    })
}

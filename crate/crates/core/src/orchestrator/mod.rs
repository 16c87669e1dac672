//! Variational EM over the pyramid: appearance, rigid, velocity and
//! template updates, the ELBO and the two fitting modes.

mod config;
mod fit;
mod pyramid;

pub use config::{FitConfig, FitMode, PyramidLevel, PyramidSchedule};
pub use fit::{fit_groupwise, fit_groupwise_with, fit_to_template, fit_to_template_with, subject_prior, FitResult, IterationView};
pub use pyramid::{bounding_lattice, level_lattice, prolong_velocity, prolong_volume, restrict_volume};

use rayon::prelude::*;

use crate::appearance::{data_terms, BiasField, GaussWishart, Responsibilities};
use crate::diffeo::{VelocityField, VelocityMetric};
use crate::error::{Error, Result};
use crate::field::{Deformation, Lattice, OrientedVolume};
use crate::regularizer::Regularizer;
use crate::rigid::RigidParams;
use crate::scalar::Real;
use crate::shape::{subject_affine, warp_map, warped_prior};

/// An observed image.
#[derive(Clone, Debug)]
pub struct Subject<T> {
    pub name: String,
    pub image: OrientedVolume<T>,
}

impl<T: Real> Subject<T> {
    pub fn new(name: impl Into<String>, image: OrientedVolume<T>) -> Self {
        Subject { name: name.into(), image }
    }
}

/// Everything estimated for one subject.
#[derive(Clone, Debug)]
pub struct SubjectState<T> {
    pub q: RigidParams<T>,
    /// Initial velocity on the current template lattice, in voxels.
    pub v: VelocityField<T>,
    pub phi: Deformation<T>,
    pub phi_inv: Deformation<T>,
    pub gw: GaussWishart,
    pub bias: BiasField,
    pub z: Responsibilities<T>,
}

impl<T: Real> SubjectState<T> {
    /// `ψ = φ ∘ A` from subject voxels to template voxels.
    pub fn psi(&self, template: &Lattice<T>, subject: &Lattice<T>) -> Result<Deformation<T>> {
        let a = subject_affine(template, subject, &self.q)?;
        Ok(warp_map(subject.dims(), &a, &self.phi))
    }
}

/// The ELBO split into its parts. Priors enter with a minus sign.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ElboTerms {
    /// Expected Gaussian log-likelihood including the bias Jacobian.
    pub likelihood: f64,
    /// `Σ z ln π` with `π = softmax(t ∘ ψ)`.
    pub categorical: f64,
    /// Entropy of the responsibilities.
    pub entropy: f64,
    /// `Σ_n KL(q(μ, Λ) ‖ shared prior)`.
    pub gw_kl: f64,
    /// `Σ_n ½ βᵀΛ_β β`.
    pub bias_prior: f64,
    /// `Σ_n ½ vᵀΛ_v v Δx`.
    pub velocity_prior: f64,
    /// `Σ_k ½ t_kᵀΛ_t t_k Δx`.
    pub template_prior: f64,
}

impl ElboTerms {
    pub fn total(&self) -> f64 {
        self.likelihood + self.categorical + self.entropy - self.gw_kl - self.bias_prior - self.velocity_prior - self.template_prior
    }

    /// Termwise sum. Each term is summed in ascending order so the result
    /// does not depend on the order of `parts`.
    fn sum(parts: &[ElboTerms]) -> ElboTerms {
        let sorted = |f: fn(&ElboTerms) -> f64| {
            let mut v: Vec<f64> = parts.iter().map(f).collect();
            v.sort_by(f64::total_cmp);
            v.iter().sum()
        };
        ElboTerms {
            likelihood: sorted(|t| t.likelihood),
            categorical: sorted(|t| t.categorical),
            entropy: sorted(|t| t.entropy),
            gw_kl: sorted(|t| t.gw_kl),
            bias_prior: sorted(|t| t.bias_prior),
            velocity_prior: sorted(|t| t.velocity_prior),
            template_prior: sorted(|t| t.template_prior),
        }
    }

    fn check(&self) -> Result<()> {
        let named = [
            ("likelihood", self.likelihood),
            ("categorical", self.categorical),
            ("entropy", self.entropy),
            ("Gauss-Wishart KL", self.gw_kl),
            ("bias prior", self.bias_prior),
            ("velocity prior", self.velocity_prior),
            ("template prior", self.template_prior),
        ];
        match named.iter().find(|(_, v)| !v.is_finite()) {
            Some((name, _)) => Err(Error::NonFinite(format!("ELBO term `{name}`"))),
            None => Ok(()),
        }
    }
}

/// One row of the ELBO trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboRecord {
    pub level: usize,
    pub iteration: usize,
    pub terms: ElboTerms,
}

/// Template prior `Σ_k ½ t_kᵀΛ_t t_k Δx`.
pub fn template_energy<T: Real>(template: &OrientedVolume<T>, reg: &Regularizer) -> Result<f64> {
    (0..template.channels()).map(|c| reg.energy(template.channel(c), 1)).sum()
}

/// One subject's contribution to the ELBO, without the template prior.
pub fn subject_elbo<T: Real>(
    template: &OrientedVolume<T>,
    metric: &VelocityMetric,
    shared: &GaussWishart,
    subject: &Subject<T>,
    state: &SubjectState<T>,
) -> Result<ElboTerms> {
    let psi = state.psi(template.lattice(), subject.image.lattice())?;
    let prior = warped_prior(template, &psi)?;
    let d = data_terms(&subject.image, &state.bias, &state.z, &state.gw, &prior)?;
    let terms = ElboTerms {
        likelihood: d.likelihood,
        categorical: d.categorical,
        entropy: d.entropy,
        gw_kl: state.gw.kl(shared)?,
        bias_prior: state.bias.prior_energy(),
        velocity_prior: metric.energy(state.v.data())?,
        template_prior: 0.0,
    };
    terms.check()?;
    Ok(terms)
}

/// The full ELBO of a population. Subject terms are evaluated in parallel;
/// the total is invariant to the order of the subjects.
pub fn elbo<T: Real>(
    template: &OrientedVolume<T>,
    reg: &Regularizer,
    metric: &VelocityMetric,
    shared: &GaussWishart,
    subjects: &[Subject<T>],
    states: &[SubjectState<T>],
) -> Result<ElboTerms> {
    if subjects.len() != states.len() {
        return Err(Error::dims("subject states", subjects.len(), states.len()));
    }
    let mut parts: Vec<ElboTerms> =
        subjects.par_iter().zip(states).map(|(s, st)| subject_elbo(template, metric, shared, s, st)).collect::<Result<_>>()?;
    parts.push(ElboTerms { template_prior: template_energy(template, reg)?, ..Default::default() });
    let total = ElboTerms::sum(&parts);
    total.check()?;
    Ok(total)
}

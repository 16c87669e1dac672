use rayon::prelude::*;

use super::pyramid::{bounding_lattice, level_lattice, prolong_velocity, prolong_volume, restrict_volume};
use super::{elbo, ElboRecord, ElboTerms, FitConfig, Subject, SubjectState};
use crate::appearance::{
    initial_responsibilities, responsibilities, uninformative_prior, update_bias, update_gauss_wishart, update_shared_priors, BiasField,
    GaussWishart,
};
use crate::diffeo::{shoot, VelocityField, VelocityMetric};
use crate::error::{Error, Result};
use crate::field::{Lattice, OrientedVolume};
use crate::regularizer::Regularizer;
use crate::rigid::RigidParams;
use crate::scalar::Real;
use crate::shape::{enforce_zero_mean, subject_affine, update_rigid, update_template, update_velocity, warp_map, warped_prior, HessianMix, TemplateSubject};

/// Output of a fit.
#[derive(Clone, Debug)]
pub struct FitResult<T> {
    /// Template logits on the finest level's lattice.
    pub template: OrientedVolume<T>,
    pub shared: GaussWishart,
    pub subjects: Vec<SubjectState<T>>,
    pub trace: Vec<ElboRecord>,
    /// ELBO decreases larger than the monitoring tolerance.
    pub warnings: Vec<String>,
}

/// State handed to an observer after every outer iteration.
pub struct IterationView<'a, T> {
    pub level: usize,
    pub iteration: usize,
    pub template: &'a OrientedVolume<T>,
    pub subjects: &'a [SubjectState<T>],
    pub elbo: ElboTerms,
}

struct Level<T> {
    lattice: Lattice<T>,
    reg: Regularizer,
    metric: VelocityMetric,
}

impl<T: Real> Level<T> {
    fn new(fov: &Lattice<T>, voxel: f64, config: &FitConfig) -> Result<Self> {
        let lattice = level_lattice(fov, voxel);
        let h = lattice.voxel_size().map(|x| x.f64());
        Ok(Level {
            reg: Regularizer::new(config.template_spec(), lattice.dims(), h)?,
            metric: VelocityMetric::new(config.velocity_spec(), lattice.dims(), h)?,
            lattice,
        })
    }
}

fn annotate(subject: &str, level: usize, iteration: usize) -> impl Fn(Error) -> Error + '_ {
    move |e| Error::Fit { subject: subject.to_string(), level, iteration, source: Box::new(e) }
}

fn initial_state<T: Real>(subject: &Subject<T>, shared: &GaussWishart, dims: [usize; 3], config: &FitConfig) -> Result<SubjectState<T>> {
    let f = &subject.image;
    let h = f.lattice().voxel_size().map(|x| x.f64());
    let bias = BiasField::new(f.dims(), h, f.channels(), config.bias_wavelength, config.lambda_bias)?;
    let z = initial_responsibilities(f, config.k + 1)?;
    let gw = update_gauss_wishart(f, &bias, &z, shared)?;
    let v = VelocityField::zeros(dims);
    let id = crate::field::Deformation::identity(dims);
    Ok(SubjectState { q: RigidParams::zero(), v, phi: id.clone(), phi_inv: id, gw, bias, z })
}

/// Appearance, rigid and velocity updates of one subject, in that order.
fn subject_step<T: Real>(
    subject: &Subject<T>,
    state: &SubjectState<T>,
    template: &OrientedVolume<T>,
    level: &Level<T>,
    shared: &GaussWishart,
    mix: &HessianMix,
    config: &FitConfig,
) -> Result<SubjectState<T>> {
    let f = &subject.image;
    let sl = f.lattice();
    let psi = state.psi(&level.lattice, sl)?;
    let prior = warped_prior(template, &psi)?;
    let z = responsibilities(f, &state.bias, &state.gw, &prior)?;
    let gw = update_gauss_wishart(f, &state.bias, &z, shared)?;
    let bias = update_bias(f, &state.bias, &z, &gw)?;
    let rigid = update_rigid(template, &z, &level.lattice, sl, &state.q, &state.phi, mix)?;
    if rigid.damped {
        log::warn!("{}: rigid update needed Levenberg damping", subject.name);
    }
    let a = subject_affine(&level.lattice, sl, &rigid.q)?;
    let step = update_velocity(template, &z, &a, &state.v, &state.phi, &level.metric, config.steps, mix, &config.cg)?;
    if step.halvings > 0 {
        log::warn!("{}: velocity step halved {} times", subject.name, step.halvings);
    }
    Ok(SubjectState { q: rigid.q, v: step.v, phi: step.phi, phi_inv: step.phi_inv, gw, bias, z })
}

fn reshoot<T: Real>(states: &mut [SubjectState<T>], metric: &VelocityMetric, steps: usize) -> Result<()> {
    let shots: Vec<_> = states.par_iter().map(|s| shoot(&s.v, metric, steps)).collect::<Result<_>>()?;
    for (s, (phi, phi_inv)) in states.iter_mut().zip(shots) {
        s.phi = phi;
        s.phi_inv = phi_inv;
    }
    Ok(())
}

/// Carries velocities and the template from one level's lattice to the next.
fn change_level<T: Real>(states: &mut [SubjectState<T>], from: &Lattice<T>, to: &Level<T>, steps: usize) -> Result<()> {
    for s in states.iter_mut() {
        s.v = prolong_velocity(&s.v, from, &to.lattice)?;
    }
    reshoot(states, &to.metric, steps)
}

/// Resamples a fixed template to a level lattice: averaging when coarser,
/// trilinear when finer.
fn template_at<T: Real>(template: &OrientedVolume<T>, lattice: &Lattice<T>) -> OrientedVolume<T> {
    if lattice == template.lattice() {
        return template.clone();
    }
    let coarser = lattice.voxel_volume() > template.lattice().voxel_volume();
    if coarser {
        restrict_volume(template, lattice)
    } else {
        prolong_volume(template, lattice)
    }
}

struct Monitor {
    tolerance: f64,
    warnings: Vec<String>,
    trace: Vec<ElboRecord>,
}

impl Monitor {
    fn new(w: f64) -> Self {
        Monitor { tolerance: if w == 0.0 { 1e-6 } else { 1e-3 }, warnings: Vec::new(), trace: Vec::new() }
    }

    fn record(&mut self, level: usize, iteration: usize, terms: ElboTerms) {
        if let Some(prev) = self.trace.last().filter(|r| r.level == level) {
            let (a, b) = (prev.terms.total(), terms.total());
            if b < a - self.tolerance * a.abs() {
                let msg = format!("level {level}, iteration {iteration}: ELBO decreased from {a:.9e} to {b:.9e}");
                log::warn!("{msg}");
                self.warnings.push(msg);
            }
        }
        log::info!("level {level} iteration {iteration}: ELBO {:.9e}", terms.total());
        self.trace.push(ElboRecord { level, iteration, terms });
    }
}

/// Learns a template from a population. See [`fit_groupwise_with`].
pub fn fit_groupwise<T: Real>(subjects: &[Subject<T>], config: &FitConfig) -> Result<FitResult<T>> {
    fit_groupwise_with(subjects, config, |_| {})
}

/// Groupwise fit calling `observe` after every outer iteration. The template
/// starts at zero logits and covers the bounding box of all subjects.
pub fn fit_groupwise_with<T: Real>(
    subjects: &[Subject<T>],
    config: &FitConfig,
    mut observe: impl FnMut(&IterationView<'_, T>),
) -> Result<FitResult<T>> {
    config.validate()?;
    if subjects.len() < 2 {
        return Err(Error::InvalidConfig(format!("groupwise fitting needs at least 2 subjects, got {}", subjects.len())));
    }
    let mix = config.mix()?;
    let levels = config.schedule.levels();
    let finest = levels.last().expect("validated schedule").voxel;
    let lattices: Vec<&Lattice<T>> = subjects.iter().map(|s| s.image.lattice()).collect();
    let fov = bounding_lattice(&lattices, finest)?;
    let mut shared = uninformative_prior(&subjects[0].image, config.k + 1)?;
    let mut level = Level::new(&fov, levels[0].voxel, config)?;
    let mut template = OrientedVolume::zeros(level.lattice.clone(), config.k);
    let mut states: Vec<SubjectState<T>> = subjects
        .par_iter()
        .map(|s| initial_state(s, &shared, level.lattice.dims(), config).map_err(annotate(&s.name, 0, 0)))
        .collect::<Result<_>>()?;
    let mut monitor = Monitor::new(config.w);
    for (li, spec) in levels.iter().enumerate() {
        if li > 0 {
            let next = Level::new(&fov, spec.voxel, config)?;
            template = prolong_volume(&template, &next.lattice);
            change_level(&mut states, &level.lattice, &next, config.steps).map_err(annotate("population", li, 0))?;
            level = next;
        }
        for it in 0..spec.iterations {
            states = subjects
                .par_iter()
                .zip(&states)
                .map(|(s, st)| subject_step(s, st, &template, &level, &shared, &mix, config).map_err(annotate(&s.name, li, it)))
                .collect::<Result<_>>()?;
            let psis: Vec<_> = subjects
                .iter()
                .zip(&states)
                .map(|(s, st)| st.psi(&level.lattice, s.image.lattice()))
                .collect::<Result<_>>()
                .map_err(annotate("template", li, it))?;
            let ts: Vec<TemplateSubject<'_, T>> = psis.iter().zip(&states).map(|(psi, st)| TemplateSubject { psi, z: &st.z }).collect();
            let (next, cg) = update_template(&template, &ts, &level.reg, &mix, &config.cg).map_err(annotate("template", li, it))?;
            if !cg.converged {
                log::debug!("template CG stopped after {} iterations at residual {:.2e}", cg.iterations, cg.residual);
            }
            template = next;
            let posts: Vec<GaussWishart> = states.iter().map(|s| s.gw.clone()).collect();
            shared = update_shared_priors(&posts, &shared).map_err(annotate("shared priors", li, it))?;
            let mut vs: Vec<VelocityField<T>> = states.iter().map(|s| s.v.clone()).collect();
            let mut qs: Vec<RigidParams<T>> = states.iter().map(|s| s.q).collect();
            enforce_zero_mean(&mut vs, &mut qs)?;
            for ((s, v), q) in states.iter_mut().zip(vs).zip(qs) {
                s.v = v;
                s.q = q;
            }
            reshoot(&mut states, &level.metric, config.steps).map_err(annotate("population", li, it))?;
            let terms = elbo(&template, &level.reg, &level.metric, &shared, subjects, &states).map_err(annotate("population", li, it))?;
            monitor.record(li, it, terms);
            observe(&IterationView { level: li, iteration: it, template: &template, subjects: &states, elbo: terms });
        }
    }
    Ok(FitResult { template, shared, subjects: states, trace: monitor.trace, warnings: monitor.warnings })
}

/// Registers one subject to a fixed template. See [`fit_to_template_with`].
pub fn fit_to_template<T: Real>(
    subject: &Subject<T>,
    template: &OrientedVolume<T>,
    shared: &GaussWishart,
    config: &FitConfig,
) -> Result<FitResult<T>> {
    fit_to_template_with(subject, template, shared, config, |_| {})
}

/// Fixed-template fit: the groupwise cycle without the template,
/// shared-prior and zero-mean steps. Pyramid levels resample the template
/// over its own field of view.
pub fn fit_to_template_with<T: Real>(
    subject: &Subject<T>,
    template: &OrientedVolume<T>,
    shared: &GaussWishart,
    config: &FitConfig,
    mut observe: impl FnMut(&IterationView<'_, T>),
) -> Result<FitResult<T>> {
    config.validate()?;
    if template.channels() != config.k {
        return Err(Error::TemplateMismatch(format!("template has {} classes, config says {}", template.channels(), config.k)));
    }
    if shared.len() != config.k + 1 || shared.channels() != subject.image.channels() {
        return Err(Error::TemplateMismatch(format!(
            "shared priors have {} classes over {} channels; expected {} over {}",
            shared.len(),
            shared.channels(),
            config.k + 1,
            subject.image.channels()
        )));
    }
    let mix = config.mix()?;
    let levels = config.schedule.levels();
    let fov = template.lattice().clone();
    let mut level = Level::new(&fov, levels[0].voxel, config)?;
    let mut t = template_at(template, &level.lattice);
    let name = subject.name.as_str();
    let mut states = vec![initial_state(subject, shared, level.lattice.dims(), config).map_err(annotate(name, 0, 0))?];
    let mut monitor = Monitor::new(config.w);
    let subjects = std::slice::from_ref(subject);
    for (li, spec) in levels.iter().enumerate() {
        if li > 0 {
            let next = Level::new(&fov, spec.voxel, config)?;
            t = template_at(template, &next.lattice);
            change_level(&mut states, &level.lattice, &next, config.steps).map_err(annotate(name, li, 0))?;
            level = next;
        }
        for it in 0..spec.iterations {
            states[0] = subject_step(subject, &states[0], &t, &level, shared, &mix, config).map_err(annotate(name, li, it))?;
            let terms = elbo(&t, &level.reg, &level.metric, shared, subjects, &states).map_err(annotate(name, li, it))?;
            monitor.record(li, it, terms);
            observe(&IterationView { level: li, iteration: it, template: &t, subjects: &states, elbo: terms });
        }
    }
    Ok(FitResult { template: t, shared: shared.clone(), subjects: states, trace: monitor.trace, warnings: monitor.warnings })
}

/// Warped template prior for a fitted subject, convenient for label maps.
pub fn subject_prior<T: Real>(template: &OrientedVolume<T>, subject: &Subject<T>, state: &SubjectState<T>) -> Result<crate::field::ProbVolume<T>> {
    let a = subject_affine(template.lattice(), subject.image.lattice(), &state.q)?;
    warped_prior(template, &warp_map(subject.image.dims(), &a, &state.phi))
}

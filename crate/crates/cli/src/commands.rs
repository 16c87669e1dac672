use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gwreg::eval::{compose_pairwise, segmentation, tpr_overlap, warp_labels, LabelVolume};
use gwreg::field::{Lattice, OrientedVolume};
use gwreg::io::{
    provenance, read_coordinate_map, read_trace, read_volume, write_coordinate_map, write_overlap, write_trace, write_volume, Datatype,
    ModelBundle, Registration, TraceRow,
};
use gwreg::orchestrator::{fit_groupwise, fit_to_template, FitConfig, FitMode, FitResult, PyramidSchedule, Subject};
use gwreg::synth::{phantom_appearance, phantom_template, synth_generate, SynthOptions};
use gwreg::Real;

use crate::args::{Cli, Command, FitArgs, Precision};

/// Exit status of `elbo-trace --strict` when the ELBO went down.
pub const EXIT_DECREASE: i32 = 3;

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::FitGroup { images, fit, out } => match fit.precision {
            Precision::F32 => fit_group::<f32>(&images, &fit, &out),
            Precision::F64 => fit_group::<f64>(&images, &fit, &out),
        },
        Command::Fit { image, model, fit, out } => match fit.precision {
            Precision::F32 => fit_one::<f32>(&image, &model, &fit, &out),
            Precision::F64 => fit_one::<f64>(&image, &model, &fit, &out),
        },
        Command::Pairwise { source, target, out } => pairwise(&source, &target, &out),
        Command::WarpLabels { labels, deformation, out } => warp(&labels, &deformation, &out),
        Command::Overlap { warped, target, regions, out } => overlap(&warped, &target, regions, &out),
        Command::Synth { model, edge, voxel, sharpness, noise, fit, out } => {
            let phantom = Phantom { edge, voxel, sharpness, noise };
            match fit.precision {
                Precision::F32 => synth::<f32>(model.as_deref(), &phantom, &fit, &out),
                Precision::F64 => synth::<f64>(model.as_deref(), &phantom, &fit, &out),
            }
        }
        Command::ElboTrace { trace, tolerance, strict, out } => elbo_trace(&trace, tolerance, strict, out.as_deref()),
    }
}

/// File name without any `.nii` / `.nii.gz` suffix.
fn stem(path: &Path) -> String {
    let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = name.strip_suffix(".gz").unwrap_or(&name);
    name.strip_suffix(".nii").unwrap_or(name).to_string()
}

/// Stems made unique by appending `-2`, `-3`, ...
fn subject_names(paths: &[PathBuf]) -> Vec<String> {
    let mut seen = HashSet::new();
    paths
        .iter()
        .map(|p| {
            let base = stem(p);
            let mut name = base.clone();
            let mut i = 1;
            while !seen.insert(name.clone()) {
                i += 1;
                name = format!("{base}-{i}");
            }
            name
        })
        .collect()
}

fn label_datatype(max: u32) -> Datatype {
    if max <= u8::MAX as u32 {
        Datatype::U8
    } else if max <= i16::MAX as u32 {
        Datatype::I16
    } else {
        Datatype::I32
    }
}

fn write_labels<T: Real>(path: &Path, labels: &LabelVolume<T>, descrip: &str) -> Result<()> {
    let max = labels.labels().iter().copied().max().unwrap_or(0);
    write_volume(path, &labels.to_volume(), label_datatype(max), descrip).with_context(|| format!("writing {}", path.display()))
}

fn read_labels(path: &Path) -> Result<LabelVolume<f64>> {
    let vol: OrientedVolume<f64> = read_volume(path).with_context(|| format!("reading {}", path.display()))?;
    LabelVolume::from_volume(&vol).with_context(|| format!("{} is not a label image", path.display()))
}

fn report<T>(result: &FitResult<T>, out: &Path) -> Result<()> {
    write_trace(out.join("trace.csv"), &result.trace)?;
    if !result.warnings.is_empty() {
        fs::write(out.join("warnings.txt"), result.warnings.join("\n") + "\n")?;
    }
    match result.trace.last() {
        Some(r) => println!("final ELBO {:.6e} after {} iterations", r.terms.total(), result.trace.len()),
        None => println!("no iterations run"),
    }
    if !result.warnings.is_empty() {
        println!("{} ELBO decreases, see warnings.txt", result.warnings.len());
    }
    Ok(())
}

fn write_subject<T: Real>(dir: &Path, name: &str, result: &FitResult<T>, index: usize, subject: &Lattice<T>, descrip: &str) -> Result<()> {
    let state = &result.subjects[index];
    let reg = Registration::from_state(name, result.template.lattice(), subject, state);
    reg.write(dir, descrip).with_context(|| format!("writing registration to {}", dir.display()))?;
    write_labels(&dir.join("segmentation.nii"), &segmentation(&state.z, subject)?, descrip)
}

fn fit_group<T: Real>(images: &[PathBuf], fit: &FitArgs, out: &Path) -> Result<i32> {
    let config = fit.config(FitConfig::default(), FitMode::Groupwise)?;
    let names = subject_names(images);
    let subjects = images
        .iter()
        .zip(&names)
        .map(|(p, name)| -> Result<Subject<T>> {
            let image = read_volume::<T>(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(Subject::new(name.clone(), image))
        })
        .collect::<Result<Vec<_>>>()?;
    let result = fit_groupwise(&subjects, &config)?;
    let descrip = provenance(&config);
    fs::create_dir_all(out)?;
    ModelBundle::new(result.template.clone(), result.shared.clone(), config)?.write(out.join("model"))?;
    for (i, s) in subjects.iter().enumerate() {
        write_subject(&out.join("subjects").join(&s.name), &s.name, &result, i, s.image.lattice(), &descrip)?;
    }
    report(&result, out)?;
    Ok(0)
}

fn fit_one<T: Real>(image: &Path, model: &Path, fit: &FitArgs, out: &Path) -> Result<i32> {
    let bundle = ModelBundle::<T>::read(model).with_context(|| format!("reading model {}", model.display()))?;
    let config = fit.config(bundle.config.clone(), FitMode::FixedTemplate)?;
    if config.k != bundle.config.k {
        bail!("--k {} does not match the model's K = {}", config.k, bundle.config.k);
    }
    let subject = Subject::new(stem(image), read_volume::<T>(image).with_context(|| format!("reading {}", image.display()))?);
    let result = fit_to_template(&subject, &bundle.template, &bundle.shared, &config)?;
    fs::create_dir_all(out)?;
    write_subject(out, &subject.name, &result, 0, subject.image.lattice(), &provenance(&config))?;
    report(&result, out)?;
    Ok(0)
}

fn pairwise(source: &Path, target: &Path, out: &Path) -> Result<i32> {
    let src = Registration::<f64>::read(source).with_context(|| format!("reading registration {}", source.display()))?;
    let tgt = Registration::<f64>::read(target).with_context(|| format!("reading registration {}", target.display()))?;
    let d = compose_pairwise(&src, &tgt)?;
    write_coordinate_map(out, &d, &tgt.subject, &format!("gwreg pairwise {} to {}", tgt.name, src.name))?;
    Ok(0)
}

fn warp(labels: &Path, deformation: &Path, out: &Path) -> Result<i32> {
    let labels = read_labels(labels)?;
    let (d, lattice) = read_coordinate_map::<f64>(deformation).with_context(|| format!("reading {}", deformation.display()))?;
    if d.target() != labels.dims() {
        bail!("the map points into a {:?} grid but the labels are {:?}", d.target(), labels.dims());
    }
    write_labels(out, &warp_labels(&labels, &d, &lattice)?, "gwreg warped labels")?;
    Ok(0)
}

fn overlap(warped: &Path, target: &Path, regions: Vec<u32>, out: &Path) -> Result<i32> {
    let w = read_labels(warped)?;
    let t = read_labels(target)?;
    let regions = if regions.is_empty() { t.regions() } else { regions };
    let o = tpr_overlap(&w, &t, &regions)?;
    let (a, b) = (stem(warped), stem(target));
    write_overlap(out, [(a.as_str(), b.as_str(), &o)])?;
    let show = |x: Option<f64>| x.map_or("undefined".to_string(), |v| format!("{v:.6}"));
    println!("pooled weighted TPR {}", show(o.pooled_weighted));
    println!("pooled unweighted TPR {}", show(o.pooled_unweighted));
    Ok(0)
}

struct Phantom {
    edge: usize,
    voxel: f64,
    sharpness: f64,
    noise: f64,
}

fn synth<T: Real>(model: Option<&Path>, phantom: &Phantom, fit: &FitArgs, out: &Path) -> Result<i32> {
    let bundle = match model {
        Some(m) => {
            let b = ModelBundle::<T>::read(m).with_context(|| format!("reading model {}", m.display()))?;
            let config = fit.config(b.config.clone(), FitMode::Groupwise)?;
            ModelBundle { config, ..b }
        }
        None => {
            let k = fit.k.unwrap_or(3);
            let base = FitConfig::desk(k, PyramidSchedule::single(phantom.voxel, 16)?);
            let config = fit.config(base, FitMode::Groupwise)?;
            let lattice = Lattice::centered([phantom.edge; 3], phantom.voxel);
            ModelBundle::new(phantom_template(lattice, config.k, phantom.sharpness), phantom_appearance(config.k, 1, phantom.noise)?, config)?
        }
    };
    let config = &bundle.config;
    let sample = synth_generate(&bundle.template, &bundle.shared, config, &SynthOptions::default(), config.seed)?;
    let descrip = provenance(config);
    fs::create_dir_all(out)?;
    write_volume(out.join("image.nii"), &sample.image, Datatype::F32, &descrip)?;
    let labels = LabelVolume::from_volume(&sample.labels)?;
    write_labels(&out.join("labels.nii"), &labels, &descrip)?;
    let lattice = bundle.template.lattice();
    let truth = Registration { name: "truth".into(), template: lattice.clone(), subject: lattice.clone(), q: sample.q, phi: sample.phi, phi_inv: sample.phi_inv };
    truth.write(out.join("truth"), &descrip)?;
    if model.is_none() {
        bundle.write(out.join("model"))?;
    }
    Ok(0)
}

struct Decrease {
    level: usize,
    iteration: usize,
    previous: f64,
    current: f64,
}

impl Decrease {
    fn relative(&self) -> f64 {
        (self.current - self.previous) / self.previous.abs().max(f64::MIN_POSITIVE)
    }
}

/// Consecutive rows of one level whose ELBO fell by more than `tolerance`
/// relative to the previous value.
fn decreases(rows: &[TraceRow], tolerance: f64) -> Vec<Decrease> {
    rows.windows(2)
        .filter(|w| w[0].level == w[1].level)
        .map(|w| Decrease { level: w[1].level, iteration: w[1].iteration, previous: w[0].elbo, current: w[1].elbo })
        .filter(|d| d.current < d.previous - tolerance * d.previous.abs())
        .collect()
}

fn elbo_trace(path: &Path, tolerance: f64, strict: bool, out: Option<&Path>) -> Result<i32> {
    let rows = read_trace(path).with_context(|| format!("reading {}", path.display()))?;
    println!("{} rows", rows.len());
    for chunk in rows.chunk_by(|a, b| a.level == b.level) {
        let (first, last) = (chunk[0], chunk[chunk.len() - 1]);
        println!("level {}: {} iterations, ELBO {:.6e} -> {:.6e}", first.level, chunk.len(), first.elbo, last.elbo);
    }
    let found = decreases(&rows, tolerance);
    for d in &found {
        println!("decrease at level {} iteration {}: {:.6e} -> {:.6e} ({:.3e})", d.level, d.iteration, d.previous, d.current, d.relative());
    }
    println!("{} decreases beyond {tolerance:e}", found.len());
    if let Some(out) = out {
        let mut w = csv::Writer::from_path(out)?;
        w.write_record(["level", "iteration", "previous", "current", "relative_change"])?;
        for d in &found {
            w.write_record([d.level.to_string(), d.iteration.to_string(), d.previous.to_string(), d.current.to_string(), d.relative().to_string()])?;
        }
        w.flush()?;
    }
    Ok(if strict && !found.is_empty() { EXIT_DECREASE } else { 0 })
}

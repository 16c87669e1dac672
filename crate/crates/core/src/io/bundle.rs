use std::path::Path;

use super::manifest::Manifest;
use super::nifti::{self, Datatype};
use crate::appearance::{GaussWishart, GwClass};
use crate::error::{Error, Result};
use crate::field::{Deformation, Lattice, OrientedVolume};
use crate::linalg::DMat;
use crate::orchestrator::{FitConfig, SubjectState};
use crate::rigid::RigidParams;
use crate::scalar::Real;
use crate::shape::{subject_affine, warp_map};

/// Version written to, and required in, every manifest.
pub const BUNDLE_VERSION: u32 = 1;

const MODEL_KIND: &str = "gwreg-model";
const REGISTRATION_KIND: &str = "gwreg-registration";

fn check_header(m: &Manifest, kind: &str) -> Result<()> {
    let found = m.require("format")?;
    if found != kind {
        return Err(Error::Bundle(format!("expected a {kind} manifest, found `{found}`")));
    }
    let v: u32 = m.parse_value("format_version")?;
    if v != BUNDLE_VERSION {
        return Err(Error::Bundle(format!("format version {v} is not supported (this build reads {BUNDLE_VERSION})")));
    }
    Ok(())
}

/// A learned model: template logits, the shared Gauss-Wishart priors and
/// the configuration that produced them.
#[derive(Clone, Debug)]
pub struct ModelBundle<T> {
    pub template: OrientedVolume<T>,
    pub shared: GaussWishart,
    pub config: FitConfig,
}

impl<T: Real> ModelBundle<T> {
    pub fn new(template: OrientedVolume<T>, shared: GaussWishart, config: FitConfig) -> Result<Self> {
        let b = ModelBundle { template, shared, config };
        b.validate()?;
        Ok(b)
    }

    fn validate(&self) -> Result<()> {
        if self.template.channels() != self.config.k {
            return Err(Error::Bundle(format!("template has {} channels but K = {}", self.template.channels(), self.config.k)));
        }
        if self.shared.len() != self.config.k + 1 {
            return Err(Error::Bundle(format!("{} Gauss-Wishart classes for K = {}", self.shared.len(), self.config.k)));
        }
        self.shared.validate()
    }

    /// Writes `template.nii` and `manifest.txt` into `dir`, creating it.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let prov = super::provenance(&self.config);
        nifti::write_volume(dir.join("template.nii"), &self.template, Datatype::F32, &prov)?;
        let mut m = Manifest::new();
        m.push("format", MODEL_KIND);
        m.push("format_version", BUNDLE_VERSION);
        m.push("template", "template.nii");
        m.push("template_dims", self.template.dims().map(|d| d.to_string()).join(","));
        m.push("config_hash", super::config_hash(&self.config));
        for (k, v) in self.config.to_key_values() {
            m.push(format!("config.{k}"), v);
        }
        m.push("gw.classes", self.shared.len());
        m.push("gw.channels", self.shared.channels());
        for (i, c) in self.shared.classes.iter().enumerate() {
            m.push_list(format!("gw.{i}.m"), c.m.iter().copied());
            m.push(format!("gw.{i}.beta"), c.beta);
            m.push_list(format!("gw.{i}.w"), c.w.as_slice().iter().copied());
            m.push(format!("gw.{i}.nu"), c.nu);
        }
        m.write(dir.join("manifest.txt"), "gwreg model bundle")
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let m = Manifest::read(dir.join("manifest.txt"))?;
        check_header(&m, MODEL_KIND)?;
        let config = FitConfig::from_key_values(
            m.entries().iter().filter_map(|(k, v)| k.strip_prefix("config.").map(|k| (k, v.as_str()))),
        )?;
        let template: OrientedVolume<T> = nifti::read_volume(dir.join(m.require("template")?))?;
        let dims = m.dims("template_dims")?;
        if template.dims() != dims {
            return Err(Error::Bundle(format!("manifest says template dims {dims:?}, file has {:?}", template.dims())));
        }
        let classes: usize = m.parse_value("gw.classes")?;
        let channels: usize = m.parse_value("gw.channels")?;
        let shared = GaussWishart::new(
            (0..classes)
                .map(|i| {
                    let mean = m.list(&format!("gw.{i}.m"))?;
                    let w = m.list(&format!("gw.{i}.w"))?;
                    if mean.len() != channels || w.len() != channels * channels {
                        return Err(Error::Bundle(format!("class {i} does not have {channels} channels")));
                    }
                    GwClass::new(mean, m.parse_value(&format!("gw.{i}.beta"))?, DMat::from_rows(channels, channels, w), m.parse_value(&format!("gw.{i}.nu"))?)
                })
                .collect::<Result<_>>()?,
        )?;
        Self::new(template, shared, config)
    }
}

/// Everything needed to map one subject to and from template space.
#[derive(Clone, Debug)]
pub struct Registration<T> {
    pub name: String,
    pub template: Lattice<T>,
    pub subject: Lattice<T>,
    pub q: RigidParams<T>,
    /// Template voxels to template voxels.
    pub phi: Deformation<T>,
    pub phi_inv: Deformation<T>,
}

impl<T: Real> Registration<T> {
    pub fn from_state(name: impl Into<String>, template: &Lattice<T>, subject: &Lattice<T>, state: &SubjectState<T>) -> Self {
        Registration {
            name: name.into(),
            template: template.clone(),
            subject: subject.clone(),
            q: state.q,
            phi: state.phi.clone(),
            phi_inv: state.phi_inv.clone(),
        }
    }

    /// `ψ`: subject voxels to template voxels.
    pub fn psi(&self) -> Result<Deformation<T>> {
        let a = subject_affine(&self.template, &self.subject, &self.q)?;
        Ok(warp_map(self.subject.dims(), &a, &self.phi))
    }

    fn write_map(&self, path: &Path, d: &Deformation<T>, descrip: &str) -> Result<()> {
        nifti::write_coordinate_map(path, d, &self.template, descrip)
    }

    fn read_map(&self, path: &Path) -> Result<Deformation<T>> {
        let (d, lattice) = nifti::read_coordinate_map::<T>(path)?;
        let t = &self.template;
        let same = lattice.dims() == t.dims() && d.target() == t.dims() && lattice.vox2world().max_abs_diff(t.vox2world()) < 1e-4;
        if !same {
            return Err(Error::TemplateMismatch(format!("{} is not a map on the template lattice", path.display())));
        }
        Ok(d)
    }

    /// Writes `registration.txt`, `phi.nii` and `phi_inv.nii` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, descrip: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let f = |a: &Lattice<T>| a.vox2world().cast::<f64>();
        let mut m = Manifest::new();
        m.push("format", REGISTRATION_KIND);
        m.push("format_version", BUNDLE_VERSION);
        m.push("name", &self.name);
        m.push("template_dims", self.template.dims().map(|d| d.to_string()).join(","));
        m.push_affine("template_vox2world", &f(&self.template));
        m.push("subject_dims", self.subject.dims().map(|d| d.to_string()).join(","));
        m.push_affine("subject_vox2world", &f(&self.subject));
        m.push_list("q", self.q.q.iter().map(|x| x.f64()));
        m.push("phi", "phi.nii");
        m.push("phi_inv", "phi_inv.nii");
        m.write(dir.join("registration.txt"), "gwreg subject registration")?;
        self.write_map(&dir.join("phi.nii"), &self.phi, descrip)?;
        self.write_map(&dir.join("phi_inv.nii"), &self.phi_inv, descrip)
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let m = Manifest::read(dir.join("registration.txt"))?;
        check_header(&m, REGISTRATION_KIND)?;
        let lattice = |dims: &str, aff: &str| -> Result<Lattice<T>> { Lattice::new(m.dims(dims)?, m.affine(aff)?.cast()) };
        let q = m.list("q")?;
        let q: [f64; 6] = q.try_into().map_err(|_| Error::Bundle("`q` needs 6 values".into()))?;
        let mut r = Registration {
            name: m.require("name")?.to_string(),
            template: lattice("template_dims", "template_vox2world")?,
            subject: lattice("subject_dims", "subject_vox2world")?,
            q: RigidParams::new(q.map(T::of)),
            phi: Deformation::identity([1, 1, 1]),
            phi_inv: Deformation::identity([1, 1, 1]),
        };
        r.phi = r.read_map(&dir.join(m.require("phi")?))?;
        r.phi_inv = r.read_map(&dir.join(m.require("phi_inv")?))?;
        Ok(r)
    }
}

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::regularizer::EnergySpec;
use crate::shape::{BoundDenominator, CgSettings, HessianMix};

/// One pyramid level: template/velocity voxel size in mm and the number of
/// outer iterations run at it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PyramidLevel {
    pub voxel: f64,
    pub iterations: usize,
}

/// Coarse-to-fine levels with strictly decreasing voxel sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct PyramidSchedule {
    levels: Vec<PyramidLevel>,
}

impl PyramidSchedule {
    pub fn new(levels: Vec<PyramidLevel>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidConfig("pyramid schedule needs at least one level".into()));
        }
        for (i, l) in levels.iter().enumerate() {
            if !(l.voxel > 0.0 && l.voxel.is_finite()) {
                return Err(Error::InvalidConfig(format!("level {i}: voxel size must be positive, got {}", l.voxel)));
            }
            if l.iterations == 0 {
                return Err(Error::InvalidConfig(format!("level {i}: iteration count must be at least 1")));
            }
            if i > 0 && !(l.voxel < levels[i - 1].voxel) {
                return Err(Error::InvalidConfig(format!("level {i}: voxel sizes must strictly decrease")));
            }
        }
        Ok(PyramidSchedule { levels })
    }

    /// A single level.
    pub fn single(voxel: f64, iterations: usize) -> Result<Self> {
        Self::new(vec![PyramidLevel { voxel, iterations }])
    }

    /// Levels given as lattice edge lengths over a field of view of
    /// `fov` mm, e.g. `[(8, 8), (16, 8), (32, 16)]`.
    pub fn from_grid_sizes(fov: f64, sizes: &[(usize, usize)]) -> Result<Self> {
        if sizes.iter().any(|&(n, _)| n == 0) {
            return Err(Error::InvalidConfig("grid sizes must be positive".into()));
        }
        Self::new(sizes.iter().map(|&(n, iterations)| PyramidLevel { voxel: fov / n as f64, iterations }).collect())
    }

    /// Desk-scale preset for phantoms with `edge` voxels of `voxel` mm per
    /// side: quarter, half and full resolution.
    pub fn desk(edge: usize, voxel: f64) -> Result<Self> {
        let fov = edge as f64 * voxel;
        let mut sizes: Vec<(usize, usize)> = vec![((edge / 4).max(2), 8), ((edge / 2).max(3), 8), (edge, 16)];
        sizes.dedup_by_key(|s| s.0);
        Self::from_grid_sizes(fov, &sizes)
    }

    pub fn levels(&self) -> &[PyramidLevel] {
        &self.levels
    }

    pub fn total_iterations(&self) -> usize {
        self.levels.iter().map(|l| l.iterations).sum()
    }
}

impl Default for PyramidSchedule {
    /// 8 mm × 8, 4 mm × 8, 2 mm × 8, 1 mm × 16.
    fn default() -> Self {
        Self::from_str("8:8,4:8,2:8,1:16").expect("default schedule")
    }
}

/// `voxel:iterations` pairs separated by commas, coarse to fine.
impl fmt::Display for PyramidSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.levels.iter().map(|l| format!("{}:{}", l.voxel, l.iterations)).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for PyramidSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let levels = s
            .split(',')
            .map(|part| {
                let (v, n) = part
                    .trim()
                    .split_once(':')
                    .ok_or_else(|| Error::InvalidConfig(format!("schedule level `{part}` is not voxel:iterations")))?;
                let voxel = v.trim().parse::<f64>().map_err(|e| Error::InvalidConfig(format!("schedule voxel `{v}`: {e}")))?;
                let iterations = n.trim().parse::<usize>().map_err(|e| Error::InvalidConfig(format!("schedule iterations `{n}`: {e}")))?;
                Ok(PyramidLevel { voxel, iterations })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(levels)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FitMode {
    /// Learn the template from the population.
    Groupwise,
    /// Register to a template learned elsewhere.
    FixedTemplate,
}

impl fmt::Display for FitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FitMode::Groupwise => "groupwise",
            FitMode::FixedTemplate => "fixed-template",
        })
    }
}

impl FromStr for FitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "groupwise" => Ok(FitMode::Groupwise),
            "fixed-template" => Ok(FitMode::FixedTemplate),
            _ => Err(Error::InvalidConfig(format!("unknown fit mode `{s}`"))),
        }
    }
}

impl fmt::Display for BoundDenominator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundDenominator::Stored => "stored",
            BoundDenominator::AllClasses => "all-classes",
        })
    }
}

impl FromStr for BoundDenominator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stored" => Ok(BoundDenominator::Stored),
            "all-classes" => Ok(BoundDenominator::AllClasses),
            _ => Err(Error::InvalidConfig(format!("unknown bound denominator `{s}`"))),
        }
    }
}

/// Everything that determines a fit.
#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    /// Number of stored template classes; the background is class K.
    pub k: usize,
    /// Hessian mixing weight.
    pub w: f64,
    /// Velocity energy weights `[absolute, membrane, bending, shear, divergence]`.
    pub lambda_v: [f64; 5],
    /// Template energy weights `[absolute, membrane, bending]`.
    pub lambda_t: [f64; 3],
    /// Bias bending-energy weight.
    pub lambda_bias: f64,
    /// Shortest bias wavelength in mm.
    pub bias_wavelength: f64,
    /// Euler steps used to shoot each velocity.
    pub steps: usize,
    pub schedule: PyramidSchedule,
    pub seed: u64,
    pub mode: FitMode,
    pub bound: BoundDenominator,
    pub cg: CgSettings,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            k: 11,
            w: 0.8,
            lambda_v: [2e-4, 0.0, 0.4, 0.1, 0.4],
            lambda_t: [1e-2, 0.5, 0.0],
            lambda_bias: 1e5,
            bias_wavelength: 60.0,
            steps: 8,
            schedule: PyramidSchedule::default(),
            seed: 0,
            mode: FitMode::Groupwise,
            bound: BoundDenominator::AllClasses,
            cg: CgSettings::default(),
        }
    }
}

impl FitConfig {
    /// Defaults for small phantoms whose voxels stand for `h³` mm³ of
    /// tissue yet contribute a single data term: the template prior is
    /// divided by the finest voxel volume so data and prior keep the
    /// balance they have on a 1 mm scan.
    pub fn desk(k: usize, schedule: PyramidSchedule) -> Self {
        let h = schedule.levels().last().expect("schedules are never empty").voxel;
        let base = FitConfig::default();
        FitConfig { k, lambda_t: base.lambda_t.map(|x| x / (h * h * h)), schedule, ..base }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("K must be at least 1".into()));
        }
        HessianMix::new(self.w, self.bound)?;
        self.velocity_spec().validate()?;
        self.template_spec().validate()?;
        if !(self.lambda_bias >= 0.0 && self.lambda_bias.is_finite()) {
            return Err(Error::InvalidConfig(format!("bias regularisation must be nonnegative, got {}", self.lambda_bias)));
        }
        if !(self.bias_wavelength > 0.0) {
            return Err(Error::InvalidConfig(format!("bias wavelength must be positive, got {}", self.bias_wavelength)));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("shooting needs at least one step".into()));
        }
        if self.cg.max_iterations == 0 || !(self.cg.tolerance > 0.0) {
            return Err(Error::InvalidConfig("conjugate-gradient cap and tolerance must be positive".into()));
        }
        PyramidSchedule::new(self.schedule.levels.clone())?;
        Ok(())
    }

    pub fn velocity_spec(&self) -> EnergySpec {
        EnergySpec::from_velocity_weights(self.lambda_v)
    }

    pub fn template_spec(&self) -> EnergySpec {
        EnergySpec::from_template_weights(self.lambda_t)
    }

    pub fn mix(&self) -> Result<HessianMix> {
        HessianMix::new(self.w, self.bound)
    }

    /// Canonical `key=value` pairs, in a fixed order.
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",");
        vec![
            ("k".into(), self.k.to_string()),
            ("w".into(), format!("{:e}", self.w)),
            ("lambda_v".into(), join(&self.lambda_v)),
            ("lambda_t".into(), join(&self.lambda_t)),
            ("lambda_bias".into(), format!("{:e}", self.lambda_bias)),
            ("bias_wavelength".into(), format!("{:e}", self.bias_wavelength)),
            ("steps".into(), self.steps.to_string()),
            ("schedule".into(), self.schedule.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("mode".into(), self.mode.to_string()),
            ("bound".into(), self.bound.to_string()),
            ("cg_iterations".into(), self.cg.max_iterations.to_string()),
            ("cg_tolerance".into(), format!("{:e}", self.cg.tolerance)),
        ]
    }

    /// Inverse of [`FitConfig::to_key_values`]; missing keys keep their
    /// defaults, unknown keys are ignored.
    pub fn from_key_values<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        fn num<V: FromStr>(key: &str, v: &str) -> Result<V>
        where
            V::Err: fmt::Display,
        {
            v.trim().parse::<V>().map_err(|e| Error::InvalidConfig(format!("`{key}` = `{v}`: {e}")))
        }
        fn list<const N: usize>(key: &str, v: &str) -> Result<[f64; N]> {
            let xs = v.split(',').map(|x| num::<f64>(key, x)).collect::<Result<Vec<_>>>()?;
            xs.try_into().map_err(|_| Error::InvalidConfig(format!("`{key}` needs {N} values")))
        }
        let mut c = FitConfig::default();
        for (key, v) in pairs {
            match key {
                "k" => c.k = num(key, v)?,
                "w" => c.w = num(key, v)?,
                "lambda_v" => c.lambda_v = list(key, v)?,
                "lambda_t" => c.lambda_t = list(key, v)?,
                "lambda_bias" => c.lambda_bias = num(key, v)?,
                "bias_wavelength" => c.bias_wavelength = num(key, v)?,
                "steps" => c.steps = num(key, v)?,
                "schedule" => c.schedule = v.parse()?,
                "seed" => c.seed = num(key, v)?,
                "mode" => c.mode = v.parse()?,
                "bound" => c.bound = v.parse()?,
                "cg_iterations" => c.cg.max_iterations = num(key, v)?,
                "cg_tolerance" => c.cg.tolerance = num(key, v)?,
                _ => {}
            }
        }
        c.validate()?;
        Ok(c)
    }
}

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gwreg::orchestrator::{FitConfig, FitMode, PyramidSchedule};
use gwreg::shape::BoundDenominator;

#[derive(Parser, Debug)]
#[command(name = "gwreg", version, about = "Groupwise diffeomorphic registration with a joint shape and appearance model")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// More log output; repeat for debug messages.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Learn a template from a population of images.
    FitGroup {
        /// Input NIfTI images, one per subject.
        #[arg(required = true, num_args = 2..)]
        images: Vec<PathBuf>,
        #[command(flatten)]
        fit: FitArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Register one image to a learned model.
    Fit {
        image: PathBuf,
        /// Model bundle directory written by `fit-group`.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compose two registrations into a target-to-source voxel map.
    Pairwise {
        /// Registration directory of the source subject.
        #[arg(long)]
        source: PathBuf,
        /// Registration directory of the target subject.
        #[arg(long)]
        target: PathBuf,
        /// Output NIfTI coordinate map.
        #[arg(long)]
        out: PathBuf,
    },
    /// Pull a label image through a coordinate map.
    WarpLabels {
        /// Source label image.
        #[arg(long)]
        labels: PathBuf,
        /// Coordinate map from `pairwise`.
        #[arg(long)]
        deformation: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-region true positive rates of warped labels against a target.
    Overlap {
        /// Warped source labels.
        #[arg(long)]
        warped: PathBuf,
        /// Target labels.
        #[arg(long)]
        target: PathBuf,
        /// Regions to score, e.g. `1,2,3` (default: every nonzero target label).
        #[arg(long, value_delimiter = ',')]
        regions: Vec<u32>,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample a phantom subject from a model.
    Synth {
        /// Model bundle to sample from (default: a built-in phantom).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Phantom edge length in voxels.
        #[arg(long, default_value_t = 24)]
        edge: usize,
        /// Phantom voxel size in mm.
        #[arg(long, default_value_t = 4.0)]
        voxel: f64,
        /// Phantom logit amplitude.
        #[arg(long, default_value_t = 6.0)]
        sharpness: f64,
        /// Phantom intensity standard deviation.
        #[arg(long, default_value_t = 6.0)]
        noise: f64,
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarise an ELBO trace and list decreases.
    ElboTrace {
        trace: PathBuf,
        /// Relative decrease reported as a violation.
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
        /// Exit with status 3 when a decrease is found.
        #[arg(long)]
        strict: bool,
        /// Also write the decreases as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Bound {
    Stored,
    AllClasses,
}

/// Flags mirroring the fit configuration. Unset flags keep the defaults
/// (or, for `fit`, the values stored in the model).
#[derive(Args, Debug, Clone, Default)]
pub struct FitArgs {
    /// Number of tissue classes besides the background.
    #[arg(long)]
    pub k: Option<usize>,
    /// Hessian mixing weight in [0, 1].
    #[arg(long)]
    pub w: Option<f64>,
    /// Velocity weights: absolute,membrane,bending,shear,divergence.
    #[arg(long, value_delimiter = ',', value_name = "A,M,B,S,D")]
    pub lambda_v: Option<Vec<f64>>,
    /// Template weights: absolute,membrane,bending.
    #[arg(long, value_delimiter = ',', value_name = "A,M,B")]
    pub lambda_t: Option<Vec<f64>>,
    /// Bias bending-energy weight.
    #[arg(long)]
    pub lambda_bias: Option<f64>,
    /// Shortest bias wavelength in mm.
    #[arg(long)]
    pub bias_wavelength: Option<f64>,
    /// Euler steps for shooting.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Pyramid as voxel:iterations pairs, coarse to fine, e.g. `8:8,4:16`.
    #[arg(long)]
    pub schedule: Option<String>,
    /// Hessian bound denominator.
    #[arg(long, value_enum)]
    pub bound: Option<Bound>,
    /// Conjugate-gradient iteration cap.
    #[arg(long)]
    pub cg_iterations: Option<usize>,
    /// Conjugate-gradient relative residual target.
    #[arg(long)]
    pub cg_tolerance: Option<f64>,
    /// Divide the template prior by the finest voxel volume.
    #[arg(long)]
    pub desk: bool,
    /// Seed for `synth`; fits are deterministic and only record it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Scalar type used by the engine.
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    pub precision: Precision,
}

impl FitArgs {
    /// Applies the flags on top of `base`.
    pub fn config(&self, base: FitConfig, mode: FitMode) -> anyhow::Result<FitConfig> {
        let mut c = base;
        c.mode = mode;
        if let Some(k) = self.k {
            c.k = k;
        }
        if let Some(w) = self.w {
            c.w = w;
        }
        if let Some(v) = &self.lambda_v {
            c.lambda_v = v.as_slice().try_into().map_err(|_| anyhow::anyhow!("--lambda-v needs 5 comma-separated values, got {}", v.len()))?;
        }
        if let Some(v) = &self.lambda_t {
            c.lambda_t = v.as_slice().try_into().map_err(|_| anyhow::anyhow!("--lambda-t needs 3 comma-separated values, got {}", v.len()))?;
        }
        if let Some(x) = self.lambda_bias {
            c.lambda_bias = x;
        }
        if let Some(x) = self.bias_wavelength {
            c.bias_wavelength = x;
        }
        if let Some(x) = self.steps {
            c.steps = x;
        }
        if let Some(s) = &self.schedule {
            c.schedule = s.parse::<PyramidSchedule>()?;
        }
        if let Some(b) = self.bound {
            c.bound = match b {
                Bound::Stored => BoundDenominator::Stored,
                Bound::AllClasses => BoundDenominator::AllClasses,
            };
        }
        if let Some(x) = self.cg_iterations {
            c.cg.max_iterations = x;
        }
        if let Some(x) = self.cg_tolerance {
            c.cg.tolerance = x;
        }
        if self.desk {
            let h = c.schedule.levels().last().expect("schedules are never empty").voxel;
            c.lambda_t = c.lambda_t.map(|x| x / (h * h * h));
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        c.validate()?;
        Ok(c)
    }
}

//! Groupwise diffeomorphic registration by variational EM on a joint
//! shape and appearance model.

// index loops mirror the maths; `!(x > 0)` deliberately rejects NaN
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod appearance;
pub mod diffeo;
pub mod error;
pub mod eval;
pub mod field;
pub mod io;
pub mod linalg;
pub mod orchestrator;
pub mod regularizer;
pub mod rigid;
pub mod scalar;
pub mod shape;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Real;

/// Single and double precision instantiations of the main types.
pub type VolumeF32 = field::OrientedVolume<f32>;
pub type VolumeF64 = field::OrientedVolume<f64>;
pub type LatticeF32 = field::Lattice<f32>;
pub type LatticeF64 = field::Lattice<f64>;
pub type DeformationF32 = field::Deformation<f32>;
pub type DeformationF64 = field::Deformation<f64>;
pub type VelocityFieldF32 = diffeo::VelocityField<f32>;
pub type VelocityFieldF64 = diffeo::VelocityField<f64>;
pub type SubjectF32 = orchestrator::Subject<f32>;
pub type SubjectF64 = orchestrator::Subject<f64>;
pub type FitResultF32 = orchestrator::FitResult<f32>;
pub type FitResultF64 = orchestrator::FitResult<f64>;
pub type LabelVolumeF32 = eval::LabelVolume<f32>;
pub type LabelVolumeF64 = eval::LabelVolume<f64>;

use crate::error::{Error, Result};
use crate::linalg::Affine;
use crate::scalar::Real;

/// Product `outer · rigid · inner`, the affine part of the forward
/// deformation. Every factor must be invertible.
pub fn affine_chain<T: Real>(outer: &Affine<T>, rigid: &Affine<T>, inner: &Affine<T>) -> Result<Affine<T>> {
    for (name, m) in [("template matrix", outer), ("rigid matrix", rigid), ("subject matrix", inner)] {
        if m.inverse().is_none() {
            return Err(Error::SingularMatrix(name.into()));
        }
    }
    Ok(outer.mul(rigid).mul(inner))
}

/// Maps subject voxels to template voxels: `M_t⁻¹ · R · M_n`.
pub fn subject_to_template<T: Real>(template_vox2world: &Affine<T>, rigid: &Affine<T>, subject_vox2world: &Affine<T>) -> Result<Affine<T>> {
    let mt_inv = template_vox2world.inverse().ok_or_else(|| Error::SingularMatrix("template matrix".into()))?;
    affine_chain(&mt_inv, rigid, subject_vox2world)
}

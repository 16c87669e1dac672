//! Preconditioned conjugate gradients on flat `f64` vectors.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgSettings {
    pub max_iterations: usize,
    /// Stop once `‖r‖ / ‖b‖` drops below this.
    pub tolerance: f64,
}

impl Default for CgSettings {
    fn default() -> Self {
        CgSettings { max_iterations: 32, tolerance: 1e-4 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    /// Final relative residual `‖b − Ax‖ / ‖b‖`.
    pub residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` from `x = 0`. Hitting the iteration cap is reported in
/// the outcome rather than as an error, since every iterate reduces the
/// quadratic model; non-finite values or a residual that never dropped
/// below its starting value are errors.
pub fn pcg(
    apply: impl Fn(&[f64]) -> Result<Vec<f64>>,
    precondition: impl Fn(&[f64]) -> Result<Vec<f64>>,
    b: &[f64],
    settings: &CgSettings,
) -> Result<(Vec<f64>, CgOutcome)> {
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, CgOutcome { iterations: 0, residual: 0.0, converged: true }));
    }
    if !bnorm.is_finite() {
        return Err(Error::NonFinite("conjugate-gradient right-hand side".into()));
    }
    let mut r = b.to_vec();
    let mut z = precondition(&r)?;
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut residual = 1.0;
    let mut iterations = 0;
    while iterations < settings.max_iterations {
        let ap = apply(&p)?;
        let pap = dot(&p, &ap);
        if !(pap > 0.0) || !pap.is_finite() {
            if iterations == 0 {
                return Err(Error::CgDiverged { iterations, residual });
            }
            break;
        }
        let alpha = rz / pap;
        for j in 0..n {
            x[j] += alpha * p[j];
            r[j] -= alpha * ap[j];
        }
        iterations += 1;
        residual = dot(&r, &r).sqrt() / bnorm;
        if !residual.is_finite() {
            return Err(Error::CgDiverged { iterations, residual });
        }
        if residual < settings.tolerance {
            break;
        }
        z = precondition(&r)?;
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for j in 0..n {
            p[j] = z[j] + beta * p[j];
        }
    }
    if residual >= 1.0 {
        return Err(Error::CgDiverged { iterations, residual });
    }
    let converged = residual < settings.tolerance;
    if !converged {
        log::debug!("conjugate gradient stopped at the cap: {iterations} iterations, relative residual {residual:.3e}");
    }
    Ok((x, CgOutcome { iterations, residual, converged }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DMat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn solves_spd_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 20;
        let a = DMat::from_rows(n, n, (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect());
        let m = a.mul(&a.transpose()).add(&DMat::identity(n));
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let settings = CgSettings { max_iterations: 200, tolerance: 1e-12 };
        let (x, out) = pcg(|v| Ok(m.mul_vec(v)), |v| Ok(v.to_vec()), &b, &settings).unwrap();
        assert!(out.converged);
        let r = m.mul_vec(&x);
        assert!(r.iter().zip(&b).all(|(a, b)| (a - b).abs() < 1e-10));
    }

    #[test]
    fn exact_preconditioner_converges_in_one_step() {
        let d = [1.0, 10.0, 100.0];
        let (x, out) = pcg(
            |v| Ok(v.iter().zip(&d).map(|(a, b)| a * b).collect()),
            |v| Ok(v.iter().zip(&d).map(|(a, b)| a / b).collect()),
            &[1.0, 1.0, 1.0],
            &CgSettings::default(),
        )
        .unwrap();
        assert_eq!(out.iterations, 1);
        assert!((x[2] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let (x, out) = pcg(|v| Ok(v.to_vec()), |v| Ok(v.to_vec()), &[0.0; 4], &CgSettings::default()).unwrap();
        assert_eq!(x, vec![0.0; 4]);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn indefinite_operator_is_an_error() {
        let r = pcg(|v| Ok(v.iter().map(|a| -a).collect()), |v| Ok(v.to_vec()), &[1.0, 2.0], &CgSettings::default());
        assert!(matches!(r, Err(Error::CgDiverged { .. })));
    }
}

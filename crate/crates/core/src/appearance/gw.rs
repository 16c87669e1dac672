//! Gauss-Wishart distributions over a Gaussian's mean and precision.

use std::f64::consts::{LN_2, PI};

use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::linalg::DMat;

/// `μ | Λ ~ N(m, (βΛ)⁻¹)`, `Λ ~ W(W, ν)` for one class.
#[derive(Clone, Debug, PartialEq)]
pub struct GwClass {
    pub m: Vec<f64>,
    pub beta: f64,
    pub w: DMat<f64>,
    pub nu: f64,
}

impl GwClass {
    pub fn new(m: Vec<f64>, beta: f64, w: DMat<f64>, nu: f64) -> Result<Self> {
        let g = GwClass { m, beta, w, nu };
        g.validate()?;
        Ok(g)
    }

    /// Class with isotropic precision `W = I·precision/ν`, i.e. expected
    /// precision `precision·I`.
    pub fn isotropic(m: Vec<f64>, beta: f64, precision: f64, nu: f64) -> Result<Self> {
        let c = m.len();
        Self::new(m, beta, DMat::identity(c).scale(precision / nu), nu)
    }

    pub fn channels(&self) -> usize {
        self.m.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.m.len();
        if c == 0 || self.w.rows() != c || self.w.cols() != c {
            return Err(Error::dims("Gauss-Wishart scale matrix", c, self.w.rows()));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig(format!("Gauss-Wishart beta must be positive, got {}", self.beta)));
        }
        if !(self.nu > c as f64 - 1.0 && self.nu.is_finite()) {
            return Err(Error::InvalidConfig(format!("Gauss-Wishart nu must exceed {}, got {}", c as f64 - 1.0, self.nu)));
        }
        if !self.m.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("Gauss-Wishart mean".into()));
        }
        let scale = self.w.norm_inf();
        for i in 0..c {
            for j in 0..i {
                if (self.w[(i, j)] - self.w[(j, i)]).abs() > 1e-10 * scale {
                    return Err(Error::NotPositiveDefinite("Gauss-Wishart scale matrix is not symmetric".into()));
                }
            }
        }
        self.w.cholesky().ok_or_else(|| Error::NotPositiveDefinite("Gauss-Wishart scale matrix".into()))?;
        Ok(())
    }

    fn log_det_w(&self) -> Result<f64> {
        Ok(self.w.cholesky().ok_or_else(|| Error::NotPositiveDefinite("Gauss-Wishart scale matrix".into()))?.log_det())
    }

    /// `E[ln |Λ|]`.
    pub fn expected_log_det(&self) -> Result<f64> {
        let c = self.channels();
        let psi: f64 = (1..=c).map(|i| digamma((self.nu + 1.0 - i as f64) / 2.0)).sum();
        Ok(psi + c as f64 * LN_2 + self.log_det_w()?)
    }

    /// `E[Λ] = νW`.
    pub fn expected_precision(&self) -> DMat<f64> {
        self.w.scale(self.nu)
    }

    /// `E[ln N(y; μ, Λ⁻¹)]` as a closure-friendly precomputation.
    pub fn log_likelihood_terms(&self) -> Result<ClassTerms> {
        let c = self.channels() as f64;
        Ok(ClassTerms {
            m: self.m.clone(),
            lambda: self.expected_precision(),
            constant: 0.5 * self.expected_log_det()? - 0.5 * c * (2.0 * PI).ln() - 0.5 * c / self.beta,
        })
    }
}

/// Precomputed pieces of `E[ln N(y; μ_k, Λ_k⁻¹)]`.
#[derive(Clone, Debug)]
pub struct ClassTerms {
    pub m: Vec<f64>,
    pub lambda: DMat<f64>,
    pub constant: f64,
}

impl ClassTerms {
    #[inline]
    pub fn log_likelihood(&self, y: &[f64]) -> f64 {
        let c = self.m.len();
        let mut q = 0.0;
        for i in 0..c {
            let di = y[i] - self.m[i];
            let mut row = 0.0;
            for j in 0..c {
                row += self.lambda[(i, j)] * (y[j] - self.m[j]);
            }
            q += di * row;
        }
        self.constant - 0.5 * q
    }
}

/// `ln B(W, ν)`, the Wishart normaliser.
fn ln_wishart_norm(log_det_w: f64, nu: f64, c: usize) -> f64 {
    let cf = c as f64;
    let lg: f64 = (1..=c).map(|i| ln_gamma((nu + 1.0 - i as f64) / 2.0)).sum();
    -0.5 * nu * log_det_w - 0.5 * nu * cf * LN_2 - 0.25 * cf * (cf - 1.0) * PI.ln() - lg
}

/// `E_q[ln p(μ, Λ)]` for `q`, `p` Gauss-Wishart.
pub fn expected_log_prior(q: &GwClass, p: &GwClass) -> Result<f64> {
    let c = q.channels();
    if p.channels() != c {
        return Err(Error::dims("Gauss-Wishart channels", c, p.channels()));
    }
    let cf = c as f64;
    let elog = q.expected_log_det()?;
    let d: Vec<f64> = q.m.iter().zip(&p.m).map(|(a, b)| a - b).collect();
    let quad = q.w.bilinear(&d, &d);
    let p_chol = p.w.cholesky().ok_or_else(|| Error::NotPositiveDefinite("prior scale matrix".into()))?;
    let trace: f64 = p_chol.inverse().mul(&q.w).trace();
    Ok(0.5 * (cf * (p.beta / (2.0 * PI)).ln() + elog - cf * p.beta / q.beta - p.beta * q.nu * quad)
        + ln_wishart_norm(p_chol.log_det(), p.nu, c)
        + 0.5 * (p.nu - cf - 1.0) * elog
        - 0.5 * q.nu * trace)
}

/// `E_q[ln q(μ, Λ)]`.
pub fn negative_entropy(q: &GwClass) -> Result<f64> {
    let cf = q.channels() as f64;
    let elog = q.expected_log_det()?;
    let entropy_w = -ln_wishart_norm(q.log_det_w()?, q.nu, q.channels()) - 0.5 * (q.nu - cf - 1.0) * elog + 0.5 * q.nu * cf;
    Ok(0.5 * elog + 0.5 * cf * (q.beta / (2.0 * PI)).ln() - 0.5 * cf - entropy_w)
}

/// `KL(q ‖ p)`.
pub fn kl(q: &GwClass, p: &GwClass) -> Result<f64> {
    Ok(negative_entropy(q)? - expected_log_prior(q, p)?)
}

/// One Gauss-Wishart per class, the implicit background class last.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussWishart {
    pub classes: Vec<GwClass>,
}

impl GaussWishart {
    pub fn new(classes: Vec<GwClass>) -> Result<Self> {
        let g = GaussWishart { classes };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        for k in &self.classes {
            if k.channels() != c {
                return Err(Error::dims("Gauss-Wishart channels", c, k.channels()));
            }
            k.validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.classes.first().map_or(0, |k| k.channels())
    }

    pub fn terms(&self) -> Result<Vec<ClassTerms>> {
        self.classes.iter().map(|k| k.log_likelihood_terms()).collect()
    }

    /// `Σ_k KL(self_k ‖ prior_k)`.
    pub fn kl(&self, prior: &GaussWishart) -> Result<f64> {
        if prior.len() != self.len() {
            return Err(Error::dims("Gauss-Wishart classes", self.len(), prior.len()));
        }
        self.classes.iter().zip(&prior.classes).map(|(q, p)| kl(q, p)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn class2() -> GwClass {
        GwClass::new(vec![1.0, -2.0], 3.0, DMat::from_rows(2, 2, vec![0.5, 0.1, 0.1, 0.3]), 7.0).unwrap()
    }

    #[test]
    fn kl_of_identical_is_zero() {
        let q = class2();
        assert!(kl(&q, &q).unwrap().abs() < 1e-12);
    }

    #[test]
    fn kl_is_positive_for_different() {
        let q = class2();
        let mut p = q.clone();
        p.m[0] += 0.5;
        p.nu = 4.0;
        p.beta = 0.5;
        assert!(kl(&q, &p).unwrap() > 0.0);
    }

    #[test]
    fn expected_log_det_univariate() {
        // for C = 1, E[ln λ] = ψ(ν/2) + ln 2 + ln W
        let g = GwClass::new(vec![0.0], 1.0, DMat::from_rows(1, 1, vec![0.25]), 5.0).unwrap();
        assert_relative_eq!(g.expected_log_det().unwrap(), digamma(2.5) + LN_2 + 0.25f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn univariate_kl_matches_normal_gamma_closed_form() {
        // C = 1 Gauss-Wishart is a normal-gamma with shape ν/2 and rate 1/(2W)
        let q = GwClass::new(vec![0.3], 2.0, DMat::from_rows(1, 1, vec![0.4]), 6.0).unwrap();
        let p = GwClass::new(vec![-0.1], 0.5, DMat::from_rows(1, 1, vec![1.5]), 3.0).unwrap();
        let (aq, bq) = (q.nu / 2.0, 1.0 / (2.0 * q.w[(0, 0)]));
        let (ap, bp) = (p.nu / 2.0, 1.0 / (2.0 * p.w[(0, 0)]));
        let kl_gamma = (aq - ap) * digamma(aq) - ln_gamma(aq) + ln_gamma(ap) + ap * (bq / bp).ln() + aq * (bp - bq) / bq;
        let e_lambda = aq / bq;
        let kl_normal = 0.5 * (p.beta / q.beta - 1.0 - (p.beta / q.beta).ln() + p.beta * e_lambda * (q.m[0] - p.m[0]).powi(2));
        assert_relative_eq!(kl(&q, &p).unwrap(), kl_gamma + kl_normal, epsilon = 1e-12);
    }

    #[test]
    fn rejects_invalid() {
        assert!(GwClass::new(vec![0.0], 1.0, DMat::from_rows(1, 1, vec![-1.0]), 2.0).is_err());
        assert!(GwClass::new(vec![0.0, 0.0], 1.0, DMat::identity(2), 0.5).is_err());
        assert!(GwClass::new(vec![0.0], 0.0, DMat::identity(1), 2.0).is_err());
    }
}

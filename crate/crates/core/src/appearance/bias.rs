//! Multiplicative intensity non-uniformity `b = exp(Υβ)` over a product
//! cosine basis.
//!
//! The constant basis function is left out, so every log-field has zero
//! mean over the lattice and the bias cannot trade off against the class
//! means.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::DMat;

#[derive(Clone, Debug, PartialEq)]
pub struct BiasField {
    dims: [usize; 3],
    counts: [usize; 3],
    /// Per axis, `counts[d]` rows of `dims[d]` samples.
    basis: [Vec<f64>; 3],
    coeffs: Vec<Vec<f64>>,
    prior: Vec<f64>,
}

impl BiasField {
    /// Chooses per-axis basis counts so the shortest retained wavelength is
    /// about `wavelength` mm.
    pub fn new(dims: [usize; 3], voxel: [f64; 3], channels: usize, wavelength: f64, lambda: f64) -> Result<Self> {
        if !(wavelength > 0.0) {
            return Err(Error::InvalidConfig(format!("bias wavelength must be positive, got {wavelength}")));
        }
        let counts = [0, 1, 2].map(|d| (2.0 * dims[d] as f64 * voxel[d] / wavelength).floor() as usize + 1);
        Self::with_counts(dims, voxel, channels, counts, lambda)
    }

    pub fn with_counts(dims: [usize; 3], voxel: [f64; 3], channels: usize, counts: [usize; 3], lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("bias regularisation must be nonnegative, got {lambda}")));
        }
        if dims.contains(&0) || voxel.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::InvalidConfig("bias lattice needs positive dims and voxel sizes".into()));
        }
        let counts = [0, 1, 2].map(|d| counts[d].clamp(1, dims[d]));
        let basis = [0, 1, 2].map(|d| {
            let n = dims[d];
            let mut b = Vec::with_capacity(counts[d] * n);
            for k in 0..counts[d] {
                let s = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
                b.extend((0..n).map(|x| s * (PI * k as f64 * (x as f64 + 0.5) / n as f64).cos()));
            }
            b
        });
        let dx = voxel.iter().product::<f64>();
        let w2 = |d: usize, k: usize| (PI * k as f64 / (dims[d] as f64 * voxel[d])).powi(2);
        let mut prior = Vec::new();
        for c in 0..counts[2] {
            for b in 0..counts[1] {
                for a in 0..counts[0] {
                    if a + b + c > 0 {
                        prior.push(lambda * dx * (w2(0, a) + w2(1, b) + w2(2, c)).powi(2));
                    }
                }
            }
        }
        let m = prior.len();
        Ok(BiasField { dims, counts, basis, coeffs: vec![vec![0.0; m]; channels], prior })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn channels(&self) -> usize {
        self.coeffs.len()
    }

    /// Number of coefficients per channel.
    pub fn len(&self) -> usize {
        self.prior.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prior.is_empty()
    }

    pub fn coeffs(&self, c: usize) -> &[f64] {
        &self.coeffs[c]
    }

    pub fn set_coeffs(&mut self, c: usize, beta: Vec<f64>) -> Result<()> {
        if beta.len() != self.len() {
            return Err(Error::dims("bias coefficients", self.len(), beta.len()));
        }
        if !beta.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("bias coefficients".into()));
        }
        self.coeffs[c] = beta;
        Ok(())
    }

    /// Diagonal of the prior precision `Λ_β`.
    pub fn prior_precision(&self) -> &[f64] {
        &self.prior
    }

    /// `½ Σ_c β_cᵀ Λ_β β_c`.
    pub fn prior_energy(&self) -> f64 {
        self.coeffs.iter().map(|b| 0.5 * b.iter().zip(&self.prior).map(|(x, l)| l * x * x).sum::<f64>()).sum()
    }

    fn phi(&self, d: usize, k: usize, x: usize) -> f64 {
        self.basis[d][k * self.dims[d] + x]
    }

    /// Coefficient vector expanded to the full cube with a zero constant term.
    fn cube(&self, beta: &[f64]) -> Vec<f64> {
        let mut cube = vec![0.0; self.counts.iter().product()];
        cube[1..].copy_from_slice(beta);
        cube
    }

    /// `Υβ` for an arbitrary coefficient vector.
    pub fn synthesize(&self, beta: &[f64]) -> Vec<f64> {
        let [nx, ny, nz] = self.dims;
        let [ma, mb, mc] = self.counts;
        let cube = self.cube(beta);
        // contract z, then y, then x
        let mut t1 = vec![0.0; ma * mb * nz];
        for z in 0..nz {
            for c in 0..mc {
                let p = self.phi(2, c, z);
                for ab in 0..ma * mb {
                    t1[ab + ma * mb * z] += cube[ab + ma * mb * c] * p;
                }
            }
        }
        let mut t2 = vec![0.0; ma * ny * nz];
        for z in 0..nz {
            for y in 0..ny {
                for b in 0..mb {
                    let p = self.phi(1, b, y);
                    for a in 0..ma {
                        t2[a + ma * (y + ny * z)] += t1[a + ma * (b + mb * z)] * p;
                    }
                }
            }
        }
        let mut out = vec![0.0; nx * ny * nz];
        for yz in 0..ny * nz {
            for a in 0..ma {
                let coef = t2[a + ma * yz];
                if coef == 0.0 {
                    continue;
                }
                for x in 0..nx {
                    out[x + nx * yz] += coef * self.phi(0, a, x);
                }
            }
        }
        out
    }

    /// Log-field of channel `c`.
    pub fn log_field(&self, c: usize) -> Vec<f64> {
        self.synthesize(&self.coeffs[c])
    }

    /// `Υᵀ g`.
    pub fn project(&self, g: &[f64]) -> Vec<f64> {
        let [nx, ny, nz] = self.dims;
        let [ma, mb, mc] = self.counts;
        let mut u1 = vec![0.0; ma * ny * nz];
        for yz in 0..ny * nz {
            for a in 0..ma {
                u1[a + ma * yz] = (0..nx).map(|x| g[x + nx * yz] * self.phi(0, a, x)).sum();
            }
        }
        let mut u2 = vec![0.0; ma * mb * nz];
        for z in 0..nz {
            for b in 0..mb {
                for y in 0..ny {
                    let p = self.phi(1, b, y);
                    for a in 0..ma {
                        u2[a + ma * (b + mb * z)] += u1[a + ma * (y + ny * z)] * p;
                    }
                }
            }
        }
        let mut u3 = vec![0.0; ma * mb * mc];
        for c in 0..mc {
            for z in 0..nz {
                let p = self.phi(2, c, z);
                for ab in 0..ma * mb {
                    u3[ab + ma * mb * c] += u2[ab + ma * mb * z] * p;
                }
            }
        }
        u3.split_off(1)
    }

    /// `Υᵀ diag(h) Υ`, accumulated one axis at a time.
    pub fn weighted_gram(&self, h: &[f64]) -> DMat<f64> {
        let [nx, ny, nz] = self.dims;
        let [ma, mb, mc] = self.counts;
        let (a2, b2) = (ma * ma, mb * mb);
        // t1[(a, a'), y, z]
        let mut t1 = vec![0.0; a2 * ny * nz];
        for yz in 0..ny * nz {
            for x in 0..nx {
                let hv = h[x + nx * yz];
                if hv == 0.0 {
                    continue;
                }
                for a in 0..ma {
                    let pa = hv * self.phi(0, a, x);
                    for a_ in 0..ma {
                        t1[a * ma + a_ + a2 * yz] += pa * self.phi(0, a_, x);
                    }
                }
            }
        }
        // t2[(a, a'), (b, b'), z]
        let mut t2 = vec![0.0; a2 * b2 * nz];
        for z in 0..nz {
            for y in 0..ny {
                for b in 0..mb {
                    for b_ in 0..mb {
                        let p = self.phi(1, b, y) * self.phi(1, b_, y);
                        let dst = a2 * (b * mb + b_ + b2 * z);
                        let src = a2 * (y + ny * z);
                        for aa in 0..a2 {
                            t2[dst + aa] += t1[src + aa] * p;
                        }
                    }
                }
            }
        }
        let full = ma * mb * mc;
        let mut g = DMat::zeros(full - 1, full - 1);
        for c in 0..mc {
            for c_ in 0..mc {
                let mut t3 = vec![0.0; a2 * b2];
                for z in 0..nz {
                    let p = self.phi(2, c, z) * self.phi(2, c_, z);
                    for ab in 0..a2 * b2 {
                        t3[ab] += t2[ab + a2 * b2 * z] * p;
                    }
                }
                for b in 0..mb {
                    for b_ in 0..mb {
                        for a in 0..ma {
                            for a_ in 0..ma {
                                let i = a + ma * (b + mb * c);
                                let j = a_ + ma * (b_ + mb * c_);
                                if i > 0 && j > 0 {
                                    g[(i - 1, j - 1)] = t3[a * ma + a_ + a2 * (b * mb + b_)];
                                }
                            }
                        }
                    }
                }
            }
        }
        g
    }
}

//! Three-dimensional complex FFT assembled from 1-D transforms.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub struct Fft3 {
    dims: [usize; 3],
    forward: [Arc<dyn Fft<f64>>; 3],
    inverse: [Arc<dyn Fft<f64>>; 3],
}

impl std::fmt::Debug for Fft3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft3").field("dims", &self.dims).finish()
    }
}

impl Fft3 {
    pub fn new(dims: [usize; 3]) -> Self {
        let mut planner = FftPlanner::new();
        let forward = dims.map(|n| planner.plan_fft_forward(n));
        let inverse = dims.map(|n| planner.plan_fft_inverse(n));
        Fft3 { dims, forward, inverse }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.forward);
    }

    /// Inverse transform, normalised so that `inverse(forward(x)) = x`.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inverse);
        let s = 1.0 / self.len() as f64;
        data.iter_mut().for_each(|c| *c *= s);
    }

    fn transform(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>; 3]) {
        let [nx, ny, nz] = self.dims;
        assert_eq!(data.len(), nx * ny * nz);
        if nx > 1 {
            for row in data.chunks_exact_mut(nx) {
                plans[0].process(row);
            }
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); ny.max(nz)];
        if ny > 1 {
            for z in 0..nz {
                for x in 0..nx {
                    for y in 0..ny {
                        buf[y] = data[x + nx * (y + ny * z)];
                    }
                    plans[1].process(&mut buf[..ny]);
                    for y in 0..ny {
                        data[x + nx * (y + ny * z)] = buf[y];
                    }
                }
            }
        }
        if nz > 1 {
            for y in 0..ny {
                for x in 0..nx {
                    for z in 0..nz {
                        buf[z] = data[x + nx * (y + ny * z)];
                    }
                    plans[2].process(&mut buf[..nz]);
                    for z in 0..nz {
                        data[x + nx * (y + ny * z)] = buf[z];
                    }
                }
            }
        }
    }
}

/// Angular frequency of bin `k` on an axis of length `n`.
#[inline]
pub fn omega(k: usize, n: usize) -> f64 {
    2.0 * std::f64::consts::PI * k as f64 / n as f64
}

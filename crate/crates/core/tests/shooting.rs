use gwreg::diffeo::{compose, jacobian_det, shoot, shoot_path, VelocityField, VelocityMetric};
use gwreg::field::{voxels, Deformation};
use gwreg::linalg::det3;
use gwreg::regularizer::EnergySpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SPEC: [f64; 5] = [2e-4, 0.0, 0.4, 0.1, 0.4];

/// Smooth random velocity built from the lowest Fourier modes, rescaled so the
/// largest finite difference of any component is `slope` voxels per voxel.
fn smooth_velocity(dims: [usize; 3], slope: f64, seed: u64) -> (VelocityField<f64>, VelocityMetric) {
    let metric = VelocityMetric::new(EnergySpec::from_velocity_weights(SPEC), dims, [1.0; 3]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = dims.iter().product();
    let mut data = vec![0.0f64; 3 * n];
    let tau = 2.0 * std::f64::consts::PI;
    for c in 0..3 {
        for _ in 0..6 {
            let k: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1i32..=1) as f64);
            let (amp, phase) = (rng.random_range(-1.0..1.0), rng.random_range(0.0..tau));
            for (i, p) in voxels(dims).enumerate() {
                let arg: f64 = (0..3).map(|a| tau * k[a] * p[a] as f64 / dims[a] as f64).sum();
                data[c * n + i] += amp * (arg + phase).sin();
            }
        }
    }
    let mut g = 0.0f64;
    for c in 0..3 {
        for (i, p) in voxels(dims).enumerate() {
            for a in 0..3 {
                let mut q = p;
                q[a] = (q[a] + 1) % dims[a];
                let j = q[0] + dims[0] * (q[1] + dims[1] * q[2]);
                g = g.max((data[c * n + j] - data[c * n + i]).abs());
            }
        }
    }
    data.iter_mut().for_each(|x| *x *= slope / g);
    (VelocityField::new(dims, data).unwrap(), metric)
}

/// Largest `|φ(φ⁻¹(x)) − x|` over voxels at least `margin` away from every face.
fn inversion_error(v: &VelocityField<f64>, metric: &VelocityMetric, steps: usize, margin: usize) -> f64 {
    let (phi, inv) = shoot(v, metric, steps).unwrap();
    let dims = v.dims();
    let comp = compose(&phi, &inv).unwrap();
    let mut worst = 0.0f64;
    for (i, p) in voxels(dims).enumerate() {
        if (0..3).all(|a| p[a] >= margin && p[a] + margin < dims[a]) {
            let d: f64 = (0..3).map(|k| (comp.map()[i][k] - p[k] as f64).powi(2)).sum::<f64>().sqrt();
            worst = worst.max(d);
        }
    }
    worst
}

#[test]
fn shooting_self_inversion_and_convergence() {
    let dims = [32, 32, 32];
    for seed in [1, 2] {
        let (v, metric) = smooth_velocity(dims, 0.25, seed);
        let e8 = inversion_error(&v, &metric, 8, 4);
        let e16 = inversion_error(&v, &metric, 16, 4);
        println!("seed {seed}: |φ∘φ⁻¹ − id|∞ steps=8 {e8:.4}, steps=16 {e16:.4}");
        assert!(e8 < 0.1, "steps=8 inversion error {e8}");
        assert!(e16 < e8, "doubling steps must reduce the error: {e16} vs {e8}");
    }
}

#[test]
fn geodesic_energy_is_conserved() {
    let (v, metric) = smooth_velocity([32, 32, 32], 0.25, 3);
    let shot = shoot_path(&v, &metric, 8, true).unwrap();
    let (e0, e1) = (shot.energies[0], *shot.energies.last().unwrap());
    println!("kinetic energy t=0 {e0:.6e}, t=1 {e1:.6e}");
    assert!((e1 - e0).abs() / e0 <= 0.05);
}

#[test]
fn composition_is_associative_for_smooth_maps() {
    let dims = [32, 32, 32];
    let make = |seed| {
        let (v, metric) = smooth_velocity(dims, 0.05, seed);
        shoot(&v, &metric, 4).unwrap().0
    };
    let (a, b, c) = (make(10), make(11), make(12));
    let left = compose(&compose(&a, &b).unwrap(), &c).unwrap();
    let right = compose(&a, &compose(&b, &c).unwrap()).unwrap();
    // compare away from the faces, where clamped extension is exact
    let mut worst = 0.0f64;
    for (i, p) in voxels(dims).enumerate() {
        if p.iter().all(|&x| (4..28).contains(&x)) {
            let d: f64 = (0..3).map(|k| (left.map()[i][k] - right.map()[i][k]).powi(2)).sum::<f64>().sqrt();
            worst = worst.max(d);
        }
    }
    println!("associativity defect {worst:.2e}");
    assert!(worst < 1e-3, "associativity defect {worst}");
}

#[test]
fn jacobian_matches_finite_difference_oracle() {
    let dims = [9, 8, 7];
    let d = Deformation::<f64>::from_fn(dims, dims, |p| {
        let [x, y, z] = p.map(|v| v as f64);
        [x + 0.3 * (0.4 * y).sin(), y + 0.2 * (0.3 * z + x * 0.1).cos(), z + 0.1 * x * y / 10.0]
    });
    let got = jacobian_det(&d);
    let map = d.map();
    let idx = |x: usize, y: usize, z: usize| x + dims[0] * (y + dims[1] * z);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = [x, y, z];
                let mut j = [[0.0; 3]; 3];
                for a in 0..3 {
                    let mut lo = p;
                    let mut hi = p;
                    if p[a] > 0 {
                        lo[a] -= 1;
                    }
                    if p[a] + 1 < dims[a] {
                        hi[a] += 1;
                    }
                    let span = (hi[a] - lo[a]) as f64;
                    for c in 0..3 {
                        j[c][a] = (map[idx(hi[0], hi[1], hi[2])][c] - map[idx(lo[0], lo[1], lo[2])][c]) / span;
                    }
                }
                let expect = det3(&j);
                assert!((got[idx(x, y, z)] - expect).abs() < 1e-6);
            }
        }
    }
}

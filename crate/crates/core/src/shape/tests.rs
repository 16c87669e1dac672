use super::*;
use crate::diffeo::VelocityMetric;
use crate::linalg::DMat;
use crate::regularizer::{EnergySpec, Regularizer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TDIMS: [usize; 3] = [8, 8, 8];
const SDIMS: [usize; 3] = [9, 10, 8];

fn template_lattice() -> Lattice<f64> {
    Lattice::centered(TDIMS, 2.0)
}

fn subject_lattice() -> Lattice<f64> {
    Lattice::centered(SDIMS, 1.5)
}

fn random_template(k: usize, rng: &mut ChaCha8Rng) -> OrientedVolume<f64> {
    let data = (0..k * TDIMS.iter().product::<usize>()).map(|_| rng.random_range(-2.0..2.0)).collect();
    OrientedVolume::new(template_lattice(), k, data).unwrap()
}

fn random_responsibilities(k: usize, rng: &mut ChaCha8Rng) -> Responsibilities<f64> {
    let n: usize = SDIMS.iter().product();
    let mut data = vec![0.0; (k + 1) * n];
    let mut mask = vec![true; n];
    for i in 0..n {
        if i % 13 == 5 {
            mask[i] = false;
            continue;
        }
        let w: Vec<f64> = (0..=k).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = w.iter().sum();
        for c in 0..=k {
            data[c * n + i] = w[c] / s;
        }
    }
    Responsibilities::new(SDIMS, k + 1, data, mask).unwrap()
}

fn rigid() -> RigidParams<f64> {
    RigidParams::new([0.31, -0.22, 0.17, 0.05, -0.04, 0.07])
}

fn smooth_displacement(amp: f64) -> Deformation<f64> {
    Deformation::from_fn(TDIMS, TDIMS, |x| {
        let f = x.map(|c| c as f64 / TDIMS[0] as f64 * std::f64::consts::TAU);
        [
            x[0] as f64 + amp * f[1].sin(),
            x[1] as f64 + amp * (f[2] + 0.3).cos(),
            x[2] as f64 + amp * (f[0] - 0.2).sin(),
        ]
    })
}

fn objective_at(t: &OrientedVolume<f64>, z: &Responsibilities<f64>, q: &RigidParams<f64>, phi: &Deformation<f64>) -> f64 {
    let a = subject_affine(&template_lattice(), &subject_lattice(), q).unwrap();
    categorical_objective(t, &warp_map(SDIMS, &a, phi), z).unwrap()
}

fn unpack(h: &[f64], k: usize) -> DMat<f64> {
    DMat::from_fn(k, k, |a, b| h[packed_index(k, a, b)])
}

#[test]
fn packed_index_enumerates_upper_triangle() {
    for k in 1..6 {
        let mut j = 0;
        for a in 0..k {
            for b in a..k {
                assert_eq!(packed_index(k, a, b), j);
                assert_eq!(packed_index(k, b, a), j);
                j += 1;
            }
        }
        assert_eq!(j, packed_len(k));
    }
}

#[test]
fn hessian_endpoints() {
    let pi = [0.2, 0.5, 0.3];
    let mut h = [0.0; 3];
    voxel_hessian(&pi, &HessianMix::new(1.0, BoundDenominator::AllClasses).unwrap(), &mut h);
    assert_eq!(h, [0.2 - 0.04, -0.1, 0.5 - 0.25]);
    voxel_hessian(&pi, &HessianMix::new(0.0, BoundDenominator::Stored).unwrap(), &mut h);
    assert_eq!(h, [0.25, -0.25, 0.25]);
    voxel_hessian(&pi, &HessianMix::new(0.0, BoundDenominator::AllClasses).unwrap(), &mut h);
    let third = 1.0 / 3.0;
    assert!((h[0] - 0.5 * (1.0 - third)).abs() < 1e-15);
    assert!((h[1] + 0.5 * third).abs() < 1e-15);
}

#[test]
fn hessian_weight_is_validated() {
    assert!(HessianMix::new(1.5, BoundDenominator::AllClasses).is_err());
    assert!(HessianMix::new(-0.1, BoundDenominator::Stored).is_err());
}

fn min_eigen_of_difference(k: usize, pi: &[f64], denominator: BoundDenominator) -> f64 {
    let mut bound = vec![0.0; packed_len(k)];
    let mut exact = vec![0.0; packed_len(k)];
    voxel_hessian(pi, &HessianMix::new(0.0, denominator).unwrap(), &mut bound);
    voxel_hessian(pi, &HessianMix::new(1.0, denominator).unwrap(), &mut exact);
    let d = unpack(&bound, k).sub(&unpack(&exact, k));
    // smallest eigenvalue via shifted Cholesky bisection
    let (mut lo, mut hi) = (-2.0, 2.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if d.sub(&DMat::identity(k).scale(mid)).cholesky().is_some() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[test]
fn all_classes_bound_dominates_softmax_hessian() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in 1..7 {
        for _ in 0..50 {
            let t: Vec<f64> = (0..k).map(|_| rng.random_range(-4.0..4.0)).collect();
            let mut pi = vec![0.0; k + 1];
            softmax_implicit_into(&t, &mut pi);
            assert!(min_eigen_of_difference(k, &pi, BoundDenominator::AllClasses) > -1e-9, "k = {k}");
        }
    }
}

#[test]
fn stored_bound_fails_for_a_single_logit() {
    // with one stored logit the bound ½(1 − 1/1) vanishes
    let pi = [0.5, 0.5];
    assert!(min_eigen_of_difference(1, &pi, BoundDenominator::Stored) < -0.2);
}

#[test]
fn logit_derivatives_match_voxel_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let k = 3;
    let dims = SDIMS;
    let n: usize = dims.iter().product();
    let logits: Vec<f64> = (0..k * n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let pi = ProbVolume::from_logit_planes(dims, k, &logits);
    let z = random_responsibilities(k, &mut rng);
    let mix = HessianMix::new(0.8, BoundDenominator::AllClasses).unwrap();
    let d = logit_grad_hess(&z, &pi, &mix).unwrap();
    let i = 17;
    let mut p = vec![0.0; k + 1];
    pi.at(i, &mut p);
    let mut zi = vec![0.0; k + 1];
    z.at(i, &mut zi);
    for c in 0..k {
        assert_eq!(d.gradient[c * n + i], p[c] - zi[c]);
    }
    let w = 0.8;
    let expect = w * (p[0] * (1.0 - p[0])) + (1.0 - w) * 0.5 * (1.0 - 0.25);
    assert!((d.hessian_at(i, 0, 0) - expect).abs() < 1e-14);
    assert!((d.hessian_at(i, 1, 2) - d.hessian_at(i, 2, 1)).abs() == 0.0);
}

#[test]
fn template_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let k = 2;
    let t = random_template(k, &mut rng);
    let z = random_responsibilities(k, &mut rng);
    let phi = smooth_displacement(0.4);
    let a = subject_affine(&template_lattice(), &subject_lattice(), &rigid()).unwrap();
    let psi = warp_map(SDIMS, &a, &phi);
    let mix = HessianMix::new(0.8, BoundDenominator::AllClasses).unwrap();
    let (g, _) = template_derivatives(&t, &[TemplateSubject { psi: &psi, z: &z }], &mix).unwrap();
    let eps = 1e-6;
    let scale = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for _ in 0..40 {
        let j = rng.random_range(0..g.len());
        let mut tp = t.clone();
        tp.data_mut()[j] += eps;
        let mut tm = t.clone();
        tm.data_mut()[j] -= eps;
        let fd = (categorical_objective(&tp, &psi, &z).unwrap() - categorical_objective(&tm, &psi, &z).unwrap()) / (2.0 * eps);
        assert!((fd - g[j]).abs() < 1e-4 * scale, "entry {j}: fd {fd} analytic {}", g[j]);
    }
}

#[test]
fn velocity_gradient_matches_finite_differences_for_one_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let k = 2;
    let t = random_template(k, &mut rng);
    let z = random_responsibilities(k, &mut rng);
    let q = rigid();
    let a = subject_affine(&template_lattice(), &subject_lattice(), &q).unwrap();
    let base = smooth_displacement(0.3);
    let mix = HessianMix::new(0.8, BoundDenominator::AllClasses).unwrap();
    let (g, _) = velocity_derivatives(&t, &z, &a, &base, &mix).unwrap();
    let n: usize = TDIMS.iter().product();
    let scale = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let eps = 1e-6;
    let perturbed = |j: usize, e: f64| {
        let mut d = base.clone();
        d.map_mut()[j % n][j / n] += e;
        objective_at(&t, &z, &q, &d)
    };
    for _ in 0..40 {
        let j = rng.random_range(0..3 * n);
        let fd = (perturbed(j, eps) - perturbed(j, -eps)) / (2.0 * eps);
        assert!((fd - g[j]).abs() < 1e-4 * scale, "entry {j}: fd {fd} analytic {}", g[j]);
    }
}

#[test]
fn rigid_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let k = 2;
    let t = random_template(k, &mut rng);
    let z = random_responsibilities(k, &mut rng);
    let phi = smooth_displacement(0.3);
    let q = rigid();
    let mix = HessianMix::new(0.8, BoundDenominator::AllClasses).unwrap();
    let (g, h) = rigid_derivatives(&t, &z, &template_lattice(), &subject_lattice(), &q, &phi, &mix).unwrap();
    let scale = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let eps = 1e-6;
    for j in 0..6 {
        let mut qp = q;
        qp.q[j] += eps;
        let mut qm = q;
        qm.q[j] -= eps;
        let fd = (objective_at(&t, &z, &qp, &phi) - objective_at(&t, &z, &qm, &phi)) / (2.0 * eps);
        assert!((fd - g[j]).abs() < 1e-4 * scale, "parameter {j}: fd {fd} analytic {}", g[j]);
    }
    let m = DMat::from_fn(6, 6, |a, b| h[a][b]);
    assert!(m.cholesky().is_some());
}

#[test]
fn rigid_hessian_is_exact_when_responsibilities_equal_the_prior() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let k = 2;
    let t = random_template(k, &mut rng);
    let phi = smooth_displacement(0.3);
    let q = rigid();
    let psi = warp_map(SDIMS, &subject_affine(&template_lattice(), &subject_lattice(), &q).unwrap(), &phi);
    let prior = warped_prior(&t, &psi).unwrap();
    let n = prior.len();
    let z = Responsibilities::new(SDIMS, k + 1, prior.data().to_vec(), vec![true; n]).unwrap();
    let mix = HessianMix::new(1.0, BoundDenominator::AllClasses).unwrap();
    let (g0, h) = rigid_derivatives(&t, &z, &template_lattice(), &subject_lattice(), &q, &phi, &mix).unwrap();
    assert!(g0.iter().all(|x| x.abs() < 1e-10), "{g0:?}");
    let scale = (0..6).map(|j| h[j][j]).fold(0.0f64, f64::max);
    let eps = 1e-6;
    for j in 0..6 {
        let mut qp = q;
        qp.q[j] += eps;
        let mut qm = q;
        qm.q[j] -= eps;
        let (gp, _) = rigid_derivatives(&t, &z, &template_lattice(), &subject_lattice(), &qp, &phi, &mix).unwrap();
        let (gm, _) = rigid_derivatives(&t, &z, &template_lattice(), &subject_lattice(), &qm, &phi, &mix).unwrap();
        for i in 0..6 {
            let fd = (gp[i] - gm[i]) / (2.0 * eps);
            assert!((fd - h[i][j]).abs() < 1e-4 * scale, "entry ({i}, {j}): fd {fd} analytic {}", h[i][j]);
        }
    }
}

fn template_objective(t: &OrientedVolume<f64>, psi: &Deformation<f64>, z: &Responsibilities<f64>, reg: &Regularizer) -> f64 {
    let prior: f64 = (0..t.channels()).map(|c| reg.energy(t.channel(c), 1).unwrap()).sum();
    categorical_objective(t, psi, z).unwrap() + prior
}

#[test]
fn template_updates_are_monotone_with_the_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let k = 2;
    let mut t = random_template(k, &mut rng);
    let z = random_responsibilities(k, &mut rng);
    let a = subject_affine(&template_lattice(), &subject_lattice(), &rigid()).unwrap();
    let psi = warp_map(SDIMS, &a, &smooth_displacement(0.4));
    let reg = Regularizer::new(EnergySpec::from_template_weights([1e-2, 0.5, 0.0]), TDIMS, [2.0; 3]).unwrap();
    let mix = HessianMix::new(0.0, BoundDenominator::AllClasses).unwrap();
    let mut previous = template_objective(&t, &psi, &z, &reg);
    let first = previous;
    for step in 0..10 {
        let (next, _) = update_template(&t, &[TemplateSubject { psi: &psi, z: &z }], &reg, &mix, &CgSettings::default()).unwrap();
        let f = template_objective(&next, &psi, &z, &reg);
        assert!(f <= previous + 1e-9 * previous.abs(), "step {step}: {previous} -> {f}");
        previous = f;
        t = next;
    }
    assert!(previous < first);
}

#[test]
fn duplicated_subject_equals_halved_prior() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let k = 3;
    let t = random_template(k, &mut rng);
    let z = random_responsibilities(k, &mut rng);
    let a = subject_affine(&template_lattice(), &subject_lattice(), &rigid()).unwrap();
    let psi = warp_map(SDIMS, &a, &smooth_displacement(0.2));
    let spec = EnergySpec::from_template_weights([1e-2, 0.5, 0.0]);
    let reg = Regularizer::new(spec, TDIMS, [2.0; 3]).unwrap();
    let half = Regularizer::new(spec.scaled(0.5), TDIMS, [2.0; 3]).unwrap();
    let mix = HessianMix::new(0.8, BoundDenominator::AllClasses).unwrap();
    let s = TemplateSubject { psi: &psi, z: &z };
    let cg = CgSettings { max_iterations: 200, tolerance: 1e-12 };
    let (two, _) = update_template(&t, &[s, s], &reg, &mix, &cg).unwrap();
    let (one, _) = update_template(&t, &[s], &half, &mix, &cg).unwrap();
    let diff = two.data().iter().zip(one.data()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(diff < 1e-8, "max difference {diff}");
}

#[test]
fn velocity_update_from_identity_shoots_and_lowers_the_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let k = 2;
    let t = random_template(k, &mut rng);
    let z = random_responsibilities(k, &mut rng);
    let q = rigid();
    let a = subject_affine(&template_lattice(), &subject_lattice(), &q).unwrap();
    let metric = VelocityMetric::new(EnergySpec::from_velocity_weights([2e-4, 0.0, 0.4, 0.1, 0.4]), TDIMS, [2.0; 3]).unwrap();
    let v = VelocityField::zeros(TDIMS);
    let id = Deformation::identity(TDIMS);
    let mix = HessianMix::new(0.0, BoundDenominator::AllClasses).unwrap();
    let step = update_velocity(&t, &z, &a, &v, &id, &metric, 1, &mix, &CgSettings::default()).unwrap();
    let before = objective_at(&t, &z, &q, &id);
    let after = objective_at(&t, &z, &q, &step.phi) + metric.energy(step.v.data()).unwrap();
    assert!(after < before, "{before} -> {after}");
    // a single Euler step gives exactly id + v
    for (i, p) in step.phi.map().iter().enumerate() {
        let x = Deformation::<f64>::identity(TDIMS).map()[i];
        let vi = step.v.at(i);
        for d in 0..3 {
            assert!((p[d] - x[d] - vi[d]).abs() < 1e-12);
        }
    }
}

#[test]
fn rigid_update_recovers_a_known_shift() {
    // the subject's labels are the template resampled through a rigid
    // transform, so the update should move toward that transform
    let k = 1;
    let t = OrientedVolume::from_fn(template_lattice(), k, |x, _| {
        let r2: f64 = x.iter().map(|&c| (c as f64 - 3.5).powi(2)).sum();
        4.0 - 1.2 * r2.sqrt()
    });
    let truth = RigidParams::new([0.6, -0.4, 0.3, 0.0, 0.0, 0.0]);
    let phi = Deformation::identity(TDIMS);
    let a = subject_affine(&template_lattice(), &subject_lattice(), &truth).unwrap();
    let prior = warped_prior(&t, &warp_map(SDIMS, &a, &phi)).unwrap();
    let z = Responsibilities::new(SDIMS, k + 1, prior.data().to_vec(), vec![true; SDIMS.iter().product()]).unwrap();
    let mix = HessianMix::new(1.0, BoundDenominator::AllClasses).unwrap();
    let mut q = RigidParams::zero();
    for _ in 0..6 {
        q = update_rigid(&t, &z, &template_lattice(), &subject_lattice(), &q, &phi, &mix).unwrap().q;
    }
    for j in 0..3 {
        assert!((q.q[j] - truth.q[j]).abs() < 0.05, "{:?}", q.q);
    }
}

#[test]
fn zero_mean_sums_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dims = [4, 3, 5];
    let n: usize = dims.iter().product();
    let mut vs: Vec<VelocityField<f64>> =
        (0..5).map(|_| VelocityField::new(dims, (0..3 * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()).collect();
    let mut qs: Vec<RigidParams<f64>> = (0..5).map(|_| RigidParams::new(std::array::from_fn(|_| rng.random_range(-1.0..1.0)))).collect();
    enforce_zero_mean(&mut vs, &mut qs).unwrap();
    for j in 0..3 * n {
        let s = vs.iter().fold(0.0, |a, v| a + v.data()[j]);
        assert_eq!(s, 0.0);
    }
    for d in 0..6 {
        assert_eq!(qs.iter().fold(0.0, |a, q| a + q.q[d]), 0.0);
    }
    assert!(enforce_zero_mean::<f64>(&mut [], &mut []).is_err());
}

mod prop {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    proptest! {
        #[test]
        fn mixed_hessian_rows_of_exact_part_sum_to_last_probability(t in proptest::collection::vec(-5.0f64..5.0, 1..6)) {
            let k = t.len();
            let mut pi = vec![0.0; k + 1];
            softmax_implicit_into(&t, &mut pi);
            let mut h = vec![0.0; packed_len(k)];
            voxel_hessian(&pi, &HessianMix::new(1.0, BoundDenominator::AllClasses).unwrap(), &mut h);
            for a in 0..k {
                let row: f64 = (0..k).map(|b| h[packed_index(k, a, b)]).sum();
                prop_assert!((row - pi[a] * pi[k]).abs() < 1e-12);
            }
        }

        #[test]
        fn zero_mean_is_idempotent(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dims = [2, 2, 2];
            let mut vs: Vec<VelocityField<f64>> = (0..3).map(|_| VelocityField::new(dims, (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()).collect();
            let mut qs: Vec<RigidParams<f64>> = (0..3).map(|_| RigidParams::new(std::array::from_fn(|_| rng.random_range(-1.0..1.0)))).collect();
            enforce_zero_mean(&mut vs, &mut qs).unwrap();
            let (v1, q1) = (vs.clone(), qs.clone());
            enforce_zero_mean(&mut vs, &mut qs).unwrap();
            for (a, b) in vs.iter().zip(&v1) {
                for (x, y) in a.data().iter().zip(b.data()) {
                    prop_assert!((x - y).abs() < 1e-14);
                }
            }
            for (a, b) in qs.iter().zip(&q1) {
                for d in 0..6 {
                    prop_assert!((a.q[d] - b.q[d]).abs() < 1e-14);
                }
            }
        }
    }
}

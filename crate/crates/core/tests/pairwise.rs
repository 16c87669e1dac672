use gwreg::eval::{compose_pairwise, tpr_overlap, warp_labels, LabelVolume};
use gwreg::field::Lattice;
use gwreg::io::Registration;
use gwreg::orchestrator::{fit_to_template, FitConfig, PyramidSchedule, Subject};
use gwreg::synth::{phantom_appearance, phantom_template, synth_generate, SynthOptions};

const H: f64 = 4.0;

#[test]
fn synthetic_pair_is_composed_within_a_voxel() {
    let lattice = Lattice::<f64>::centered([16; 3], H);
    let t = phantom_template(lattice.clone(), 3, 12.0);
    let gw = phantom_appearance(3, 1, 6.0).unwrap();
    let cfg = FitConfig::desk(3, PyramidSchedule::single(H, 25).unwrap());
    let options = SynthOptions { translation_sd: H, ..SynthOptions::default() };
    let mut truth = Vec::new();
    let mut fitted = Vec::new();
    let mut labels = Vec::new();
    for seed in [11, 12] {
        let s = synth_generate(&t, &gw, &cfg, &options, seed).unwrap();
        labels.push(LabelVolume::from_volume(&s.labels).unwrap());
        truth.push(Registration { name: format!("s{seed}"), template: lattice.clone(), subject: lattice.clone(), q: s.q, phi: s.phi, phi_inv: s.phi_inv });
        let fit = fit_to_template(&Subject::new(format!("s{seed}"), s.image), &t, &gw, &cfg).unwrap();
        fitted.push(Registration::from_state(format!("s{seed}"), &lattice, &lattice, &fit.subjects[0]));
    }
    let exact = compose_pairwise(&truth[0], &truth[1]).unwrap();
    let est = compose_pairwise(&fitted[0], &fitted[1]).unwrap();
    let err = exact.mean_distance(&est);
    assert!(err < 1.0, "mean endpoint error {err} voxel");

    // the estimated map must propagate labels about as well as the true one
    let regions = labels[1].regions();
    let score = |d| tpr_overlap(&warp_labels(&labels[0], d, &lattice).unwrap(), &labels[1], &regions).unwrap().pooled_weighted.unwrap();
    let (a, b) = (score(&exact), score(&est));
    assert!(b > a - 0.05, "pooled TPR {b} with the estimate, {a} with the truth");
}

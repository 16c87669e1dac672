use std::path::Path;
use std::process::{Command, Output};

use gwreg::eval::LabelVolume;
use gwreg::field::OrientedVolume;
use gwreg::io::{read_coordinate_map, read_trace, read_volume, ModelBundle, Registration, OVERLAP_HEADER, TRACE_HEADER};

fn gwreg(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_gwreg")).current_dir(dir).args(args).output().expect("binary runs");
    if !out.status.success() && out.status.code() != Some(3) {
        panic!("gwreg {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn synth(dir: &Path, seed: u64) {
    gwreg(dir, &["synth", "--edge", "12", "--k", "2", "--seed", &seed.to_string(), "--out", &format!("s{seed}")]);
}

#[test]
fn synth_writes_a_sample_with_truth_and_model() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), 7);
    let s = tmp.path().join("s7");
    let image: OrientedVolume<f64> = read_volume(s.join("image.nii")).unwrap();
    assert_eq!(image.dims(), [12, 12, 12]);
    let labels: OrientedVolume<f64> = read_volume(s.join("labels.nii")).unwrap();
    assert!(LabelVolume::from_volume(&labels).unwrap().regions().iter().all(|&r| r <= 2));
    let truth = Registration::<f64>::read(s.join("truth")).unwrap();
    assert_eq!(truth.phi.dims(), [12, 12, 12]);
    let model = ModelBundle::<f64>::read(s.join("model")).unwrap();
    assert_eq!(model.config.k, 2);
    assert_eq!(model.config.seed, 7);
}

#[test]
fn synth_is_reproducible_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), 1);
    let a = std::fs::read(tmp.path().join("s1/image.nii")).unwrap();
    std::fs::rename(tmp.path().join("s1"), tmp.path().join("first")).unwrap();
    synth(tmp.path(), 1);
    assert_eq!(a, std::fs::read(tmp.path().join("s1/image.nii")).unwrap());
    synth(tmp.path(), 2);
    assert_ne!(a, std::fs::read(tmp.path().join("s2/image.nii")).unwrap());
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for s in 1..=3 {
        synth(d, s);
    }
    let fit = ["--k", "2", "--schedule", "4:4", "--desk", "--threads", "2"];
    let mut args = vec!["fit-group", "s1/image.nii", "s2/image.nii", "s3/image.nii", "--out", "grp"];
    args.extend(fit);
    gwreg(d, &args);
    let trace = read_trace(d.join("grp/trace.csv")).unwrap();
    assert_eq!(trace.len(), 4);
    let text = std::fs::read_to_string(d.join("grp/trace.csv")).unwrap();
    assert_eq!(text.lines().next(), Some(TRACE_HEADER));
    for name in ["image", "image-2", "image-3"] {
        let sub = d.join("grp/subjects").join(name);
        assert!(sub.join("registration.txt").exists(), "{name}");
        let seg: OrientedVolume<f64> = read_volume(sub.join("segmentation.nii")).unwrap();
        assert_eq!(seg.dims(), [12, 12, 12]);
    }

    let mut args = vec!["fit", "s1/image.nii", "--model", "grp/model", "--out", "one"];
    args.extend(fit);
    gwreg(d, &args);
    assert_eq!(Registration::<f64>::read(d.join("one")).unwrap().name, "image");

    gwreg(d, &["pairwise", "--source", "grp/subjects/image", "--target", "grp/subjects/image-2", "--out", "pw.nii.gz"]);
    let (map, lattice) = read_coordinate_map::<f64>(d.join("pw.nii.gz")).unwrap();
    assert_eq!((map.dims(), map.target(), lattice.dims()), ([12; 3], [12; 3], [12; 3]));

    gwreg(d, &["warp-labels", "--labels", "s1/labels.nii", "--deformation", "pw.nii.gz", "--out", "w.nii"]);
    let out = gwreg(d, &["overlap", "--warped", "w.nii", "--target", "s2/labels.nii", "--regions", "1,2", "--out", "ov.csv"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("pooled weighted TPR"), "{stdout}");
    let table = std::fs::read_to_string(d.join("ov.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], OVERLAP_HEADER);
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("w,labels,1,"));

    let out = gwreg(d, &["elbo-trace", "grp/trace.csv", "--out", "dec.csv"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("level 0: 4 iterations"));
    let dec = std::fs::read_to_string(d.join("dec.csv")).unwrap();
    assert!(dec.starts_with("level,iteration,previous,current,relative_change"));
}

#[test]
fn single_precision_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, 1);
    synth(d, 2);
    gwreg(d, &["fit-group", "s1/image.nii", "s2/image.nii", "--k", "2", "--schedule", "4:3", "--desk", "--precision", "f32", "--out", "grp"]);
    let trace = read_trace(d.join("grp/trace.csv")).unwrap();
    assert_eq!(trace.len(), 3);
    assert!(trace.iter().all(|r| r.elbo.is_finite()));
}

#[test]
fn strict_trace_check_fails_on_a_decrease() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let rows = [(0, 0, -10.0), (0, 1, -9.0), (0, 2, -9.5)];
    let mut text = format!("{TRACE_HEADER}\n");
    for (l, i, e) in rows {
        text += &format!("{l},{i},{e},{e},0,0,0,0,0,0\n");
    }
    std::fs::write(d.join("t.csv"), text).unwrap();
    let out = gwreg(d, &["elbo-trace", "t.csv", "--strict"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).contains("1 decreases"));
}

#[test]
fn bad_inputs_fail_with_a_message() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("junk.nii"), b"not a volume").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_gwreg")).current_dir(d).args(["fit-group", "junk.nii", "junk.nii", "--out", "o"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("junk.nii"));
    let out = Command::new(env!("CARGO_BIN_EXE_gwreg")).current_dir(d).args(["synth", "--w", "2", "--out", "o"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = Command::new(env!("CARGO_BIN_EXE_gwreg")).current_dir(d).args(["fit-group", "a.nii", "--out", "o"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

//! Label propagation through the common space and overlap scores.

use crate::appearance::Responsibilities;
use crate::error::{Error, Result};
use crate::field::{Deformation, Lattice, OrientedVolume};
use crate::io::Registration;
use crate::scalar::Real;
use crate::shape::subject_affine;

/// Integer labels on a lattice; 0 is background.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVolume<T> {
    lattice: Lattice<T>,
    labels: Vec<u32>,
}

impl<T: Real> LabelVolume<T> {
    pub fn new(lattice: Lattice<T>, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != lattice.len() {
            return Err(Error::dims("label count", lattice.len(), labels.len()));
        }
        Ok(LabelVolume { lattice, labels })
    }

    /// Accepts a single-channel volume of nonnegative integers.
    pub fn from_volume(vol: &OrientedVolume<T>) -> Result<Self> {
        if vol.channels() != 1 {
            return Err(Error::dims("label channels", 1, vol.channels()));
        }
        let labels = vol
            .data()
            .iter()
            .map(|v| {
                let x = v.f64();
                if x.is_finite() && x >= 0.0 && x.fract() == 0.0 && x <= u32::MAX as f64 {
                    Ok(x as u32)
                } else {
                    Err(Error::InvalidConfig(format!("label value {x} is not a nonnegative integer")))
                }
            })
            .collect::<Result<_>>()?;
        Self::new(vol.lattice().clone(), labels)
    }

    pub fn to_volume(&self) -> OrientedVolume<T> {
        let data = self.labels.iter().map(|&l| T::of(l as f64)).collect();
        OrientedVolume::new(self.lattice.clone(), 1, data).expect("sizes agree by construction")
    }

    pub fn lattice(&self) -> &Lattice<T> {
        &self.lattice
    }

    pub fn dims(&self) -> [usize; 3] {
        self.lattice.dims()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Distinct nonzero labels, ascending.
    pub fn regions(&self) -> Vec<u32> {
        let mut r: Vec<u32> = self.labels.iter().copied().filter(|&l| l != 0).collect();
        r.sort_unstable();
        r.dedup();
        r
    }
}

/// Hard segmentation: the most probable class per voxel, class `k < K` as
/// label `k + 1`, the background and masked voxels as 0.
pub fn segmentation<T: Real>(z: &Responsibilities<T>, lattice: &Lattice<T>) -> Result<LabelVolume<T>> {
    if z.dims() != lattice.dims() {
        return Err(Error::dims("segmentation lattice", lattice.dims(), z.dims()));
    }
    let k = z.classes() - 1;
    let mut p = vec![T::zero(); k + 1];
    let labels = (0..z.len())
        .map(|i| {
            if !z.mask()[i] {
                return 0;
            }
            z.at(i, &mut p);
            // first maximum wins
            let best = (0..=k).fold(0, |b, c| if p[c] > p[b] { c } else { b });
            if best == k { 0 } else { best as u32 + 1 }
        })
        .collect();
    LabelVolume::new(lattice.clone(), labels)
}

fn same_template<T: Real>(a: &Registration<T>, b: &Registration<T>) -> Result<()> {
    let diff = a.template.vox2world().max_abs_diff(b.template.vox2world());
    if a.template.dims() != b.template.dims() || diff > 1e-6 {
        return Err(Error::TemplateMismatch(format!(
            "`{}` uses a {:?} template, `{}` a {:?} one (affines differ by {diff:.2e})",
            a.name,
            a.template.dims(),
            b.name,
            b.template.dims()
        )));
    }
    Ok(())
}

/// Map from target voxels to source voxels through the template:
/// `A_src⁻¹ ∘ φ_src⁻¹ ∘ ψ_tgt`.
pub fn compose_pairwise<T: Real>(src: &Registration<T>, tgt: &Registration<T>) -> Result<Deformation<T>> {
    same_template(src, tgt)?;
    let psi = tgt.psi()?;
    let back = subject_affine(&src.template, &src.subject, &src.q)?
        .inverse()
        .ok_or_else(|| Error::SingularMatrix("source-to-template affine".into()))?;
    let planes = src.phi_inv.displacement_planes();
    let map = psi.map().iter().map(|&y| back.apply(src.phi_inv.sample(&planes, y))).collect();
    Deformation::new(tgt.subject.dims(), src.subject.dims(), map)
}

/// Nearest integer with halves going to the lower index.
#[inline]
fn round_half_down(x: f64) -> f64 {
    (x - 0.5).ceil()
}

/// Pulls `labels` through `d` (target voxels to source voxels) by nearest
/// neighbour. Exact halves round toward the lower index; samples outside
/// the source are background.
pub fn warp_labels<T: Real>(labels: &LabelVolume<T>, d: &Deformation<T>, target: &Lattice<T>) -> Result<LabelVolume<T>> {
    if d.dims() != target.dims() {
        return Err(Error::dims("warp domain", target.dims(), d.dims()));
    }
    if d.target() != labels.dims() {
        return Err(Error::dims("warp range", labels.dims(), d.target()));
    }
    let dims = labels.dims();
    let out = d
        .map()
        .iter()
        .map(|p| {
            let mut idx = [0usize; 3];
            for k in 0..3 {
                let r = round_half_down(p[k].f64());
                if !(r >= 0.0 && r < dims[k] as f64) {
                    return 0;
                }
                idx[k] = r as usize;
            }
            labels.labels[idx[0] + dims[0] * (idx[1] + dims[1] * idx[2])]
        })
        .collect();
    LabelVolume::new(target.clone(), out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionOverlap {
    pub label: u32,
    pub target_voxels: usize,
    pub overlap_voxels: usize,
    /// `None` when the region is absent from the target.
    pub tpr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Overlap {
    pub regions: Vec<RegionOverlap>,
    /// Overlap over the union of the defined regions, i.e. the mean TPR
    /// weighted by target region size.
    pub pooled_weighted: Option<f64>,
    /// Plain mean of the defined per-region TPRs.
    pub pooled_unweighted: Option<f64>,
}

fn check_lattices<T: Real>(a: &LabelVolume<T>, b: &LabelVolume<T>) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::dims("label lattices", b.dims(), a.dims()));
    }
    Ok(())
}

/// True positive rate per region, `|warped = r ∧ target = r| / |target = r|`,
/// and the two pooled scores over `regions`.
pub fn tpr_overlap<T: Real>(warped: &LabelVolume<T>, target: &LabelVolume<T>, regions: &[u32]) -> Result<Overlap> {
    if regions.is_empty() {
        return Err(Error::EmptyRegionSet);
    }
    check_lattices(warped, target)?;
    let rows: Vec<RegionOverlap> = regions
        .iter()
        .map(|&r| {
            let (mut t, mut o) = (0usize, 0usize);
            for (&w, &g) in warped.labels.iter().zip(&target.labels) {
                if g == r {
                    t += 1;
                    if w == r {
                        o += 1;
                    }
                }
            }
            RegionOverlap { label: r, target_voxels: t, overlap_voxels: o, tpr: (t > 0).then(|| o as f64 / t as f64) }
        })
        .collect();
    let defined: Vec<&RegionOverlap> = rows.iter().filter(|r| r.tpr.is_some()).collect();
    let (o, t) = defined.iter().fold((0usize, 0usize), |(o, t), r| (o + r.overlap_voxels, t + r.target_voxels));
    let pooled_weighted = (t > 0).then(|| o as f64 / t as f64);
    let pooled_unweighted = (!defined.is_empty()).then(|| defined.iter().filter_map(|r| r.tpr).sum::<f64>() / defined.len() as f64);
    Ok(Overlap { regions: rows, pooled_weighted, pooled_unweighted })
}

/// `2|A ∩ B| / (|A| + |B|)` for one label; `None` when neither volume has it.
pub fn dice<T: Real>(a: &LabelVolume<T>, b: &LabelVolume<T>, label: u32) -> Result<Option<f64>> {
    check_lattices(a, b)?;
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.labels.iter().zip(&b.labels) {
        na += (x == label) as usize;
        nb += (y == label) as usize;
        both += (x == label && y == label) as usize;
    }
    Ok((na + nb > 0).then(|| 2.0 * both as f64 / (na + nb) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::voxels;
    use crate::rigid::RigidParams;
    use proptest::prelude::*;

    fn line(labels: &[u32]) -> LabelVolume<f64> {
        LabelVolume::new(Lattice::unit([labels.len(), 1, 1]), labels.to_vec()).unwrap()
    }

    #[test]
    fn hand_counted_toy() {
        let o = tpr_overlap(&line(&[1, 2, 2, 0]), &line(&[1, 1, 2, 0]), &[1, 2]).unwrap();
        assert_eq!(o.regions[0].tpr, Some(0.5));
        assert_eq!(o.regions[1].tpr, Some(1.0));
        assert_eq!(o.pooled_weighted, Some(2.0 / 3.0));
        assert_eq!(o.pooled_unweighted, Some(0.75));
    }

    #[test]
    fn perfect_and_empty_warps() {
        let t = line(&[1, 1, 2, 3, 0, 3]);
        let o = tpr_overlap(&t, &t, &[1, 2, 3]).unwrap();
        assert!(o.regions.iter().all(|r| r.tpr == Some(1.0)));
        let bg = line(&[0; 6]);
        let o = tpr_overlap(&bg, &t, &[1, 2, 3]).unwrap();
        assert!(o.regions.iter().all(|r| r.tpr == Some(0.0)));
        assert_eq!(o.pooled_weighted, Some(0.0));
    }

    #[test]
    fn absent_regions_are_undefined_and_left_out_of_the_pool() {
        let o = tpr_overlap(&line(&[1, 0]), &line(&[1, 0]), &[1, 7]).unwrap();
        assert_eq!(o.regions[1].tpr, None);
        assert_eq!(o.pooled_weighted, Some(1.0));
        assert_eq!(o.pooled_unweighted, Some(1.0));
        let o = tpr_overlap(&line(&[1, 0]), &line(&[1, 0]), &[7]).unwrap();
        assert_eq!((o.pooled_weighted, o.pooled_unweighted), (None, None));
    }

    #[test]
    fn empty_region_set_is_an_error() {
        assert!(matches!(tpr_overlap(&line(&[1]), &line(&[1]), &[]), Err(Error::EmptyRegionSet)));
    }

    #[test]
    fn segmentation_takes_the_most_probable_class() {
        let lat = Lattice::<f64>::unit([3, 1, 1]);
        // classes 0, 1 and background over three voxels, the last masked
        let z = Responsibilities::new([3, 1, 1], 3, vec![0.7, 0.1, 0.0, 0.2, 0.1, 0.0, 0.1, 0.8, 0.0], vec![true, true, false]).unwrap();
        assert_eq!(segmentation(&z, &lat).unwrap().labels(), &[1, 0, 0]);
    }

    #[test]
    fn dice_counts() {
        assert_eq!(dice(&line(&[1, 1, 0, 2]), &line(&[1, 0, 0, 2]), 1).unwrap(), Some(2.0 / 3.0));
        assert_eq!(dice(&line(&[1]), &line(&[1]), 5).unwrap(), None);
    }

    fn cube(n: usize) -> LabelVolume<f64> {
        let lat = Lattice::unit([n, n, n]);
        LabelVolume::new(lat, voxels([n, n, n]).map(|x| (1 + x[0] + 2 * x[1] + 5 * x[2]) as u32).collect()).unwrap()
    }

    #[test]
    fn identity_keeps_labels() {
        let l = cube(4);
        let w = warp_labels(&l, &Deformation::identity([4, 4, 4]), l.lattice()).unwrap();
        assert_eq!(w, l);
    }

    #[test]
    fn integer_shift_fills_background() {
        let l = cube(4);
        let d = Deformation::translation([4, 4, 4], [1.0, 0.0, -2.0]);
        let w = warp_labels(&l, &d, l.lattice()).unwrap();
        for (i, x) in voxels([4, 4, 4]).enumerate() {
            let want = if x[0] + 1 < 4 && x[2] >= 2 { 1 + (x[0] + 1) + 2 * x[1] + 5 * (x[2] - 2) } else { 0 };
            assert_eq!(w.labels()[i], want as u32, "{x:?}");
        }
    }

    #[test]
    fn half_voxel_shift_rounds_toward_the_lower_index() {
        let l = cube(4);
        let d = Deformation::translation([4, 4, 4], [0.5, -0.5, 0.0]);
        let w = warp_labels(&l, &d, l.lattice()).unwrap();
        for (i, x) in voxels([4, 4, 4]).enumerate() {
            // x + 0.5 → x, y − 0.5 → y − 1
            let want = if x[1] >= 1 { 1 + x[0] + 2 * (x[1] - 1) + 5 * x[2] } else { 0 };
            assert_eq!(w.labels()[i], want as u32, "{x:?}");
        }
        assert_eq!(round_half_down(-0.5), -1.0);
        assert_eq!(round_half_down(2.5), 2.0);
        assert_eq!(round_half_down(2.5000001), 3.0);
    }

    #[test]
    fn rejects_non_integer_labels() {
        let v = OrientedVolume::from_fn(Lattice::<f64>::unit([2, 1, 1]), 1, |x, _| x[0] as f64 * 0.5);
        assert!(LabelVolume::from_volume(&v).is_err());
        let v = OrientedVolume::from_fn(Lattice::<f64>::unit([2, 1, 1]), 1, |x, _| x[0] as f64 * 3.0);
        assert_eq!(LabelVolume::from_volume(&v).unwrap().labels(), &[0, 3]);
    }

    fn registration(name: &str, template: &Lattice<f64>, shift_mm: [f64; 3]) -> Registration<f64> {
        let dims = template.dims();
        Registration {
            name: name.into(),
            template: template.clone(),
            subject: template.clone(),
            q: RigidParams::new([shift_mm[0], shift_mm[1], shift_mm[2], 0.0, 0.0, 0.0]),
            phi: Deformation::identity(dims),
            phi_inv: Deformation::identity(dims),
        }
    }

    #[test]
    fn self_pairing_is_the_identity() {
        let t = Lattice::centered([8, 8, 8], 2.0);
        let mut r = registration("a", &t, [1.0, -2.0, 0.5]);
        r.q.q[4] = 0.05;
        let d = compose_pairwise(&r, &r).unwrap();
        assert!(d.max_distance(&Deformation::identity([8, 8, 8])) < 1e-9);
    }

    #[test]
    fn translations_compose_to_the_relative_translation() {
        let t = Lattice::centered([10, 10, 10], 2.0);
        let src = registration("s", &t, [2.0, 0.0, -4.0]);
        let tgt = registration("t", &t, [-2.0, 2.0, 0.0]);
        let d = compose_pairwise(&src, &tgt).unwrap();
        // x → x + τ_t/h in the template, then − τ_s/h back in the source
        for (m, x) in d.map().iter().zip(voxels([10, 10, 10])) {
            let want = [x[0] as f64 - 2.0, x[1] as f64 + 1.0, x[2] as f64 + 2.0];
            for k in 0..3 {
                assert!((m[k] - want[k]).abs() < 1e-12, "{x:?}: {m:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn template_mismatch_is_reported() {
        let a = registration("a", &Lattice::centered([8, 8, 8], 2.0), [0.0; 3]);
        let b = registration("b", &Lattice::centered([8, 8, 8], 2.5), [0.0; 3]);
        assert!(matches!(compose_pairwise(&a, &b), Err(Error::TemplateMismatch(_))));
    }

    proptest! {
        #[test]
        fn warped_labels_come_from_the_source(shift in prop::array::uniform3(-3.0f64..3.0)) {
            let l = cube(4);
            let d = Deformation::translation([4, 4, 4], shift);
            let w = warp_labels(&l, &d, l.lattice()).unwrap();
            let src: std::collections::HashSet<u32> = l.labels().iter().copied().collect();
            prop_assert!(w.labels().iter().all(|x| *x == 0 || src.contains(x)));
        }

        #[test]
        fn pooled_score_is_the_size_weighted_mean(
            tgt in prop::collection::vec(0u32..4, 32),
            warped in prop::collection::vec(0u32..4, 32),
        ) {
            let o = tpr_overlap(&line(&warped), &line(&tgt), &[1, 2, 3]).unwrap();
            let defined: Vec<_> = o.regions.iter().filter(|r| r.tpr.is_some()).collect();
            if let Some(p) = o.pooled_weighted {
                let n: usize = defined.iter().map(|r| r.target_voxels).sum();
                let hits: usize = defined.iter().map(|r| r.overlap_voxels).sum();
                prop_assert_eq!(p, hits as f64 / n as f64);
                let weighted: f64 = defined.iter().map(|r| r.tpr.unwrap() * r.target_voxels as f64).sum::<f64>() / n as f64;
                prop_assert!((p - weighted).abs() < 1e-12);
            }
        }
    }
}

//! Aleatoric-uncertainty harness: Monte-Carlo prediction under test-time
//! augmentation, and entropy summaries of the resulting sample stacks.
//!
//! For each sample a transform is drawn, the input plane is warped, the
//! predictor runs on the warped plane, and the prediction is warped back
//! through the inverse transform. The per-voxel uncertainty is the entropy of
//! the binarized sample frequency, so a deterministic predictor under
//! zero-width ranges yields exactly zero entropy.
//!
//! Determinism contract: sample k of a run seeded with s draws its transform
//! from stream k of a ChaCha8 generator seeded with s, and slice z of a
//! volume derives its seed with [`crate::util::mix_seed`]. Results are
//! therefore bit-identical across runs and across thread counts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::predictor::{validate_prediction, Predictor};
use crate::tta::{apply_transform, sample_transform, Interp, TtaRanges};
use crate::util::mix_seed;
use crate::volume::{Plane, Volume, VolumeKind};

/// Threshold used to binarize probability samples before counting votes.
pub const BINARIZE_THRESHOLD: f32 = 0.5;

/// A stack of probability planes, one per Monte-Carlo sample, in draw order.
#[derive(Debug, Clone, PartialEq)]
pub struct McStack {
    planes: Vec<Plane>,
}

impl McStack {
    /// Builds a stack, checking that all planes share one shape.
    pub fn new(planes: Vec<Plane>) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::InvalidInput("sample stack is empty".into()))?;
        let (w, h) = (first.width(), first.height());
        if planes.iter().any(|p| p.width() != w || p.height() != h) {
            return Err(Error::InvalidInput(
                "sample stack planes differ in shape".into(),
            ));
        }
        Ok(McStack { planes })
    }

    pub fn n_samples(&self) -> usize {
        self.planes.len()
    }

    pub fn planes(&self) -> &[Plane] {
        &self.planes
    }

    /// Mask of pixels positive (>= threshold) in at least one sample.
    pub fn union_mask(&self, threshold: f32) -> Plane {
        let (w, h) = (self.planes[0].width(), self.planes[0].height());
        let mut out = Plane::zeros(w, h);
        for p in &self.planes {
            for (o, &v) in out.values_mut().iter_mut().zip(p.values()) {
                if v >= threshold {
                    *o = 1.0;
                }
            }
        }
        out
    }
}

/// Runs `n` augmented predictions of `input` and stacks them in draw order.
///
/// Sample k draws its transform from stream k of a generator seeded with
/// `seed`, warps the input (bilinear), predicts, and warps the prediction
/// back through the inverse transform (bilinear; values stay in [0, 1] by
/// convexity, with zero padding outside the grid). Samples run in parallel;
/// the stack order is fixed by sample index.
pub fn mc_predict(
    input: &Plane,
    predictor: &dyn Predictor,
    n: usize,
    ranges: &TtaRanges,
    seed: u64,
) -> Result<McStack> {
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 Monte-Carlo samples, got {n}"
        )));
    }
    ranges.validate()?;
    let planes: Vec<Plane> = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let t = sample_transform(ranges, &mut rng);
            let warped = apply_transform(input, &t, Interp::Bilinear);
            let pred = predictor.predict(&warped).map_err(|e| Error::Prediction {
                index: k,
                message: e.to_string(),
            })?;
            validate_prediction(&warped, &pred).map_err(|e| Error::Prediction {
                index: k,
                message: e.to_string(),
            })?;
            Ok(apply_transform(&pred, &t.inverse(), Interp::Bilinear))
        })
        .collect::<Result<_>>()?;
    McStack::new(planes)
}

/// Per-pixel entropy of the binarized sample frequency, in nats.
///
/// With k of n samples at or above `threshold`, the entropy is computed in
/// count form, `ln n - (k ln k + (n-k) ln(n-k)) / n` with `0 ln 0 = 0`,
/// which is exact at the endpoints and symmetric in k and n - k. Values are
/// clamped to [0, ln 2] to absorb last-bit rounding.
pub fn entropy_map(stack: &McStack, threshold: f32) -> Plane {
    let n = stack.n_samples();
    let planes = stack.planes();
    let (w, h) = (planes[0].width(), planes[0].height());
    let mut out = Plane::zeros(w, h);
    let xlnx = |k: usize| {
        if k == 0 {
            0.0
        } else {
            let k = k as f64;
            k * k.ln()
        }
    };
    for (i, o) in out.values_mut().iter_mut().enumerate() {
        let k = planes.iter().filter(|p| p.values()[i] >= threshold).count();
        let h = (n as f64).ln() - (xlnx(k) + xlnx(n - k)) / n as f64;
        *o = h.clamp(0.0, std::f64::consts::LN_2) as f32;
    }
    out
}

/// Uncertainty summary for one input volume.
#[derive(Debug, Clone)]
pub struct VolumeUncertainty {
    /// Per-voxel entropy in nats, stacked from the per-slice maps.
    pub entropy: Volume,
    /// Mean entropy over voxels positive in at least one binarized sample;
    /// `None` when no sample marked any voxel.
    pub mean_union: Option<f64>,
    /// Mean entropy over all voxels.
    pub mean_all: f64,
    /// Number of voxels in the union support.
    pub union_voxels: usize,
    pub n_samples: usize,
    pub seed: u64,
}

/// Runs the Monte-Carlo harness slice-wise over a volume.
///
/// Slice z uses seed `mix_seed(seed, [z])`, so single-slice runs and whole
/// volumes agree, and slices can run in parallel without sharing generator
/// state.
pub fn volume_uncertainty(
    input: &Volume,
    predictor: &dyn Predictor,
    n: usize,
    ranges: &TtaRanges,
    seed: u64,
) -> Result<VolumeUncertainty> {
    let dz = input.geometry().dims[2];
    let per_slice: Vec<(Plane, Plane)> = (0..dz)
        .into_par_iter()
        .map(|z| {
            let stack = mc_predict(
                &input.slice_at(z),
                predictor,
                n,
                ranges,
                mix_seed(seed, &[z as u64]),
            )?;
            let entropy = entropy_map(&stack, BINARIZE_THRESHOLD);
            let union = stack.union_mask(BINARIZE_THRESHOLD);
            Ok((entropy, union))
        })
        .collect::<Result<_>>()?;

    let mut union_sum = 0.0f64;
    let mut union_count = 0usize;
    let mut total_sum = 0.0f64;
    let mut entropy_planes = Vec::with_capacity(dz);
    for (entropy, union) in per_slice {
        for (&e, &u) in entropy.values().iter().zip(union.values()) {
            let e = f64::from(e);
            total_sum += e;
            if u == 1.0 {
                union_sum += e;
                union_count += 1;
            }
        }
        entropy_planes.push(entropy);
    }
    let total_voxels = input.geometry().voxel_count();
    Ok(VolumeUncertainty {
        entropy: Volume::from_planes(
            &entropy_planes,
            input.geometry().spacing_mm,
            VolumeKind::ProbabilityMap,
        )?,
        mean_union: (union_count > 0).then(|| union_sum / union_count as f64),
        mean_all: total_sum / total_voxels as f64,
        union_voxels: union_count,
        n_samples: n,
        seed,
    })
}

/// Aggregate over a set of per-image results.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyReport {
    /// Mean of the per-image union scalars; `None` when no image had any
    /// union voxels.
    pub scalar_mean_entropy_union: Option<f64>,
    /// Mean of the per-image all-voxel scalars.
    pub scalar_mean_entropy_all: f64,
    pub n_images: usize,
    /// Images that contributed to the union scalar.
    pub n_union_images: usize,
    pub n_samples: usize,
    pub seed: u64,
}

/// Averages per-image uncertainty results into one report.
pub fn summarize(per_image: &[VolumeUncertainty]) -> Result<UncertaintyReport> {
    let first = per_image
        .first()
        .ok_or_else(|| Error::InvalidInput("no per-image uncertainty results".into()))?;
    if per_image
        .iter()
        .any(|u| u.n_samples != first.n_samples || u.seed != first.seed)
    {
        return Err(Error::InvalidInput(
            "per-image results mix sample counts or seeds".into(),
        ));
    }
    let union_values: Vec<f64> = per_image.iter().filter_map(|u| u.mean_union).collect();
    let mean_all =
        per_image.iter().map(|u| u.mean_all).sum::<f64>() / per_image.len() as f64;
    Ok(UncertaintyReport {
        scalar_mean_entropy_union: (!union_values.is_empty())
            .then(|| union_values.iter().sum::<f64>() / union_values.len() as f64),
        scalar_mean_entropy_all: mean_all,
        n_images: per_image.len(),
        n_union_images: union_values.len(),
        n_samples: first.n_samples,
        seed: first.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Geometry;
    use std::f64::consts::LN_2;

    struct ConstPredictor(f32);

    impl Predictor for ConstPredictor {
        fn predict(&self, input: &Plane) -> Result<Plane> {
            Ok(Plane::new(
                input.width(),
                input.height(),
                vec![self.0; input.width() * input.height()],
            )?)
        }
    }

    /// Thresholds the input at 0.5; deterministic and content-dependent.
    struct StepPredictor;

    impl Predictor for StepPredictor {
        fn predict(&self, input: &Plane) -> Result<Plane> {
            let values = input
                .values()
                .iter()
                .map(|&v| if v >= 0.5 { 1.0 } else { 0.0 })
                .collect();
            Ok(Plane::new(input.width(), input.height(), values)?)
        }
    }

    fn stack_of(planes: Vec<Plane>) -> McStack {
        McStack::new(planes).unwrap()
    }

    fn const_plane(w: usize, h: usize, v: f32) -> Plane {
        Plane::new(w, h, vec![v; w * h]).unwrap()
    }

    #[test]
    fn entropy_endpoints_are_exact() {
        let zeros = const_plane(2, 2, 0.0);
        let ones = const_plane(2, 2, 1.0);
        let all_off = stack_of(vec![zeros.clone(), zeros.clone(), zeros.clone()]);
        let all_on = stack_of(vec![ones.clone(), ones.clone()]);
        let half = stack_of(vec![zeros.clone(), ones.clone()]);
        assert!(entropy_map(&all_off, 0.5).values().iter().all(|&v| v == 0.0));
        assert!(entropy_map(&all_on, 0.5).values().iter().all(|&v| v == 0.0));
        let h = entropy_map(&half, 0.5);
        assert!(h.values().iter().all(|&v| v == LN_2 as f32));
    }

    #[test]
    fn entropy_three_of_ten_matches_direct_evaluation() {
        let mut planes = vec![const_plane(1, 1, 0.0); 10];
        for p in planes.iter_mut().take(3) {
            p.set(0, 0, 1.0);
        }
        let h = entropy_map(&stack_of(planes), 0.5);
        let expected = -0.3f64 * 0.3f64.ln() - 0.7f64 * 0.7f64.ln();
        assert!((f64::from(h.get(0, 0)) - expected).abs() < 1e-7);
        assert!((f64::from(h.get(0, 0)) - 0.6109).abs() < 1e-4);
    }

    #[test]
    fn entropy_is_bounded_and_complement_symmetric() {
        for n in 2..=9usize {
            for k in 0..=n {
                let planes: Vec<Plane> = (0..n)
                    .map(|i| const_plane(1, 1, if i < k { 1.0 } else { 0.0 }))
                    .collect();
                // Stored as f32, so the upper bound is ln 2 rounded to f32.
                let h = entropy_map(&stack_of(planes), 0.5).get(0, 0);
                assert!(h >= 0.0 && h <= LN_2 as f32, "H({k}/{n}) = {h}");
                let flipped: Vec<Plane> = (0..n)
                    .map(|i| const_plane(1, 1, if i < n - k { 1.0 } else { 0.0 }))
                    .collect();
                let hf = entropy_map(&stack_of(flipped), 0.5).get(0, 0);
                assert_eq!(h, hf, "H asymmetric at k={k}, n={n}");
            }
        }
    }

    #[test]
    fn zero_ranges_and_deterministic_predictor_give_zero_entropy() {
        let ranges = TtaRanges::new(0.0, 0.0, 0.0).unwrap();
        let mut input = Plane::zeros(8, 8);
        for y in 3..6 {
            for x in 2..6 {
                input.set(x, y, 1.0);
            }
        }
        let stack = mc_predict(&input, &StepPredictor, 5, &ranges, 42).unwrap();
        assert_eq!(stack.n_samples(), 5);
        for p in stack.planes() {
            assert_eq!(p, &stack.planes()[0]);
        }
        let h = entropy_map(&stack, 0.5);
        assert!(h.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_half_predictor_is_transform_invariant_in_the_interior() {
        let ranges = TtaRanges::new(10.0, 2.0, 0.02).unwrap();
        let input = Plane::zeros(16, 16);
        let stack = mc_predict(&input, &ConstPredictor(0.5), 6, &ranges, 9).unwrap();
        let h = entropy_map(&stack, 0.5);
        // Away from the zero-padding border every sample reads exactly 0.5.
        for y in 4..12 {
            for x in 4..12 {
                assert_eq!(h.get(x, y), 0.0);
            }
        }
    }

    #[test]
    fn mc_predict_is_deterministic_across_runs() {
        let ranges = TtaRanges::new(8.0, 3.0, 0.05).unwrap();
        let mut input = Plane::zeros(12, 12);
        for y in 4..9 {
            for x in 3..8 {
                input.set(x, y, 1.0);
            }
        }
        let a = mc_predict(&input, &StepPredictor, 8, &ranges, 1234).unwrap();
        let b = mc_predict(&input, &StepPredictor, 8, &ranges, 1234).unwrap();
        assert_eq!(a, b);
        let c = mc_predict(&input, &StepPredictor, 8, &ranges, 1235).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn mc_predict_rejects_single_sample_and_reports_failing_index() {
        struct FailAlways;
        impl Predictor for FailAlways {
            fn predict(&self, _input: &Plane) -> Result<Plane> {
                Err(Error::InvalidInput("synthetic failure".into()))
            }
        }
        let ranges = TtaRanges::new(0.0, 0.0, 0.0).unwrap();
        let input = Plane::zeros(4, 4);
        assert!(mc_predict(&input, &StepPredictor, 1, &ranges, 0).is_err());
        let err = mc_predict(&input, &FailAlways, 3, &ranges, 0).unwrap_err();
        assert!(err.to_string().contains("sample"), "{err}");
    }

    #[test]
    fn union_scalar_arithmetic_on_a_crafted_stack() {
        // 100 voxels; the union is 10 voxels where exactly one of two samples
        // votes, so those carry ln 2 and everything else carries 0.
        let mut a = Plane::zeros(10, 10);
        for x in 0..10 {
            a.set(x, 0, 1.0);
        }
        let b = Plane::zeros(10, 10);
        let stack = stack_of(vec![a, b]);
        let h = entropy_map(&stack, 0.5);
        let union = stack.union_mask(0.5);
        let union_sum: f64 = h
            .values()
            .iter()
            .zip(union.values())
            .filter(|&(_, &u)| u == 1.0)
            .map(|(&e, _)| f64::from(e))
            .sum();
        let union_count = union.values().iter().filter(|&&u| u == 1.0).count();
        let total: f64 = h.values().iter().map(|&e| f64::from(e)).sum();
        assert_eq!(union_count, 10);
        assert!((union_sum / union_count as f64 - LN_2).abs() < 1e-6);
        assert!((total / 100.0 - 0.1 * LN_2).abs() < 1e-6);
    }

    #[test]
    fn volume_uncertainty_pools_slices_and_matches_single_slice_seeds() {
        let geom = Geometry::new([10, 10, 3], [1.0, 1.0, 1.0]).unwrap();
        let mut values = vec![0.0f32; geom.voxel_count()];
        for z in 0..3 {
            for y in 3..7 {
                for x in 3..7 {
                    values[geom.index(x, y, z)] = 1.0;
                }
            }
        }
        let vol = Volume::new(geom, VolumeKind::BinaryMask, values).unwrap();
        let ranges = TtaRanges::new(5.0, 1.0, 0.0).unwrap();
        let u = volume_uncertainty(&vol, &StepPredictor, 4, &ranges, 77).unwrap();
        assert_eq!(u.entropy.geometry(), vol.geometry());

        // Slice 1 recomputed standalone with the derived seed matches the
        // corresponding plane of the volume result.
        let stack = mc_predict(
            &vol.slice_at(1),
            &StepPredictor,
            4,
            &ranges,
            mix_seed(77, &[1]),
        )
        .unwrap();
        assert_eq!(u.entropy.slice_at(1), entropy_map(&stack, 0.5));

        // Union mean dominates the all-voxel mean here: background voxels
        // are certain and only boundary voxels carry entropy.
        if let Some(mu) = u.mean_union {
            assert!(mu >= u.mean_all);
        }
    }

    #[test]
    fn summarize_averages_images_and_flags_empty_unions() {
        let geom = Geometry::new([2, 2, 1], [1.0, 1.0, 1.0]).unwrap();
        let entropy = Volume::zeros(geom, VolumeKind::ProbabilityMap).unwrap();
        let image = |mean_union: Option<f64>, mean_all: f64| VolumeUncertainty {
            entropy: entropy.clone(),
            mean_union,
            mean_all,
            union_voxels: usize::from(mean_union.is_some()),
            n_samples: 10,
            seed: 3,
        };
        let report = summarize(&[image(Some(0.4), 0.1), image(None, 0.3)]).unwrap();
        assert_eq!(report.scalar_mean_entropy_union, Some(0.4));
        assert!((report.scalar_mean_entropy_all - 0.2).abs() < 1e-12);
        assert_eq!(report.n_union_images, 1);

        let report = summarize(&[image(None, 0.0)]).unwrap();
        assert_eq!(report.scalar_mean_entropy_union, None);

        assert!(summarize(&[]).is_err());
        assert!(summarize(&[image(None, 0.0), VolumeUncertainty {
            n_samples: 4,
            ..image(None, 0.0)
        }])
        .is_err());
    }
}

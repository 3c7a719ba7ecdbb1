//! Label fusion: majority voting and STAPLE.
//!
//! Both fusers take one binary mask per rater on a shared grid and produce a
//! consensus mask. STAPLE additionally estimates per-rater sensitivity and
//! specificity by expectation maximisation and exposes the voxel-wise
//! posterior probability of the latent true segmentation.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;
use crate::volume::{Volume, VolumeKind};

/// Probabilities are clamped to this range inside E-step products so a
/// parameter pinned at 0 or 1 cannot produce infinities.
pub const PROB_FLOOR: f64 = 1e-12;

/// Voxel-wise prior probability of the latent true label.
#[derive(Debug, Clone, PartialEq)]
pub enum StaplePrior {
    /// Scalar prior set to the mean fraction of positive votes. The default.
    MeanVote,
    /// Fixed scalar prior in (0, 1).
    Scalar(f64),
    /// Per-voxel prior map on the same grid as the input masks.
    Map(Box<Volume>),
}

/// STAPLE parameters. Doubles as the initial state passed to [`staple`] and
/// the final state reported in [`FusionResult::final_params`].
#[derive(Debug, Clone, PartialEq)]
pub struct StapleParams {
    /// Per-rater sensitivity p_j, each in (0, 1).
    pub sensitivities: Vec<f64>,
    /// Per-rater specificity q_j, each in (0, 1).
    pub specificities: Vec<f64>,
    pub prior: StaplePrior,
    pub max_iters: usize,
    pub tol: f64,
}

impl StapleParams {
    /// Default initialisation: every rater starts at p = q = 0.99, scalar
    /// prior from the mean positive-vote fraction, tol 1e-7, 100 iterations.
    pub fn default_init(n_raters: usize) -> Self {
        StapleParams {
            sensitivities: vec![0.99; n_raters],
            specificities: vec![0.99; n_raters],
            prior: StaplePrior::MeanVote,
            max_iters: 100,
            tol: 1e-7,
        }
    }

    pub fn validate(&self, n_raters: usize) -> Result<()> {
        if self.sensitivities.len() != n_raters || self.specificities.len() != n_raters {
            return Err(Error::InvalidInput(format!(
                "parameter vectors sized {}/{} do not match {n_raters} raters",
                self.sensitivities.len(),
                self.specificities.len()
            )));
        }
        let in_open_unit = |v: f64| v.is_finite() && v > 0.0 && v < 1.0;
        if !self.sensitivities.iter().chain(&self.specificities).all(|&v| in_open_unit(v)) {
            return Err(Error::InvalidInput(
                "sensitivities and specificities must lie strictly in (0, 1)".into(),
            ));
        }
        if let StaplePrior::Scalar(g) = self.prior {
            if !in_open_unit(g) {
                return Err(Error::InvalidInput(format!(
                    "scalar prior must lie strictly in (0, 1), got {g}"
                )));
            }
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::InvalidInput(format!(
                "tolerance must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Fusion method selector for [`fuse_subset`] and the CLI.
#[derive(Debug, Clone)]
pub enum FusionMethod {
    Majority,
    /// STAPLE with explicit init, or the default when `None`.
    Staple(Option<StapleParams>),
}

/// Output of a fusion run. Majority voting leaves the STAPLE-only fields
/// empty and reports zero iterations.
#[derive(Debug, Clone)]
pub struct FusionResult {
    pub consensus: Volume,
    /// Voxel-wise posterior of the latent true label (STAPLE only).
    pub posterior: Option<Volume>,
    /// Final parameter estimates (STAPLE only).
    pub final_params: Option<StapleParams>,
    /// Completed EM iterations.
    pub iterations: usize,
    /// False when EM hit the iteration cap or a degenerate update.
    pub converged: bool,
}

fn check_fusion_inputs(masks: &[Volume]) -> Result<()> {
    let first = masks
        .first()
        .ok_or_else(|| Error::InvalidInput("fusion needs at least one mask".into()))?;
    for m in masks {
        m.check_mask()?;
        first.check_same_geometry(m)?;
    }
    Ok(())
}

/// Majority vote: a voxel is positive when at least half of the raters mark
/// it positive, so exact ties on an even rater count resolve positive.
pub fn majority_vote(masks: &[Volume]) -> Result<FusionResult> {
    check_fusion_inputs(masks)?;
    let n = masks.len();
    let voxels = masks[0].geometry().voxel_count();
    let mut values = vec![0.0f32; voxels];
    for (i, v) in values.iter_mut().enumerate() {
        let votes = masks.iter().filter(|m| m.values()[i] == 1.0).count();
        if votes * 2 >= n {
            *v = 1.0;
        }
    }
    let consensus = Volume::new(*masks[0].geometry(), VolumeKind::BinaryMask, values)?;
    Ok(FusionResult {
        consensus,
        posterior: None,
        final_params: None,
        iterations: 0,
        converged: true,
    })
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// Binary STAPLE.
///
/// E-step: the posterior weight of voxel i is
/// `W_i = a_i / (a_i + b_i)` with
/// `a_i = prior_i * prod_j (p_j if rater j voted 1 else 1 - p_j)` and
/// `b_i = (1 - prior_i) * prod_j (q_j if rater j voted 0 else 1 - q_j)`.
/// M-step: `p_j` becomes the W-weighted fraction of voxels rater j marked
/// positive, `q_j` the (1 - W)-weighted fraction marked negative.
///
/// Products are evaluated in log space with probabilities clamped to
/// `[PROB_FLOOR, 1 - PROB_FLOOR]`, summing over raters in index order so
/// results do not depend on thread count. Iteration stops when the largest
/// absolute parameter change drops below `tol`, or at `max_iters` with the
/// result flagged unconverged. A degenerate M-step denominator (no posterior
/// mass on one side) keeps the previous parameters, flags the result and
/// stops; it is unreachable with clamped inputs but guarded regardless.
pub fn staple(masks: &[Volume], init: StapleParams) -> Result<FusionResult> {
    check_fusion_inputs(masks)?;
    let n = masks.len();
    if n < 2 {
        return Err(Error::InvalidInput(
            "staple needs at least two raters".into(),
        ));
    }
    init.validate(n)?;
    let voxels = masks[0].geometry().voxel_count();

    let votes: Vec<Vec<bool>> = masks
        .iter()
        .map(|m| m.values().iter().map(|&v| v == 1.0).collect())
        .collect();

    // Resolve the prior once. MeanVote becomes a scalar so the final
    // parameters report the value actually used.
    let prior: Vec<f64> = match &init.prior {
        StaplePrior::Map(map) => {
            masks[0].check_same_geometry(map)?;
            if map.kind() != VolumeKind::ProbabilityMap {
                return Err(Error::InvalidInput(
                    "prior map must be a probability map".into(),
                ));
            }
            map.values().iter().map(|&v| f64::from(v)).collect()
        }
        StaplePrior::Scalar(g) => vec![*g; voxels],
        StaplePrior::MeanVote => {
            let positives: usize = votes.iter().map(|v| v.iter().filter(|&&b| b).count()).sum();
            let g = positives as f64 / (n * voxels) as f64;
            vec![g; voxels]
        }
    };
    let resolved_prior = if matches!(init.prior, StaplePrior::Map(_)) {
        init.prior.clone()
    } else {
        StaplePrior::Scalar(prior[0])
    };

    let mut p = init.sensitivities.clone();
    let mut q = init.specificities.clone();
    let mut w = vec![0.0f64; voxels];
    let mut iterations = 0usize;
    let mut converged = false;

    while iterations < init.max_iters {
        // E-step. Voxels are independent, so parallelism cannot reorder the
        // per-voxel rater sums.
        let log_p: Vec<(f64, f64)> = p
            .iter()
            .map(|&pj| (clamp_prob(pj).ln(), (1.0 - clamp_prob(pj)).ln()))
            .collect();
        let log_q: Vec<(f64, f64)> = q
            .iter()
            .map(|&qj| (clamp_prob(qj).ln(), (1.0 - clamp_prob(qj)).ln()))
            .collect();
        w.par_iter_mut().enumerate().for_each(|(i, wi)| {
            let g = clamp_prob(prior[i]);
            let mut log_a = g.ln();
            let mut log_b = (1.0 - g).ln();
            for j in 0..n {
                if votes[j][i] {
                    log_a += log_p[j].0;
                    log_b += log_q[j].1;
                } else {
                    log_a += log_p[j].1;
                    log_b += log_q[j].0;
                }
            }
            *wi = 1.0 / (1.0 + (log_b - log_a).exp());
        });

        // M-step, accumulated in voxel order.
        let sum_w: f64 = w.iter().sum();
        let sum_not_w = voxels as f64 - sum_w;
        let degenerate = sum_w == 0.0 || sum_not_w == 0.0;
        let mut new_p = p.clone();
        let mut new_q = q.clone();
        if !degenerate {
            for j in 0..n {
                let mut pos_w = 0.0f64;
                let mut neg_not_w = 0.0f64;
                for i in 0..voxels {
                    if votes[j][i] {
                        pos_w += w[i];
                    } else {
                        neg_not_w += 1.0 - w[i];
                    }
                }
                new_p[j] = pos_w / sum_w;
                new_q[j] = neg_not_w / sum_not_w;
            }
        }
        iterations += 1;
        if degenerate {
            p = p.iter().map(|&v| clamp_prob(v)).collect();
            q = q.iter().map(|&v| clamp_prob(v)).collect();
            break;
        }
        let delta = new_p
            .iter()
            .zip(&p)
            .chain(new_q.iter().zip(&q))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        p = new_p;
        q = new_q;
        if delta < init.tol {
            converged = true;
            break;
        }
    }

    let posterior_values: Vec<f32> = w.iter().map(|&x| x as f32).collect();
    let posterior = Volume::new(
        *masks[0].geometry(),
        VolumeKind::ProbabilityMap,
        posterior_values,
    )?;
    // Threshold the stored posterior so the shipped artifacts stay
    // consistent with each other.
    let consensus_values: Vec<f32> = posterior
        .values()
        .iter()
        .map(|&x| if x >= 0.5 { 1.0 } else { 0.0 })
        .collect();
    let consensus = Volume::new(
        *masks[0].geometry(),
        VolumeKind::BinaryMask,
        consensus_values,
    )?;

    Ok(FusionResult {
        consensus,
        posterior: Some(posterior),
        final_params: Some(StapleParams {
            sensitivities: p,
            specificities: q,
            prior: resolved_prior,
            max_iters: init.max_iters,
            tol: init.tol,
        }),
        iterations,
        converged,
    })
}

/// Loads the masks a filter selects for one subject and fuses them.
///
/// `filter` receives (rater_id, center_id). Entries are taken in rater-id
/// order so the rater axis of the STAPLE parameters is deterministic.
pub fn fuse_subset(
    manifest: &DatasetManifest,
    subject_id: &str,
    filter: impl Fn(&str, &str) -> bool,
    method: &FusionMethod,
) -> Result<FusionResult> {
    let subject = manifest.subject(subject_id)?;
    let mut entries: Vec<_> = subject
        .entries
        .iter()
        .filter(|e| filter(&e.rater_id, &e.center_id))
        .collect();
    entries.sort_by(|a, b| a.rater_id.cmp(&b.rater_id));
    if entries.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no raters selected for subject \"{subject_id}\""
        )));
    }
    let masks: Vec<Volume> = entries
        .iter()
        .map(|e| manifest.load_mask(e))
        .collect::<Result<_>>()?;
    match method {
        FusionMethod::Majority => majority_vote(&masks),
        FusionMethod::Staple(params) => {
            let init = params
                .clone()
                .unwrap_or_else(|| StapleParams::default_init(masks.len()));
            staple(&masks, init)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Geometry;

    fn mask(dims: [usize; 3], bytes: &[u8]) -> Volume {
        let g = Geometry::new(dims, [1.0; 3]).unwrap();
        Volume::mask_from_bytes(g, bytes).unwrap()
    }

    #[test]
    fn majority_three_raters() {
        let masks = [
            mask([2, 1, 1], &[1, 1]),
            mask([2, 1, 1], &[1, 0]),
            mask([2, 1, 1], &[0, 0]),
        ];
        let r = majority_vote(&masks).unwrap();
        // (1,1,0) has 2/3 votes, (1,0,0) has 1/3.
        assert_eq!(r.consensus.values(), &[1.0, 0.0]);
        assert_eq!(r.iterations, 0);
        assert!(r.converged);
        assert!(r.posterior.is_none());
    }

    #[test]
    fn majority_even_tie_is_positive() {
        let masks = [
            mask([1, 1, 1], &[1]),
            mask([1, 1, 1], &[1]),
            mask([1, 1, 1], &[0]),
            mask([1, 1, 1], &[0]),
        ];
        let r = majority_vote(&masks).unwrap();
        assert_eq!(r.consensus.values(), &[1.0]);
    }

    #[test]
    fn majority_rejects_geometry_mismatch() {
        let masks = [mask([2, 1, 1], &[1, 1]), mask([1, 2, 1], &[1, 1])];
        assert!(matches!(
            majority_vote(&masks),
            Err(Error::GeometryMismatch(_))
        ));
    }

    #[test]
    fn majority_rejects_empty_list() {
        assert!(majority_vote(&[]).is_err());
    }

    #[test]
    fn majority_duplication_invariance() {
        let base = [
            mask([3, 1, 1], &[1, 0, 1]),
            mask([3, 1, 1], &[1, 1, 0]),
            mask([3, 1, 1], &[0, 1, 1]),
        ];
        let doubled: Vec<Volume> = base.iter().chain(base.iter()).cloned().collect();
        let a = majority_vote(&base).unwrap();
        let b = majority_vote(&doubled).unwrap();
        assert_eq!(a.consensus.values(), b.consensus.values());
    }

    #[test]
    fn staple_unanimous_reaches_mask_within_two_iterations() {
        let m = mask([4, 2, 1], &[0, 1, 1, 0, 0, 1, 0, 0]);
        let masks = vec![m.clone(), m.clone(), m.clone()];
        let mut init = StapleParams::default_init(3);
        init.max_iters = 2;
        let r = staple(&masks, init).unwrap();
        assert_eq!(r.consensus.values(), m.values());
        let full = staple(&masks, StapleParams::default_init(3)).unwrap();
        assert_eq!(full.consensus.values(), m.values());
        assert!(full.converged);
    }

    #[test]
    fn staple_consensus_matches_thresholded_posterior() {
        let masks = vec![
            mask([4, 2, 1], &[1, 1, 0, 0, 1, 0, 1, 0]),
            mask([4, 2, 1], &[1, 1, 1, 0, 0, 0, 1, 0]),
            mask([4, 2, 1], &[1, 0, 0, 0, 1, 0, 1, 1]),
        ];
        let r = staple(&masks, StapleParams::default_init(3)).unwrap();
        let post = r.posterior.as_ref().unwrap();
        for (c, p) in r.consensus.values().iter().zip(post.values()) {
            assert_eq!(*c == 1.0, *p >= 0.5);
        }
        let params = r.final_params.unwrap();
        for v in params.sensitivities.iter().chain(&params.specificities) {
            assert!(v.is_finite());
        }
    }

    #[test]
    fn staple_posterior_is_permutation_invariant() {
        let masks = vec![
            mask([4, 2, 1], &[1, 1, 0, 0, 1, 0, 1, 0]),
            mask([4, 2, 1], &[1, 1, 1, 0, 0, 0, 1, 0]),
            mask([4, 2, 1], &[1, 0, 0, 0, 1, 0, 1, 1]),
        ];
        let shuffled = vec![masks[2].clone(), masks[0].clone(), masks[1].clone()];
        let a = staple(&masks, StapleParams::default_init(3)).unwrap();
        let b = staple(&shuffled, StapleParams::default_init(3)).unwrap();
        let pa = a.posterior.unwrap();
        let pb = b.posterior.unwrap();
        for (x, y) in pa.values().iter().zip(pb.values()) {
            assert!((f64::from(*x) - f64::from(*y)).abs() < 1e-6);
        }
    }

    #[test]
    fn staple_rejects_single_rater() {
        let masks = vec![mask([2, 1, 1], &[1, 0])];
        assert!(staple(&masks, StapleParams::default_init(1)).is_err());
    }

    #[test]
    fn staple_validates_init() {
        let masks = vec![mask([2, 1, 1], &[1, 0]), mask([2, 1, 1], &[1, 1])];
        let mut bad = StapleParams::default_init(2);
        bad.sensitivities[0] = 1.0;
        assert!(staple(&masks, bad).is_err());
        let mut bad_tol = StapleParams::default_init(2);
        bad_tol.tol = 0.0;
        assert!(staple(&masks, bad_tol).is_err());
    }
}

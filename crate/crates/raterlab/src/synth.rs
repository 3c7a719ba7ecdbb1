//! Built-in synthetic predictors.
//!
//! These close the loop for the uncertainty harness without any trained
//! model: `oracle` returns a sharpened smoothing of its input,
//! `noisy_boundary` adds deterministic pseudo-noise on the boundary band,
//! and `biased` shifts the segmentation by signed 2D morphology steps with a
//! noise amplitude that grows with the shift. The amplitude law
//! sigma(b) = SIGMA_BASE * exp(GAMMA_STEPS * b) is monotone in the signed
//! step count, so over-segmenting predictors carry the larger boundary
//! noise and scalar uncertainty tracks measured bias.
//!
//! Determinism contract: the pseudo-noise is keyed by a content hash of the
//! input plane and the pixel index, never by generator state, so a predictor
//! is a pure function of its input. Distinct augmented views of the same
//! slice hash differently, which is what decorrelates the noise across
//! Monte-Carlo samples.

use crate::error::{Error, Result};
use crate::predictor::Predictor;
use crate::util::{fnv1a64, mix_seed, unit_f64};
use crate::volume::Plane;

/// Baseline boundary-noise amplitude (probability units).
pub const SIGMA_BASE: f64 = 0.15;
/// Exponential rate of the amplitude in injected morphology steps.
pub const GAMMA_STEPS: f64 = 0.35;
/// Exponential rate of the amplitude in measured relative bias.
pub const GAMMA_RELATIVE: f64 = 1.2;

/// Logistic sharpening applied to smoothed masks.
const STEEPNESS: f64 = 14.0;
/// Probability band treated as boundary for noise injection.
const BAND_LO: f64 = 0.02;
const BAND_HI: f64 = 0.98;
/// Smoothing passes of the radius-1 box filter.
const SMOOTH_PASSES: usize = 2;

/// Noise amplitude for an injected signed step count.
pub fn sigma_for_steps(steps: i64) -> f64 {
    SIGMA_BASE * (GAMMA_STEPS * steps as f64).exp()
}

/// Noise amplitude for a measured relative bias (a signed fraction).
pub fn sigma_for_relative_bias(relative_bias: f64) -> f64 {
    SIGMA_BASE * (GAMMA_RELATIVE * relative_bias).exp()
}

/// A deterministic synthetic predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPredictor {
    steps: i64,
    sigma: f64,
    quantize: bool,
}

impl SyntheticPredictor {
    /// Sharpened smoothing of the input; no bias, no noise.
    pub fn oracle() -> Self {
        SyntheticPredictor {
            steps: 0,
            sigma: 0.0,
            quantize: false,
        }
    }

    /// Oracle plus boundary-band noise of amplitude `sigma`.
    pub fn noisy_boundary(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "noise amplitude must be >= 0, got {sigma}"
            )));
        }
        Ok(SyntheticPredictor {
            steps: 0,
            sigma,
            quantize: false,
        })
    }

    /// Segmentation shifted by `steps` signed morphology steps; `sigma`
    /// defaults to [`sigma_for_steps`] so noise grows with the shift.
    ///
    /// The binarize-shift-resmooth pass runs even for zero steps, so the
    /// family is uniform in processing depth and differs only in `steps`
    /// and `sigma` across the whole range.
    pub fn biased(steps: i64, sigma: Option<f64>) -> Result<Self> {
        let sigma = sigma.unwrap_or_else(|| sigma_for_steps(steps));
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "noise amplitude must be >= 0, got {sigma}"
            )));
        }
        Ok(SyntheticPredictor {
            steps,
            sigma,
            quantize: true,
        })
    }

    /// Parses `oracle`, `noisy_boundary[:sigma]`, or `biased[:b[,sigma]]`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (name, args) = match spec.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (spec, None),
        };
        let bad = |msg: String| Error::InvalidInput(msg);
        match name {
            "oracle" => match args {
                None => Ok(Self::oracle()),
                Some(_) => Err(bad(format!("oracle takes no arguments: {spec}"))),
            },
            "noisy_boundary" => {
                let sigma = match args {
                    None => SIGMA_BASE,
                    Some(a) => a
                        .parse::<f64>()
                        .map_err(|_| bad(format!("bad noise amplitude in {spec}")))?,
                };
                Self::noisy_boundary(sigma)
            }
            "biased" => {
                let (steps, sigma) = match args {
                    None => (0, None),
                    Some(a) => {
                        let (b, s) = match a.split_once(',') {
                            Some((b, s)) => (
                                b,
                                Some(s.parse::<f64>().map_err(|_| {
                                    bad(format!("bad noise amplitude in {spec}"))
                                })?),
                            ),
                            None => (a, None),
                        };
                        (
                            b.parse::<i64>()
                                .map_err(|_| bad(format!("bad step count in {spec}")))?,
                            s,
                        )
                    }
                };
                Self::biased(steps, sigma)
            }
            _ => Err(bad(format!(
                "unknown synthetic predictor {name:?}; expected oracle, \
                 noisy_boundary, or biased"
            ))),
        }
    }

    pub fn steps(&self) -> i64 {
        self.steps
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

impl Predictor for SyntheticPredictor {
    fn predict(&self, input: &Plane) -> Result<Plane> {
        let key = content_hash(input);
        let mut p = sharpen(&boxsmooth(input, SMOOTH_PASSES));
        if self.quantize {
            let shifted = morph2d(&binarize(&p), self.steps);
            p = sharpen(&boxsmooth(&shifted, SMOOTH_PASSES));
        }
        if self.sigma > 0.0 {
            for (i, v) in p.values_mut().iter_mut().enumerate() {
                let clean = f64::from(*v);
                if clean > BAND_LO && clean < BAND_HI {
                    let u = unit_f64(mix_seed(key, &[i as u64]));
                    *v = (clean + (2.0 * u - 1.0) * self.sigma).clamp(0.0, 1.0) as f32;
                }
            }
        }
        Ok(p)
    }
}

fn content_hash(plane: &Plane) -> u64 {
    let mut bytes = Vec::with_capacity(16 + plane.values().len() * 4);
    bytes.extend_from_slice(&(plane.width() as u64).to_le_bytes());
    bytes.extend_from_slice(&(plane.height() as u64).to_le_bytes());
    for v in plane.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fnv1a64(&bytes)
}

/// Radius-1 box average, count-normalized at the edges.
fn boxsmooth(plane: &Plane, passes: usize) -> Plane {
    let (w, h) = (plane.width(), plane.height());
    let mut current = plane.clone();
    for _ in 0..passes {
        let mut next = Plane::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                let mut sum = 0.0f64;
                let mut count = 0usize;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                            sum += f64::from(current.get(nx as usize, ny as usize));
                            count += 1;
                        }
                    }
                }
                next.set(x, y, (sum / count as f64) as f32);
            }
        }
        current = next;
    }
    current
}

/// Logistic sharpening about 0.5.
fn sharpen(plane: &Plane) -> Plane {
    let mut out = plane.clone();
    for v in out.values_mut() {
        let t = (f64::from(*v) - 0.5) * STEEPNESS;
        *v = (1.0 / (1.0 + (-t).exp())) as f32;
    }
    out
}

fn binarize(plane: &Plane) -> Plane {
    let mut out = plane.clone();
    for v in out.values_mut() {
        *v = if *v >= 0.5 { 1.0 } else { 0.0 };
    }
    out
}

/// Signed 4-connectivity morphology; erosion stops before emptying a
/// nonempty plane, mirroring the volumetric rule.
fn morph2d(plane: &Plane, steps: i64) -> Plane {
    let mut current = plane.clone();
    for _ in 0..steps.unsigned_abs() {
        let next = if steps > 0 {
            dilate2d(&current)
        } else {
            let eroded = erode2d(&current);
            if eroded.values().iter().all(|&v| v == 0.0)
                && current.values().iter().any(|&v| v == 1.0)
            {
                break;
            }
            eroded
        };
        current = next;
    }
    current
}

fn dilate2d(plane: &Plane) -> Plane {
    let (w, h) = (plane.width(), plane.height());
    let mut out = Plane::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let on = plane.get(x, y) == 1.0
                || plane.get_or_zero(x as i64 - 1, y as i64) == 1.0
                || plane.get_or_zero(x as i64 + 1, y as i64) == 1.0
                || plane.get_or_zero(x as i64, y as i64 - 1) == 1.0
                || plane.get_or_zero(x as i64, y as i64 + 1) == 1.0;
            out.set(x, y, if on { 1.0 } else { 0.0 });
        }
    }
    out
}

fn erode2d(plane: &Plane) -> Plane {
    let (w, h) = (plane.width(), plane.height());
    let mut out = Plane::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let on = plane.get(x, y) == 1.0
                && plane.get_or_zero(x as i64 - 1, y as i64) == 1.0
                && plane.get_or_zero(x as i64 + 1, y as i64) == 1.0
                && plane.get_or_zero(x as i64, y as i64 - 1) == 1.0
                && plane.get_or_zero(x as i64, y as i64 + 1) == 1.0;
            out.set(x, y, if on { 1.0 } else { 0.0 });
        }
    }
    out
}

//! Helpers shared by the integration suites: an independent reference EM,
//! small mask constructors, rank statistics and a binary runner.

#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use raterlab::{Geometry, Volume, VolumeKind};

/// Reference STAPLE state after running EM to completion.
pub struct RefStaple {
    pub posterior: Vec<f64>,
    pub sensitivities: Vec<f64>,
    pub specificities: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn clamp_prob(v: f64) -> f64 {
    v.clamp(1e-12, 1.0 - 1e-12)
}

/// Brute-force EM in plain probability space, written directly from the
/// update equations: no log-space tricks, no parallelism. The prior is the
/// mean vote fraction, the E-step weighs each voxel by
/// `g * prod_j P(vote_j | true)` against `(1-g) * prod_j P(vote_j | false)`,
/// and the M-step re-estimates sensitivity and specificity from the
/// posterior mass. Stops when the largest parameter change falls below
/// `tol`, keeping the posterior of the final E-step.
pub fn reference_staple(
    votes: &[Vec<bool>],
    init_p: &[f64],
    init_q: &[f64],
    tol: f64,
    max_iters: usize,
) -> RefStaple {
    let n = votes.len();
    let voxels = votes[0].len();
    assert!(n >= 2, "reference EM needs at least two raters");
    assert!(votes.iter().all(|v| v.len() == voxels));

    let positives: usize = votes.iter().map(|v| v.iter().filter(|&&b| b).count()).sum();
    let g = clamp_prob(positives as f64 / (n * voxels) as f64);

    let mut p = init_p.to_vec();
    let mut q = init_q.to_vec();
    let mut w = vec![0.0f64; voxels];
    let mut iterations = 0usize;
    let mut converged = false;

    while iterations < max_iters {
        for i in 0..voxels {
            let mut a = g;
            let mut b = 1.0 - g;
            for j in 0..n {
                let pj = clamp_prob(p[j]);
                let qj = clamp_prob(q[j]);
                if votes[j][i] {
                    a *= pj;
                    b *= 1.0 - qj;
                } else {
                    a *= 1.0 - pj;
                    b *= qj;
                }
            }
            w[i] = a / (a + b);
        }

        let sum_w: f64 = w.iter().sum();
        let sum_not_w = voxels as f64 - sum_w;
        iterations += 1;
        if sum_w == 0.0 || sum_not_w == 0.0 {
            break;
        }

        let mut delta = 0.0f64;
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
            let new_p = pos_w / sum_w;
            let new_q = neg_not_w / sum_not_w;
            delta = delta.max((new_p - p[j]).abs()).max((new_q - q[j]).abs());
            p[j] = new_p;
            q[j] = new_q;
        }
        if delta < tol {
            converged = true;
            break;
        }
    }

    RefStaple {
        posterior: w,
        sensitivities: p,
        specificities: q,
        iterations,
        converged,
    }
}

/// A unit-spacing binary mask with ones at the given flat indices.
pub fn mask_at(dims: [usize; 3], positives: &[usize]) -> Volume {
    let geometry = Geometry::new(dims, [1.0, 1.0, 1.0]).unwrap();
    let mut values = vec![0.0f32; geometry.voxel_count()];
    for &i in positives {
        values[i] = 1.0;
    }
    Volume::new(geometry, VolumeKind::BinaryMask, values).unwrap()
}

/// A unit-spacing binary mask whose first `count` voxels are positive.
pub fn mask_with_count(dims: [usize; 3], count: usize) -> Volume {
    let indices: Vec<usize> = (0..count).collect();
    mask_at(dims, &indices)
}

/// A mask from per-voxel booleans drawn by the caller.
pub fn mask_from_bools(dims: [usize; 3], bits: &[bool]) -> Volume {
    let geometry = Geometry::new(dims, [1.0, 1.0, 1.0]).unwrap();
    assert_eq!(bits.len(), geometry.voxel_count());
    let values: Vec<f32> = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    Volume::new(geometry, VolumeKind::BinaryMask, values).unwrap()
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0f64; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Pearson correlation coefficient.
pub fn pearson_r(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation (average ranks on ties).
pub fn spearman_rho(x: &[f64], y: &[f64]) -> f64 {
    pearson_r(&ranks(x), &ranks(y))
}

/// Path of the compiled CLI binary.
pub fn raterlab_exe() -> &'static str {
    env!("CARGO_BIN_EXE_raterlab")
}

/// Runs the CLI with extra environment variables and captures everything.
pub fn run_cli_env(args: &[&str], envs: &[(&str, &str)], cwd: Option<&Path>) -> Output {
    let mut cmd = Command::new(raterlab_exe());
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    if let Some(dir) = cwd {
        cmd.current_dir(dir);
    }
    cmd.output().expect("failed to spawn raterlab binary")
}

/// Runs the CLI and captures stdout/stderr/status.
pub fn run_cli(args: &[&str]) -> Output {
    run_cli_env(args, &[], None)
}

/// Asserts a process exited with the given code, printing its output if not.
pub fn assert_exit(output: &Output, code: i32, what: &str) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "{what}: expected exit {code}\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

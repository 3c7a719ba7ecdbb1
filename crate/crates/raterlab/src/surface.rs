//! Surface distances between binary masks.
//!
//! Boundaries are 6-connectivity boundary voxels (see
//! [`crate::morph::boundary_voxels`]); distances are Euclidean between voxel
//! centres in millimetres, so anisotropic spacing is respected. Small
//! boundary pairs are measured by exhaustive search; larger ones go through
//! an exact squared Euclidean distance transform. Both routes return the same
//! values up to floating-point rounding.

use crate::error::{Error, Result};
use crate::morph;
use crate::volume::Volume;

/// Above this product of boundary sizes, [`assd`] switches from exhaustive
/// search to the distance-transform path.
const BRUTE_FORCE_LIMIT: usize = 2_000_000;

/// Large finite stand-in for "no seed yet"; grids here are far smaller.
const FAR: f64 = 1e30;

/// Average symmetric surface distance in millimetres.
///
/// Mean distance from boundary voxels of `a` to the boundary of `b`,
/// averaged with the opposite direction. Errors with
/// [`Error::Undefined`] when either mask is empty.
pub fn assd(a: &Volume, b: &Volume) -> Result<f64> {
    a.check_mask()?;
    b.check_mask()?;
    a.check_same_geometry(b)?;
    if a.is_empty_mask() || b.is_empty_mask() {
        return Err(Error::Undefined(
            "surface distance of an empty mask".into(),
        ));
    }
    let ba = morph::boundary_voxels(a)?;
    let bb = morph::boundary_voxels(b)?;
    let spacing = a.geometry().spacing_mm;

    let (d_ab, d_ba) = if ba.len() * bb.len() <= BRUTE_FORCE_LIMIT {
        (
            mean_min_distance_brute(&ba, &bb, spacing),
            mean_min_distance_brute(&bb, &ba, spacing),
        )
    } else {
        let dims = a.geometry().dims;
        (
            mean_distance_via_edt(&ba, &bb, dims, spacing),
            mean_distance_via_edt(&bb, &ba, dims, spacing),
        )
    };
    Ok(0.5 * (d_ab + d_ba))
}

fn mean_min_distance_brute(from: &[[usize; 3]], to: &[[usize; 3]], spacing: [f64; 3]) -> f64 {
    let mut total = 0.0f64;
    for &p in from {
        let mut best = f64::INFINITY;
        for &q in to {
            let dx = (p[0] as f64 - q[0] as f64) * spacing[0];
            let dy = (p[1] as f64 - q[1] as f64) * spacing[1];
            let dz = (p[2] as f64 - q[2] as f64) * spacing[2];
            let d2 = dx * dx + dy * dy + dz * dz;
            if d2 < best {
                best = d2;
            }
        }
        total += best.sqrt();
    }
    total / from.len() as f64
}

fn mean_distance_via_edt(
    from: &[[usize; 3]],
    seeds: &[[usize; 3]],
    dims: [usize; 3],
    spacing: [f64; 3],
) -> f64 {
    let mut grid = vec![FAR; dims[0] * dims[1] * dims[2]];
    for &s in seeds {
        grid[s[0] + dims[0] * (s[1] + dims[1] * s[2])] = 0.0;
    }
    edt_sq_3d(&mut grid, dims, spacing);
    let mut total = 0.0f64;
    for &p in from {
        total += grid[p[0] + dims[0] * (p[1] + dims[1] * p[2])].sqrt();
    }
    total / from.len() as f64
}

/// In-place exact squared Euclidean distance transform, anisotropic.
///
/// Lower-envelope-of-parabolas transform applied separably along each axis
/// with that axis's squared spacing as the parabola width.
fn edt_sq_3d(grid: &mut [f64], dims: [usize; 3], spacing: [f64; 3]) {
    let [nx, ny, nz] = dims;
    let mut line = Vec::new();

    // x passes
    let h2 = spacing[0] * spacing[0];
    for z in 0..nz {
        for y in 0..ny {
            let base = nx * (y + ny * z);
            line.clear();
            line.extend_from_slice(&grid[base..base + nx]);
            edt_sq_1d(&line, h2, &mut grid[base..base + nx]);
        }
    }
    // y passes
    let h2 = spacing[1] * spacing[1];
    let mut out = vec![0.0f64; ny];
    for z in 0..nz {
        for x in 0..nx {
            line.clear();
            for y in 0..ny {
                line.push(grid[x + nx * (y + ny * z)]);
            }
            edt_sq_1d(&line, h2, &mut out);
            for y in 0..ny {
                grid[x + nx * (y + ny * z)] = out[y];
            }
        }
    }
    // z passes
    let h2 = spacing[2] * spacing[2];
    let mut out = vec![0.0f64; nz];
    for y in 0..ny {
        for x in 0..nx {
            line.clear();
            for z in 0..nz {
                line.push(grid[x + nx * (y + ny * z)]);
            }
            edt_sq_1d(&line, h2, &mut out);
            for z in 0..nz {
                grid[x + nx * (y + ny * z)] = out[z];
            }
        }
    }
}

/// 1D squared distance transform: `out[q] = min_p f[p] + h2 * (q - p)^2`.
fn edt_sq_1d(f: &[f64], h2: f64, out: &mut [f64]) {
    let n = f.len();
    debug_assert_eq!(out.len(), n);
    if n == 1 {
        out[0] = f[0];
        return;
    }
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let intersect = |q: usize, p: usize| {
        let (qs, ps) = (q as f64, p as f64);
        ((f[q] + h2 * qs * qs) - (f[p] + h2 * ps * ps)) / (2.0 * h2 * (qs - ps))
    };
    for q in 1..n {
        // z[0] is -inf and every intersection is finite, so this terminates.
        let mut s = intersect(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = intersect(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for q in 0..n {
        let qs = q as f64;
        while z[k + 1] < qs {
            k += 1;
        }
        let d = qs - v[k] as f64;
        out[q] = f[v[k]] + h2 * d * d;
    }
}

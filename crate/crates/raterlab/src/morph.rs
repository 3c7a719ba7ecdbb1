//! Binary morphology on voxel grids with 6-connectivity (face neighbours).
//!
//! Voxels outside the grid count as background for every operation here, so
//! dilation never grows past the grid and erosion strips voxels touching the
//! border.

use crate::error::Result;
use crate::volume::{Volume, VolumeKind};

const NEIGHBOURS: [[i64; 3]; 6] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

fn bits_of(mask: &Volume) -> Vec<bool> {
    mask.values().iter().map(|&v| v == 1.0).collect()
}

fn volume_of(bits: &[bool], like: &Volume) -> Volume {
    let values = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    Volume::new(*like.geometry(), VolumeKind::BinaryMask, values)
        .expect("morphology preserves mask validity")
}

#[inline]
fn neighbour_index(dims: [usize; 3], x: usize, y: usize, z: usize, d: [i64; 3]) -> Option<usize> {
    let nx = x as i64 + d[0];
    let ny = y as i64 + d[1];
    let nz = z as i64 + d[2];
    if nx < 0
        || ny < 0
        || nz < 0
        || nx as usize >= dims[0]
        || ny as usize >= dims[1]
        || nz as usize >= dims[2]
    {
        None
    } else {
        Some(nx as usize + dims[0] * (ny as usize + dims[1] * nz as usize))
    }
}

fn dilate_bits(bits: &[bool], dims: [usize; 3]) -> Vec<bool> {
    let mut out = bits.to_vec();
    let mut i = 0;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                if !bits[i] {
                    let hit = NEIGHBOURS
                        .iter()
                        .any(|&d| matches!(neighbour_index(dims, x, y, z, d), Some(j) if bits[j]));
                    if hit {
                        out[i] = true;
                    }
                }
                i += 1;
            }
        }
    }
    out
}

fn erode_bits(bits: &[bool], dims: [usize; 3]) -> Vec<bool> {
    let mut out = bits.to_vec();
    let mut i = 0;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                if bits[i] {
                    let keep = NEIGHBOURS
                        .iter()
                        .all(|&d| matches!(neighbour_index(dims, x, y, z, d), Some(j) if bits[j]));
                    if !keep {
                        out[i] = false;
                    }
                }
                i += 1;
            }
        }
    }
    out
}

/// One dilation step.
pub fn dilate(mask: &Volume) -> Result<Volume> {
    mask.check_mask()?;
    Ok(volume_of(
        &dilate_bits(&bits_of(mask), mask.geometry().dims),
        mask,
    ))
}

/// One erosion step.
pub fn erode(mask: &Volume) -> Result<Volume> {
    mask.check_mask()?;
    Ok(volume_of(
        &erode_bits(&bits_of(mask), mask.geometry().dims),
        mask,
    ))
}

/// Applies `steps` signed morphology steps: positive dilates, negative
/// erodes. Erosion stops early rather than emptying the mask; the number of
/// steps actually applied is returned alongside the result.
pub fn morph_signed(mask: &Volume, steps: i64) -> Result<(Volume, i64)> {
    mask.check_mask()?;
    let dims = mask.geometry().dims;
    let mut bits = bits_of(mask);
    let mut applied = 0i64;
    if steps >= 0 {
        for _ in 0..steps {
            bits = dilate_bits(&bits, dims);
            applied += 1;
        }
    } else {
        for _ in 0..(-steps) {
            let next = erode_bits(&bits, dims);
            if !next.iter().any(|&b| b) {
                break;
            }
            bits = next;
            applied -= 1;
        }
    }
    Ok((volume_of(&bits, mask), applied))
}

/// Positive voxels with at least one background face neighbour.
/// Out-of-grid neighbours count as background.
pub fn boundary_voxels(mask: &Volume) -> Result<Vec<[usize; 3]>> {
    mask.check_mask()?;
    let dims = mask.geometry().dims;
    let bits = bits_of(mask);
    let mut out = Vec::new();
    let mut i = 0;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                if bits[i] {
                    let edge = NEIGHBOURS.iter().any(|&d| {
                        match neighbour_index(dims, x, y, z, d) {
                            None => true,
                            Some(j) => !bits[j],
                        }
                    });
                    if edge {
                        out.push([x, y, z]);
                    }
                }
                i += 1;
            }
        }
    }
    Ok(out)
}

/// Background voxels with at least one positive face neighbour.
pub fn outer_shell(mask: &Volume) -> Result<Vec<[usize; 3]>> {
    mask.check_mask()?;
    let dims = mask.geometry().dims;
    let bits = bits_of(mask);
    let mut out = Vec::new();
    let mut i = 0;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                if !bits[i] {
                    let hit = NEIGHBOURS
                        .iter()
                        .any(|&d| matches!(neighbour_index(dims, x, y, z, d), Some(j) if bits[j]));
                    if hit {
                        out.push([x, y, z]);
                    }
                }
                i += 1;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Geometry;

    fn cube_mask(dims: [usize; 3], lo: [usize; 3], hi: [usize; 3]) -> Volume {
        let g = Geometry::new(dims, [1.0; 3]).unwrap();
        let mut values = vec![0.0f32; g.voxel_count()];
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    values[g.index(x, y, z)] = 1.0;
                }
            }
        }
        Volume::new(g, VolumeKind::BinaryMask, values).unwrap()
    }

    /// Independent dilation oracle: a voxel is positive iff it, or one of
    /// its face neighbours, is positive in the input.
    fn dilate_oracle(mask: &Volume) -> usize {
        let dims = mask.geometry().dims;
        let mut count = 0;
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let mut on = mask.get(x, y, z) == 1.0;
                    for d in NEIGHBOURS {
                        if let Some(j) = neighbour_index(dims, x, y, z, d) {
                            on = on || mask.values()[j] == 1.0;
                        }
                    }
                    if on {
                        count += 1;
                    }
                }
            }
        }
        count
    }

    #[test]
    fn cube_dilation_count_matches_hand_value() {
        // 3x3x3 cube away from borders: 27 + 6 faces * 9 = 81.
        let m = cube_mask([9, 9, 9], [3, 3, 3], [5, 5, 5]);
        let d = dilate(&m).unwrap();
        assert_eq!(d.positive_count(), 81);
        assert_eq!(d.positive_count(), dilate_oracle(&m));
    }

    #[test]
    fn erode_then_dilate_cube_is_identity_interior() {
        let m = cube_mask([9, 9, 9], [2, 2, 2], [6, 6, 6]);
        let e = erode(&m).unwrap();
        assert_eq!(e.positive_count(), 27);
        let back = dilate(&e).unwrap();
        // Dilating the eroded cube restores the cube minus its edges/corners.
        assert!(back.positive_count() < m.positive_count());
        for (a, b) in back.values().iter().zip(m.values()) {
            assert!(*a <= *b);
        }
    }

    #[test]
    fn erosion_clamps_before_emptying() {
        let m = cube_mask([5, 5, 5], [2, 2, 2], [2, 2, 2]);
        let (out, applied) = morph_signed(&m, -3).unwrap();
        assert_eq!(applied, 0);
        assert_eq!(out.positive_count(), 1);
    }

    #[test]
    fn signed_morph_counts_steps() {
        let m = cube_mask([9, 9, 9], [3, 3, 3], [5, 5, 5]);
        let (d, applied) = morph_signed(&m, 1).unwrap();
        assert_eq!(applied, 1);
        assert_eq!(d.positive_count(), 81);
        let (e, applied) = morph_signed(&m, -1).unwrap();
        assert_eq!(applied, -1);
        assert_eq!(e.positive_count(), 1);
    }

    #[test]
    fn boundary_of_solid_cube_excludes_interior() {
        let m = cube_mask([9, 9, 9], [3, 3, 3], [5, 5, 5]);
        let b = boundary_voxels(&m).unwrap();
        assert_eq!(b.len(), 26); // 27 minus the single interior voxel
        assert!(!b.contains(&[4, 4, 4]));
    }

    #[test]
    fn border_touching_voxels_are_boundary() {
        let m = cube_mask([2, 2, 2], [0, 0, 0], [1, 1, 1]);
        let b = boundary_voxels(&m).unwrap();
        assert_eq!(b.len(), 8);
    }

    #[test]
    fn outer_shell_of_single_voxel() {
        let m = cube_mask([5, 5, 5], [2, 2, 2], [2, 2, 2]);
        let s = outer_shell(&m).unwrap();
        assert_eq!(s.len(), 6);
    }
}

//! Deterministic synthetic stereo pairs with exact integer-disparity ground
//! truth: textured fronto-parallel rectangles over a textured background,
//! painted far-to-near into both views so the warp identity
//! `right[y][x] == left[y][x + gt[y][x]]` holds bit-exactly at valid pixels.

use ndarray::{Array2, Array3};

use crate::data::StereoSample;
use crate::error::{Error, Result};

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn hash3(seed: u64, a: i64, b: i64, c: u64) -> u64 {
    splitmix(seed ^ (a as u64).wrapping_mul(0x9e3779b97f4a7c15) ^ (b as u64).wrapping_mul(0xc2b2ae3d27d4eb4f) ^ c.wrapping_mul(0x165667b19e3779f9))
}

fn unit(h: u64) -> f32 {
    (h >> 40) as f32 / (1u64 << 24) as f32
}

/// Procedural plane texture: a per-plane base color, value noise on an 8-px
/// grid, and fine per-pixel detail. Pure in (plane seed, x, y), defined for
/// any x so the right view can sample beyond the left frame.
fn texel(plane_seed: u64, x: i64, y: i64, ch: u64) -> f32 {
    let base = 0.25 + 0.5 * unit(hash3(plane_seed, 0, 0, 100 + ch));
    let cell = 8i64;
    let (cx, cy) = (x.div_euclid(cell), y.div_euclid(cell));
    let (fx, fy) = (
        (x.rem_euclid(cell)) as f32 / cell as f32,
        (y.rem_euclid(cell)) as f32 / cell as f32,
    );
    let corner = |dx: i64, dy: i64| unit(hash3(plane_seed, cx + dx, cy + dy, ch));
    let coarse = corner(0, 0) * (1.0 - fx) * (1.0 - fy)
        + corner(1, 0) * fx * (1.0 - fy)
        + corner(0, 1) * (1.0 - fx) * fy
        + corner(1, 1) * fx * fy;
    let fine = unit(hash3(plane_seed, x, y, 50 + ch)) - 0.5;
    (base + 0.55 * (coarse - 0.5) + 0.12 * fine).clamp(0.0, 1.0)
}

struct Plane {
    seed: u64,
    disparity: usize,
    x0: i64,
    x1: i64,
    y0: i64,
    y1: i64,
}

/// Deterministic in `seed`. Ground truth is aligned with the right image so
/// that `right[y][x] = left[y][x + gt]`; pixels occluded in either view or
/// warped out of frame are masked invalid.
pub fn synth_stereo(seed: u64, h: usize, w: usize, max_d: usize, n_planes: usize) -> Result<StereoSample> {
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::Domain(format!("synthetic size {h}x{w} must be divisible by 4")));
    }
    if max_d == 0 || max_d > w / 4 {
        return Err(Error::Domain(format!("max_d {max_d} must be in 1..={}", w / 4)));
    }

    // Background at disparity 1 plus n_planes random rectangles, far to near.
    let mut planes = vec![Plane {
        seed: splitmix(seed ^ 0xabcd),
        disparity: 1,
        x0: i64::MIN / 2,
        x1: i64::MAX / 2,
        y0: i64::MIN / 2,
        y1: i64::MAX / 2,
    }];
    for i in 0..n_planes {
        let s = splitmix(seed.wrapping_add(1).wrapping_mul(0x9e37).wrapping_add(i as u64));
        let d = 1 + (hash3(s, 1, 1, 1) % max_d as u64) as usize;
        let pw = (w as u64 / 5 + hash3(s, 2, 2, 2) % (w as u64 * 2 / 5)) as i64;
        let ph = (h as u64 / 5 + hash3(s, 3, 3, 3) % (h as u64 * 2 / 5)) as i64;
        let x0 = (hash3(s, 4, 4, 4) % (w as u64)) as i64 - pw / 4;
        let y0 = (hash3(s, 5, 5, 5) % (h as u64)) as i64 - ph / 4;
        planes.push(Plane { seed: splitmix(s), disparity: d, x0, x1: x0 + pw, y0, y1: y0 + ph });
    }
    planes.sort_by_key(|p| p.disparity); // painter's order: far first

    let mut left = Array3::<f32>::zeros((h, w, 3));
    let mut right = Array3::<f32>::zeros((h, w, 3));
    let mut left_id = Array2::<i32>::from_elem((h, w), -1);
    let mut right_id = Array2::<i32>::from_elem((h, w), -1);
    let mut right_d = Array2::<usize>::zeros((h, w));

    for (pid, p) in planes.iter().enumerate() {
        for y in 0..h as i64 {
            if y < p.y0 || y >= p.y1 {
                continue;
            }
            for x in 0..w as i64 {
                // Left view: plane covers left-x in [x0, x1).
                if x >= p.x0 && x < p.x1 {
                    for ch in 0..3 {
                        left[[y as usize, x as usize, ch as usize]] = texel(p.seed, x, y, ch);
                    }
                    left_id[[y as usize, x as usize]] = pid as i32;
                }
                // Right view: right-x maps to left-x = x + d on this plane.
                let xl = x + p.disparity as i64;
                if xl >= p.x0 && xl < p.x1 {
                    for ch in 0..3 {
                        right[[y as usize, x as usize, ch as usize]] = texel(p.seed, xl, y, ch);
                    }
                    right_id[[y as usize, x as usize]] = pid as i32;
                    right_d[[y as usize, x as usize]] = p.disparity;
                }
            }
        }
    }

    let mut gt = Array2::<f32>::zeros((h, w));
    let mut mask = Array2::<bool>::from_elem((h, w), false);
    for y in 0..h {
        for x in 0..w {
            let pid = right_id[[y, x]];
            if pid < 0 {
                continue;
            }
            let d = right_d[[y, x]];
            gt[[y, x]] = d as f32;
            let xl = x + d;
            // Valid only when the same surface is visible in the left view.
            mask[[y, x]] = xl < w && left_id[[y, xl]] == pid;
        }
    }

    Ok(StereoSample { left, right, gt_disparity: gt, valid_mask: mask })
}

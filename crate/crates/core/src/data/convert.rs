//! Annotation-style converters: segmentation mask to bounding box or scribble.

use std::collections::VecDeque;

use super::raster::Mask;
use crate::error::{contract, Result};

/// Filled tightest axis-aligned rectangle around every annotated pixel.
pub fn mask_to_bbox(mask: &Mask) -> Result<Mask> {
    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
    for r in 0..mask.height {
        for c in 0..mask.width {
            if mask.get(r, c) {
                r0 = r0.min(r);
                r1 = r1.max(r);
                c0 = c0.min(c);
                c1 = c1.max(c);
            }
        }
    }
    contract!(
        r0 != usize::MAX,
        "mask_to_bbox: mask has no annotated pixel"
    );
    let mut out = Mask::zeros(mask.height, mask.width);
    for r in r0..=r1 {
        for c in c0..=c1 {
            out.set(r, c, true);
        }
    }
    Ok(out)
}

/// 8-connected components as lists of flat indices, in raster order of
/// their first pixel.
pub fn components(mask: &Mask) -> Vec<Vec<usize>> {
    let (h, w) = (mask.height, mask.width);
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    for start in 0..h * w {
        if mask.data[start] == 0 || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                        continue;
                    }
                    let j = rr as usize * w + cc as usize;
                    if mask.data[j] != 0 && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Neighbours P2..P9, clockwise from north; out-of-frame counts as 0.
fn neighbours(m: &[u8], h: usize, w: usize, r: usize, c: usize) -> [u8; 8] {
    let at = |dr: isize, dc: isize| -> u8 {
        let (rr, cc) = (r as isize + dr, c as isize + dc);
        if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
            0
        } else {
            m[rr as usize * w + cc as usize]
        }
    };
    [
        at(-1, 0),
        at(-1, 1),
        at(0, 1),
        at(1, 1),
        at(1, 0),
        at(1, -1),
        at(0, -1),
        at(-1, -1),
    ]
}

/// Zhang-Suen two-subiteration thinning, run until no pixel changes.
pub fn zhang_suen_thin(mask: &Mask) -> Mask {
    let (h, w) = (mask.height, mask.width);
    let mut m = mask.data.clone();
    let mut doomed = Vec::new();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            doomed.clear();
            for r in 0..h {
                for c in 0..w {
                    if m[r * w + c] == 0 {
                        continue;
                    }
                    let p = neighbours(&m, h, w, r, c);
                    let b: u8 = p.iter().sum();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let a = (0..8).filter(|&k| p[k] == 0 && p[(k + 1) % 8] == 1).count();
                    if a != 1 {
                        continue;
                    }
                    // p[0]=P2 (N), p[2]=P4 (E), p[4]=P6 (S), p[6]=P8 (W)
                    let ok = if pass == 0 {
                        p[0] * p[2] * p[4] == 0 && p[2] * p[4] * p[6] == 0
                    } else {
                        p[0] * p[2] * p[6] == 0 && p[0] * p[4] * p[6] == 0
                    };
                    if ok {
                        doomed.push(r * w + c);
                    }
                }
            }
            for &i in &doomed {
                m[i] = 0;
            }
            changed |= !doomed.is_empty();
        }
        if !changed {
            break;
        }
    }
    Mask {
        height: h,
        width: w,
        data: m,
    }
}

/// One-pixel-wide skeleton of a mask, optionally dilated to `width` pixels
/// (clipped to the mask).
///
/// Thinning can erase small components entirely (a 2×2 block, for one); such
/// a component keeps the pixel nearest its centroid so coverage is preserved.
pub fn mask_to_scribble(mask: &Mask, width: usize) -> Result<Mask> {
    contract!(
        !mask.is_empty(),
        "mask_to_scribble: mask has no annotated pixel"
    );
    contract!(width >= 1, "mask_to_scribble: width must be at least 1");
    let mut thin = zhang_suen_thin(mask);
    let w = mask.width;
    for comp in components(mask) {
        if comp.iter().any(|&i| thin.data[i] != 0) {
            continue;
        }
        let n = comp.len() as f64;
        let (cr, cc) = comp.iter().fold((0.0, 0.0), |(a, b), &i| {
            (a + (i / w) as f64 / n, b + (i % w) as f64 / n)
        });
        let keep = *comp
            .iter()
            .min_by(|&&i, &&j| {
                let d = |k: usize| ((k / w) as f64 - cr).powi(2) + ((k % w) as f64 - cc).powi(2);
                d(i).total_cmp(&d(j)).then(i.cmp(&j))
            })
            .expect("component is non-empty");
        thin.data[keep] = 1;
    }
    if width == 1 {
        return Ok(thin);
    }
    let lo = (width - 1) / 2;
    let hi = width - 1 - lo;
    let mut out = Mask::zeros(mask.height, mask.width);
    for r in 0..mask.height {
        for c in 0..mask.width {
            if !thin.get(r, c) {
                continue;
            }
            for rr in r.saturating_sub(lo)..=(r + hi).min(mask.height - 1) {
                for cc in c.saturating_sub(lo)..=(c + hi).min(mask.width - 1) {
                    if mask.get(rr, cc) {
                        out.set(rr, cc, true);
                    }
                }
            }
        }
    }
    Ok(out)
}

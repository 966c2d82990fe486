//! 8-connected component labelling over a boolean mask.

use std::collections::VecDeque;

/// Groups the set pixels of a `width x height` mask into 8-connected
/// components. Components are ordered by their first pixel in raster order
/// and each pixel list is sorted.
pub fn components_8(width: usize, height: usize, mask: &[bool]) -> Vec<Vec<usize>> {
    assert_eq!(mask.len(), width * height);
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut pixels = Vec::new();
        while let Some(i) = queue.pop_front() {
            pixels.push(i);
            let (x, y) = (i % width, i / width);
            let x_lo = x.saturating_sub(1);
            let x_hi = (x + 1).min(width - 1);
            let y_lo = y.saturating_sub(1);
            let y_hi = (y + 1).min(height - 1);
            for ny in y_lo..=y_hi {
                for nx in x_lo..=x_hi {
                    let j = ny * width + nx;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        pixels.sort_unstable();
        out.push(pixels);
    }
    out
}

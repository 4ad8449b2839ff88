//! Outer boundaries of 8-connected foreground components.

use crate::image::BinaryImage;
use crate::moments::Contour;

// Clockwise on screen (v down), starting east.
const DIRS: [(i64, i64); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];
const WEST: usize = 4;

fn dir_index(dx: i64, dy: i64) -> usize {
    DIRS.iter().position(|&d| d == (dx, dy)).expect("neighbor offset")
}

/// Traces the outer boundary of every 8-connected foreground component.
///
/// Components are visited in raster order of their top-left pixel. Each
/// boundary starts at that pixel and lists boundary pixel centers with
/// consecutive points 8-adjacent; holes are ignored. Components whose
/// boundary has fewer than three pixels are skipped.
pub fn find_contours(bin: &BinaryImage) -> Vec<Contour> {
    let (w, h) = (bin.width(), bin.height());
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !bin.get(x, y) || seen[y * w + x] {
                continue;
            }
            mark_component(bin, &mut seen, &mut stack, x, y);
            let ring = trace(bin, (x as i64, y as i64));
            if let Ok(c) = Contour::from_pixels(&ring) {
                out.push(c);
            }
        }
    }
    out
}

fn mark_component(bin: &BinaryImage, seen: &mut [bool], stack: &mut Vec<(usize, usize)>, x: usize, y: usize) {
    let w = bin.width();
    seen[y * w + x] = true;
    stack.push((x, y));
    while let Some((cx, cy)) = stack.pop() {
        for &(dx, dy) in &DIRS {
            let (nx, ny) = (cx as i64 + dx, cy as i64 + dy);
            if bin.get_signed(nx, ny) {
                let idx = ny as usize * w + nx as usize;
                if !seen[idx] {
                    seen[idx] = true;
                    stack.push((nx as usize, ny as usize));
                }
            }
        }
    }
}

/// Border following from the component's first raster pixel, whose west
/// neighbor is background.
fn trace(bin: &BinaryImage, start: (i64, i64)) -> Vec<(i64, i64)> {
    let fg = |p: (i64, i64)| bin.get_signed(p.0, p.1);
    let step = |p: (i64, i64), d: usize| (p.0 + DIRS[d].0, p.1 + DIRS[d].1);

    // first foreground neighbor clockwise from west
    let Some(first_dir) = (1..=8).map(|k| (WEST + k) % 8).find(|&d| fg(step(start, d))) else {
        return vec![start];
    };
    let first = step(start, first_dir);
    let mut ring = Vec::new();
    let (mut prev, mut cur) = (first, start);
    loop {
        ring.push(cur);
        // counterclockwise from the pixel after `prev`
        let back = dir_index(prev.0 - cur.0, prev.1 - cur.1);
        let next_dir = (1..=8)
            .map(|k| (back + 8 - k) % 8)
            .find(|&d| fg(step(cur, d)))
            .expect("component has a neighbor");
        let next = step(cur, next_dir);
        if next == start && cur == first {
            break;
        }
        prev = cur;
        cur = next;
    }
    ring
}

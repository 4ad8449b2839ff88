//! Assigns detected centroids to target grid slots.

use nalgebra::{Matrix2, Matrix3, Point2, Vector2};

use crate::calib::estimate_homography;
use crate::projection::apply_homography;
use crate::{Error, Result};

const REFINE_ITERATIONS: usize = 5;
/// Largest distance of a centroid from its predicted slot, as a fraction of
/// the smallest predicted slot spacing.
const MAX_SLOT_RESIDUAL: f64 = 0.35;

struct Labeling {
    /// Centroid index per slot, row-major.
    order: Vec<usize>,
    /// Smallest gap between neighboring rows over the largest row thickness.
    score: f64,
}

/// Orders `rows * cols` centroids into row-major grid slots.
///
/// Rows are separated along the axis across them and sorted along it. When
/// perspective makes the rows overlap along every common axis, the grid
/// corners are taken from the convex hull and the slots are matched through
/// a homography instead. The labeling keeps the target's handedness (column direction crossed with row
/// direction is positive in image coordinates). Of the two labelings related
/// by a half turn, the one whose first slot has the lexicographically smaller
/// centroid is returned. Returns `out` with `out[slot] = centroid index`.
pub fn order_grid(centroids: &[Point2<f64>], rows: usize, cols: usize) -> Result<Vec<usize>> {
    if centroids.len() != rows * cols {
        return Err(Error::DimensionMismatch {
            expected: rows * cols,
            got: centroids.len(),
        });
    }
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument("empty grid".into()));
    }
    let order = principal_axes(centroids)
        .iter()
        .filter_map(|&along| label_rows(centroids, rows, cols, along))
        .filter(|l| l.score > 1.0)
        .max_by(|a, b| a.score.total_cmp(&b.score))
        .map(|l| l.order)
        .or_else(|| label_by_corners(centroids, rows, cols))
        .ok_or_else(|| Error::GridAmbiguity(format!("no clean split into {rows} rows of {cols}")))?;

    let flipped: Vec<usize> = order.iter().rev().copied().collect();
    let (a, b) = (centroids[order[0]], centroids[flipped[0]]);
    if (b.x, b.y) < (a.x, a.y) {
        Ok(flipped)
    } else {
        Ok(order)
    }
}

/// Major then minor axis of the point spread.
fn principal_axes(pts: &[Point2<f64>]) -> [Vector2<f64>; 2] {
    let mean = pts.iter().fold(Vector2::zeros(), |a, p| a + p.coords) / pts.len() as f64;
    let cov = pts.iter().fold(Matrix2::zeros(), |a, p| {
        let d = p.coords - mean;
        a + d * d.transpose()
    });
    let eig = cov.symmetric_eigen();
    let major = if eig.eigenvalues[0] >= eig.eigenvalues[1] { 0 } else { 1 };
    [
        eig.eigenvectors.column(major).into_owned(),
        eig.eigenvectors.column(1 - major).into_owned(),
    ]
}

/// Splits into rows running along `along`, refining the row direction from
/// the grouped points.
fn label_rows(pts: &[Point2<f64>], rows: usize, cols: usize, mut along: Vector2<f64>) -> Option<Labeling> {
    let mut groups = None;
    for _ in 0..REFINE_ITERATIONS {
        let across = Vector2::new(-along.y, along.x);
        let g = split(pts, rows, cols, across)?;
        let refined = row_direction(pts, &g, along)?;
        let done = (refined - along).norm() < 1e-12;
        along = refined;
        groups = Some(g);
        if done {
            break;
        }
    }
    let across = Vector2::new(-along.y, along.x);
    let mut groups = split(pts, rows, cols, across).or(groups)?;
    let proj = |i: usize, d: &Vector2<f64>| pts[i].coords.dot(d);

    let mut min_gap = f64::INFINITY;
    let mut max_thick: f64 = 0.0;
    for (k, g) in groups.iter().enumerate() {
        let (lo, hi) = extent(g.iter().map(|&i| proj(i, &across)));
        max_thick = max_thick.max(hi - lo);
        if let Some(next) = groups.get(k + 1) {
            let (nlo, _) = extent(next.iter().map(|&i| proj(i, &across)));
            min_gap = min_gap.min(nlo - hi);
        }
    }
    // rows advance along +across, a quarter turn from +along, so handedness holds
    for g in &mut groups {
        g.sort_by(|&a, &b| proj(a, &along).total_cmp(&proj(b, &along)));
    }
    Some(Labeling {
        order: groups.concat(),
        score: if max_thick > 0.0 { min_gap / max_thick } else { f64::INFINITY },
    })
}

/// Labeling from a homography seeded by the four hull corners, refitted on
/// all matches; the corner assignment with the smallest worst residual wins.
fn label_by_corners(pts: &[Point2<f64>], rows: usize, cols: usize) -> Option<Vec<usize>> {
    if rows < 2 || cols < 2 {
        return None;
    }
    let hull = convex_hull(pts);
    let corners = largest_quad(pts, &hull)?;
    let (c, r) = ((cols - 1) as f64, (rows - 1) as f64);
    let grid_corners = [Point2::new(0.0, 0.0), Point2::new(c, 0.0), Point2::new(c, r), Point2::new(0.0, r)];
    let slots: Vec<Point2<f64>> = (0..rows)
        .flat_map(|row| (0..cols).map(move |col| Point2::new(col as f64, row as f64)))
        .collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for reversed in [false, true] {
        for shift in 0..4 {
            let image: Vec<Point2<f64>> = (0..4)
                .map(|k| {
                    let k = if reversed { (4 + shift - k) % 4 } else { (shift + k) % 4 };
                    pts[corners[k]]
                })
                .collect();
            let Ok(mut h) = estimate_homography(&grid_corners, &image) else { continue };
            let mut labeled = None;
            for _ in 0..REFINE_ITERATIONS {
                let Some((residual, order)) = match_slots(pts, &slots, &h, cols) else { break };
                let matched: Vec<Point2<f64>> = order.iter().map(|&i| pts[i]).collect();
                let stable = labeled.as_ref().is_some_and(|(_, prev)| *prev == order);
                labeled = Some((residual, order));
                match estimate_homography(&slots, &matched) {
                    Ok(refit) if !stable => h = refit,
                    _ => break,
                }
            }
            let Some((residual, order)) = labeled else { continue };
            if residual <= MAX_SLOT_RESIDUAL
                && right_handed(&h, c / 2.0, r / 2.0)
                && best.as_ref().is_none_or(|(b, _)| residual < *b)
            {
                best = Some((residual, order));
            }
        }
    }
    best.map(|(_, order)| order)
}

/// Nearest centroid of each predicted slot, with the worst residual relative
/// to the smallest predicted slot spacing; `None` unless the match is one to one.
fn match_slots(pts: &[Point2<f64>], slots: &[Point2<f64>], h: &Matrix3<f64>, cols: usize) -> Option<(f64, Vec<usize>)> {
    let predicted: Vec<Point2<f64>> = slots.iter().map(|&s| apply_homography(h, s)).collect();
    let mut spacing = f64::INFINITY;
    for (k, p) in predicted.iter().enumerate() {
        if k % cols + 1 < cols {
            spacing = spacing.min((predicted[k + 1] - p).norm());
        }
        if let Some(below) = predicted.get(k + cols) {
            spacing = spacing.min((below - p).norm());
        }
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return None;
    }
    let mut used = vec![false; pts.len()];
    let mut order = Vec::with_capacity(slots.len());
    let mut worst: f64 = 0.0;
    for p in &predicted {
        let (i, d) = pts
            .iter()
            .enumerate()
            .map(|(i, q)| (i, (q - p).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))?;
        if used[i] {
            return None;
        }
        used[i] = true;
        worst = worst.max(d);
        order.push(i);
    }
    Some((worst / spacing, order))
}

/// True when the column direction crossed with the row direction is positive
/// at grid position `(c, r)`.
fn right_handed(h: &Matrix3<f64>, c: f64, r: f64) -> bool {
    let at = |dc: f64, dr: f64| apply_homography(h, Point2::new(c + dc, r + dr));
    let (o, along, across) = (at(0.0, 0.0), at(1.0, 0.0), at(0.0, 1.0));
    let (u, v) = (along - o, across - o);
    u.x * v.y - u.y * v.x > 0.0
}

/// Indices of the strict convex hull vertices in counter-clockwise order
/// (x right, y up).
fn convex_hull(pts: &[Point2<f64>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pts.len()).collect();
    idx.sort_by(|&a, &b| pts[a].x.total_cmp(&pts[b].x).then(pts[a].y.total_cmp(&pts[b].y)));
    idx.dedup_by(|a, b| pts[*a] == pts[*b]);
    if idx.len() < 3 {
        return idx;
    }
    let cross = |o: usize, a: usize, b: usize| (pts[a] - pts[o]).perp(&(pts[b] - pts[o]));
    let mut hull: Vec<usize> = Vec::with_capacity(2 * idx.len());
    for pass in [idx.clone(), idx.iter().rev().copied().collect()] {
        let floor = hull.len();
        for &i in &pass {
            while hull.len() >= floor + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], i) <= 0.0 {
                hull.pop();
            }
            hull.push(i);
        }
        hull.pop();
    }
    hull
}

/// Hull vertices spanning the largest quadrilateral, in hull order.
fn largest_quad(pts: &[Point2<f64>], hull: &[usize]) -> Option<[usize; 4]> {
    let h = hull.len();
    if h < 4 {
        return None;
    }
    let area = |q: [usize; 4]| {
        (0..4)
            .map(|k| pts[q[k]].coords.perp(&pts[q[(k + 1) % 4]].coords))
            .sum::<f64>()
            .abs()
    };
    let mut best: Option<([usize; 4], f64)> = None;
    for a in 0..h {
        for b in a + 1..h {
            for c in b + 1..h {
                for d in c + 1..h {
                    let q = [hull[a], hull[b], hull[c], hull[d]];
                    let s = area(q);
                    if best.is_none_or(|(_, m)| s > m) {
                        best = Some((q, s));
                    }
                }
            }
        }
    }
    best.map(|(q, _)| q)
}

fn extent(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Cuts the projections onto `across` at the `rows - 1` widest gaps;
/// fails unless every row gets exactly `cols` points.
fn split(pts: &[Point2<f64>], rows: usize, cols: usize, across: Vector2<f64>) -> Option<Vec<Vec<usize>>> {
    let mut idx: Vec<usize> = (0..pts.len()).collect();
    let key = |i: usize| pts[i].coords.dot(&across);
    idx.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
    let mut gaps: Vec<(f64, usize)> = (1..idx.len()).map(|k| (key(idx[k]) - key(idx[k - 1]), k)).collect();
    gaps.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut cuts: Vec<usize> = gaps.iter().take(rows - 1).map(|g| g.1).collect();
    cuts.sort_unstable();
    let mut groups = Vec::with_capacity(rows);
    let mut start = 0;
    for cut in cuts.into_iter().chain(std::iter::once(idx.len())) {
        if cut - start != cols {
            return None;
        }
        groups.push(idx[start..cut].to_vec());
        start = cut;
    }
    Some(groups)
}

/// Pooled principal direction of the rows, signed like `prev`.
fn row_direction(pts: &[Point2<f64>], groups: &[Vec<usize>], prev: Vector2<f64>) -> Option<Vector2<f64>> {
    if groups.iter().all(|g| g.len() < 2) {
        return Some(prev);
    }
    let mut cov = Matrix2::zeros();
    for g in groups {
        let m = g.iter().fold(Vector2::zeros(), |a, &i| a + pts[i].coords) / g.len() as f64;
        for &i in g {
            let d = pts[i].coords - m;
            cov += d * d.transpose();
        }
    }
    let eig = cov.symmetric_eigen();
    let k = if eig.eigenvalues[0] >= eig.eigenvalues[1] { 0 } else { 1 };
    let v = eig.eigenvectors.column(k).into_owned();
    Some(if v.dot(&prev) < 0.0 { -v } else { v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation2;

    fn grid(rows: usize, cols: usize, f: impl Fn(f64, f64) -> Point2<f64>) -> Vec<Point2<f64>> {
        let mut v = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                v.push(f(c as f64, r as f64));
            }
        }
        v
    }

    #[test]
    fn axis_aligned_is_identity() {
        let pts = grid(3, 4, |x, y| Point2::new(100.0 + 50.0 * x, 80.0 + 50.0 * y));
        assert_eq!(order_grid(&pts, 3, 4).unwrap(), (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn shuffled_input_is_sorted_back() {
        let pts = grid(3, 4, |x, y| Point2::new(100.0 + 50.0 * x, 80.0 + 50.0 * y));
        let perm = [7, 2, 11, 0, 5, 9, 1, 3, 10, 4, 8, 6];
        let shuffled: Vec<_> = perm.iter().map(|&i| pts[i]).collect();
        let order = order_grid(&shuffled, 3, 4).unwrap();
        let back: Vec<_> = order.iter().map(|&i| perm[i]).collect();
        assert_eq!(back, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn in_plane_rotation_keeps_labels() {
        for deg in [-30.0f64, 30.0, 10.0] {
            let rot = Rotation2::new(deg.to_radians());
            let pts = grid(3, 4, |x, y| Point2::from(rot * Vector2::new(50.0 * x - 75.0, 50.0 * y - 50.0)) + Vector2::new(300.0, 200.0));
            assert_eq!(order_grid(&pts, 3, 4).unwrap(), (0..12).collect::<Vec<_>>(), "{deg}");
        }
    }

    #[test]
    fn converging_rows_are_matched_by_corners() {
        let pts: Vec<Point2<f64>> = [
            (334.4, 463.7),
            (413.2, 457.4),
            (487.6, 451.5),
            (553.4, 446.5),
            (353.8, 552.2),
            (436.1, 540.9),
            (512.5, 528.9),
            (579.0, 517.5),
            (382.3, 644.4),
            (464.5, 628.8),
            (540.7, 610.0),
            (606.4, 591.8),
        ]
        .iter()
        .map(|&(x, y)| Point2::new(x, y))
        .collect();
        let axes_fail = principal_axes(&pts)
            .iter()
            .all(|&a| label_rows(&pts, 3, 4, a).is_none_or(|l| l.score <= 1.0));
        assert!(axes_fail);
        let perm = [7, 2, 11, 0, 5, 9, 1, 3, 10, 4, 8, 6];
        let shuffled: Vec<_> = perm.iter().map(|&i| pts[i]).collect();
        let order = order_grid(&shuffled, 3, 4).unwrap();
        let back: Vec<_> = order.iter().map(|&i| perm[i]).collect();
        assert_eq!(back, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn corner_labeling_agrees_on_plain_grids() {
        let pts = grid(3, 4, |x, y| Point2::new(100.0 + 50.0 * x + 4.0 * y, 80.0 + 50.0 * y));
        let by_corners = label_by_corners(&pts, 3, 4).unwrap();
        let flipped: Vec<usize> = by_corners.iter().rev().copied().collect();
        let primary = order_grid(&pts, 3, 4).unwrap();
        assert!(primary == by_corners || primary == flipped);
    }

    #[test]
    fn half_turn_resolves_to_the_same_labeling() {
        let pts = grid(3, 4, |x, y| Point2::new(100.0 + 50.0 * x, 80.0 + 50.0 * y));
        let turned: Vec<_> = pts.iter().map(|p| Point2::new(400.0 - p.x, 300.0 - p.y)).collect();
        let order = order_grid(&turned, 3, 4).unwrap();
        // slot 0 must be the top-left point, which is the last input point
        assert_eq!(order[0], 11);
        assert_eq!(order[11], 0);
    }

    #[test]
    fn upright_target_rotated_a_quarter_turn() {
        // columns run down the image: the 4-long direction is vertical
        let pts = grid(3, 4, |x, y| Point2::new(300.0 - 50.0 * y, 100.0 + 50.0 * x));
        let order = order_grid(&pts, 3, 4).unwrap();
        let mut seen = order.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..12).collect::<Vec<_>>());
        // handedness: columns advance along +v, rows along -u
        let c = pts[order[1]] - pts[order[0]];
        let r = pts[order[4]] - pts[order[0]];
        assert!(c.x * r.y - c.y * r.x > 0.0);
    }

    #[test]
    fn perspective_grid_orders_rows() {
        // mild keystone: rows converge to the right
        let pts = grid(3, 4, |x, y| {
            let depth = 1.0 + 0.15 * x;
            Point2::new(200.0 + 60.0 * x / depth, 200.0 + 60.0 * (y - 1.0) / depth)
        });
        assert_eq!(order_grid(&pts, 3, 4).unwrap(), (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn merged_rows_are_ambiguous() {
        // heavy foreshortening squeezes rows together while they fan out
        let pts = grid(3, 4, |x, y| {
            let depth = 1.0 + 0.9 * x;
            Point2::new(200.0 + 80.0 * x / depth, 200.0 + 8.0 * (y - 1.0) + 14.0 * x * (y - 1.0).abs())
        });
        assert!(matches!(order_grid(&pts, 3, 4), Err(Error::GridAmbiguity(_))));
    }

    #[test]
    fn wrong_count_is_rejected() {
        let pts = grid(3, 4, |x, y| Point2::new(x, y));
        assert!(order_grid(&pts[..11], 3, 4).is_err());
    }
}

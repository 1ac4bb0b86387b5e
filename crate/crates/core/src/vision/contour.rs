use std::collections::VecDeque;

use crate::geometry::Point2;

use super::{EdgeMap, Result, VisionError};

/// Polygon vertices in pixel coordinates (`x` = column, `y` = row).
#[derive(Debug, Clone, PartialEq)]
pub struct VertexSet {
    pub vertices: Vec<Point2>,
}

// clockwise on screen, starting west
const DIRS: [(isize, isize); 8] = [(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)];

fn dir_index(dx: isize, dy: isize) -> usize {
    DIRS.iter().position(|&d| d == (dx, dy)).expect("unit neighbour offset")
}

/// Moore-neighbour boundary trace of every 8-connected edge component,
/// each starting at its first pixel in raster order.
pub fn trace_contours(edges: &EdgeMap) -> Vec<Vec<(usize, usize)>> {
    let (w, h) = (edges.width, edges.height);
    let mut label = vec![usize::MAX; w * h];
    let mut starts = Vec::new();
    for s in 0..w * h {
        if edges.data[s] == 0 || label[s] != usize::MAX {
            continue;
        }
        let id = starts.len();
        starts.push(s);
        label[s] = id;
        let mut queue = VecDeque::from([s]);
        while let Some(i) = queue.pop_front() {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for &(dx, dy) in &DIRS {
                let (nx, ny) = (x + dx, y + dy);
                if nx >= 0 && ny >= 0 && nx < w as isize && ny < h as isize {
                    let j = ny as usize * w + nx as usize;
                    if edges.data[j] != 0 && label[j] == usize::MAX {
                        label[j] = id;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    let sizes = starts.iter().enumerate().map(|(id, _)| label.iter().filter(|&&l| l == id).count());
    starts
        .iter()
        .zip(sizes)
        .enumerate()
        .map(|(id, (&s, size))| {
            let fg = |x: isize, y: isize| x >= 0 && y >= 0 && x < w as isize && y < h as isize && label[y as usize * w + x as usize] == id;
            moore(s % w, s / w, 0, fg, 4 * size + 8)
        })
        .collect()
}

type Pix = (isize, isize);

fn moore_step(p: Pix, back: usize, fg: &impl Fn(isize, isize) -> bool) -> Option<(Pix, usize)> {
    (1..=8).find_map(|i| {
        let d = (back + i) % 8;
        let q = (p.0 + DIRS[d].0, p.1 + DIRS[d].1);
        fg(q.0, q.1).then(|| {
            let prev = (p.0 + DIRS[(d + 7) % 8].0, p.1 + DIRS[(d + 7) % 8].1);
            (q, dir_index(prev.0 - q.0, prev.1 - q.1))
        })
    })
}

fn moore(sx: usize, sy: usize, start_back: usize, fg: impl Fn(isize, isize) -> bool, cap: usize) -> Vec<(usize, usize)> {
    let start = (sx as isize, sy as isize);
    let mut out = vec![(sx, sy)];
    let Some((first, mut back)) = moore_step(start, start_back, &fg) else { return out };
    let mut p = first;
    for _ in 0..cap {
        let Some((q, b)) = moore_step(p, back, &fg) else { break };
        // stop once the first move out of the start pixel repeats
        if p == start && q == first {
            break;
        }
        out.push((p.0 as usize, p.1 as usize));
        p = q;
        back = b;
    }
    out
}

/// The traced contour with the most points.
pub fn longest_contour(edges: &EdgeMap) -> Option<Vec<(usize, usize)>> {
    trace_contours(edges).into_iter().max_by_key(Vec::len)
}

fn seg_dist(p: &Point2, a: &Point2, b: &Point2) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    p.dist(&Point2::new(a.x + t * dx, a.y + t * dy))
}

fn dp_open(pts: &[Point2], eps: f64, keep: &mut Vec<bool>, lo: usize, hi: usize) {
    if hi <= lo + 1 {
        return;
    }
    let (mut far, mut dmax) = (lo, -1.0);
    for i in lo + 1..hi {
        let d = seg_dist(&pts[i], &pts[lo], &pts[hi]);
        if d > dmax {
            dmax = d;
            far = i;
        }
    }
    if dmax > eps {
        keep[far] = true;
        dp_open(pts, eps, keep, lo, far);
        dp_open(pts, eps, keep, far, hi);
    }
}

/// Douglas–Peucker on a closed curve. The curve is split at the point
/// farthest from its centroid and the point farthest from that one; both
/// halves are simplified and an anchor is dropped again if it lies within
/// `eps` of the chord joining its neighbours. Returns kept indices in
/// curve order.
pub fn douglas_peucker_closed(points: &[Point2], eps: f64) -> Vec<usize> {
    let n = points.len();
    if n < 3 {
        return (0..n).collect();
    }
    let cx = points.iter().map(|p| p.x).sum::<f64>() / n as f64;
    let cy = points.iter().map(|p| p.y).sum::<f64>() / n as f64;
    let c = Point2::new(cx, cy);
    let argmax = |f: &dyn Fn(&Point2) -> f64| (0..n).fold(0, |best, i| if f(&points[i]) > f(&points[best]) { i } else { best });
    let a = argmax(&|p| p.dist(&c));
    let b = argmax(&|p| p.dist(&points[a]));
    // rotate so the curve starts at `a`, then close it by repeating `a`
    let mut ring: Vec<Point2> = (0..=n).map(|i| points[(a + i) % n]).collect();
    let bi = (b + n - a) % n;
    let mut keep = vec![false; n + 1];
    keep[0] = true;
    keep[bi] = true;
    keep[n] = true;
    dp_open(&ring, eps, &mut keep, 0, bi);
    dp_open(&ring, eps, &mut keep, bi, n);
    ring.pop();
    keep.pop();
    let mut idx: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
    for anchor in [bi, 0] {
        if idx.len() <= 3 {
            break;
        }
        if let Some(pos) = idx.iter().position(|&i| i == anchor) {
            let m = idx.len();
            let (prev, next) = (idx[(pos + m - 1) % m], idx[(pos + 1) % m]);
            if seg_dist(&ring[anchor], &ring[prev], &ring[next]) <= eps {
                idx.remove(pos);
            }
        }
    }
    idx.into_iter().map(|i| (i + a) % n).collect::<Vec<_>>().rotate_to_min()
}

trait RotateToMin {
    fn rotate_to_min(self) -> Self;
}

impl RotateToMin for Vec<usize> {
    /// Cyclic shift that puts the smallest index first, keeping curve order.
    fn rotate_to_min(mut self) -> Self {
        if let Some(pos) = self.iter().enumerate().min_by_key(|(_, &v)| v).map(|(i, _)| i) {
            self.rotate_left(pos);
        }
        self
    }
}

/// Traced edge pixels sit up to half a pixel outside the filled region.
const EDGE_OFFSET: f64 = 0.5;

/// Trimmed contour points kept away from a corner's rounding when fitting.
const FIT_TRIM: usize = 2;

/// Total-least-squares line through `pts`: centroid, unit direction and the
/// largest perpendicular residual.
fn fit_line(pts: &[Point2]) -> (Point2, (f64, f64), f64) {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.y).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in pts {
        let (dx, dy) = (p.x - cx, p.y - cy);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let dir = (angle.cos(), angle.sin());
    let resid = pts.iter().map(|p| ((p.x - cx) * dir.1 - (p.y - cy) * dir.0).abs()).fold(0.0, f64::max);
    (Point2::new(cx, cy), dir, resid)
}

/// Contour points from vertex `a` to vertex `b` in curve order, with the
/// points nearest each corner dropped when the run is long enough.
fn run(pts: &[Point2], a: usize, b: usize) -> Vec<Point2> {
    let n = pts.len();
    let len = (b + n - a) % n + 1;
    let trim = FIT_TRIM.max(len / 6);
    let (lo, hi) = if len > 2 * trim + 2 { (trim, len - trim) } else { (0, len) };
    (lo..hi).map(|i| pts[(a + i) % n]).collect()
}

fn intersect(p: Point2, d: (f64, f64), q: Point2, e: (f64, f64)) -> Option<Point2> {
    let den = d.0 * e.1 - d.1 * e.0;
    // near-parallel sides give no stable corner
    if den.abs() < 0.05 {
        return None;
    }
    let t = ((q.x - p.x) * e.1 - (q.y - p.y) * e.0) / den;
    Some(Point2::new(p.x + t * d.0, p.y + t * d.1))
}

type Line = (Point2, (f64, f64), f64);

fn sides(pts: &[Point2], idx: &[usize]) -> Vec<Line> {
    let m = idx.len();
    (0..m).map(|j| fit_line(&run(pts, idx[j], idx[(j + 1) % m]))).collect()
}

/// Corner `j` as the intersection of the lines of sides `j - 1` and `j`,
/// kept near `anchor`.
fn corner(sides: &[Line], j: usize, anchor: Point2, eps: f64) -> Point2 {
    let m = sides.len();
    let (p, d, _) = sides[(j + m - 1) % m];
    let (q, e, _) = sides[j];
    intersect(p, d, q, e).filter(|c| c.dist(&anchor) <= 2.0 * eps + 3.0).unwrap_or(anchor)
}

fn corners(pts: &[Point2], idx: &[usize], eps: f64) -> Vec<Point2> {
    let s = sides(pts, idx);
    (0..idx.len()).map(|j| corner(&s, j, pts[idx[j]], eps)).collect()
}

/// Moves each Douglas–Peucker corner to the intersection of lines fitted to
/// its two sides. A vertex is dropped when the contour between its
/// neighbours stays within `eps` of the chord joining their refined
/// corners. A short side is then folded into the intersection of the sides
/// around it. Edge detection rounds and chamfers sharp corners, which
/// otherwise leaves anchors off the true corner and spurious vertices next
/// to them.
fn refine_corners(pts: &[Point2], mut idx: Vec<usize>, eps: f64) -> Vec<Point2> {
    while idx.len() > 3 {
        let m = idx.len();
        let c = corners(pts, &idx, eps);
        let best = (0..m)
            .map(|j| {
                let (a, b) = (&c[(j + m - 1) % m], &c[(j + 1) % m]);
                let dev = run(pts, idx[(j + m - 1) % m], idx[(j + 1) % m]).iter().map(|p| seg_dist(p, a, b)).fold(0.0, f64::max);
                (j, dev)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((j, dev)) if dev <= eps => {
                idx.remove(j);
            }
            _ => break,
        }
    }
    let mut s = sides(pts, &idx);
    let mut c: Vec<Point2> = (0..idx.len()).map(|j| corner(&s, j, pts[idx[j]], eps)).collect();
    let (short, long) = (2.0 * eps + 1.0, 4.0 * eps + 1.0);
    while c.len() > 3 {
        let m = c.len();
        // a very short side always folds into the corner of its neighbours;
        // a longer one only if the outline moves by about eps
        let best = (0..m)
            .filter_map(|j| {
                let k = (j + 1) % m;
                let len = c[j].dist(&c[k]);
                let (p, d, _) = s[(j + m - 1) % m];
                let (q, e, _) = s[k];
                let x = intersect(p, d, q, e)?;
                let depth = seg_dist(&x, &c[j], &c[k]);
                let near = x.dist(&c[j]) <= short + len && x.dist(&c[k]) <= short + len;
                ((len <= short && near) || (len <= long && depth <= eps + EDGE_OFFSET)).then_some((j, x, len))
            })
            .min_by(|a, b| a.2.total_cmp(&b.2));
        let Some((j, x, _)) = best else { break };
        c[j] = x;
        c.remove((j + 1) % m);
        s.remove(j);
    }
    c
}

/// Longest gap, in pixels, bridged between edge chain ends.
pub const BRIDGE_GAP: f64 = 4.0;

fn neighbours(e: &EdgeMap, x: usize, y: usize) -> [bool; 8] {
    DIRS.map(|(dx, dy)| {
        let (nx, ny) = (x as isize + dx, y as isize + dy);
        nx >= 0 && ny >= 0 && nx < e.width as isize && ny < e.height as isize && e.get(nx as usize, ny as usize)
    })
}

/// Chain ends: edge pixels whose neighbours form one run around them.
fn endpoints(e: &EdgeMap) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in 0..e.height {
        for x in 0..e.width {
            if !e.get(x, y) {
                continue;
            }
            let nb = neighbours(e, x, y);
            let count = nb.iter().filter(|&&b| b).count();
            let runs = (0..8).filter(|&i| nb[i] && !nb[(i + 7) % 8]).count();
            if (1..=3).contains(&count) && runs == 1 {
                out.push((x, y));
            }
        }
    }
    out
}

/// Joins chain ends closer than `max_gap` with straight pixel runs, nearest
/// pairs first, so contours broken at faint corners close up again.
pub fn bridge_gaps(edges: &EdgeMap, max_gap: f64) -> EdgeMap {
    let ends = endpoints(edges);
    let mut pairs = Vec::new();
    for i in 0..ends.len() {
        for j in i + 1..ends.len() {
            let (a, b) = (ends[i], ends[j]);
            let d = (a.0 as f64 - b.0 as f64).hypot(a.1 as f64 - b.1 as f64);
            if d > 1.5 && d <= max_gap {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used = vec![false; ends.len()];
    let mut out = edges.clone();
    for (_, i, j) in pairs {
        if used[i] || used[j] {
            continue;
        }
        used[i] = true;
        used[j] = true;
        let (a, b) = (ends[i], ends[j]);
        let steps = (a.0.abs_diff(b.0)).max(a.1.abs_diff(b.1));
        for s in 1..steps {
            let t = s as f64 / steps as f64;
            let x = (a.0 as f64 + t * (b.0 as f64 - a.0 as f64)).round() as usize;
            let y = (a.1 as f64 + t * (b.1 as f64 - a.1 as f64)).round() as usize;
            out.data[y * out.width + x] = 1;
        }
    }
    out
}

/// Simplified polygon of the longest closed contour in `edges`, after
/// bridging short gaps: Douglas–Peucker at `epsilon_px`, then corner
/// refinement by line fits.
pub fn approx_polygon(edges: &EdgeMap, epsilon_px: f64) -> Result<VertexSet> {
    if !(epsilon_px > 0.0) {
        return Err(VisionError::InvalidParameter(format!("epsilon {epsilon_px} must be positive")));
    }
    let contour = longest_contour(&bridge_gaps(edges, BRIDGE_GAP)).ok_or(VisionError::NoContour)?;
    if contour.len() < 3 {
        return Err(VisionError::NoContour);
    }
    let pts: Vec<Point2> = contour.iter().map(|&(x, y)| Point2::new(x as f64, y as f64)).collect();
    let idx = douglas_peucker_closed(&pts, epsilon_px);
    if idx.len() < 3 {
        return Err(VisionError::NoContour);
    }
    Ok(VertexSet { vertices: refine_corners(&pts, idx, epsilon_px) })
}

//! Uniform bucket index for exact nearest-neighbour queries in the plane.
//!
//! Results are identical to a brute-force scan: candidates are ordered by
//! squared distance `dx*dx + dy*dy` and then by point index.

#[derive(Debug, Clone)]
pub struct PointIndex {
    xy: Vec<(f64, f64)>,
    x_min: f64,
    y_min: f64,
    bucket: f64,
    nx: usize,
    ny: usize,
    starts: Vec<usize>,
    items: Vec<usize>,
}

#[inline]
fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    dx * dx + dy * dy
}

impl PointIndex {
    pub fn new(xy: Vec<(f64, f64)>) -> Self {
        let n = xy.len().max(1);
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for &(x, y) in &xy {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        if xy.is_empty() {
            (x0, y0, x1, y1) = (0.0, 0.0, 0.0, 0.0);
        }
        let w = (x1 - x0).max(0.0);
        let h = (y1 - y0).max(0.0);
        let mut bucket = if w > 0.0 && h > 0.0 {
            (w * h / n as f64).sqrt()
        } else {
            w.max(h) / n as f64
        };
        if !(bucket > 0.0) {
            bucket = 1.0;
        }
        let cap = 4 * n + 16;
        let mut nx = (w / bucket) as usize + 1;
        let mut ny = (h / bucket) as usize + 1;
        while nx * ny > cap {
            bucket *= 1.5;
            nx = (w / bucket) as usize + 1;
            ny = (h / bucket) as usize + 1;
        }
        let mut counts = vec![0usize; nx * ny + 1];
        let cell_of = |x: f64, y: f64| -> usize {
            let cx = (((x - x0) / bucket) as usize).min(nx - 1);
            let cy = (((y - y0) / bucket) as usize).min(ny - 1);
            cy * nx + cx
        };
        for &(x, y) in &xy {
            counts[cell_of(x, y) + 1] += 1;
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let mut fill = counts.clone();
        let mut items = vec![0usize; xy.len()];
        for (i, &(x, y)) in xy.iter().enumerate() {
            let c = cell_of(x, y);
            items[fill[c]] = i;
            fill[c] += 1;
        }
        Self {
            xy,
            x_min: x0,
            y_min: y0,
            bucket,
            nx,
            ny,
            starts: counts,
            items,
        }
    }

    pub fn len(&self) -> usize {
        self.xy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xy.is_empty()
    }

    pub fn point(&self, i: usize) -> (f64, f64) {
        self.xy[i]
    }

    /// Bucket coordinates of `q`, clamped into the index extent (signed so that
    /// queries outside the extent still produce sensible rings).
    fn home(&self, q: (f64, f64)) -> (i64, i64) {
        let cx = ((q.0 - self.x_min) / self.bucket).floor() as i64;
        let cy = ((q.1 - self.y_min) / self.bucket).floor() as i64;
        (cx.clamp(0, self.nx as i64 - 1), cy.clamp(0, self.ny as i64 - 1))
    }

    /// Lower bound on the distance from `q` to any bucket outside the square of
    /// rings `0..ring` around `home`.
    fn ring_lower_bound(&self, q: (f64, f64), home: (i64, i64), ring: i64) -> f64 {
        if ring == 0 {
            return 0.0;
        }
        let r = ring - 1;
        let left = self.x_min + (home.0 - r) as f64 * self.bucket;
        let right = self.x_min + (home.0 + r + 1) as f64 * self.bucket;
        let bottom = self.y_min + (home.1 - r) as f64 * self.bucket;
        let top = self.y_min + (home.1 + r + 1) as f64 * self.bucket;
        if q.0 < left || q.0 > right || q.1 < bottom || q.1 > top {
            return 0.0;
        }
        // margin absorbs rounding between bucket assignment and these edges
        let lb = (q.0 - left).min(right - q.0).min(q.1 - bottom).min(top - q.1);
        (lb - 1e-9 * self.bucket).max(0.0)
    }

    fn max_ring(&self, home: (i64, i64)) -> i64 {
        let nx = self.nx as i64;
        let ny = self.ny as i64;
        home.0.max(nx - 1 - home.0).max(home.1).max(ny - 1 - home.1)
    }

    fn visit_ring(&self, home: (i64, i64), ring: i64, mut f: impl FnMut(usize)) {
        let nx = self.nx as i64;
        let ny = self.ny as i64;
        let mut visit_cell = |cx: i64, cy: i64| {
            if cx < 0 || cy < 0 || cx >= nx || cy >= ny {
                return;
            }
            let c = (cy * nx + cx) as usize;
            for &i in &self.items[self.starts[c]..self.starts[c + 1]] {
                f(i);
            }
        };
        if ring == 0 {
            visit_cell(home.0, home.1);
            return;
        }
        for cx in home.0 - ring..=home.0 + ring {
            visit_cell(cx, home.1 - ring);
            visit_cell(cx, home.1 + ring);
        }
        for cy in home.1 - ring + 1..=home.1 + ring - 1 {
            visit_cell(home.0 - ring, cy);
            visit_cell(home.0 + ring, cy);
        }
    }

    /// The `k` nearest points to `q` accepted by `keep`, sorted by
    /// `(squared distance, index)`.
    pub fn k_nearest_filtered(
        &self,
        q: (f64, f64),
        k: usize,
        keep: impl Fn(usize) -> bool,
    ) -> Vec<(f64, usize)> {
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        if k == 0 || self.xy.is_empty() {
            return best;
        }
        let home = self.home(q);
        let last = self.max_ring(home);
        for ring in 0..=last {
            if best.len() == k {
                let lb = self.ring_lower_bound(q, home, ring);
                if lb * lb > best[k - 1].0 {
                    break;
                }
            }
            self.visit_ring(home, ring, |i| {
                if !keep(i) {
                    return;
                }
                let d = dist2(q, self.xy[i]);
                let cand = (d, i);
                if best.len() == k && !lex_less(cand, best[k - 1]) {
                    return;
                }
                let pos = best.partition_point(|&b| lex_less(b, cand));
                best.insert(pos, cand);
                if best.len() > k {
                    best.pop();
                }
            });
        }
        best
    }

    pub fn k_nearest(&self, q: (f64, f64), k: usize) -> Vec<(f64, usize)> {
        self.k_nearest_filtered(q, k, |_| true)
    }

    /// Nearest point to `q` (ties by smallest index) as `(squared distance, index)`.
    pub fn nearest(&self, q: (f64, f64)) -> Option<(f64, usize)> {
        self.k_nearest(q, 1).into_iter().next()
    }

    /// Distance from each indexed point to its nearest other point.
    pub fn nearest_neighbor_distances(&self) -> Vec<f64> {
        use rayon::prelude::*;
        (0..self.xy.len())
            .into_par_iter()
            .map(|i| {
                self.k_nearest_filtered(self.xy[i], 1, |j| j != i)
                    .first()
                    .map(|&(d2, _)| d2.sqrt())
                    .unwrap_or(f64::INFINITY)
            })
            .collect()
    }
}

#[inline]
fn lex_less(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Closest point on a polyline to a query point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Segment index `i` (between waypoints `i` and `i + 1`).
    pub segment: usize,
    /// Arc length of the closest point.
    pub arc: f64,
    /// Signed distance, positive to the left of the direction of travel.
    pub lateral: f64,
}

pub(crate) fn cumulative_lengths(points: &[[f64; 2]]) -> Vec<f64> {
    let mut cum = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    cum.push(0.0);
    for w in points.windows(2) {
        acc += dist(w[0], w[1]);
        cum.push(acc);
    }
    cum
}

pub(crate) fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (b[0] - a[0]).hypot(b[1] - a[1])
}

/// Projection onto segments `lo..hi` (clamped to the polyline). Ties keep the
/// lowest index.
pub(crate) fn project_window(
    points: &[[f64; 2]],
    cum: &[f64],
    p: [f64; 2],
    lo: usize,
    hi: usize,
) -> Projection {
    let nseg = points.len() - 1;
    let hi = hi.min(nseg);
    let lo = lo.min(hi.saturating_sub(1));
    let mut best = Projection {
        segment: lo,
        arc: 0.0,
        lateral: f64::INFINITY,
    };
    let mut best_d2 = f64::INFINITY;
    for i in lo..hi {
        let a = points[i];
        let b = points[i + 1];
        let dx = b[0] - a[0];
        let dy = b[1] - a[1];
        let len2 = dx * dx + dy * dy;
        let px = p[0] - a[0];
        let py = p[1] - a[1];
        let t = ((px * dx + py * dy) / len2).clamp(0.0, 1.0);
        let qx = px - t * dx;
        let qy = py - t * dy;
        let d2 = qx * qx + qy * qy;
        if d2 < best_d2 {
            best_d2 = d2;
            let cross = dx * py - dy * px;
            let d = d2.sqrt();
            best = Projection {
                segment: i,
                arc: cum[i] + t * (cum[i + 1] - cum[i]),
                lateral: if cross < 0.0 { -d } else { d },
            };
        }
    }
    best
}

/// Position and heading at arc length `s` (clamped to the polyline).
pub(crate) fn point_at(points: &[[f64; 2]], cum: &[f64], s: f64) -> ([f64; 2], f64, usize) {
    let nseg = points.len() - 1;
    let seg = match cum.binary_search_by(|c| c.total_cmp(&s)) {
        Ok(i) => i.min(nseg - 1),
        Err(i) => i.saturating_sub(1).min(nseg - 1),
    };
    let a = points[seg];
    let b = points[seg + 1];
    let len = cum[seg + 1] - cum[seg];
    let t = ((s - cum[seg]) / len).clamp(0.0, 1.0);
    let pos = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    let heading = (b[1] - a[1]).atan2(b[0] - a[0]);
    (pos, heading, seg)
}

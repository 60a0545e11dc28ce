use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SimError};
use crate::geometry::{cumulative_lengths, dist, point_at, project_window, Projection};
use crate::kv;

/// Which curvature regime a generated track is drawn from. The two ranges
/// are disjoint, so `Test` tracks are structurally unseen during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Difficulty {
    Train,
    Test,
}

impl Difficulty {
    /// Range of |curvature| (1/m) for each constant-curvature section.
    pub fn curvature_range(self) -> (f64, f64) {
        match self {
            Difficulty::Train => (0.0, 0.012),
            Difficulty::Test => (0.014, 0.022),
        }
    }
}

pub const WAYPOINT_SPACING: f64 = 1.0;
pub const TRACK_LENGTH: f64 = 200.0;
pub const GOAL_ARC_LENGTH: f64 = 160.0;

/// A road: the centerline of the ego lane as a polyline, its half width,
/// and the arc length at which the goal sits.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackSpec {
    pub seed: u64,
    centerline: Vec<[f64; 2]>,
    pub lane_half_width: f64,
    pub goal_arc_length: f64,
    cum: Vec<f64>,
}

impl TrackSpec {
    pub fn new(
        seed: u64,
        centerline: Vec<[f64; 2]>,
        lane_half_width: f64,
        goal_arc_length: f64,
    ) -> Result<Self> {
        if centerline.len() < 2 {
            return Err(SimError::Input("centerline needs at least 2 waypoints".into()));
        }
        if centerline.iter().flatten().any(|v| !v.is_finite()) {
            return Err(SimError::Input("non-finite waypoint".into()));
        }
        if let Some(i) = centerline.windows(2).position(|w| dist(w[0], w[1]) == 0.0) {
            return Err(SimError::Input(format!("waypoints {i} and {} coincide", i + 1)));
        }
        if !(lane_half_width > 0.0 && lane_half_width.is_finite()) {
            return Err(SimError::Input(format!("lane_half_width {lane_half_width}")));
        }
        let cum = cumulative_lengths(&centerline);
        let total = *cum.last().expect("non-empty");
        if !(goal_arc_length > 0.0 && goal_arc_length <= total) {
            return Err(SimError::Input(format!(
                "goal_arc_length {goal_arc_length} outside (0, {total}]"
            )));
        }
        Ok(Self {
            seed,
            centerline,
            lane_half_width,
            goal_arc_length,
            cum,
        })
    }

    pub fn centerline(&self) -> &[[f64; 2]] {
        &self.centerline
    }

    pub fn total_length(&self) -> f64 {
        *self.cum.last().expect("non-empty")
    }

    pub fn segments(&self) -> usize {
        self.centerline.len() - 1
    }

    /// Position and tangent heading at arc length `s`, plus its segment.
    pub fn point_at(&self, s: f64) -> ([f64; 2], f64, usize) {
        point_at(&self.centerline, &self.cum, s)
    }

    /// Closest centerline point among segments `[hint - back, hint + ahead)`.
    pub fn project_near(&self, p: [f64; 2], hint: usize, back: usize, ahead: usize) -> Projection {
        project_window(
            &self.centerline,
            &self.cum,
            p,
            hint.saturating_sub(back),
            hint + ahead,
        )
    }

    /// Closest centerline point over the whole track.
    pub fn project(&self, p: [f64; 2]) -> Projection {
        project_window(&self.centerline, &self.cum, p, 0, self.segments())
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::from("# track\n");
        writeln!(s, "seed={}", self.seed).unwrap();
        writeln!(s, "lane_half_width={}", self.lane_half_width).unwrap();
        writeln!(s, "goal_arc_length={}", self.goal_arc_length).unwrap();
        writeln!(s, "waypoints={}", self.centerline.len()).unwrap();
        for (i, p) in self.centerline.iter().enumerate() {
            writeln!(s, "waypoint.{i}={},{}", p[0], p[1]).unwrap();
        }
        s
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let pairs = kv::parse(text)?;
        let seed = kv::num("seed", kv::lookup(&pairs, "seed")?)?;
        let lhw = kv::num("lane_half_width", kv::lookup(&pairs, "lane_half_width")?)?;
        let goal = kv::num("goal_arc_length", kv::lookup(&pairs, "goal_arc_length")?)?;
        let n: usize = kv::num("waypoints", kv::lookup(&pairs, "waypoints")?)?;
        let mut pts = Vec::with_capacity(n);
        for i in 0..n {
            let key = format!("waypoint.{i}");
            let xy: Vec<f64> = kv::list(&key, kv::lookup(&pairs, &key)?)?;
            if xy.len() != 2 {
                return Err(SimError::Parse(format!("`{key}` needs two coordinates")));
            }
            pts.push([xy[0], xy[1]]);
        }
        Self::new(seed, pts, lhw, goal)
    }
}

/// Procedural road made of constant-curvature sections.
///
/// Deterministic in `(seed, difficulty)`. Section lengths are drawn from
/// 25–50 m; each section's |curvature| comes from
/// [`Difficulty::curvature_range`] with a random sign. Waypoints are spaced
/// 1 m apart over 200 m, and the goal sits at 160 m so the view ahead of the
/// goal still shows road.
pub fn generate_track(seed: u64, difficulty: Difficulty) -> TrackSpec {
    let salt = match difficulty {
        Difficulty::Train => 0x7472_6169_6e00_0000,
        Difficulty::Test => 0x7465_7374_0000_0000,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    let (kmin, kmax) = difficulty.curvature_range();
    let lane_half_width = rng.random_range(1.8..2.2);
    let steps = (TRACK_LENGTH / WAYPOINT_SPACING) as usize;

    let mut pts = Vec::with_capacity(steps + 1);
    let (mut x, mut y, mut heading) = (0.0f64, 0.0f64, 0.0f64);
    pts.push([x, y]);
    let mut remaining = 0.0;
    let mut kappa = 0.0;
    for _ in 0..steps {
        if remaining <= 0.0 {
            remaining = rng.random_range(25.0..50.0);
            let mag = if kmax > kmin { rng.random_range(kmin..kmax) } else { kmin };
            kappa = if rng.random_bool(0.5) { mag } else { -mag };
        }
        // midpoint heading keeps arcs symmetric
        let mid = heading + 0.5 * kappa * WAYPOINT_SPACING;
        x += WAYPOINT_SPACING * mid.cos();
        y += WAYPOINT_SPACING * mid.sin();
        heading += kappa * WAYPOINT_SPACING;
        remaining -= WAYPOINT_SPACING;
        pts.push([x, y]);
    }
    let goal = GOAL_ARC_LENGTH.min(cumulative_lengths(&pts).last().copied().unwrap_or(0.0));
    TrackSpec::new(seed, pts, lane_half_width, goal).expect("generator output satisfies invariants")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = generate_track(7, Difficulty::Train);
        assert_eq!(a, generate_track(7, Difficulty::Train));
        let b = generate_track(8, Difficulty::Train);
        assert_ne!(a.centerline(), b.centerline());
        assert_ne!(a.centerline(), generate_track(7, Difficulty::Test).centerline());
    }

    #[test]
    fn goal_within_length_over_many_seeds() {
        for seed in 0..1000 {
            for d in [Difficulty::Train, Difficulty::Test] {
                let t = generate_track(seed, d);
                assert!(t.total_length() >= t.goal_arc_length, "seed {seed}");
                assert!(t.lane_half_width > 0.0);
            }
        }
    }

    #[test]
    fn curvature_ranges_disjoint() {
        let (_, train_hi) = Difficulty::Train.curvature_range();
        let (test_lo, _) = Difficulty::Test.curvature_range();
        assert!(train_hi < test_lo);
    }

    #[test]
    fn invariants_enforced() {
        assert!(TrackSpec::new(0, vec![[0.0, 0.0]], 2.0, 1.0).is_err());
        assert!(TrackSpec::new(0, vec![[0.0, 0.0], [0.0, 0.0]], 2.0, 0.5).is_err());
        assert!(TrackSpec::new(0, vec![[0.0, 0.0], [1.0, 0.0]], 0.0, 0.5).is_err());
        assert!(TrackSpec::new(0, vec![[0.0, 0.0], [1.0, 0.0]], 2.0, 1.5).is_err());
        assert!(TrackSpec::new(0, vec![[0.0, 0.0], [1.0, 0.0]], 2.0, 1.0).is_ok());
    }

    #[test]
    fn kv_round_trip_is_bit_exact() {
        let t = generate_track(3, Difficulty::Test);
        let back = TrackSpec::from_kv(&t.to_kv()).unwrap();
        assert_eq!(t, back);
        assert!(TrackSpec::from_kv("seed=1\n").is_err());
    }
}

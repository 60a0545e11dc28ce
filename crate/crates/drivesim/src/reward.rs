/// Cumulative quantities the reward is a difference of.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepMetrics {
    /// Progress toward the goal since reset, km. Non-decreasing.
    pub d: f64,
    /// Current speed, km/h.
    pub v: f64,
    /// Time spent past the right lane edge (sidewalk), s. Non-decreasing.
    pub s: f64,
    /// Time spent across the lane divider (opposite lane), s. Non-decreasing.
    pub o: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardCoefficients {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
}

impl Default for RewardCoefficients {
    fn default() -> Self {
        Self {
            k1: 1000.0,
            k2: 0.05,
            k3: 2.0,
            k4: 2.0,
        }
    }
}

impl RewardCoefficients {
    pub fn is_valid(&self) -> bool {
        [self.k1, self.k2, self.k3, self.k4]
            .iter()
            .all(|k| *k >= 0.0 && k.is_finite())
    }
}

/// `k1·Δd + k2·Δv − k3·Δs − k4·Δo` between consecutive steps.
pub fn compute_reward(curr: &StepMetrics, prev: &StepMetrics, k: &RewardCoefficients) -> f64 {
    k.k1 * (curr.d - prev.d) + k.k2 * (curr.v - prev.v)
        - k.k3 * (curr.s - prev.s)
        - k.k4 * (curr.o - prev.o)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(d: f64, v: f64, s: f64, o: f64) -> StepMetrics {
        StepMetrics { d, v, s, o }
    }

    #[test]
    fn zero_deltas() {
        let a = m(0.3, 40.0, 1.0, 2.0);
        assert_eq!(compute_reward(&a, &a, &RewardCoefficients::default()), 0.0);
    }

    #[test]
    fn hand_evaluated() {
        let k = RewardCoefficients { k1: 1.0, k2: 0.0, k3: 0.0, k4: 0.0 };
        let r = compute_reward(&m(0.01, 0.0, 0.0, 0.0), &m(0.0, 0.0, 0.0, 0.0), &k);
        assert!((r - 0.01).abs() < 1e-15);

        let k = RewardCoefficients { k1: 1.0, k2: 0.05, k3: 2.0, k4: 2.0 };
        let r = compute_reward(&m(0.002, 10.0, 0.1, 0.0), &m(0.0, 0.0, 0.0, 0.0), &k);
        assert!((r - 0.302).abs() < 1e-12, "{r}");
    }
}

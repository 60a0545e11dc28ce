use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SimError};
use crate::kv;

pub type Rgb = [u8; 3];

/// Minimum max-channel difference between any two palette colors.
pub const MIN_COLOR_SEPARATION: u8 = 32;

/// Colors and sensor noise of one "weather" condition.
#[derive(Clone, Debug, PartialEq)]
pub struct WeatherPalette {
    pub seed: u64,
    pub road_color: Rgb,
    pub lane_color: Rgb,
    pub offroad_color: Rgb,
    /// Per-channel pixel noise std, as a fraction of full scale.
    pub noise_std: f64,
}

fn separation(a: Rgb, b: Rgb) -> u8 {
    a.iter().zip(&b).map(|(x, y)| x.abs_diff(*y)).max().unwrap_or(0)
}

impl WeatherPalette {
    pub fn new(seed: u64, road: Rgb, lane: Rgb, offroad: Rgb, noise_std: f64) -> Result<Self> {
        let p = Self {
            seed,
            road_color: road,
            lane_color: lane,
            offroad_color: offroad,
            noise_std,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.noise_std) {
            return Err(SimError::Input(format!("noise_std {} outside [0, 1]", self.noise_std)));
        }
        let pairs = [
            (self.road_color, self.lane_color),
            (self.road_color, self.offroad_color),
            (self.lane_color, self.offroad_color),
        ];
        if pairs.iter().any(|&(a, b)| separation(a, b) < MIN_COLOR_SEPARATION) {
            return Err(SimError::Input("palette colors not distinguishable".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let c = |c: Rgb| format!("{},{},{}", c[0], c[1], c[2]);
        let mut s = String::from("# palette\n");
        writeln!(s, "seed={}", self.seed).unwrap();
        writeln!(s, "road_color={}", c(self.road_color)).unwrap();
        writeln!(s, "lane_color={}", c(self.lane_color)).unwrap();
        writeln!(s, "offroad_color={}", c(self.offroad_color)).unwrap();
        writeln!(s, "noise_std={}", self.noise_std).unwrap();
        s
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let pairs = kv::parse(text)?;
        let color = |key: &str| -> Result<Rgb> {
            let v: Vec<u8> = kv::list(key, kv::lookup(&pairs, key)?)?;
            v.try_into()
                .map_err(|_| SimError::Parse(format!("`{key}` needs three channels")))
        };
        Self::new(
            kv::num("seed", kv::lookup(&pairs, "seed")?)?,
            color("road_color")?,
            color("lane_color")?,
            color("offroad_color")?,
            kv::num("noise_std", kv::lookup(&pairs, "noise_std")?)?,
        )
    }
}

fn shade(rng: &mut ChaCha8Rng, lo: [u8; 3], hi: [u8; 3], light: f64) -> Rgb {
    let mut c = [0u8; 3];
    for i in 0..3 {
        let v = rng.random_range(lo[i] as f64..=hi[i] as f64) * light;
        c[i] = v.round().clamp(0.0, 255.0) as u8;
    }
    c
}

/// Deterministic palette for `seed`: a global lighting factor scales a grey
/// road, a bright lane marking and a green/brown verge; noise std is drawn
/// from `[0, 0.04]`. Draws repeat until the colors are pairwise separable.
pub fn generate_palette(seed: u64) -> WeatherPalette {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7061_6c65_7474_6500);
    loop {
        let light = rng.random_range(0.65..1.1);
        let road = shade(&mut rng, [55, 55, 55], [115, 115, 120], light);
        let lane = shade(&mut rng, [200, 190, 120], [255, 255, 255], light);
        let offroad = shade(&mut rng, [30, 90, 20], [140, 170, 90], light);
        let noise_std = rng.random_range(0.0..0.04);
        if let Ok(p) = WeatherPalette::new(seed, road, lane, offroad, noise_std) {
            return p;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_palettes_are_valid_and_deterministic() {
        for seed in 0..2000 {
            let p = generate_palette(seed);
            p.validate().unwrap();
            assert_eq!(p, generate_palette(seed));
        }
        assert_ne!(generate_palette(1), generate_palette(2));
    }

    #[test]
    fn kv_round_trip() {
        let p = generate_palette(1001);
        assert_eq!(WeatherPalette::from_kv(&p.to_kv()).unwrap(), p);
    }

    #[test]
    fn indistinct_colors_rejected() {
        assert!(WeatherPalette::new(0, [10, 10, 10], [20, 20, 20], [200, 0, 0], 0.0).is_err());
        assert!(WeatherPalette::new(0, [0, 0, 0], [100, 100, 100], [200, 0, 0], -0.1).is_err());
    }
}

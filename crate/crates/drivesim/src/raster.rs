use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, SimError};
use crate::palette::WeatherPalette;
use crate::sim::VehicleState;
use crate::track::TrackSpec;

pub const SUPPORTED_SIZES: [usize; 3] = [32, 64, 128];

/// Row-major 8-bit RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height * 3 {
            return Err(SimError::Input(format!(
                "frame {width}x{height} with {} bytes",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Channel-major `[3, H, W]` floats in `[0, 1]`.
    pub fn to_chw(&self) -> Vec<f64> {
        let plane = self.width * self.height;
        let mut out = vec![0.0; 3 * plane];
        for (i, px) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + i] = px[c] as f64 / 255.0;
            }
        }
        out
    }

    /// Inverse of [`Frame::to_chw`], rounding and clamping to 8 bits.
    pub fn from_chw(width: usize, height: usize, chw: &[f64]) -> Result<Self> {
        let plane = width * height;
        if chw.len() != 3 * plane {
            return Err(SimError::Input(format!("{} values for {width}x{height}x3", chw.len())));
        }
        let mut pixels = vec![0u8; 3 * plane];
        for i in 0..plane {
            for c in 0..3 {
                pixels[i * 3 + c] = (chw[c * plane + i] * 255.0).round().clamp(0.0, 255.0) as u8;
            }
        }
        Self::new(width, height, pixels)
    }
}

/// Frame dump: `u32 LE width`, `u32 LE height`, then raw RGB bytes.
pub fn write_frame_dump<W: Write>(w: &mut W, frame: &Frame) -> Result<()> {
    w.write_all(&(frame.width as u32).to_le_bytes())?;
    w.write_all(&(frame.height as u32).to_le_bytes())?;
    w.write_all(&frame.pixels)?;
    Ok(())
}

/// Read one frame dump; `Ok(None)` at a clean end of input.
pub fn read_frame_dump<R: Read>(r: &mut R) -> Result<Option<Frame>> {
    let mut header = [0u8; 8];
    let mut got = 0;
    while got < 8 {
        let n = r.read(&mut header[got..])?;
        if n == 0 {
            break;
        }
        got += n;
    }
    match got {
        0 => return Ok(None),
        8 => {}
        _ => return Err(SimError::Parse("truncated frame header".into())),
    }
    let width = u32::from_le_bytes(header[..4].try_into().expect("4 bytes")) as usize;
    let height = u32::from_le_bytes(header[4..].try_into().expect("4 bytes")) as usize;
    let mut pixels = vec![0u8; width * height * 3];
    r.read_exact(&mut pixels)
        .map_err(|e| SimError::Parse(format!("truncated frame body: {e}")))?;
    Frame::new(width, height, pixels).map(Some)
}

/// Camera footprint on the ground: a trapezoid from `near` to `far` meters
/// ahead of the rear axle, widening from `half_width_near` to
/// `half_width_far` (a cheap stand-in for perspective).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewConfig {
    pub near: f64,
    pub far: f64,
    pub half_width_near: f64,
    pub half_width_far: f64,
    /// Half width of the painted divider line.
    pub divider_half_width: f64,
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self {
            near: 1.0,
            far: 31.0,
            half_width_near: 4.0,
            half_width_far: 12.0,
            divider_half_width: 0.15,
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn noise_seed(track_seed: u64, palette_seed: u64, step: u64) -> u64 {
    splitmix(splitmix(splitmix(track_seed) ^ palette_seed) ^ step)
}

/// Egocentric render of the road ahead with [`ViewConfig::default`].
///
/// The ego lane (|lateral| ≤ half width) is road-colored, the divider line
/// is painted along its left edge, everything else is verge. Pixel noise is
/// seeded from `(track.seed, palette.seed, elapsed_steps)`.
pub fn rasterize(
    state: &VehicleState,
    track: &TrackSpec,
    palette: &WeatherPalette,
    size: usize,
) -> Result<Frame> {
    rasterize_with(state, track, palette, size, &ViewConfig::default())
}

pub fn rasterize_with(
    state: &VehicleState,
    track: &TrackSpec,
    palette: &WeatherPalette,
    size: usize,
    view: &ViewConfig,
) -> Result<Frame> {
    if !SUPPORTED_SIZES.contains(&size) {
        return Err(SimError::Config(format!(
            "frame size {size} not in {SUPPORTED_SIZES:?}"
        )));
    }
    let (sin, cos) = state.heading.sin_cos();
    let fwd = [cos, sin];
    let left = [-sin, cos];
    let lhw = track.lane_half_width;
    let divider = view.divider_half_width;
    let mut pixels = Vec::with_capacity(size * size * 3);
    let reach = (view.far / crate::track::WAYPOINT_SPACING).ceil() as usize + 8;

    for row in 0..size {
        let frac = (row as f64 + 0.5) / size as f64;
        let ahead = view.far - (view.far - view.near) * frac;
        let hw = view.half_width_near
            + (view.half_width_far - view.half_width_near) * (ahead - view.near)
                / (view.far - view.near);
        let center = [
            state.position[0] + ahead * fwd[0],
            state.position[1] + ahead * fwd[1],
        ];
        let row_hint = track.project_near(center, state.segment, 8, reach).segment;
        for col in 0..size {
            // column 0 is the vehicle's left
            let u = 1.0 - 2.0 * (col as f64 + 0.5) / size as f64;
            let lat = u * hw;
            let p = [center[0] + lat * left[0], center[1] + lat * left[1]];
            let off = track.project_near(p, row_hint, 6, 7).lateral;
            let color = if (off - lhw).abs() <= divider {
                palette.lane_color
            } else if off.abs() <= lhw {
                palette.road_color
            } else {
                palette.offroad_color
            };
            pixels.extend_from_slice(&color);
        }
    }

    if palette.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed(
            track.seed,
            palette.seed,
            state.elapsed_steps,
        ));
        let scale = palette.noise_std * 255.0;
        for px in pixels.iter_mut() {
            let n: f64 = StandardNormal.sample(&mut rng);
            *px = (*px as f64 + scale * n).round().clamp(0.0, 255.0) as u8;
        }
    }
    Frame::new(size, size, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trip_and_header() {
        let f = Frame::new(2, 1, vec![1, 2, 3, 4, 5, 6]).unwrap();
        let mut buf = Vec::new();
        write_frame_dump(&mut buf, &f).unwrap();
        assert_eq!(&buf[..8], &[2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(buf.len(), 8 + 6);
        let mut r = &buf[..];
        assert_eq!(read_frame_dump(&mut r).unwrap(), Some(f));
        assert_eq!(read_frame_dump(&mut r).unwrap(), None);
        assert!(read_frame_dump(&mut &buf[..5]).is_err());
    }

    #[test]
    fn chw_round_trip() {
        let f = Frame::new(2, 2, (0..12).map(|v| v * 20).collect()).unwrap();
        let back = Frame::from_chw(2, 2, &f.to_chw()).unwrap();
        assert_eq!(f, back);
    }

    #[test]
    fn bad_buffer_rejected() {
        assert!(Frame::new(2, 2, vec![0; 11]).is_err());
        assert!(Frame::new(0, 2, vec![]).is_err());
    }
}

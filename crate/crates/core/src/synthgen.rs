//! Deterministic synthetic crowd scenes with exact anomaly ground truth.
//!
//! A static textured background is populated by small, slow "walkers"
//! (textured rectangles moving at constant velocity with jitter, bouncing
//! off the frame border). Anomalies are large fast textured blocks. The
//! ground-truth mask of a frame is exactly the union of the visible anomaly
//! rectangles.
//!
//! The background depends only on `background_seed`, so scenes that share
//! it behave like clips from one fixed camera.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eval::{GroundTruth, Mask};
use crate::videoio::FrameVolume;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnomalySpec {
    /// Side length range of the square-ish block, pixels.
    pub size: [usize; 2],
    /// Speed range, pixels per frame.
    pub speed: [f64; 2],
    /// First frame in which the anomaly is visible.
    pub onset: usize,
    /// Number of frames it stays visible; `None` runs to the end.
    pub duration: Option<usize>,
    /// Initial heading in degrees; `None` draws one from the seed.
    pub heading_deg: Option<f64>,
}

impl Default for AnomalySpec {
    fn default() -> Self {
        Self {
            size: [30, 40],
            speed: [4.0, 8.0],
            onset: 40,
            duration: None,
            heading_deg: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub background_seed: u64,
    /// Amplitude of the static per-pixel background texture.
    pub background_noise: f64,
    /// Amplitude of independent per-frame sensor noise.
    pub sensor_noise: f64,
    pub walkers: usize,
    pub walker_size: [usize; 2],
    pub walker_speed: [f64; 2],
    /// Per-frame positional jitter of walkers, pixels.
    pub walker_jitter: f64,
    pub anomalies: Vec<AnomalySpec>,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 360,
            height: 240,
            frames: 200,
            background_seed: 7,
            background_noise: 12.0,
            sensor_noise: 2.0,
            walkers: 24,
            walker_size: [8, 14],
            walker_speed: [1.0, 2.0],
            walker_jitter: 0.3,
            anomalies: Vec::new(),
            seed: 1,
        }
    }
}

fn range_ok<T: PartialOrd + Copy>(r: [T; 2]) -> bool {
    r[0] <= r[1]
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.frames == 0 {
            return Err(Error::param("scene dimensions and frame count must be positive"));
        }
        if !range_ok(self.walker_size) || !range_ok(self.walker_speed) || self.walker_size[0] == 0 {
            return Err(Error::param("walker size/speed ranges must be non-empty and positive"));
        }
        if self.walker_size[1] > self.width.min(self.height) {
            return Err(Error::param(format!(
                "walkers up to {} px do not fit a {}x{} frame",
                self.walker_size[1], self.width, self.height
            )));
        }
        for (i, a) in self.anomalies.iter().enumerate() {
            if !range_ok(a.size) || !range_ok(a.speed) || a.size[0] == 0 {
                return Err(Error::param(format!("anomaly {i}: bad size/speed range")));
            }
            if a.size[1] > self.width.min(self.height) {
                return Err(Error::param(format!(
                    "anomaly {i}: blocks up to {} px do not fit a {}x{} frame",
                    a.size[1], self.width, self.height
                )));
            }
            let bigger = a.size[0] >= 2 * self.walker_size[1];
            let faster = a.speed[0] >= 2.0 * self.walker_speed[1];
            if !(bigger || faster) {
                return Err(Error::param(format!(
                    "anomaly {i} must be at least twice as large or as fast as any walker"
                )));
            }
        }
        Ok(())
    }
}

/// A textured rectangle with its per-frame top-left positions.
struct Entity {
    w: usize,
    h: usize,
    texture: Vec<u8>,
    /// `(x, y)` per frame, `None` when not visible.
    track: Vec<Option<(usize, usize)>>,
}

fn bounce_track(
    rng: &mut ChaCha8Rng,
    spec: &SceneSpec,
    (w, h): (usize, usize),
    speed: f64,
    heading: f64,
    jitter: f64,
    frames: std::ops::Range<usize>,
) -> Vec<Option<(usize, usize)>> {
    let max_x = (spec.width - w) as f64;
    let max_y = (spec.height - h) as f64;
    let mut x = rng.random_range(0.0..=max_x);
    let mut y = rng.random_range(0.0..=max_y);
    let (mut vx, mut vy) = (speed * heading.cos(), speed * heading.sin());
    let mut track = vec![None; spec.frames];
    for t in frames {
        track[t] = Some((x.round() as usize, y.round() as usize));
        let jx = if jitter > 0.0 { rng.random_range(-jitter..=jitter) } else { 0.0 };
        let jy = if jitter > 0.0 { rng.random_range(-jitter..=jitter) } else { 0.0 };
        x += vx + jx;
        y += vy + jy;
        if x < 0.0 {
            x = -x;
            vx = vx.abs();
        } else if x > max_x {
            x = 2.0 * max_x - x;
            vx = -vx.abs();
        }
        if y < 0.0 {
            y = -y;
            vy = vy.abs();
        } else if y > max_y {
            y = 2.0 * max_y - y;
            vy = -vy.abs();
        }
        x = x.clamp(0.0, max_x);
        y = y.clamp(0.0, max_y);
    }
    track
}

fn background(spec: &SceneSpec) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.background_seed);
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.01..0.06),
                rng.random_range(0.01..0.06),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(8.0..20.0),
            )
        })
        .collect();
    let mut bg = Vec::with_capacity(spec.width * spec.height);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let smooth: f64 = waves
                .iter()
                .map(|&(fx, fy, ph, amp)| amp * (fx * x as f64 + fy * y as f64 + ph).sin())
                .sum();
            let grain = spec.background_noise * rng.random_range(-1.0..1.0);
            bg.push(120.0 + smooth + grain);
        }
    }
    bg
}

fn walker_texture(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Vec<u8> {
    let base: f64 = if rng.random_bool(0.5) {
        rng.random_range(25.0..80.0)
    } else {
        rng.random_range(170.0..230.0)
    };
    (0..w * h)
        .map(|_| (base + rng.random_range(-18.0..18.0)).clamp(0.0, 255.0) as u8)
        .collect()
}

fn blob_texture(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Vec<u8> {
    let stripe = rng.random_range(3..6);
    let (lo, hi): (f64, f64) = (rng.random_range(10.0..50.0), rng.random_range(200.0..250.0));
    let mut t = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let band = ((x + y) / stripe) % 2 == 0;
            let v = if band { hi } else { lo } + rng.random_range(-10.0..10.0);
            t.push(v.clamp(0.0, 255.0) as u8);
        }
    }
    t
}

/// Renders the scene and its per-frame anomaly masks.
pub fn generate(spec: &SceneSpec) -> Result<(FrameVolume, GroundTruth)> {
    spec.validate()?;
    let bg = background(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut walkers = Vec::with_capacity(spec.walkers);
    for _ in 0..spec.walkers {
        let w = rng.random_range(spec.walker_size[0]..=spec.walker_size[1]);
        let h = rng.random_range(spec.walker_size[0]..=spec.walker_size[1]);
        let speed = rng.random_range(spec.walker_speed[0]..=spec.walker_speed[1]);
        let heading = rng.random_range(0.0..std::f64::consts::TAU);
        let texture = walker_texture(&mut rng, w, h);
        let track = bounce_track(&mut rng, spec, (w, h), speed, heading, spec.walker_jitter, 0..spec.frames);
        walkers.push(Entity { w, h, texture, track });
    }

    let mut blobs = Vec::with_capacity(spec.anomalies.len());
    for a in &spec.anomalies {
        let w = rng.random_range(a.size[0]..=a.size[1]);
        let h = rng.random_range(a.size[0]..=a.size[1]);
        let speed = rng.random_range(a.speed[0]..=a.speed[1]);
        let heading = match a.heading_deg {
            Some(d) => d.to_radians(),
            None => rng.random_range(0.0..std::f64::consts::TAU),
        };
        let texture = blob_texture(&mut rng, w, h);
        let start = a.onset.min(spec.frames);
        let end = a.duration.map_or(spec.frames, |d| (start + d).min(spec.frames));
        let track = bounce_track(&mut rng, spec, (w, h), speed, heading, 0.0, start..end);
        blobs.push(Entity { w, h, texture, track });
    }

    let frame_ids: Vec<usize> = (0..spec.frames).collect();
    let rendered = crate::par::map(&frame_ids, |&t| render_frame(spec, &bg, &walkers, &blobs, t));
    let mut frames = Vec::with_capacity(spec.frames);
    let mut masks = Vec::with_capacity(spec.frames);
    for (f, m) in rendered {
        frames.push(f);
        masks.push(m);
    }
    Ok((FrameVolume::new(spec.width, spec.height, frames)?, masks))
}

fn paint(img: &mut [f64], width: usize, e: &Entity, (x0, y0): (usize, usize)) {
    for r in 0..e.h {
        let row = (y0 + r) * width + x0;
        for c in 0..e.w {
            img[row + c] = f64::from(e.texture[r * e.w + c]);
        }
    }
}

fn render_frame(spec: &SceneSpec, bg: &[f64], walkers: &[Entity], blobs: &[Entity], t: usize) -> (Vec<u8>, Mask) {
    let mut img = bg.to_vec();
    for e in walkers {
        if let Some(pos) = e.track[t] {
            paint(&mut img, spec.width, e, pos);
        }
    }
    let mut mask = Mask::empty(spec.width, spec.height);
    for e in blobs {
        if let Some((x, y)) = e.track[t] {
            paint(&mut img, spec.width, e, (x, y));
            mask.fill_rect(x, y, e.w, e.h);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(t as u64 + 1);
    let frame = img
        .iter()
        .map(|&v| {
            let n = if spec.sensor_noise > 0.0 {
                rng.random_range(-spec.sensor_noise..=spec.sensor_noise)
            } else {
                0.0
            };
            (v + n).round().clamp(0.0, 255.0) as u8
        })
        .collect();
    (frame, mask)
}

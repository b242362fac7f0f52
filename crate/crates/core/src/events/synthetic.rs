//! Moving-rectangle scenes with an idealized event sensor.
//!
//! Each shape is an axis-aligned rectangle of uniform intensity moving at
//! constant velocity over a uniform background. A pixel belongs to a shape when
//! its center lies inside the rectangle; later shapes are drawn on top. Events
//! are produced by differencing the log intensity `ln(0.1 + I)` between
//! consecutive micro-steps: a change strictly larger than the contrast
//! threshold emits one event with the sign of the change. Events within a
//! micro-step are emitted in row-major order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Event, EventStream};
use crate::error::{Error, Result};

pub const BACKGROUND_INTENSITY: f64 = 0.5;
pub const DEFAULT_CONTRAST_THRESHOLD: f64 = 0.15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub width: u32,
    pub height: u32,
    pub duration_us: u64,
    pub num_shapes: usize,
    pub num_classes: usize,
    pub frame_count: usize,
    /// Sensor updates between consecutive frames.
    pub micro_steps: usize,
    pub contrast_threshold: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            duration_us: 50_000,
            num_shapes: 3,
            num_classes: 3,
            frame_count: 2,
            micro_steps: 16,
            contrast_threshold: DEFAULT_CONTRAST_THRESHOLD,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.width < 16 || self.height < 16 {
            return Err(Error::InvalidArgument(format!(
                "synthetic scenes need at least 16x16 pixels, got {}x{}",
                self.width, self.height
            )));
        }
        if self.width > u16::MAX as u32 + 1 || self.height > u16::MAX as u32 + 1 {
            return Err(Error::InvalidArgument("sensor too large".into()));
        }
        if self.num_classes < 2 || self.num_classes > 256 {
            return Err(Error::InvalidArgument(format!(
                "num_classes must be in 2..=256, got {}",
                self.num_classes
            )));
        }
        if self.frame_count == 0 || self.micro_steps == 0 || self.duration_us == 0 {
            return Err(Error::InvalidArgument(
                "frame_count, micro_steps and duration_us must be positive".into(),
            ));
        }
        if !(self.contrast_threshold > 0.0) {
            return Err(Error::InvalidArgument("contrast threshold must be positive".into()));
        }
        Ok(())
    }

    /// Total number of sensor updates over the whole duration.
    pub fn total_steps(&self) -> usize {
        self.micro_steps * (self.frame_count - 1).max(1)
    }
}

/// Base intensity of a foreground class: odd classes bright, even classes
/// dark, spreading toward mid-gray as the class count grows.
pub fn class_intensity(class: usize, num_classes: usize) -> f64 {
    if class == 0 {
        return BACKGROUND_INTENSITY;
    }
    let levels = num_classes.div_ceil(2).max(1) as f64;
    let j = ((class - 1) / 2) as f64;
    if class % 2 == 1 {
        0.95 - 0.35 * j / levels
    } else {
        0.05 + 0.35 * j / levels
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Shape {
    pub class: u8,
    /// Top-left corner at `t = 0`, in pixels.
    pub x0: f64,
    pub y0: f64,
    pub w: f64,
    pub h: f64,
    /// Displacement over the whole duration, in pixels.
    pub dx: f64,
    pub dy: f64,
    pub intensity: f64,
}

impl Shape {
    fn covers(&self, s: f64, px: f64, py: f64) -> bool {
        let x = self.x0 + self.dx * s;
        let y = self.y0 + self.dy * s;
        px >= x && px < x + self.w && py >= y && py < y + self.h
    }
}

#[derive(Clone, Debug)]
pub struct SynthScene {
    pub config: SynthConfig,
    pub shapes: Vec<Shape>,
}

#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub stream: EventStream,
    /// Grayscale frames, row-major `u8`.
    pub frames: Vec<Vec<u8>>,
    pub labels: Vec<Vec<u8>>,
    pub frame_times: Vec<u64>,
}

impl SynthScene {
    pub fn new(config: SynthConfig, shapes: Vec<Shape>) -> Result<Self> {
        config.validate()?;
        for s in &shapes {
            if s.class as usize >= config.num_classes || s.class == 0 {
                return Err(Error::InvalidArgument(format!(
                    "shape class {} outside 1..{}",
                    s.class, config.num_classes
                )));
            }
        }
        Ok(Self { config, shapes })
    }

    /// Draws `num_shapes` rectangles that stay inside the sensor for the whole
    /// duration.
    pub fn random(seed: u64, config: SynthConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (config.width as f64, config.height as f64);
        let mut shapes = Vec::with_capacity(config.num_shapes);
        for _ in 0..config.num_shapes {
            let class = rng.gen_range(1..config.num_classes);
            let sw = rng.gen_range(w / 6.0..w / 3.0).round();
            let sh = rng.gen_range(h / 6.0..h / 3.0).round();
            let x0 = rng.gen_range(0.0..=w - sw);
            let y0 = rng.gen_range(0.0..=h - sh);
            let x1 = rng.gen_range((x0 - w / 4.0).max(0.0)..=(x0 + w / 4.0).min(w - sw));
            let y1 = rng.gen_range((y0 - h / 4.0).max(0.0)..=(y0 + h / 4.0).min(h - sh));
            let jitter = rng.gen_range(-0.03..=0.03);
            shapes.push(Shape {
                class: class as u8,
                x0,
                y0,
                w: sw,
                h: sh,
                dx: x1 - x0,
                dy: y1 - y0,
                intensity: class_intensity(class, config.num_classes) + jitter,
            });
        }
        Self::new(config, shapes)
    }

    /// Position in `[0, 1]` of timestamp `t` within the duration.
    fn phase(&self, t: u64) -> f64 {
        t.min(self.config.duration_us) as f64 / self.config.duration_us as f64
    }

    fn top_shape(&self, s: f64, x: usize, y: usize) -> Option<&Shape> {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        self.shapes.iter().rev().find(|sh| sh.covers(s, px, py))
    }

    pub fn render_intensity(&self, t: u64) -> Vec<f64> {
        let s = self.phase(t);
        let (w, h) = (self.config.width as usize, self.config.height as usize);
        (0..w * h)
            .map(|i| {
                self.top_shape(s, i % w, i / w)
                    .map_or(BACKGROUND_INTENSITY, |sh| sh.intensity)
            })
            .collect()
    }

    pub fn render_labels(&self, t: u64) -> Vec<u8> {
        let s = self.phase(t);
        let (w, h) = (self.config.width as usize, self.config.height as usize);
        (0..w * h)
            .map(|i| self.top_shape(s, i % w, i / w).map_or(0, |sh| sh.class))
            .collect()
    }

    pub fn frame_times(&self) -> Vec<u64> {
        let c = &self.config;
        if c.frame_count == 1 {
            return vec![c.duration_us];
        }
        (0..c.frame_count)
            .map(|k| (c.duration_us as u128 * k as u128 / (c.frame_count - 1) as u128) as u64)
            .collect()
    }

    /// Timestamps of the sensor updates, including `t = 0`.
    pub fn step_times(&self) -> Vec<u64> {
        let n = self.config.total_steps();
        (0..=n)
            .map(|k| (self.config.duration_us as u128 * k as u128 / n as u128) as u64)
            .collect()
    }

    pub fn events(&self) -> Result<EventStream> {
        let c = &self.config;
        let w = c.width as usize;
        let log = |img: Vec<f64>| img.into_iter().map(|i| (0.1 + i).ln()).collect::<Vec<_>>();
        let times = self.step_times();
        let mut prev = log(self.render_intensity(times[0]));
        let mut events = Vec::new();
        for &t in &times[1..] {
            let cur = log(self.render_intensity(t));
            for (i, (a, b)) in prev.iter().zip(&cur).enumerate() {
                let d = b - a;
                if d.abs() > c.contrast_threshold {
                    events.push(Event::new((i % w) as u16, (i / w) as u16, t, if d > 0.0 { 1 } else { -1 }));
                }
            }
            prev = cur;
        }
        EventStream::new(c.width, c.height, events)
    }

    pub fn generate(&self) -> Result<SynthOutput> {
        let frame_times = self.frame_times();
        let frames = frame_times
            .iter()
            .map(|&t| {
                self.render_intensity(t)
                    .into_iter()
                    .map(|i| (i.clamp(0.0, 1.0) * 255.0).round() as u8)
                    .collect()
            })
            .collect();
        let labels = frame_times.iter().map(|&t| self.render_labels(t)).collect();
        Ok(SynthOutput {
            stream: self.events()?,
            frames,
            labels,
            frame_times,
        })
    }
}

/// Random scene from `seed`, rendered and converted to events.
pub fn gen_synthetic(seed: u64, config: &SynthConfig) -> Result<SynthOutput> {
    SynthScene::random(seed, config.clone())?.generate()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_shapes_is_silent_and_uniform() {
        let cfg = SynthConfig {
            num_shapes: 0,
            frame_count: 3,
            ..SynthConfig::default()
        };
        let out = gen_synthetic(5, &cfg).unwrap();
        assert!(out.stream.is_empty());
        assert_eq!(out.frames.len(), 3);
        for f in &out.frames {
            assert!(f.iter().all(|&p| p == out.frames[0][0]));
        }
        assert!(out.labels.iter().flatten().all(|&l| l == 0));
    }

    #[test]
    fn same_seed_same_output() {
        let cfg = SynthConfig::default();
        let a = gen_synthetic(11, &cfg).unwrap();
        let b = gen_synthetic(11, &cfg).unwrap();
        assert_eq!(a.stream, b.stream);
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.labels, b.labels);
        let c = gen_synthetic(12, &cfg).unwrap();
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn degenerate_geometry_is_rejected() {
        let cfg = SynthConfig {
            width: 8,
            ..SynthConfig::default()
        };
        assert!(gen_synthetic(0, &cfg).is_err());
        let cfg = SynthConfig {
            num_classes: 1,
            ..SynthConfig::default()
        };
        assert!(gen_synthetic(0, &cfg).is_err());
    }

    #[test]
    fn class_intensities_are_separated_from_background() {
        for n in 2..=19 {
            for c in 1..n {
                let i = class_intensity(c, n);
                assert!((i - BACKGROUND_INTENSITY).abs() >= 0.1, "class {c} of {n}: {i}");
                assert!((0.0..=1.0).contains(&i));
            }
        }
    }

    #[test]
    fn step_and_frame_times_span_the_duration() {
        let scene = SynthScene::new(
            SynthConfig {
                frame_count: 3,
                micro_steps: 4,
                duration_us: 1000,
                ..SynthConfig::default()
            },
            vec![],
        )
        .unwrap();
        assert_eq!(scene.frame_times(), vec![0, 500, 1000]);
        assert_eq!(scene.step_times(), vec![0, 125, 250, 375, 500, 625, 750, 875, 1000]);
    }
}

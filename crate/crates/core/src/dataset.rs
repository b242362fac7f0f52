//! Segmentation samples (frame, events, labels) and their on-disk layout.
//!
//! A dataset directory holds `dataset.json` plus one sub-directory per sample
//! with `frame.pgm`, `label.pgm` and `events.evt1`. Frames are normalized to
//! `(p / 255 - 0.5) * 2` when fed to the network; label value 255 is ignored.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::io::{read_events, read_pgm, write_events, write_pgm};
use crate::events::synthetic::{gen_synthetic, SynthConfig};
use crate::events::{voxelize, EventStream, VoxelGrid};
use crate::tensor::Tensor;

pub const MANIFEST: &str = "dataset.json";

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Grayscale, row-major.
    pub frame: Vec<u8>,
    pub labels: Vec<u8>,
    pub events: EventStream,
    pub t_start: u64,
    pub t_end: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub width: usize,
    pub height: usize,
    pub num_classes: usize,
    pub samples: Vec<Sample>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    width: usize,
    height: usize,
    num_classes: usize,
    samples: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    dir: String,
    t_start: u64,
    t_end: u64,
}

/// Network-ready sample.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSample {
    /// `1 x H x W`.
    pub frame: Tensor,
    /// Raw (not normalized) voxel grid.
    pub voxel: VoxelGrid,
    pub labels: Vec<usize>,
}

impl PreparedSample {
    pub fn height(&self) -> usize {
        self.frame.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.frame.shape()[2]
    }

    /// Mirrors frame, voxel and labels along x.
    pub fn hflip(&self) -> PreparedSample {
        let w = self.width();
        let mut frame = self.frame.clone();
        for row in frame.data_mut().chunks_exact_mut(w) {
            row.reverse();
        }
        let mut labels = self.labels.clone();
        for row in labels.chunks_exact_mut(w) {
            row.reverse();
        }
        PreparedSample {
            frame,
            voxel: self.voxel.hflip(),
            labels,
        }
    }
}

pub fn normalize_frame(pixels: &[u8], height: usize, width: usize) -> Tensor {
    let data = pixels.iter().map(|&p| (p as f64 / 255.0 - 0.5) * 2.0).collect();
    Tensor::new([1, height, width], data).expect("frame shape")
}

impl Dataset {
    /// `count` independent scenes. Each sample is the last frame of its scene,
    /// the labels at that instant and all events of the scene.
    pub fn synthetic(seed: u64, count: usize, config: &SynthConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut samples = Vec::with_capacity(count);
        for _ in 0..count {
            let out = gen_synthetic(rng.gen(), config)?;
            let last = out.frames.len() - 1;
            samples.push(Sample {
                frame: out.frames[last].clone(),
                labels: out.labels[last].clone(),
                events: out.stream,
                t_start: 0,
                t_end: config.duration_us,
            });
        }
        Ok(Self {
            width: config.width as usize,
            height: config.height as usize,
            num_classes: config.num_classes,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn prepare(&self, bins: usize) -> Result<Vec<PreparedSample>> {
        self.samples
            .iter()
            .map(|s| {
                Ok(PreparedSample {
                    frame: normalize_frame(&s.frame, self.height, self.width),
                    voxel: voxelize(&s.events, bins, s.t_start, s.t_end)?,
                    labels: s.labels.iter().map(|&l| l as usize).collect(),
                })
            })
            .collect()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::with_capacity(self.len());
        for (i, s) in self.samples.iter().enumerate() {
            let name = format!("sample_{i:04}");
            let sub = dir.join(&name);
            fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            let (w, h) = (self.width as u32, self.height as u32);
            write_pgm(sub.join("frame.pgm"), w, h, &s.frame)?;
            write_pgm(sub.join("label.pgm"), w, h, &s.labels)?;
            write_events(&s.events, sub.join("events.evt1"))?;
            entries.push(ManifestEntry {
                dir: name,
                t_start: s.t_start,
                t_end: s.t_end,
            });
        }
        let manifest = Manifest {
            width: self.width,
            height: self.height,
            num_classes: self.num_classes,
            samples: entries,
        };
        let path = dir.join(MANIFEST);
        fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST);
        let raw = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_slice(&raw)?;
        let mut samples = Vec::with_capacity(m.samples.len());
        for e in &m.samples {
            let sub: PathBuf = dir.join(&e.dir);
            let frame = read_image(&sub.join("frame.pgm"), m.width, m.height)?;
            let labels = read_image(&sub.join("label.pgm"), m.width, m.height)?;
            if let Some(bad) = labels
                .iter()
                .find(|&&l| l as usize >= m.num_classes && l as usize != crate::network::IGNORE_INDEX)
            {
                return Err(Error::Format(format!(
                    "{}: label {bad} outside {} classes",
                    sub.display(),
                    m.num_classes
                )));
            }
            let events = read_events(sub.join("events.evt1"))?;
            if (events.width() as usize, events.height() as usize) != (m.width, m.height) {
                return Err(Error::Format(format!(
                    "{}: event geometry {}x{} differs from dataset {}x{}",
                    sub.display(),
                    events.width(),
                    events.height(),
                    m.width,
                    m.height
                )));
            }
            samples.push(Sample {
                frame,
                labels,
                events,
                t_start: e.t_start,
                t_end: e.t_end,
            });
        }
        Ok(Self {
            width: m.width,
            height: m.height,
            num_classes: m.num_classes,
            samples,
        })
    }
}

fn read_image(path: &Path, width: usize, height: usize) -> Result<Vec<u8>> {
    let (w, h, px) = read_pgm(path)?;
    if (w as usize, h as usize) != (width, height) {
        return Err(Error::Format(format!(
            "{}: {w}x{h} image, dataset is {width}x{height}",
            path.display()
        )));
    }
    Ok(px)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            width: 16,
            height: 16,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn save_load_round_trip() {
        let d = Dataset::synthetic(3, 3, &small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.save(dir.path()).unwrap();
        assert_eq!(Dataset::load(dir.path()).unwrap(), d);
    }

    #[test]
    fn prepared_flip_is_an_involution() {
        let d = Dataset::synthetic(4, 1, &small()).unwrap();
        let p = d.prepare(5).unwrap().remove(0);
        assert_eq!(p.hflip().hflip(), p);
        assert_eq!(p.frame.shape(), &[1, 16, 16]);
        assert_eq!(p.voxel.bins, 5);
    }
}

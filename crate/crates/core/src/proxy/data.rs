//! Synthetic multi-scale blob images with per-level centre heatmaps.
//!
//! Each image holds 1-4 isotropic Gaussian blobs. A blob's radius falls into
//! one of four scale bands and the band picks the pyramid level whose target
//! heatmap marks the blob centre. Heatmaps are Gaussians of fixed width in
//! level pixels, combined across blobs by pointwise max.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::paths::LEVELS;
use crate::tensor::Tensor;

/// Total stride from the input image to pyramid level `P{l+2}`.
pub fn level_stride(level: usize) -> usize {
    4 << level
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobConfig {
    pub image_size: usize,
    pub channels_in: usize,
    pub min_blobs: usize,
    pub max_blobs: usize,
    /// Half-open radius interval (image pixels) for each level, P2 first.
    pub bands: [(f64, f64); LEVELS],
    /// Heatmap Gaussian width in level pixels.
    pub target_sigma: f64,
    pub amplitude: (f64, f64),
    pub noise_std: f64,
}

impl Default for BlobConfig {
    fn default() -> Self {
        BlobConfig {
            image_size: 64,
            channels_in: 1,
            min_blobs: 1,
            max_blobs: 4,
            bands: [(1.5, 3.0), (3.0, 6.0), (6.0, 12.0), (12.0, 24.0)],
            target_sigma: 1.0,
            amplitude: (0.5, 1.0),
            noise_std: 0.0,
        }
    }
}

impl BlobConfig {
    /// Level for a blob radius, or `None` outside every band.
    pub fn level_for_radius(&self, radius: f64) -> Option<usize> {
        self.bands
            .iter()
            .position(|&(lo, hi)| radius >= lo && radius < hi)
    }

    pub fn heatmap_size(&self, level: usize) -> usize {
        self.image_size / level_stride(level)
    }

    fn validate(&self) -> Result<()> {
        if self.image_size % level_stride(LEVELS - 1) != 0 || self.image_size == 0 {
            return Err(Error::Config(format!(
                "image_size {} must be a positive multiple of {}",
                self.image_size,
                level_stride(LEVELS - 1)
            )));
        }
        if self.min_blobs == 0 || self.min_blobs > self.max_blobs {
            return Err(Error::Config("need 1 <= min_blobs <= max_blobs".into()));
        }
        Ok(())
    }
}

/// One blob in image coordinates (pixel `i` spans `[i, i+1)`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Blob {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    /// Heatmaps `(1, s, s)` for P2..P5.
    pub targets: [Tensor; LEVELS],
}

/// Renders the image and targets of `blobs`. Blobs outside every band are
/// drawn in the image but mark no heatmap.
pub fn render_sample(blobs: &[Blob], cfg: &BlobConfig) -> Sample {
    let n = cfg.image_size;
    let mut plane = vec![0.0; n * n];
    for b in blobs {
        let inv = 1.0 / (2.0 * b.radius * b.radius);
        for y in 0..n {
            let dy = y as f64 + 0.5 - b.cy;
            for x in 0..n {
                let dx = x as f64 + 0.5 - b.cx;
                plane[y * n + x] += b.amplitude * (-(dx * dx + dy * dy) * inv).exp();
            }
        }
    }
    let image = Tensor::from_fn(&[cfg.channels_in, n, n], |i| plane[i % (n * n)]);

    let targets = std::array::from_fn(|level| {
        let s = cfg.heatmap_size(level);
        let stride = level_stride(level) as f64;
        let mut map = vec![0.0f64; s * s];
        let inv = 1.0 / (2.0 * cfg.target_sigma * cfg.target_sigma);
        for b in blobs
            .iter()
            .filter(|b| cfg.level_for_radius(b.radius) == Some(level))
        {
            let (lx, ly) = (b.cx / stride, b.cy / stride);
            for y in 0..s {
                let dy = y as f64 + 0.5 - ly;
                for x in 0..s {
                    let dx = x as f64 + 0.5 - lx;
                    let v = (-(dx * dx + dy * dy) * inv).exp();
                    map[y * s + x] = map[y * s + x].max(v);
                }
            }
        }
        Tensor::from_chw(1, s, s, map).expect("heatmap shape")
    });
    Sample { image, targets }
}

fn random_blob(rng: &mut impl Rng, cfg: &BlobConfig) -> Blob {
    let level = rng.gen_range(0..LEVELS);
    let (lo, hi) = cfg.bands[level];
    let n = cfg.image_size as f64;
    Blob {
        cx: rng.gen_range(0.0..n),
        cy: rng.gen_range(0.0..n),
        radius: rng.gen_range(lo..hi),
        amplitude: rng.gen_range(cfg.amplitude.0..=cfg.amplitude.1),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_checkpoint(&self, cfg: &BlobConfig, seed: u64) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(serde_json::json!({
            "kind": "dataset",
            "seed": seed,
            "n_train": self.train.len(),
            "n_val": self.val.len(),
            "blob_config": cfg,
        }));
        for (split, samples) in [("train", &self.train), ("val", &self.val)] {
            for (i, s) in samples.iter().enumerate() {
                ck.push(format!("{split}.{i}.image"), s.image.clone());
                for (l, t) in s.targets.iter().enumerate() {
                    ck.push(format!("{split}.{i}.target{l}"), t.clone());
                }
            }
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let count = |key: &str| {
            ck.meta[key]
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| Error::Checkpoint(format!("dataset manifest missing {key}")))
        };
        let fetch = |name: String| {
            ck.get(&name)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("dataset missing tensor {name}")))
        };
        let load = |split: &str, n: usize| -> Result<Vec<Sample>> {
            (0..n)
                .map(|i| {
                    let image = fetch(format!("{split}.{i}.image"))?;
                    let targets = [
                        fetch(format!("{split}.{i}.target0"))?,
                        fetch(format!("{split}.{i}.target1"))?,
                        fetch(format!("{split}.{i}.target2"))?,
                        fetch(format!("{split}.{i}.target3"))?,
                    ];
                    Ok(Sample { image, targets })
                })
                .collect()
        };
        Ok(Dataset {
            train: load("train", count("n_train")?)?,
            val: load("val", count("n_val")?)?,
        })
    }
}

/// Number of validation samples in the fixed 80/20 split.
pub fn val_count(n_samples: usize) -> usize {
    (n_samples / 5).max(1)
}

/// Deterministic dataset of `n_samples` images split 80/20 into train/val.
pub fn generate_dataset(seed: u64, n_samples: usize, cfg: &BlobConfig) -> Result<Dataset> {
    if n_samples < 2 {
        return Err(Error::Config(format!(
            "need at least 2 samples, got {n_samples}"
        )));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples: Vec<Sample> = (0..n_samples)
        .map(|_| {
            let count = rng.gen_range(cfg.min_blobs..=cfg.max_blobs);
            let blobs: Vec<Blob> = (0..count).map(|_| random_blob(&mut rng, cfg)).collect();
            let mut s = render_sample(&blobs, cfg);
            if cfg.noise_std > 0.0 {
                for v in s.image.data_mut() {
                    // Box-Muller
                    let (u1, u2): (f64, f64) = (rng.gen_range(f64::EPSILON..1.0), rng.gen());
                    *v += cfg.noise_std
                        * (-2.0 * u1.ln()).sqrt()
                        * (std::f64::consts::TAU * u2).cos();
                }
            }
            s
        })
        .collect();
    samples.shuffle(&mut rng);
    let val = samples.split_off(n_samples - val_count(n_samples));
    Ok(Dataset {
        train: samples,
        val,
    })
}

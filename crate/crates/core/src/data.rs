//! CIFAR-10 binary records, train/val/test splits and a seeded synthetic
//! image generator producing data in the same record format.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::trainer::{ActShape, Normalization};

pub const IMAGE_SIDE: usize = 32;
pub const CHANNELS: usize = 3;
pub const CLASSES: usize = 10;
pub const PIXEL_BYTES: usize = IMAGE_SIDE * IMAGE_SIDE * CHANNELS;
/// One label byte followed by planar R, G, B planes of 32x32 bytes.
pub const RECORD_BYTES: usize = 1 + PIXEL_BYTES;

pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetRecord {
    pub label: u8,
    /// Planar RGB, 3 x 32 x 32.
    pub pixels: Vec<u8>,
}

impl DatasetRecord {
    /// Pixels re-ordered channel-last `(y, x, c)`.
    pub fn hwc(&self) -> Vec<u8> {
        let plane = IMAGE_SIDE * IMAGE_SIDE;
        let mut out = vec![0u8; PIXEL_BYTES];
        for p in 0..plane {
            for c in 0..CHANNELS {
                out[p * CHANNELS + c] = self.pixels[c * plane + p];
            }
        }
        out
    }

    pub fn from_hwc(label: u8, hwc: &[u8]) -> Self {
        let plane = IMAGE_SIDE * IMAGE_SIDE;
        let mut pixels = vec![0u8; PIXEL_BYTES];
        for p in 0..plane {
            for c in 0..CHANNELS {
                pixels[c * plane + p] = hwc[p * CHANNELS + c];
            }
        }
        Self { label, pixels }
    }
}

/// Parse a concatenation of records. `base_offset` is added to reported byte offsets.
pub fn parse_records(bytes: &[u8], base_offset: usize) -> Result<Vec<DatasetRecord>> {
    let whole = bytes.len() / RECORD_BYTES;
    if !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(Error::Dataset {
            offset: base_offset + whole * RECORD_BYTES,
            reason: format!("truncated record ({} trailing bytes)", bytes.len() % RECORD_BYTES),
        });
    }
    bytes
        .chunks_exact(RECORD_BYTES)
        .enumerate()
        .map(|(i, rec)| {
            if rec[0] as usize >= CLASSES {
                return Err(Error::Dataset {
                    offset: base_offset + i * RECORD_BYTES,
                    reason: format!("label {} out of range", rec[0]),
                });
            }
            Ok(DatasetRecord {
                label: rec[0],
                pixels: rec[1..].to_vec(),
            })
        })
        .collect()
}

pub fn encode_records(records: &[DatasetRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * RECORD_BYTES);
    for r in records {
        out.push(r.label);
        out.extend_from_slice(&r.pixels);
    }
    out
}

/// Normalized float images stored back to back, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    shape: ActShape,
    images: Vec<f32>,
    labels: Vec<u8>,
}

impl Dataset {
    /// Build from channel-last bytes, scaled to `[0, 1]` (not yet normalized).
    pub fn from_hwc_bytes(shape: ActShape, pixels: &[u8], labels: Vec<u8>) -> Result<Self> {
        let per = shape.0 * shape.1 * shape.2;
        if pixels.len() != per * labels.len() {
            return Err(Error::ShapeMismatch("pixel buffer does not match labels".into()));
        }
        Ok(Self {
            shape,
            images: pixels.iter().map(|&p| f32::from(p) / 255.0).collect(),
            labels,
        })
    }

    pub fn from_records(records: &[DatasetRecord]) -> Self {
        let mut pixels = Vec::with_capacity(records.len() * PIXEL_BYTES);
        for r in records {
            pixels.extend(r.hwc());
        }
        let labels = records.iter().map(|r| r.label).collect();
        Self::from_hwc_bytes((IMAGE_SIDE, IMAGE_SIDE, CHANNELS), &pixels, labels)
            .expect("records have fixed size")
    }

    pub fn shape(&self) -> ActShape {
        self.shape
    }

    pub fn image_len(&self) -> usize {
        self.shape.0 * self.shape.1 * self.shape.2
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// The first `n` samples.
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            shape: self.shape,
            images: self.images[..n * self.image_len()].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f32], u8)> + '_ {
        self.images
            .chunks_exact(self.image_len())
            .zip(self.labels.iter().copied())
    }

    /// Per-channel population mean and standard deviation.
    pub fn channel_stats(&self) -> Normalization {
        let c = self.shape.2;
        let mut sum = vec![0f64; c];
        let mut sq = vec![0f64; c];
        for px in self.images.chunks_exact(c) {
            for ch in 0..c {
                let v = f64::from(px[ch]);
                sum[ch] += v;
                sq[ch] += v * v;
            }
        }
        let count = (self.images.len() / c).max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| ((s / count - m * m).max(0.0).sqrt()).max(1e-6) as f32)
            .collect();
        Normalization {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        }
    }

    pub fn normalize(&mut self, norm: &Normalization) {
        let c = self.shape.2;
        for px in self.images.chunks_exact_mut(c) {
            for ((v, m), sd) in px.iter_mut().zip(&norm.mean).zip(&norm.std) {
                *v = (*v - m) / sd;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub normalization: Normalization,
}

impl Splits {
    /// Normalize all three sets with statistics of the training set.
    pub fn from_raw(mut train: Dataset, mut val: Dataset, mut test: Dataset) -> Self {
        let normalization = train.channel_stats();
        train.normalize(&normalization);
        val.normalize(&normalization);
        test.normalize(&normalization);
        Self {
            train,
            val,
            test,
            normalization,
        }
    }
}

fn read_records(path: &Path) -> Result<Vec<DatasetRecord>> {
    let bytes = fs::read(path)?;
    parse_records(&bytes, 0).map_err(|e| match e {
        Error::Dataset { offset, reason } => Error::Dataset {
            offset,
            reason: format!("{}: {reason}", path.display()),
        },
        other => other,
    })
}

fn take(pool: &[DatasetRecord], start: usize, n: usize, what: &str) -> Result<Vec<DatasetRecord>> {
    pool.get(start..start + n).map(<[_]>::to_vec).ok_or_else(|| {
        Error::Config(format!(
            "{what} split needs records {start}..{} but only {} are available",
            start + n,
            pool.len()
        ))
    })
}

/// Load CIFAR-10 binary data and split it by record order.
///
/// A directory is read as the standard batch files: training and validation
/// come from `data_batch_*.bin` in order, test from `test_batch.bin`. A
/// single file is split train, val, test in sequence.
pub fn ingest_cifar_binary(path: &Path, train_n: usize, val_n: usize, test_n: usize) -> Result<Splits> {
    let (pool, test_pool) = if path.is_dir() {
        let mut pool = Vec::new();
        for name in TRAIN_FILES {
            let p: PathBuf = path.join(name);
            if p.exists() {
                pool.extend(read_records(&p)?);
            }
        }
        let test_path = path.join(TEST_FILE);
        if pool.is_empty() || !test_path.exists() {
            return Err(Error::Config(format!(
                "{} does not contain data_batch_*.bin and {TEST_FILE}",
                path.display()
            )));
        }
        (pool, read_records(&test_path)?)
    } else {
        let all = read_records(path)?;
        let test = take(&all, train_n + val_n, test_n, "test")?;
        (all, test)
    };
    let train = take(&pool, 0, train_n, "train")?;
    let val = take(&pool, train_n, val_n, "validation")?;
    let test = take(&test_pool, 0, test_n, "test")?;
    Ok(Splits::from_raw(
        Dataset::from_records(&train),
        Dataset::from_records(&val),
        Dataset::from_records(&test),
    ))
}

/// Unnormalized test images: `test_batch.bin` of a directory, or every
/// record of a single file.
pub fn read_test_set(path: &Path) -> Result<Dataset> {
    let file = if path.is_dir() { path.join(TEST_FILE) } else { path.to_path_buf() };
    Ok(Dataset::from_records(&read_records(&file)?))
}

/// Write records as a CIFAR-10 style directory.
pub fn write_cifar_dir(dir: &Path, train: &[DatasetRecord], test: &[DatasetRecord]) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(TRAIN_FILES[0]), encode_records(train))?;
    fs::write(dir.join(TEST_FILE), encode_records(test))?;
    Ok(())
}

/// Seeded ten-class image generator.
///
/// Class `k` draws a windowed sinusoidal grating at one of five spatial
/// frequencies (`k % 5`) tinted with one of two palettes (`k / 5`), at a
/// random orientation over a random background with pixel noise and a weak
/// distractor grating. Labels survive flips and small shifts.
pub mod synthetic {
    use super::*;

    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct Params {
        pub side: usize,
        pub noise: f32,
        /// Relative standard deviation of the class frequency.
        pub frequency_jitter: f32,
    }

    impl Default for Params {
        fn default() -> Self {
            Self {
                side: IMAGE_SIDE,
                noise: 0.12,
                frequency_jitter: 0.06,
            }
        }
    }

    const PALETTES: [[f32; 3]; 2] = [[1.0, 0.55, 0.15], [0.15, 0.55, 1.0]];
    const CYCLES: [f32; 5] = [1.3, 2.0, 3.0, 4.3, 6.0];

    fn grating(rng: &mut ChaCha8Rng, p: &Params, label: usize, out: &mut [u8]) {
        let side = p.side as f32;
        let jitter = Normal::new(0.0, p.frequency_jitter).expect("valid std");
        let noise = Normal::new(0.0, p.noise).expect("valid std");
        let theta = rng.gen_range(0.0..std::f32::consts::PI);
        let palette = PALETTES[label / 5];
        let tint: Vec<f32> = palette.iter().map(|c| (c + rng.gen_range(-0.2..0.2)).clamp(0.0, 1.0)).collect();
        // cycles per image width
        let freq = CYCLES[label % 5] * (1.0 + jitter.sample(rng)) / side;
        let phase = rng.gen_range(0.0..std::f32::consts::TAU);
        let amp = rng.gen_range(0.25..0.45);
        let cx = rng.gen_range(0.3..0.7) * side;
        let cy = rng.gen_range(0.3..0.7) * side;
        let sigma = rng.gen_range(0.25..0.45) * side;
        let bg: Vec<f32> = (0..CHANNELS).map(|_| rng.gen_range(0.3..0.7)).collect();
        let d_theta = rng.gen_range(0.0..std::f32::consts::PI);
        let d_amp = rng.gen_range(0.0..0.12);
        let d_freq = rng.gen_range(1.0..6.0) / side;

        let (s, c) = theta.sin_cos();
        let (ds, dc) = d_theta.sin_cos();
        for y in 0..p.side {
            for x in 0..p.side {
                let (fx, fy) = (x as f32, y as f32);
                let env = (-((fx - cx).powi(2) + (fy - cy).powi(2)) / (2.0 * sigma * sigma)).exp();
                let wave = (std::f32::consts::TAU * freq * (fx * c + fy * s) + phase).sin();
                let distract = d_amp * (std::f32::consts::TAU * d_freq * (fx * dc + fy * ds)).sin();
                for ch in 0..CHANNELS {
                    let v = bg[ch] + amp * env * wave * tint[ch] + distract + noise.sample(rng);
                    out[(y * p.side + x) * CHANNELS + ch] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                }
            }
        }
    }

    /// `n` channel-last images with balanced labels in a seeded random order.
    pub fn generate(n: usize, params: &Params, seed: u64) -> (Vec<u8>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let per = params.side * params.side * CHANNELS;
        let mut pixels = vec![0u8; n * per];
        // balanced labels: each block of ten holds every class once, shuffled
        let mut labels: Vec<u8> = Vec::with_capacity(n + CLASSES);
        while labels.len() < n {
            let mut block: Vec<u8> = (0..CLASSES as u8).collect();
            block.shuffle(&mut rng);
            labels.extend(block);
        }
        labels.truncate(n);
        for (i, &label) in labels.iter().enumerate() {
            grating(&mut rng, params, label as usize, &mut pixels[i * per..(i + 1) * per]);
        }
        (pixels, labels)
    }

    /// 32x32 records suitable for `write_cifar_dir`.
    pub fn records(n: usize, seed: u64) -> Vec<DatasetRecord> {
        let params = Params::default();
        let (pixels, labels) = generate(n, &params, seed);
        labels
            .iter()
            .enumerate()
            .map(|(i, &l)| DatasetRecord::from_hwc(l, &pixels[i * PIXEL_BYTES..(i + 1) * PIXEL_BYTES]))
            .collect()
    }

    /// Independent train/val/test draws, normalized with training statistics.
    pub fn splits(train_n: usize, val_n: usize, test_n: usize, params: &Params, seed: u64) -> Splits {
        let shape = (params.side, params.side, CHANNELS);
        let make = |n: usize, s: u64| {
            let (px, labels) = generate(n, params, s);
            Dataset::from_hwc_bytes(shape, &px, labels).expect("generator sizes agree")
        };
        Splits::from_raw(
            make(train_n, seed),
            make(val_n, seed.wrapping_add(1)),
            make(test_n, seed.wrapping_add(2)),
        )
    }
}

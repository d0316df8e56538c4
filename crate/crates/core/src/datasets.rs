//! CIFAR-10 and STL-10 binary loaders.
//!
//! Every image is held channel-planar, row-major within each plane:
//! `pixels[c * H * W + r * W + col]`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{PdlError, Result};

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_RECORD: usize = 1 + CIFAR_SIDE * CIFAR_SIDE * 3;
pub const STL_SIDE: usize = 96;
pub const STL_RECORD: usize = STL_SIDE * STL_SIDE * 3;
pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height * channels {
            return Err(PdlError::DimensionMismatch {
                expected: width * height * channels,
                actual: pixels.len(),
            });
        }
        Ok(RawImage {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Self {
        RawImage {
            width,
            height,
            channels,
            pixels: vec![value; width * height * channels],
        }
    }

    #[inline]
    pub fn at(&self, channel: usize, row: usize, col: usize) -> u8 {
        self.pixels[(channel * self.height + row) * self.width + col]
    }

    pub fn plane(&self, channel: usize) -> &[u8] {
        let n = self.width * self.height;
        &self.pixels[channel * n..(channel + 1) * n]
    }

    /// Sub-window with top-left corner at (`row`, `col`).
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<RawImage> {
        if row + height > self.height || col + width > self.width || height == 0 || width == 0 {
            return Err(PdlError::arg(format!(
                "crop {height}x{width} at ({row},{col}) outside {}x{} image",
                self.height, self.width
            )));
        }
        let mut pixels = Vec::with_capacity(width * height * self.channels);
        for c in 0..self.channels {
            for r in row..row + height {
                let start = (c * self.height + r) * self.width + col;
                pixels.extend_from_slice(&self.pixels[start..start + width]);
            }
        }
        Ok(RawImage {
            width,
            height,
            channels: self.channels,
            pixels,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub images: Vec<RawImage>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl LabeledDataset {
    pub fn new(
        images: Vec<RawImage>,
        labels: Vec<usize>,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(PdlError::Inconsistent(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(PdlError::InvalidLabel {
                index,
                label: label as i64,
                num_classes,
            });
        }
        Ok(LabeledDataset {
            images,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Deterministic subsample of `n` examples (or all if `n >= len`),
    /// preserving the original order of the kept examples.
    pub fn subsample(&self, n: usize, seed: u64) -> LabeledDataset {
        if n >= self.len() {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keep = sample(&mut rng, self.len(), n).into_vec();
        keep.sort_unstable();
        LabeledDataset {
            images: keep.iter().map(|&i| self.images[i].clone()).collect(),
            labels: keep.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            split: self.split,
        }
    }

    pub fn map_images(&self, f: impl Fn(&RawImage) -> RawImage) -> LabeledDataset {
        LabeledDataset {
            images: self.images.iter().map(f).collect(),
            labels: self.labels.clone(),
            num_classes: self.num_classes,
            split: self.split,
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| PdlError::io(path, e))
}

/// Parse a CIFAR-10 batch held in memory.
pub fn parse_cifar10(bytes: &[u8], source: &Path) -> Result<(Vec<RawImage>, Vec<usize>)> {
    if bytes.len() % CIFAR_RECORD != 0 {
        let offset = (bytes.len() / CIFAR_RECORD * CIFAR_RECORD) as u64;
        return Err(PdlError::MalformedFile {
            path: source.to_path_buf(),
            offset,
            reason: format!(
                "length {} is not a multiple of the {CIFAR_RECORD}-byte record",
                bytes.len()
            ),
        });
    }
    let mut images = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    let mut labels = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = rec[0] as usize;
        if label >= NUM_CLASSES {
            return Err(PdlError::InvalidLabel {
                index: i,
                label: label as i64,
                num_classes: NUM_CLASSES,
            });
        }
        labels.push(label);
        images.push(RawImage {
            width: CIFAR_SIDE,
            height: CIFAR_SIDE,
            channels: 3,
            pixels: rec[1..].to_vec(),
        });
    }
    Ok((images, labels))
}

pub fn load_cifar10<P: AsRef<Path>>(paths: &[P], split: Split) -> Result<LabeledDataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        let bytes = read_file(p.as_ref())?;
        let (imgs, labs) = parse_cifar10(&bytes, p.as_ref())?;
        images.extend(imgs);
        labels.extend(labs);
    }
    LabeledDataset::new(images, labels, NUM_CLASSES, split)
}

/// Inverse of [`parse_cifar10`].
pub fn write_cifar10(dataset: &LabeledDataset) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(dataset.len() * CIFAR_RECORD);
    for (img, &label) in dataset.images.iter().zip(&dataset.labels) {
        if img.width != CIFAR_SIDE || img.height != CIFAR_SIDE || img.channels != 3 {
            return Err(PdlError::arg("CIFAR records must be 32x32x3"));
        }
        out.push(label as u8);
        out.extend_from_slice(&img.pixels);
    }
    Ok(out)
}

/// Parse STL-10 image and label buffers. Images are stored column-major per
/// plane on disk and transposed to row-major here; labels are 1-indexed.
pub fn parse_stl10(
    image_bytes: &[u8],
    label_bytes: &[u8],
    image_path: &Path,
) -> Result<(Vec<RawImage>, Vec<usize>)> {
    if image_bytes.len() % STL_RECORD != 0 {
        return Err(PdlError::MalformedFile {
            path: image_path.to_path_buf(),
            offset: (image_bytes.len() / STL_RECORD * STL_RECORD) as u64,
            reason: format!(
                "length {} is not a multiple of the {STL_RECORD}-byte record",
                image_bytes.len()
            ),
        });
    }
    let count = image_bytes.len() / STL_RECORD;
    if count != label_bytes.len() {
        return Err(PdlError::Inconsistent(format!(
            "{count} image records but {} labels",
            label_bytes.len()
        )));
    }
    let mut labels = Vec::with_capacity(count);
    for (i, &b) in label_bytes.iter().enumerate() {
        if b == 0 || b as usize > NUM_CLASSES {
            return Err(PdlError::InvalidLabel {
                index: i,
                label: b as i64 - 1,
                num_classes: NUM_CLASSES,
            });
        }
        labels.push(b as usize - 1);
    }
    let plane = STL_SIDE * STL_SIDE;
    let images = image_bytes
        .chunks_exact(STL_RECORD)
        .map(|rec| {
            let mut pixels = vec![0u8; STL_RECORD];
            for c in 0..3 {
                for col in 0..STL_SIDE {
                    for row in 0..STL_SIDE {
                        pixels[c * plane + row * STL_SIDE + col] =
                            rec[c * plane + col * STL_SIDE + row];
                    }
                }
            }
            RawImage {
                width: STL_SIDE,
                height: STL_SIDE,
                channels: 3,
                pixels,
            }
        })
        .collect();
    Ok((images, labels))
}

pub fn load_stl10(image_path: &Path, label_path: &Path, split: Split) -> Result<LabeledDataset> {
    let image_bytes = read_file(image_path)?;
    let label_bytes = read_file(label_path)?;
    let (images, labels) = parse_stl10(&image_bytes, &label_bytes, image_path)?;
    LabeledDataset::new(images, labels, NUM_CLASSES, split)
}

/// Bilinear resampling with pixel-center alignment; source coordinates are
/// clamped to the image so the output never leaves the source's range.
/// Results are rounded half away from zero.
pub fn resize_bilinear(img: &RawImage, new_width: usize, new_height: usize) -> Result<RawImage> {
    if new_width == 0 || new_height == 0 {
        return Err(PdlError::arg("resize target dimensions must be >= 1"));
    }
    if new_width == img.width && new_height == img.height {
        return Ok(img.clone());
    }
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let ys = axis(new_height, img.height);
    let xs = axis(new_width, img.width);
    let mut pixels = Vec::with_capacity(new_width * new_height * img.channels);
    for c in 0..img.channels {
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let p00 = img.at(c, y0, x0) as f64;
                let p01 = img.at(c, y0, x1) as f64;
                let p10 = img.at(c, y1, x0) as f64;
                let p11 = img.at(c, y1, x1) as f64;
                let top = p00 + (p01 - p00) * fx;
                let bottom = p10 + (p11 - p10) * fx;
                let v = top + (bottom - top) * fy;
                pixels.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Ok(RawImage {
        width: new_width,
        height: new_height,
        channels: img.channels,
        pixels,
    })
}

/// Class-conditional CIFAR-shaped images for smoke tests: class `c` is a
/// sinusoidal grating at orientation `c·π/10` with a class tint, random
/// phase and frequency, and pixel noise.
pub fn synthetic_cifar(n: usize, split: Split, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % NUM_CLASSES;
        let theta = label as f64 * std::f64::consts::PI / NUM_CLASSES as f64;
        let (dx, dy) = (theta.cos(), theta.sin());
        let freq = rng.gen_range(0.5..0.9);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let contrast = rng.gen_range(50.0..90.0);
        let mut pixels = Vec::with_capacity(CIFAR_RECORD - 1);
        for c in 0..3 {
            let tint = 20.0 * (((label + c) % 3) as f64 - 1.0);
            for r in 0..CIFAR_SIDE {
                for col in 0..CIFAR_SIDE {
                    let t = freq * (dx * col as f64 + dy * r as f64) + phase;
                    let v = 128.0 + tint + contrast * t.sin() + rng.gen_range(-25.0..25.0);
                    pixels.push(v.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        images.push(RawImage {
            width: CIFAR_SIDE,
            height: CIFAR_SIDE,
            channels: 3,
            pixels,
        });
        labels.push(label);
    }
    LabeledDataset::new(images, labels, NUM_CLASSES, split).expect("labels are in range")
}

/// Write `train` (split over the five batch files) and `test` in the
/// standard CIFAR-10 binary layout under `dir`.
pub fn write_cifar10_dir(dir: &Path, train: &LabeledDataset, test: &LabeledDataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| PdlError::io(dir, e))?;
    let files = cifar10_files(dir);
    let per = train.len().div_ceil(files.train.len());
    for (b, path) in files.train.iter().enumerate() {
        let lo = (b * per).min(train.len());
        let hi = ((b + 1) * per).min(train.len());
        let part = LabeledDataset::new(
            train.images[lo..hi].to_vec(),
            train.labels[lo..hi].to_vec(),
            train.num_classes,
            Split::Train,
        )?;
        fs::write(path, write_cifar10(&part)?).map_err(|e| PdlError::io(path, e))?;
    }
    fs::write(&files.test[0], write_cifar10(test)?).map_err(|e| PdlError::io(&files.test[0], e))
}

/// File locations for one benchmark inside a data directory.
#[derive(Debug, Clone)]
pub struct DatasetFiles {
    pub train: Vec<PathBuf>,
    pub test: Vec<PathBuf>,
}

fn first_existing_dir(root: &Path, subdirs: &[&str]) -> PathBuf {
    subdirs
        .iter()
        .map(|s| root.join(s))
        .find(|p| p.is_dir())
        .unwrap_or_else(|| root.to_path_buf())
}

/// Standard CIFAR-10 binary layout: `data_batch_{1..5}.bin` and
/// `test_batch.bin`, either directly in `dir` or in `cifar-10-batches-bin/`.
pub fn cifar10_files(dir: &Path) -> DatasetFiles {
    let base = first_existing_dir(dir, &["cifar-10-batches-bin"]);
    DatasetFiles {
        train: (1..=5)
            .map(|i| base.join(format!("data_batch_{i}.bin")))
            .collect(),
        test: vec![base.join("test_batch.bin")],
    }
}

/// Standard STL-10 layout: `{train,test}_{X,y}.bin`, directly in `dir` or in
/// `stl10_binary/`. Each split is `[images, labels]`.
pub fn stl10_files(dir: &Path) -> DatasetFiles {
    let base = first_existing_dir(dir, &["stl10_binary"]);
    DatasetFiles {
        train: vec![base.join("train_X.bin"), base.join("train_y.bin")],
        test: vec![base.join("test_X.bin"), base.join("test_y.bin")],
    }
}

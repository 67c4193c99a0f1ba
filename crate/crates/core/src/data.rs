//! Dataset ingestion, standardization and seeded batching.
//!
//! Supported on-disk formats:
//! - IDX (MNIST): big-endian `u32` magic `0x00000803` for images followed by
//!   count, rows, cols, then one byte per pixel; `0x00000801` for labels
//!   followed by count, then one byte per label.
//! - CIFAR-10 binary: records of 1 label byte + 3072 pixel bytes
//!   (3 channel planes of 32×32, row-major).

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::unfold::ImageBatch;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// Raw byte images (`count × c × h × w`) and labels.
#[derive(Clone, Debug, PartialEq)]
pub struct RawDataset {
    pub name: String,
    pub count: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub classes: usize,
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
}

impl RawDataset {
    pub fn per_example(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.per_example();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    fn check(self) -> Result<Self> {
        if self.images.len() != self.count * self.per_example() || self.labels.len() != self.count {
            return Err(Error::Data(format!(
                "{}: {} images / {} labels for count {}",
                self.name,
                self.images.len(),
                self.labels.len(),
                self.count
            )));
        }
        if let Some((i, l)) = self.labels.iter().enumerate().find(|(_, &l)| l as usize >= self.classes) {
            return Err(Error::Data(format!(
                "{}: label {l} at index {i} exceeds {} classes",
                self.name, self.classes
            )));
        }
        Ok(self)
    }

    /// First `n` examples (or all, if fewer).
    pub fn take(&self, n: usize) -> RawDataset {
        let n = n.min(self.count);
        RawDataset {
            name: self.name.clone(),
            count: n,
            images: self.images[..n * self.per_example()].to_vec(),
            labels: self.labels[..n].to_vec(),
            ..*self
        }
    }

    /// Appends `other`, which must have the same image dims and classes.
    pub fn concat(mut self, other: &RawDataset) -> Result<RawDataset> {
        if (self.c, self.h, self.w, self.classes) != (other.c, other.h, other.w, other.classes) {
            return Err(Error::Data(format!("cannot concatenate {} and {}", self.name, other.name)));
        }
        self.images.extend_from_slice(&other.images);
        self.labels.extend_from_slice(&other.labels);
        self.count += other.count;
        Ok(self)
    }
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset: bytes.len(),
            msg: format!("truncated header: missing {what} (need {} bytes)", offset + 4),
        })
}

fn payload<'a>(bytes: &'a [u8], start: usize, expected: usize, what: &str) -> Result<&'a [u8]> {
    let actual = bytes.len().saturating_sub(start);
    if actual != expected {
        return Err(Error::Format {
            offset: start,
            msg: format!("{what}: expected {expected} payload bytes, found {actual}"),
        });
    }
    Ok(&bytes[start..])
}

/// Parses IDX image and label buffers.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<RawDataset> {
    let magic = be_u32(images, 0, "image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let count = be_u32(images, 4, "image count")? as usize;
    let rows = be_u32(images, 8, "row count")? as usize;
    let cols = be_u32(images, 12, "column count")? as usize;
    let pixels = payload(images, 16, count * rows * cols, "images")?;

    let magic = be_u32(labels, 0, "label magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let label_count = be_u32(labels, 4, "label count")? as usize;
    if label_count != count {
        return Err(Error::Format {
            offset: 4,
            msg: format!("label file holds {label_count} labels, image file {count} images"),
        });
    }
    let label_bytes = payload(labels, 8, count, "labels")?;
    RawDataset {
        name: "idx".into(),
        count,
        c: 1,
        h: rows,
        w: cols,
        classes: 10,
        images: pixels.to_vec(),
        labels: label_bytes.to_vec(),
    }
    .check()
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<RawDataset> {
    let images = fs::read(images_path)?;
    let labels = fs::read(labels_path)?;
    let mut ds = parse_idx(&images, &labels)?;
    ds.name = images_path.display().to_string();
    Ok(ds)
}

pub fn parse_cifar10(bytes: &[u8]) -> Result<RawDataset> {
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::Format {
            offset: bytes.len() - bytes.len() % CIFAR_RECORD,
            msg: format!(
                "length {} is not a multiple of the {CIFAR_RECORD}-byte record size",
                bytes.len()
            ),
        });
    }
    let count = bytes.len() / CIFAR_RECORD;
    let mut images = Vec::with_capacity(count * (CIFAR_RECORD - 1));
    let mut labels = Vec::with_capacity(count);
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        labels.push(rec[0]);
        images.extend_from_slice(&rec[1..]);
    }
    RawDataset {
        name: "cifar10".into(),
        count,
        c: 3,
        h: 32,
        w: 32,
        classes: 10,
        images,
        labels,
    }
    .check()
}

pub fn load_cifar10_bin(path: &Path) -> Result<RawDataset> {
    let mut ds = parse_cifar10(&fs::read(path)?)?;
    ds.name = path.display().to_string();
    Ok(ds)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StdMode {
    /// `(v/255 − mean_c) / std_c` with training-split statistics.
    PerChannelStandard,
    /// `v/255`.
    Range01,
    /// Raw byte values.
    Range0255,
}

impl std::str::FromStr for StdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(StdMode::PerChannelStandard),
            "range01" => Ok(StdMode::Range01),
            "range0255" => Ok(StdMode::Range0255),
            other => Err(Error::InvalidArgument(format!("unknown standardization {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Standardization {
    pub mode: StdMode,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardization {
    /// Computes per-channel statistics over `train` (population std of `v/255`).
    pub fn fit(train: &RawDataset, mode: StdMode) -> Result<Self> {
        let (means, stds) = match mode {
            StdMode::PerChannelStandard => {
                let plane = train.h * train.w;
                let mut means = Vec::with_capacity(train.c);
                let mut stds = Vec::with_capacity(train.c);
                for ch in 0..train.c {
                    let (mut s, mut s2, mut n) = (0.0f64, 0.0f64, 0usize);
                    for i in 0..train.count {
                        for &v in &train.image(i)[ch * plane..(ch + 1) * plane] {
                            let v = v as f64 / 255.0;
                            s += v;
                            s2 += v * v;
                            n += 1;
                        }
                    }
                    if n == 0 {
                        return Err(Error::Data("cannot fit standardization on an empty split".into()));
                    }
                    let mean = s / n as f64;
                    let var = (s2 / n as f64 - mean * mean).max(0.0);
                    if var.sqrt() < 1e-12 {
                        return Err(Error::Data(format!("channel {ch} has zero standard deviation")));
                    }
                    means.push(mean);
                    stds.push(var.sqrt());
                }
                (means, stds)
            }
            _ => (vec![0.0; train.c], vec![1.0; train.c]),
        };
        Ok(Standardization { mode, means, stds })
    }

    /// Standardizes the selected examples into an image batch.
    pub fn apply(&self, ds: &RawDataset, indices: &[usize]) -> Result<ImageBatch> {
        let plane = ds.h * ds.w;
        let mut data = Vec::with_capacity(indices.len() * ds.per_example());
        for &i in indices {
            if i >= ds.count {
                return Err(Error::Data(format!("index {i} out of range for {} examples", ds.count)));
            }
            for (ch, pixels) in ds.image(i).chunks_exact(plane).enumerate() {
                match self.mode {
                    StdMode::PerChannelStandard => {
                        let (m, s) = (self.means[ch], self.stds[ch]);
                        data.extend(pixels.iter().map(|&v| (v as f64 / 255.0 - m) / s));
                    }
                    StdMode::Range01 => data.extend(pixels.iter().map(|&v| v as f64 / 255.0)),
                    StdMode::Range0255 => data.extend(pixels.iter().map(|&v| v as f64)),
                }
            }
        }
        ImageBatch::new(indices.len(), ds.c, ds.h, ds.w, data)
    }
}

/// Example order for one epoch: a Fisher–Yates shuffle keyed by
/// `(seed, epoch)`, cut into batches; the final partial batch is kept.
pub fn batches(count: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..count).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Parameters of the Gaussian blob generator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthBlobs {
    pub classes: usize,
    pub per_class: usize,
    pub dims: (usize, usize, usize),
    /// Per-pixel standard deviation of the class-mean offsets around 128.
    pub separation: f64,
    /// Per-pixel standard deviation of the within-class noise.
    pub noise: f64,
    pub seed: u64,
}

impl SynthBlobs {
    pub fn new(classes: usize, per_class: usize, dims: (usize, usize, usize), seed: u64) -> Self {
        SynthBlobs {
            classes,
            per_class,
            dims,
            separation: 4.0,
            noise: 64.0,
            seed,
        }
    }

    /// One split. Class means depend only on `seed`; the noise stream is
    /// keyed by `split`, so splits share classes but not samples. Examples
    /// are emitted class-interleaved (`label = i mod classes`).
    pub fn generate(&self, split: u64) -> RawDataset {
        let (c, h, w) = self.dims;
        let d = c * h * w;
        let mut mean_rng = ChaCha8Rng::seed_from_u64(self.seed);
        let means: Vec<Vec<f64>> = (0..self.classes)
            .map(|_| {
                (0..d)
                    .map(|_| 128.0 + self.separation * mean_rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(split + 1);
        let count = self.classes * self.per_class;
        let mut images = Vec::with_capacity(count * d);
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            let k = i % self.classes;
            for &m in &means[k] {
                let v = m + self.noise * rng.sample::<f64, _>(StandardNormal);
                images.push(v.round().clamp(0.0, 255.0) as u8);
            }
            labels.push(k as u8);
        }
        RawDataset {
            name: format!("synth-blobs-{}", self.seed),
            count,
            c,
            h,
            w,
            classes: self.classes,
            images,
            labels,
        }
    }
}

pub fn synth_blobs(classes: usize, per_class: usize, dims: (usize, usize, usize), seed: u64) -> RawDataset {
    SynthBlobs::new(classes, per_class, dims, seed).generate(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for x in [IDX_IMAGES_MAGIC, count, rows, cols] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v.extend_from_slice(pixels);
        v
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut v = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
        v.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        v.extend_from_slice(labels);
        v
    }

    #[test]
    fn idx_fixture_round_trip() {
        let pixels = [0u8, 17, 128, 255, 1, 2, 3, 4];
        let ds = parse_idx(&idx_images(2, 2, 2, &pixels), &idx_labels(&[7, 3])).unwrap();
        assert_eq!((ds.count, ds.c, ds.h, ds.w), (2, 1, 2, 2));
        assert_eq!(ds.images, pixels);
        assert_eq!(ds.labels, vec![7, 3]);
        assert_eq!(ds.image(1), &[1, 2, 3, 4]);
    }

    #[test]
    fn idx_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        fs::write(&ip, idx_images(1, 1, 3, &[9, 8, 7])).unwrap();
        fs::write(&lp, idx_labels(&[2])).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.images, vec![9, 8, 7]);
        assert!(load_idx(&dir.path().join("missing"), &lp).is_err());
    }

    #[test]
    fn idx_errors() {
        let mut bad = idx_images(1, 1, 1, &[0]);
        bad[3] = 0x01;
        let err = parse_idx(&bad, &idx_labels(&[0])).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }));

        let short = idx_images(2, 2, 2, &[0; 5]);
        match parse_idx(&short, &idx_labels(&[0, 1])).unwrap_err() {
            Error::Format { offset, msg } => {
                assert_eq!(offset, 16);
                assert!(msg.contains("expected 8") && msg.contains("found 5"), "{msg}");
            }
            e => panic!("unexpected {e:?}"),
        }

        let err = parse_idx(&idx_images(1, 1, 1, &[0]), &idx_labels(&[0, 1])).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 4, .. }));
        assert!(parse_idx(&[0, 0, 8], &idx_labels(&[])).is_err());
        assert!(parse_idx(&idx_images(1, 1, 1, &[0]), &idx_labels(&[12])).is_err());
    }

    #[test]
    fn cifar_records() {
        let mut bytes = Vec::new();
        for (label, fill) in [(3u8, 10u8), (9, 200)] {
            bytes.push(label);
            bytes.extend((0..3072).map(|i| fill.wrapping_add((i % 7) as u8)));
        }
        let ds = parse_cifar10(&bytes).unwrap();
        assert_eq!(ds.count, 2);
        assert_eq!(ds.labels, vec![3, 9]);
        assert_eq!(ds.image(1)[0], 200);
        assert_eq!(ds.image(1)[8], 201);
        assert_eq!(ds.image(0).len(), 3072);

        assert_eq!(parse_cifar10(&[]).unwrap().count, 0);
        assert!(matches!(parse_cifar10(&[0u8; 3072]), Err(Error::Format { offset: 0, .. })));
    }

    fn tiny(pixels: Vec<u8>, c: usize, h: usize, w: usize) -> RawDataset {
        let count = pixels.len() / (c * h * w);
        RawDataset {
            name: "t".into(),
            count,
            c,
            h,
            w,
            classes: 2,
            images: pixels,
            labels: vec![0; count],
        }
    }

    #[test]
    fn standardization_modes() {
        let ds = tiny(vec![0, 0, 0, 0, 10, 20, 30, 255], 2, 1, 2);
        let r01 = Standardization::fit(&ds, StdMode::Range01).unwrap();
        let b = r01.apply(&ds, &[0, 1]).unwrap();
        assert_eq!(&b.data[..2], &[0.0, 0.0]);
        assert!((b.data[7] - 1.0).abs() < 1e-15);

        let raw = Standardization::fit(&ds, StdMode::Range0255).unwrap();
        let b = raw.apply(&ds, &[1]).unwrap();
        assert_eq!(b.data, vec![10.0, 20.0, 30.0, 255.0]);
        let again = raw.apply(&ds, &[1]).unwrap();
        assert_eq!(b, again);

        let std = Standardization::fit(&ds, StdMode::PerChannelStandard);
        assert!(std.is_ok());
        let flat = tiny(vec![5, 9, 5, 1], 2, 1, 1);
        assert!(matches!(
            Standardization::fit(&flat, StdMode::PerChannelStandard),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn standardized_split_has_unit_statistics() {
        let ds = synth_blobs(3, 40, (3, 4, 4), 5);
        let s = Standardization::fit(&ds, StdMode::PerChannelStandard).unwrap();
        let all: Vec<usize> = (0..ds.count).collect();
        let b = s.apply(&ds, &all).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..b.b)
                .flat_map(|e| (0..16).map(move |p| (e, p)))
                .map(|(e, p)| b.data[(e * 3 + ch) * 16 + p])
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!(mean.abs() < 1e-6, "mean {mean}");
            assert!((std - 1.0).abs() < 1e-6, "std {std}");
        }
    }

    #[test]
    fn batch_order() {
        let a = batches(10, 3, 7, 0);
        assert_eq!(a, batches(10, 3, 7, 0));
        assert_ne!(a, batches(10, 3, 7, 1));
        assert_eq!(a.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 3, 1]);
        let mut all: Vec<usize> = a.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(batches(0, 4, 1, 0).is_empty());
    }

    #[test]
    fn synth_properties() {
        let a = synth_blobs(4, 5, (1, 3, 3), 9);
        assert_eq!(a, synth_blobs(4, 5, (1, 3, 3), 9));
        assert_ne!(a.images, synth_blobs(4, 5, (1, 3, 3), 10).images);
        assert_eq!(a.count, 20);
        assert_eq!(a.labels[..5], [0, 1, 2, 3, 0]);
        let empty = synth_blobs(4, 0, (1, 3, 3), 9);
        assert!(empty.is_empty() && empty.images.is_empty());

        let gen = SynthBlobs::new(4, 5, (1, 3, 3), 9);
        assert_ne!(gen.generate(0).images, gen.generate(1).images);
    }
}

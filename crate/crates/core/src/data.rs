//! Dataset ingestion and preparation: CIFAR-layout binary parsing, synthetic
//! generation, stratified subset sampling, and pad-crop-flip augmentation.
//!
//! Pixel values are 8-bit at the source and stored as `k / 255` reals, so a
//! parse/serialise round trip is bit-exact.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::trainer::{BatchTransform, BoxMuller, Examples, Tensor};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("truncated stream: {len} bytes is not a multiple of the {record}-byte record (incomplete record at offset {offset})")]
    Truncated {
        len: usize,
        record: usize,
        offset: usize,
    },
    #[error("label {label} out of range for {class_count} classes at byte offset {offset}")]
    LabelOutOfRange {
        label: u8,
        class_count: usize,
        offset: usize,
    },
    #[error("class {class} has {count} examples; at least 2 are required")]
    ClassTooSmall { class: u32, count: usize },
    #[error("fraction {0} is outside (0, 1]")]
    BadFraction(f64),
    #[error("unsupported class count {0}; expected 10 or 100")]
    BadClassCount(usize),
    #[error("dataset has shape {got:?}, expected (3, 32, 32) for the CIFAR layout")]
    NotCifarShaped { got: (usize, usize, usize) },
    #[error("malformed dataset reference `{reference}`: {reason}")]
    BadReference { reference: String, reason: String },
    #[error("failed to read `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// An immutable labelled image set; images are (count, channels, h, w).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<u32>,
    pub class_count: usize,
    pub name: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// (channels, height, width) of one image.
    pub fn shape(&self) -> (usize, usize, usize) {
        (
            self.images.shape[1],
            self.images.shape[2],
            self.images.shape[3],
        )
    }

    pub fn examples(&self) -> Examples<'_> {
        Examples {
            images: &self.images,
            labels: &self.labels,
        }
    }

    pub fn per_class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.class_count];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Population mean and standard deviation per channel, for normalisation.
    /// Standard deviations are floored at 1e-6.
    pub fn channel_stats(&self) -> (Vec<f64>, Vec<f64>) {
        let (c, h, w) = self.shape();
        let spatial = h * w;
        let n = self.len();
        let mut means = vec![0.0; c];
        let mut stds = vec![0.0; c];
        let m = (n * spatial) as f64;
        for ch in 0..c {
            let mut sum = 0.0;
            for i in 0..n {
                let base = (i * c + ch) * spatial;
                for &v in &self.images.values[base..base + spatial] {
                    sum += v;
                }
            }
            let mu = sum / m;
            let mut sq = 0.0;
            for i in 0..n {
                let base = (i * c + ch) * spatial;
                for &v in &self.images.values[base..base + spatial] {
                    sq += (v - mu) * (v - mu);
                }
            }
            means[ch] = mu;
            stds[ch] = (sq / m).sqrt().max(1e-6);
        }
        (means, stds)
    }
}

const CIFAR_PIXELS: usize = 3 * 32 * 32;

fn record_size(class_count: usize) -> Result<usize, DataError> {
    match class_count {
        10 => Ok(1 + CIFAR_PIXELS),
        100 => Ok(2 + CIFAR_PIXELS), // coarse label byte, then fine
        other => Err(DataError::BadClassCount(other)),
    }
}

/// Parses the CIFAR binary layout: per record the label byte(s) followed by
/// 3072 pixel bytes in planar R,G,B row-major order. For the 100-class
/// layout only the fine label is kept.
pub fn parse_cifar_binary(bytes: &[u8], class_count: usize) -> Result<Dataset, DataError> {
    let record = record_size(class_count)?;
    if bytes.len() % record != 0 {
        return Err(DataError::Truncated {
            len: bytes.len(),
            record,
            offset: bytes.len() / record * record,
        });
    }
    let count = bytes.len() / record;
    let label_offset = record - CIFAR_PIXELS - 1; // fine label sits last
    let mut labels = Vec::with_capacity(count);
    let mut values = Vec::with_capacity(count * CIFAR_PIXELS);
    for r in 0..count {
        let base = r * record;
        let label = bytes[base + label_offset];
        if label as usize >= class_count {
            return Err(DataError::LabelOutOfRange {
                label,
                class_count,
                offset: base + label_offset,
            });
        }
        labels.push(label as u32);
        for &p in &bytes[base + label_offset + 1..base + record] {
            values.push(p as f64 / 255.0);
        }
    }
    Ok(Dataset {
        images: Tensor::from_values(vec![count, 3, 32, 32], values),
        labels,
        class_count,
        name: format!("cifar{class_count}"),
    })
}

/// Writes a (3, 32, 32) dataset back into the CIFAR binary layout; the
/// inverse of [`parse_cifar_binary`] and the round-trip oracle for it. The
/// 100-class coarse byte is written as zero and ignored on parse.
pub fn serialize_cifar(dataset: &Dataset) -> Result<Vec<u8>, DataError> {
    if dataset.shape() != (3, 32, 32) {
        return Err(DataError::NotCifarShaped {
            got: dataset.shape(),
        });
    }
    let record = record_size(dataset.class_count)?;
    let mut out = Vec::with_capacity(dataset.len() * record);
    for (i, &label) in dataset.labels.iter().enumerate() {
        if dataset.class_count == 100 {
            out.push(0);
        }
        out.push(label as u8);
        let base = i * CIFAR_PIXELS;
        for &v in &dataset.images.values[base..base + CIFAR_PIXELS] {
            out.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(out)
}

/// Stratified random sample: per-class counts proportional to `fraction`
/// (rounded, at least 2), selection and final order deterministic in `seed`.
pub fn sample_subset(dataset: &Dataset, fraction: f64, rng_seed: u64) -> Result<Dataset, DataError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DataError::BadFraction(fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.class_count];
    for (i, &l) in dataset.labels.iter().enumerate() {
        by_class[l as usize].push(i);
    }
    let mut picked = Vec::new();
    for (class, indices) in by_class.iter_mut().enumerate() {
        if indices.len() < 2 {
            return Err(DataError::ClassTooSmall {
                class: class as u32,
                count: indices.len(),
            });
        }
        let target = ((fraction * indices.len() as f64).round() as usize)
            .clamp(2, indices.len());
        indices.shuffle(&mut rng);
        picked.extend_from_slice(&indices[..target]);
    }
    picked.shuffle(&mut rng);

    let (c, h, w) = dataset.shape();
    let item = c * h * w;
    let mut values = Vec::with_capacity(picked.len() * item);
    let mut labels = Vec::with_capacity(picked.len());
    for &i in &picked {
        values.extend_from_slice(&dataset.images.values[i * item..(i + 1) * item]);
        labels.push(dataset.labels[i]);
    }
    Ok(Dataset {
        images: Tensor::from_values(vec![picked.len(), c, h, w], values),
        labels,
        class_count: dataset.class_count,
        name: dataset.name.clone(),
    })
}

/// Pad-crop-flip augmentation plus per-channel normalisation. Evaluation
/// applies the normalisation only.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationPolicy {
    pub pad_pixels: usize,
    /// Output size, equal to the input size (crop restores it after padding).
    pub crop_size: (usize, usize),
    pub horizontal_flip_probability: f64,
    pub channel_means: Vec<f64>,
    pub channel_stds: Vec<f64>,
}

impl AugmentationPolicy {
    /// Standard policy: pad 4, flip with probability 0.5, normalisation
    /// constants computed from the dataset.
    pub fn for_dataset(dataset: &Dataset, pad_pixels: usize, flip_probability: f64) -> Self {
        let (_, h, w) = dataset.shape();
        let (means, stds) = dataset.channel_stats();
        Self {
            pad_pixels,
            crop_size: (h, w),
            horizontal_flip_probability: flip_probability,
            channel_means: means,
            channel_stds: stds,
        }
    }

    fn channels(&self) -> usize {
        self.channel_means.len()
    }

    fn normalize_image(&self, image: &mut [f64]) {
        let (h, w) = self.crop_size;
        let spatial = h * w;
        for c in 0..self.channels() {
            let (mu, sd) = (self.channel_means[c], self.channel_stds[c]);
            for v in &mut image[c * spatial..(c + 1) * spatial] {
                *v = (*v - mu) / sd;
            }
        }
    }

    fn augment_image(&self, image: &mut [f64], rng: &mut ChaCha8Rng) {
        let (h, w) = self.crop_size;
        let (dy, dx) = crop_offsets(self.pad_pixels, rng);
        if self.pad_pixels > 0 {
            pad_crop_image(image, self.channels(), h, w, self.pad_pixels, dy, dx);
        }
        if rng.gen_bool(self.horizontal_flip_probability) {
            flip_image(image, self.channels(), h, w);
        }
        self.normalize_image(image);
    }
}

/// Uniform crop offsets over {0..2*pad} squared; drawn dy first, then dx.
pub fn crop_offsets(pad: usize, rng: &mut ChaCha8Rng) -> (usize, usize) {
    let dy = rng.gen_range(0..=2 * pad);
    let dx = rng.gen_range(0..=2 * pad);
    (dy, dx)
}

/// Zero-pads by `pad` on each side then crops back to (h, w) at (dy, dx).
fn pad_crop_image(
    image: &mut [f64],
    channels: usize,
    h: usize,
    w: usize,
    pad: usize,
    dy: usize,
    dx: usize,
) {
    let spatial = h * w;
    let mut src = vec![0.0; spatial];
    for c in 0..channels {
        let plane = &mut image[c * spatial..(c + 1) * spatial];
        src.copy_from_slice(plane);
        for y in 0..h {
            // padded-image row this output row reads from
            let py = y as isize + dy as isize - pad as isize;
            for x in 0..w {
                let px = x as isize + dx as isize - pad as isize;
                plane[y * w + x] = if py >= 0 && py < h as isize && px >= 0 && px < w as isize {
                    src[py as usize * w + px as usize]
                } else {
                    0.0
                };
            }
        }
    }
}

/// Mirrors each row; applying it twice restores the image.
pub fn flip_image(image: &mut [f64], channels: usize, h: usize, w: usize) {
    for c in 0..channels {
        for y in 0..h {
            let row = &mut image[(c * h + y) * w..(c * h + y + 1) * w];
            row.reverse();
        }
    }
}

impl BatchTransform for AugmentationPolicy {
    fn apply_train(&self, batch: &mut [f64], n: usize, rng: &mut ChaCha8Rng) {
        let item = batch.len() / n;
        for i in 0..n {
            self.augment_image(&mut batch[i * item..(i + 1) * item], rng);
        }
    }

    fn apply_eval(&self, batch: &mut [f64], n: usize) {
        let item = batch.len() / n;
        for i in 0..n {
            self.normalize_image(&mut batch[i * item..(i + 1) * item]);
        }
    }
}

/// Class-conditional synthetic images: each class has its own base intensity,
/// spatial frequency and orientation, plus Gaussian noise scaled by
/// `difficulty`. Difficulty 0 is linearly separable by image mean.
pub fn generate_synthetic(
    class_count: usize,
    per_class: usize,
    image_size: usize,
    difficulty: f64,
    rng_seed: u64,
) -> Dataset {
    let channels = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut normal = BoxMuller::default();
    let count = class_count * per_class;
    let spatial = image_size * image_size;
    let mut values = Vec::with_capacity(count * channels * spatial);
    let mut labels = Vec::with_capacity(count);

    for class in 0..class_count {
        let base = 0.2 + 0.6 * class as f64 / (class_count.max(2) - 1) as f64;
        let freq = 1.0 + (class % 4) as f64;
        let theta = std::f64::consts::PI * class as f64 / class_count as f64;
        let (ct, st) = (theta.cos(), theta.sin());
        for _ in 0..per_class {
            labels.push(class as u32);
            let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            for c in 0..channels {
                let channel_phase = c as f64 * std::f64::consts::TAU / 3.0;
                for y in 0..image_size {
                    for x in 0..image_size {
                        let t = (x as f64 * ct + y as f64 * st) / image_size as f64;
                        let wave =
                            (std::f64::consts::TAU * freq * t + phase + channel_phase).sin();
                        let noise = difficulty * 0.1 * normal.sample(&mut rng);
                        let v = (base + 0.15 * wave + noise).clamp(0.0, 1.0);
                        values.push((v * 255.0).round() / 255.0);
                    }
                }
            }
        }
    }
    Dataset {
        images: Tensor::from_values(vec![count, channels, image_size, image_size], values),
        labels,
        class_count,
        name: synthetic_ref(class_count, per_class, image_size, difficulty, rng_seed),
    }
}

/// Canonical reference string for a synthetic dataset, resolvable by
/// [`load_dataset_ref`] on any worker without shipping pixels.
pub fn synthetic_ref(
    class_count: usize,
    per_class: usize,
    image_size: usize,
    difficulty: f64,
    seed: u64,
) -> String {
    format!(
        "synthetic:classes={class_count},per_class={per_class},size={image_size},difficulty={difficulty},seed={seed}"
    )
}

/// Resolves a dataset reference:
///
/// - `synthetic:classes=C,per_class=N,size=S,difficulty=D,seed=R` regenerates
///   the set locally;
/// - `cifar10:<file>[+<file>...]`, `cifar100:<file>[+...]` and
///   `svhn:<file>[+...]` read binary files relative to `data_root` (SVHN uses
///   the 10-class planar layout).
pub fn load_dataset_ref(reference: &str, data_root: &Path) -> Result<Dataset, DataError> {
    let bad = |reason: &str| DataError::BadReference {
        reference: reference.to_string(),
        reason: reason.to_string(),
    };
    let (kind, rest) = reference.split_once(':').ok_or_else(|| {
        bad("expected `<kind>:<spec>` with kind one of synthetic, cifar10, cifar100, svhn")
    })?;
    match kind {
        "synthetic" => {
            let mut classes = None;
            let mut per_class = None;
            let mut size = None;
            let mut difficulty = None;
            let mut seed = None;
            for field in rest.split(',') {
                let (key, value) = field
                    .split_once('=')
                    .ok_or_else(|| bad("expected key=value fields"))?;
                match key.trim() {
                    "classes" => classes = value.trim().parse::<usize>().ok(),
                    "per_class" => per_class = value.trim().parse::<usize>().ok(),
                    "size" => size = value.trim().parse::<usize>().ok(),
                    "difficulty" => difficulty = value.trim().parse::<f64>().ok(),
                    "seed" => seed = value.trim().parse::<u64>().ok(),
                    other => return Err(bad(&format!("unknown field `{other}`"))),
                }
            }
            match (classes, per_class, size, difficulty, seed) {
                (Some(c), Some(n), Some(s), Some(d), Some(r)) => {
                    Ok(generate_synthetic(c, n, s, d, r))
                }
                _ => Err(bad(
                    "missing or invalid field; need classes, per_class, size, difficulty, seed",
                )),
            }
        }
        "cifar10" | "svhn" => load_cifar_files(rest, data_root, 10, kind),
        "cifar100" => load_cifar_files(rest, data_root, 100, kind),
        _ => Err(bad("unknown dataset kind")),
    }
}

fn load_cifar_files(
    spec: &str,
    data_root: &Path,
    class_count: usize,
    name: &str,
) -> Result<Dataset, DataError> {
    let mut combined: Option<Dataset> = None;
    for part in spec.split('+') {
        let path = data_root.join(part);
        let bytes = fs::read(&path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut d = parse_cifar_binary(&bytes, class_count)?;
        combined = Some(match combined.take() {
            None => d,
            Some(mut acc) => {
                acc.images.values.append(&mut d.images.values);
                acc.images.shape[0] += d.images.shape[0];
                acc.labels.append(&mut d.labels);
                acc
            }
        });
    }
    let mut d = combined.ok_or_else(|| DataError::BadReference {
        reference: spec.to_string(),
        reason: "empty file list".to_string(),
    })?;
    d.name = name.to_string();
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cifar(count: usize, class_count: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..count * CIFAR_PIXELS)
            .map(|_| rng.gen_range(0u32..=255) as f64 / 255.0)
            .collect();
        let labels: Vec<u32> = (0..count)
            .map(|_| rng.gen_range(0..class_count as u32))
            .collect();
        Dataset {
            images: Tensor::from_values(vec![count, 3, 32, 32], values),
            labels,
            class_count,
            name: "fixture".into(),
        }
    }

    #[test]
    fn parse_single_zero_record() {
        let d = parse_cifar_binary(&vec![0u8; 3073], 10).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.labels, vec![0]);
        assert!(d.images.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        for &classes in &[10usize, 100] {
            let d = tiny_cifar(5, classes, 99);
            let bytes = serialize_cifar(&d).unwrap();
            let back = parse_cifar_binary(&bytes, classes).unwrap();
            assert_eq!(back.images, d.images);
            assert_eq!(back.labels, d.labels);
        }
    }

    #[test]
    fn truncated_stream_reports_offset() {
        let err = parse_cifar_binary(&vec![0u8; 3072], 10).unwrap_err();
        match err {
            DataError::Truncated { offset, .. } => assert_eq!(offset, 0),
            other => panic!("unexpected error {other:?}"),
        }
        let err = parse_cifar_binary(&vec![0u8; 3073 + 10], 10).unwrap_err();
        match err {
            DataError::Truncated { offset, .. } => assert_eq!(offset, 3073),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn out_of_range_label_reports_offset() {
        let mut bytes = vec![0u8; 2 * 3073];
        bytes[3073] = 10; // second record's label
        let err = parse_cifar_binary(&bytes, 10).unwrap_err();
        match err {
            DataError::LabelOutOfRange { label, offset, .. } => {
                assert_eq!(label, 10);
                assert_eq!(offset, 3073);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn cifar100_keeps_fine_label() {
        let mut bytes = vec![0u8; 3074];
        bytes[0] = 7; // coarse, discarded
        bytes[1] = 42; // fine
        let d = parse_cifar_binary(&bytes, 100).unwrap();
        assert_eq!(d.labels, vec![42]);
    }

    #[test]
    fn subset_is_exactly_stratified() {
        let d = generate_synthetic(10, 100, 4, 0.0, 5);
        let s = sample_subset(&d, 0.1, 7).unwrap();
        assert_eq!(s.len(), 100);
        assert!(s.per_class_counts().iter().all(|&c| c == 10));
    }

    #[test]
    fn subset_full_fraction_is_a_permutation() {
        let d = generate_synthetic(3, 5, 4, 0.5, 2);
        let s = sample_subset(&d, 1.0, 3).unwrap();
        assert_eq!(s.len(), d.len());
        assert_eq!(s.per_class_counts(), d.per_class_counts());
        assert_ne!(s.labels, d.labels); // order permuted
    }

    #[test]
    fn subset_is_deterministic_and_errors_on_tiny_class() {
        let d = generate_synthetic(4, 20, 4, 1.0, 11);
        let a = sample_subset(&d, 0.25, 13).unwrap();
        let b = sample_subset(&d, 0.25, 13).unwrap();
        assert_eq!(a, b);

        // class 2 gets a single example
        let mut labels = Vec::new();
        for class in 0..4u32 {
            let n = if class == 2 { 1 } else { 3 };
            labels.extend(std::iter::repeat(class).take(n));
        }
        let count = labels.len();
        let values = d.images.values[..count * 48].to_vec();
        let broken = Dataset {
            images: Tensor::from_values(vec![count, 3, 4, 4], values),
            labels,
            class_count: 4,
            name: "broken".into(),
        };
        match sample_subset(&broken, 0.5, 1).unwrap_err() {
            DataError::ClassTooSmall { class, count } => {
                assert_eq!(class, 2);
                assert_eq!(count, 1);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn flip_is_an_involution() {
        let mut image: Vec<f64> = (0..3 * 4 * 6).map(|i| i as f64).collect();
        let original = image.clone();
        flip_image(&mut image, 3, 4, 6);
        assert_ne!(image, original);
        flip_image(&mut image, 3, 4, 6);
        assert_eq!(image, original);
    }

    #[test]
    fn zero_pad_zero_flip_is_normalisation_only() {
        let d = generate_synthetic(2, 4, 6, 0.5, 8);
        let policy = AugmentationPolicy::for_dataset(&d, 0, 0.0);
        let item = 3 * 36;
        let mut batch = d.images.values[..2 * item].to_vec();
        let reference: Vec<f64> = {
            let mut b = d.images.values[..2 * item].to_vec();
            policy.apply_eval(&mut b, 2);
            b
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        policy.apply_train(&mut batch, 2, &mut rng);
        assert_eq!(batch, reference);
    }

    #[test]
    fn crop_offsets_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let draws = 10_000usize;
        let mut hist = vec![0usize; 81];
        for _ in 0..draws {
            let (dy, dx) = crop_offsets(4, &mut rng);
            assert!(dy <= 8 && dx <= 8);
            hist[dy * 9 + dx] += 1;
        }
        let p = 1.0 / 81.0;
        let expected = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (cell, &count) in hist.iter().enumerate() {
            assert!(
                (count as f64 - expected).abs() <= 3.0 * sigma,
                "cell {cell}: {count} vs {expected:.1} +- {:.1}",
                3.0 * sigma
            );
        }
    }

    #[test]
    fn difficulty_zero_two_classes_separable_by_mean() {
        let d = generate_synthetic(2, 50, 8, 0.0, 17);
        let item = 3 * 64;
        let means: Vec<f64> = (0..d.len())
            .map(|i| d.images.values[i * item..(i + 1) * item].iter().sum::<f64>() / item as f64)
            .collect();
        // class bases are 0.2 and 0.8; threshold at the midpoint
        let correct = means
            .iter()
            .zip(&d.labels)
            .filter(|&(&m, &l)| (m > 0.5) == (l == 1))
            .count();
        assert_eq!(correct, d.len());
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = generate_synthetic(3, 10, 8, 1.0, 123);
        let b = generate_synthetic(3, 10, 8, 1.0, 123);
        assert_eq!(a, b);
    }

    #[test]
    fn dataset_ref_roundtrip_for_synthetic() {
        let d = generate_synthetic(4, 6, 8, 0.5, 77);
        let loaded = load_dataset_ref(&d.name, Path::new(".")).unwrap();
        assert_eq!(loaded, d);
        let reference = synthetic_ref(4, 6, 8, 0.5, 77);
        assert_eq!(reference, d.name);
    }

    #[test]
    fn dataset_ref_rejects_garbage() {
        assert!(load_dataset_ref("nonsense", Path::new(".")).is_err());
        assert!(load_dataset_ref("synthetic:classes=2", Path::new(".")).is_err());
        assert!(load_dataset_ref("cifar10:missing.bin", Path::new("/nonexistent")).is_err());
    }
}

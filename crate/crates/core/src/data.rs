//! Labeled datasets, the two-circles generator, IDX decoding and seeded
//! batching.

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{input_err, shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::math;
use crate::rng::StreamRng;

/// Inputs (one example per row) with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
    name: String,
}

impl Dataset {
    pub fn new(inputs: Matrix, labels: Vec<usize>, num_classes: usize, name: &str) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(shape_err!(
                "{} input rows but {} labels",
                inputs.rows(),
                labels.len()
            ));
        }
        if num_classes == 0 {
            return Err(input_err!("num_classes must be positive"));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(input_err!("label {bad} out of range for {num_classes} classes"));
        }
        Ok(Self { inputs, labels, num_classes, name: name.to_owned() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: &str) -> Self {
        self.name = name.to_owned();
        self
    }

    /// Examples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            name: self.name.clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Smallest and largest input entry.
    pub fn input_range(&self) -> (f64, f64) {
        self.inputs
            .as_slice()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Disjoint train/test split of a seeded permutation; the first
    /// `train_len` permuted examples form the training part.
    pub fn split(&self, train_len: usize, rng: &mut StreamRng) -> Result<(Dataset, Dataset)> {
        if train_len > self.len() {
            return Err(input_err!("cannot take {train_len} training examples from {}", self.len()));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        let (a, b) = idx.split_at(train_len);
        Ok((self.select(a), self.select(b)))
    }
}

/// Two concentric circles: class 0 on the unit circle, class 1 on the
/// circle of radius `factor`, uniform angles, Gaussian coordinate noise of
/// standard deviation `noise_sd`.
///
/// Coordinates are mapped affinely into `[0, 1]²` by `x ↦ (x / R + 1) / 2`
/// where `R` is the largest absolute coordinate, so the circles stay
/// centred on `(0.5, 0.5)` and keep their shape.
pub fn two_circles(n: usize, noise_sd: f64, factor: f64, rng: &mut StreamRng) -> Result<Dataset> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(input_err!("two_circles needs a positive even sample count, got {n}"));
    }
    if !(noise_sd >= 0.0) || !noise_sd.is_finite() {
        return Err(input_err!("noise_sd must be finite and non-negative"));
    }
    if !(factor > 0.0 && factor < 1.0) {
        return Err(input_err!("factor must lie in (0, 1), got {factor}"));
    }
    let half = n / 2;
    let mut coords = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = usize::from(i >= half);
        let radius = if class == 0 { 1.0 } else { factor };
        let angle = 2.0 * core::f64::consts::PI * rng.uniform();
        let mut x = radius * math::cos(angle);
        let mut y = radius * math::sin(angle);
        if noise_sd > 0.0 {
            x += noise_sd * rng.normal();
            y += noise_sd * rng.normal();
        }
        coords.push(x);
        coords.push(y);
        labels.push(class);
    }
    let extent = coords.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for v in &mut coords {
        *v = (*v / extent + 1.0) / 2.0;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let inputs = Matrix::new(n, 2, coords)?;
    Ok(Dataset::new(inputs, labels, 2, "two_circles")?.select(&idx))
}

/// Stratified draw of `k` examples without replacement.
///
/// Each class receives `floor(k · n_c / n)` slots; leftover slots go to the
/// classes with the largest fractional remainders (lowest class first on
/// ties). The result is shuffled.
pub fn subset(d: &Dataset, k: usize, rng: &mut StreamRng) -> Result<Dataset> {
    let n = d.len();
    if k > n {
        return Err(input_err!("subset of {k} requested from {n} examples"));
    }
    if k == 0 {
        return Err(input_err!("subset size must be positive"));
    }
    let counts = d.class_counts();
    let mut quota: Vec<usize> = counts.iter().map(|&c| k * c / n).collect();
    let mut remainders: Vec<(usize, usize)> =
        counts.iter().enumerate().map(|(c, &cnt)| (k * cnt % n, c)).collect();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = k - quota.iter().sum::<usize>();
    for &(_, c) in &remainders {
        if left == 0 {
            break;
        }
        if quota[c] < counts[c] {
            quota[c] += 1;
            left -= 1;
        }
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); d.num_classes()];
    for (i, &y) in d.labels().iter().enumerate() {
        by_class[y].push(i);
    }
    let mut chosen = Vec::with_capacity(k);
    for (members, &q) in by_class.iter_mut().zip(&quota) {
        members.shuffle(rng);
        chosen.extend_from_slice(&members[..q]);
    }
    chosen.shuffle(rng);
    Ok(d.select(&chosen))
}

/// One epoch of shuffled index batches; the last batch may be short.
pub fn batches(len: usize, batch_size: usize, rng: &mut StreamRng) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format { offset, message: format!("truncated while reading {what}") })
}

/// Decoded IDX image file: `count` images of `rows × cols` bytes.
#[derive(Debug, Clone, Copy)]
pub struct IdxImages<'a> {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: &'a [u8],
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages<'_>> {
    let magic = be_u32(bytes, 0, "magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let count = be_u32(bytes, 4, "image count")? as usize;
    let rows = be_u32(bytes, 8, "row count")? as usize;
    let cols = be_u32(bytes, 12, "column count")? as usize;
    let need = count * rows * cols;
    let pixels = &bytes[16..];
    if pixels.len() < need {
        return Err(Error::Format {
            offset: 16 + pixels.len(),
            message: format!("truncated pixel data: need {need} bytes, found {}", pixels.len()),
        });
    }
    if pixels.len() > need {
        return Err(Error::Format {
            offset: 16 + need,
            message: format!("{} trailing bytes after pixel data", pixels.len() - need),
        });
    }
    Ok(IdxImages { count, rows, cols, pixels })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0, "magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let count = be_u32(bytes, 4, "label count")? as usize;
    let labels = &bytes[8..];
    if labels.len() != count {
        let offset = 8 + labels.len().min(count);
        return Err(Error::Format {
            offset,
            message: format!("header announces {count} labels, payload holds {}", labels.len()),
        });
    }
    Ok(labels)
}

/// Which of the two IDX inputs a [`IdxError`] refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdxPart {
    Images,
    Labels,
}

/// Decoding failure attributed to one of the two files.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxError {
    pub part: IdxPart,
    pub error: Error,
}

/// Builds a 10-class dataset from raw (decompressed) IDX bytes; pixels are
/// scaled by 1/255.
pub fn dataset_from_idx(images: &[u8], labels: &[u8], name: &str) -> Result<Dataset, IdxError> {
    let img = parse_idx_images(images).map_err(|error| IdxError { part: IdxPart::Images, error })?;
    let lab = parse_idx_labels(labels).map_err(|error| IdxError { part: IdxPart::Labels, error })?;
    if img.count != lab.len() {
        return Err(IdxError {
            part: IdxPart::Labels,
            error: Error::Format {
                offset: 4,
                message: format!("{} labels for {} images", lab.len(), img.count),
            },
        });
    }
    const CLASSES: usize = 10;
    if let Some(pos) = lab.iter().position(|&y| usize::from(y) >= CLASSES) {
        return Err(IdxError {
            part: IdxPart::Labels,
            error: Error::Format { offset: 8 + pos, message: format!("label {} out of range", lab[pos]) },
        });
    }
    let data = img.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let inputs = Matrix::new(img.count, img.rows * img.cols, data)
        .map_err(|error| IdxError { part: IdxPart::Images, error })?;
    let labels = lab.iter().map(|&y| usize::from(y)).collect();
    Dataset::new(inputs, labels, CLASSES, name).map_err(|error| IdxError { part: IdxPart::Labels, error })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        v.extend_from_slice(&count.to_be_bytes());
        v.extend_from_slice(&rows.to_be_bytes());
        v.extend_from_slice(&cols.to_be_bytes());
        v.extend_from_slice(pixels);
        v
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        v.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        v.extend_from_slice(labels);
        v
    }

    #[test]
    fn circles_without_noise_lie_on_rescaled_circles() {
        let d = two_circles(200, 0.0, 0.5, &mut StreamRng::new(1, "data")).unwrap();
        let radii: Vec<(usize, f64)> = d
            .inputs()
            .iter_rows()
            .zip(d.labels())
            .map(|(r, &y)| (y, libm::hypot(r[0] - 0.5, r[1] - 0.5)))
            .collect();
        let outer = radii.iter().find(|(y, _)| *y == 0).unwrap().1;
        for (y, r) in radii {
            let expect = if y == 0 { outer } else { 0.5 * outer };
            assert!((r - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn circles_are_balanced_and_normalized() {
        let d = two_circles(4, 0.1, 0.5, &mut StreamRng::new(2, "data")).unwrap();
        assert_eq!(d.class_counts(), vec![2, 2]);
        let d = two_circles(500, 0.2, 0.5, &mut StreamRng::new(3, "data")).unwrap();
        let (lo, hi) = d.input_range();
        assert!(lo >= 0.0 && hi <= 1.0);
    }

    #[test]
    fn circles_reject_odd_count() {
        assert!(matches!(two_circles(5, 0.0, 0.5, &mut StreamRng::new(0, "d")), Err(Error::Input(_))));
    }

    #[test]
    fn circles_reproducible() {
        let a = two_circles(50, 0.1, 0.4, &mut StreamRng::new(9, "data")).unwrap();
        let b = two_circles(50, 0.1, 0.4, &mut StreamRng::new(9, "data")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn idx_fixture_decodes_exact_pixels() {
        let images = idx_images(2, 2, 2, &[0, 255, 51, 102, 1, 2, 3, 254]);
        let labels = idx_labels(&[7, 3]);
        let d = dataset_from_idx(&images, &labels, "fixture").unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.labels(), &[7, 3]);
        assert_eq!(d.inputs().row(0), &[0.0, 1.0, 51.0 / 255.0, 102.0 / 255.0]);
        assert_eq!(d.inputs().row(1), &[1.0 / 255.0, 2.0 / 255.0, 3.0 / 255.0, 254.0 / 255.0]);
        assert_eq!(d.num_classes(), 10);
    }

    #[test]
    fn idx_errors_name_part_and_offset() {
        let images = idx_images(2, 2, 2, &[0; 8]);
        let mut bad = images.clone();
        bad[3] = 0x01;
        let e = dataset_from_idx(&bad, &idx_labels(&[0, 1]), "x").unwrap_err();
        assert_eq!(e.part, IdxPart::Images);
        assert!(matches!(e.error, Error::Format { offset: 0, .. }));

        let e = dataset_from_idx(&images[..20], &idx_labels(&[0, 1]), "x").unwrap_err();
        assert_eq!(e.part, IdxPart::Images);
        assert!(matches!(e.error, Error::Format { offset: 20, .. }));

        let e = dataset_from_idx(&images, &idx_labels(&[0, 1, 2]), "x").unwrap_err();
        assert_eq!(e.part, IdxPart::Labels);

        let mut short = idx_labels(&[0, 1]);
        short.pop();
        let e = dataset_from_idx(&images, &short, "x").unwrap_err();
        assert_eq!(e.part, IdxPart::Labels);
        assert!(matches!(e.error, Error::Format { offset: 9, .. }));
    }

    fn balanced(n_per: usize, classes: usize) -> Dataset {
        let n = n_per * classes;
        let inputs = Matrix::new(n, 1, (0..n).map(|i| i as f64 / n as f64).collect()).unwrap();
        Dataset::new(inputs, (0..n).map(|i| i % classes).collect(), classes, "b").unwrap()
    }

    #[test]
    fn full_subset_is_permutation() {
        let d = balanced(5, 3);
        let s = subset(&d, d.len(), &mut StreamRng::new(1, "subset")).unwrap();
        let mut a: Vec<u64> = d.inputs().as_slice().iter().map(|v| v.to_bits()).collect();
        let mut b: Vec<u64> = s.inputs().as_slice().iter().map(|v| v.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }

    #[test]
    fn stratified_subset_one_per_class() {
        let d = balanced(20, 10);
        let s = subset(&d, 10, &mut StreamRng::new(4, "subset")).unwrap();
        assert_eq!(s.class_counts(), vec![1; 10]);
        let again = subset(&d, 10, &mut StreamRng::new(4, "subset")).unwrap();
        assert_eq!(s, again);
        assert!(subset(&d, 201, &mut StreamRng::new(4, "subset")).is_err());
    }

    #[test]
    fn batches_cover_every_index_once() {
        let bs = batches(23, 5, &mut StreamRng::new(0, "batch"));
        assert_eq!(bs.len(), 5);
        assert_eq!(bs.last().unwrap().len(), 3);
        let mut all: Vec<usize> = bs.concat();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert_eq!(batches(23, 23, &mut StreamRng::new(0, "batch")).len(), 1);
        assert_eq!(bs, batches(23, 5, &mut StreamRng::new(0, "batch")));
    }

    #[test]
    fn split_is_disjoint_and_covering() {
        let d = balanced(10, 2);
        let (a, b) = d.split(12, &mut StreamRng::new(3, "split")).unwrap();
        assert_eq!(a.len() + b.len(), d.len());
        let mut all: Vec<u64> =
            a.inputs().as_slice().iter().chain(b.inputs().as_slice()).map(|v| v.to_bits()).collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), d.len());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn subset_class_counts_near_proportional(seed in any::<u64>(), k in 10usize..=150) {
                let d = balanced(30, 5);
                let s = subset(&d, k, &mut StreamRng::new(seed, "subset")).unwrap();
                prop_assert_eq!(s.len(), k);
                let ideal = k as f64 / 5.0;
                for c in s.class_counts() {
                    prop_assert!((c as f64 - ideal).abs() <= (0.2 * ideal).max(1.0));
                }
            }
        }
    }
}

//! Datasets, client partitioning and data-level label flipping.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const DIRICHLET_RETRIES: usize = 100;

/// Row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    feature_dim: usize,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, feature_dim: usize, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::invalid("dataset needs at least 2 classes"));
        }
        if feature_dim == 0 {
            return Err(Error::invalid("feature_dim must be positive"));
        }
        if features.len() != labels.len() * feature_dim {
            return Err(Error::invalid(format!(
                "{} feature values do not form {} rows of width {}",
                features.len(),
                labels.len(),
                feature_dim
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::invalid(format!("label {bad} outside [0, {num_classes})")));
        }
        if let Some(index) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            features,
            feature_dim,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Widens the label space, e.g. when a test split lacks the top class.
    pub fn with_num_classes(mut self, num_classes: usize) -> Result<Self> {
        if num_classes < self.num_classes {
            return Err(Error::invalid("cannot shrink the label space"));
        }
        self.num_classes = num_classes;
        Ok(self)
    }

    /// Sample indices grouped by class, ascending within each class.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            by_class[y].push(i);
        }
        by_class
    }
}

/// Gaussian blobs around axis-aligned unit class means.
pub fn generate_blobs(
    num_classes: usize,
    per_class: usize,
    feature_dim: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 || per_class < 1 || feature_dim < num_classes {
        return Err(Error::invalid(format!(
            "blobs need num_classes >= 2, per_class >= 1, feature_dim >= num_classes \
             (got {num_classes}, {per_class}, {feature_dim})"
        )));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::invalid(format!("noise_sigma must be finite and >= 0, got {noise_sigma}")));
    }
    let mut rng = rng::stream(seed, rng::tag::TRAIN_DATA);
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let n = num_classes * per_class;
    let mut features = Vec::with_capacity(n * feature_dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..num_classes {
        for _ in 0..per_class {
            for j in 0..feature_dim {
                let centre = if j == c { 1.0 } else { 0.0 };
                features.push(centre + noise.sample(&mut rng));
            }
            labels.push(c);
        }
    }
    Dataset::new(features, feature_dim, labels, num_classes)
}

struct IdxReader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> IdxReader<'a> {
    fn error(&self, offset: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            offset,
            msg: msg.into(),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let end = self.offset + 4;
        let chunk = self
            .bytes
            .get(self.offset..end)
            .ok_or_else(|| self.error(self.offset, format!("truncated file while reading {what}")))?;
        let v = u32::from_be_bytes(chunk.try_into().expect("4-byte slice"));
        self.offset = end;
        Ok(v)
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let at = self.offset;
        let found = self.u32("magic")?;
        if found != expected {
            return Err(self.error(at, format!("bad magic 0x{found:08x}, expected 0x{expected:08x}")));
        }
        Ok(())
    }

    fn payload(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.offset + len;
        let out = self.bytes.get(self.offset..end).ok_or_else(|| {
            self.error(
                self.bytes.len(),
                format!("truncated file: payload needs {len} bytes from offset {}", self.offset),
            )
        })?;
        self.offset = end;
        Ok(out)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an IDX image/label pair (MNIST layout). Pixels are scaled by 1/255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let image_bytes = read_file(images_path)?;
    let mut images = IdxReader {
        path: images_path,
        bytes: &image_bytes,
        offset: 0,
    };
    images.magic(IDX_IMAGES_MAGIC)?;
    let count = images.u32("image count")? as usize;
    let rows = images.u32("row count")? as usize;
    let cols = images.u32("column count")? as usize;
    let pixels = images.payload(count * rows * cols)?;

    let label_bytes = read_file(labels_path)?;
    let mut labels = IdxReader {
        path: labels_path,
        bytes: &label_bytes,
        offset: 0,
    };
    labels.magic(IDX_LABELS_MAGIC)?;
    let count_at = labels.offset;
    let label_count = labels.u32("label count")? as usize;
    if label_count != count {
        return Err(labels.error(
            count_at,
            format!("count mismatch: {label_count} labels for {count} images"),
        ));
    }
    let raw_labels = labels.payload(label_count)?;

    let features = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels: Vec<usize> = raw_labels.iter().map(|&b| usize::from(b)).collect();
    let num_classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    Dataset::new(features, (rows * cols).max(1), labels, num_classes)
}

/// Writes an IDX image/label pair; the inverse of [`load_idx`] for byte pixels.
pub fn write_idx(images_path: &Path, labels_path: &Path, rows: u32, cols: u32, pixels: &[u8], labels: &[u8]) -> Result<()> {
    let count = labels.len() as u32;
    let mut img = Vec::with_capacity(16 + pixels.len());
    for word in [IDX_IMAGES_MAGIC, count, rows, cols] {
        img.extend_from_slice(&word.to_be_bytes());
    }
    img.extend_from_slice(pixels);
    fs::write(images_path, img).map_err(|e| Error::io(images_path, e))?;

    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&count.to_be_bytes());
    lab.extend_from_slice(labels);
    fs::write(labels_path, lab).map_err(|e| Error::io(labels_path, e))
}

/// Disjoint, covering, non-empty index shards, one per client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    shards: Vec<Vec<usize>>,
}

impl Partition {
    pub fn shards(&self) -> &[Vec<usize>] {
        &self.shards
    }

    pub fn into_shards(self) -> Vec<Vec<usize>> {
        self.shards
    }

    pub fn len(&self) -> usize {
        self.shards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shards.is_empty()
    }

    /// Checks the partition invariant against a dataset of `n` samples.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for (s, shard) in self.shards.iter().enumerate() {
            if shard.is_empty() {
                return Err(Error::invalid(format!("shard {s} is empty")));
            }
            for &i in shard {
                match seen.get_mut(i) {
                    None => return Err(Error::invalid(format!("index {i} out of range in shard {s}"))),
                    Some(true) => return Err(Error::invalid(format!("index {i} assigned twice"))),
                    Some(slot) => *slot = true,
                }
            }
        }
        match seen.iter().position(|&hit| !hit) {
            Some(i) => Err(Error::invalid(format!("index {i} not assigned"))),
            None => Ok(()),
        }
    }

    fn sorted(mut shards: Vec<Vec<usize>>) -> Self {
        for shard in &mut shards {
            shard.sort_unstable();
        }
        Self { shards }
    }
}

/// Homogeneous split: each class is shuffled and dealt round-robin.
pub fn partition_iid(ds: &Dataset, k: usize, seed: u64) -> Result<Partition> {
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    let mut rng = rng::stream(seed, rng::tag::PARTITION);
    let mut shards = vec![Vec::new(); k];
    for (c, mut members) in ds.class_indices().into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            return Err(Error::invalid(format!(
                "class {c} has {} samples, fewer than k = {k}",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for (pos, i) in members.into_iter().enumerate() {
            shards[pos % k].push(i);
        }
    }
    Ok(Partition::sorted(shards))
}

/// Splits `total` into integer counts proportional to `shares` using
/// largest-remainder rounding (ties go to the lower index).
pub(crate) fn largest_remainder(shares: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = shares.iter().sum();
    let exact: Vec<f64> = shares.iter().map(|s| s / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn dirichlet_draw(rng: &mut StreamRng, gamma: &Gamma<f64>, k: usize) -> Vec<f64> {
    loop {
        let draw: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        if draw.iter().sum::<f64>() > 0.0 {
            return draw;
        }
    }
}

/// Non-IID split with per-class client proportions drawn from Dir(alpha).
pub fn partition_dirichlet(ds: &Dataset, k: usize, alpha: f64, seed: u64) -> Result<Partition> {
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("dirichlet alpha must be > 0, got {alpha}")));
    }
    if ds.len() < k {
        return Err(Error::invalid(format!("{} samples cannot fill {k} shards", ds.len())));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = rng::stream(seed, rng::tag::PARTITION);
    let classes = ds.class_indices();
    for _ in 0..DIRICHLET_RETRIES {
        let mut shards = vec![Vec::new(); k];
        for members in &classes {
            if members.is_empty() {
                continue;
            }
            let shares = dirichlet_draw(&mut rng, &gamma, k);
            let counts = largest_remainder(&shares, members.len());
            let mut members = members.clone();
            members.shuffle(&mut rng);
            let mut rest = members.as_slice();
            for (shard, count) in shards.iter_mut().zip(counts) {
                let (take, tail) = rest.split_at(count);
                shard.extend_from_slice(take);
                rest = tail;
            }
        }
        if shards.iter().all(|s| !s.is_empty()) {
            return Ok(Partition::sorted(shards));
        }
    }
    Err(Error::invalid(format!(
        "dirichlet partition left a shard empty after {DIRICHLET_RETRIES} draws"
    )))
}

/// Label-flip poisoning: y -> (C - 1) - y.
pub fn flip_labels(ds: &Dataset) -> Dataset {
    let c = ds.num_classes;
    Dataset {
        labels: ds.labels.iter().map(|&y| c - 1 - y).collect(),
        ..ds.clone()
    }
}

/// Uniform draw of `count` indices from `shard`; without replacement when the
/// shard is large enough.
pub(crate) fn sample_batch(rng: &mut StreamRng, shard: &[usize], count: usize) -> Vec<usize> {
    if shard.len() >= count {
        rand::seq::index::sample(rng, shard.len(), count)
            .into_iter()
            .map(|i| shard[i])
            .collect()
    } else {
        (0..count).map(|_| shard[rng.random_range(0..shard.len())]).collect()
    }
}

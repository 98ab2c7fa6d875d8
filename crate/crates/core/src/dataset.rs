//! Labeled image collections, stratified splits and the synthetic desk dataset.

use std::fmt;
use std::str::FromStr;

use archnet_tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which space the pixels of a dataset live in.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Representation {
    Plain,
    /// Ciphertext; the string identifies the encryptor instance.
    Encrypted(String),
}

impl Representation {
    pub fn tag(&self) -> &str {
        match self {
            Representation::Plain => "plain",
            Representation::Encrypted(t) => t,
        }
    }

    pub fn from_tag(tag: &str) -> Self {
        if tag == "plain" {
            Representation::Plain
        } else {
            Representation::Encrypted(tag.to_string())
        }
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// `N x C x H x W` images with one label per image.
///
/// When `split` is set the first `split` samples form the training part and
/// the rest the validation part.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    images: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    split: Option<usize>,
    representation: Representation,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        images: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
        representation: Representation,
    ) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::Dataset(format!("images must be N x C x H x W, got {:?}", images.shape())));
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::Dataset(format!(
                "{} images but {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                index,
                label,
                num_classes,
            });
        }
        if representation == Representation::Plain {
            if let Some(i) = images.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Dataset(format!(
                    "plain pixel {} at flat index {i} outside [0, 1]",
                    images.data()[i]
                )));
            }
        }
        Ok(Dataset {
            name: name.into(),
            images,
            labels,
            num_classes,
            split: None,
            representation,
        })
    }

    pub fn empty(name: impl Into<String>, sample_shape: [usize; 3], num_classes: usize) -> Self {
        let [c, h, w] = sample_shape;
        Dataset {
            name: name.into(),
            images: Tensor::zeros(vec![0, c, h, w]),
            labels: Vec::new(),
            num_classes,
            split: None,
            representation: Representation::Plain,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn representation(&self) -> &Representation {
        &self.representation
    }

    pub fn split_point(&self) -> Option<usize> {
        self.split
    }

    /// `[C, H, W]` of one sample.
    pub fn sample_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn sample(&self, i: usize) -> Result<Tensor> {
        let [c, h, w] = self.sample_shape();
        Ok(self.images.slice_outer(i..i + 1)?.reshape(vec![c, h, w])?)
    }

    /// Same labels, split and name with new pixel content.
    pub fn with_images(&self, images: Tensor, representation: Representation) -> Result<Self> {
        let mut out = Dataset::new(self.name.clone(), images, self.labels.clone(), self.num_classes, representation)?;
        out.split = self.split;
        Ok(out)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let images = self.images.select_outer(indices)?;
        Ok(Dataset {
            name: self.name.clone(),
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            split: None,
            representation: self.representation.clone(),
        })
    }

    fn split_parts(&self) -> Result<(usize, usize)> {
        let s = self
            .split
            .ok_or_else(|| Error::Dataset(format!("dataset {} has no train/val split", self.name)))?;
        Ok((s, self.len()))
    }

    pub fn train(&self) -> Result<Self> {
        let (s, _) = self.split_parts()?;
        self.subset(&(0..s).collect::<Vec<_>>())
    }

    pub fn val(&self) -> Result<Self> {
        let (s, n) = self.split_parts()?;
        self.subset(&(s..n).collect::<Vec<_>>())
    }

    /// Reorders into `train ++ val` and records the boundary.
    pub fn apply_split(&self, plan: &SplitPlan) -> Result<Self> {
        if plan.train.len() + plan.val.len() != self.len() {
            return Err(Error::Dataset(format!(
                "split plan covers {} samples, dataset has {}",
                plan.train.len() + plan.val.len(),
                self.len()
            )));
        }
        let order: Vec<usize> = plan.train.iter().chain(&plan.val).copied().collect();
        let mut out = self.subset(&order)?;
        out.split = Some(plan.train.len());
        Ok(out)
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// `train:val` ratio, e.g. `6:1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRatio {
    pub train: usize,
    pub val: usize,
}

impl SplitRatio {
    pub fn new(train: usize, val: usize) -> Result<Self> {
        if train == 0 || val == 0 {
            return Err(Error::InvalidArgument(format!("split ratio {train}:{val} needs both parts >= 1")));
        }
        Ok(SplitRatio { train, val })
    }
}

impl FromStr for SplitRatio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("split ratio {s:?} is not of the form a:b"));
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        SplitRatio::new(a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?)
    }
}

impl fmt::Display for SplitRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.train, self.val)
    }
}

/// Index sets of a split; apply the same plan to a dataset and its ciphertext.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Stratified split plan. The validation total is `round(N * val / (train + val))`,
/// apportioned to classes by largest remainder (ties go to the lower class id).
pub fn split_plan(labels: &[usize], num_classes: usize, ratio: SplitRatio, seed: u64) -> Result<SplitPlan> {
    let n = labels.len();
    let denom = ratio.train + ratio.val;
    let val_total = (n * ratio.val + denom / 2) / denom;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class
            .get_mut(l)
            .ok_or(Error::LabelOutOfRange {
                index: i,
                label: l,
                num_classes,
            })?
            .push(i);
    }
    if val_total == 0 || val_total == n {
        let (class, count) = by_class
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_empty())
            .map(|(c, v)| (c, v.len()))
            .min_by_key(|&(_, k)| k)
            .unwrap_or((0, 0));
        return Err(Error::Dataset(format!(
            "{n} samples cannot be split {ratio} with at least one sample on each side (smallest class {class} has {count})"
        )));
    }

    // Largest-remainder apportionment in integer arithmetic.
    let mut quota: Vec<usize> = by_class.iter().map(|v| v.len() * ratio.val / denom).collect();
    let assigned: usize = quota.iter().sum();
    let mut order: Vec<usize> = (0..num_classes).collect();
    order.sort_by_key(|&c| std::cmp::Reverse((by_class[c].len() * ratio.val) % denom));
    for &c in order.iter().take(val_total.saturating_sub(assigned)) {
        quota[c] += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(n - val_total);
    let mut val = Vec::with_capacity(val_total);
    for (members, q) in by_class.iter_mut().zip(&quota) {
        members.shuffle(&mut rng);
        val.extend_from_slice(&members[..*q]);
        train.extend_from_slice(&members[*q..]);
    }
    train.shuffle(&mut rng);
    val.shuffle(&mut rng);
    Ok(SplitPlan { train, val })
}

/// Stratified, seeded split of `data`.
pub fn split(data: &Dataset, ratio: SplitRatio, seed: u64) -> Result<Dataset> {
    let plan = split_plan(data.labels(), data.num_classes(), ratio, seed)?;
    data.apply_split(&plan)
}

/// Shapes drawn by [`synth_shapes`], in label order.
pub const SYNTH_CLASSES: [&str; 4] = ["horizontal bar", "vertical bar", "diagonal", "centered blob"];

/// Balanced desk-scale stand-in for MNIST: 4 classes of `size x size` single-channel images
/// with per-sample position jitter and Gaussian pixel noise (sigma 0.05).
pub fn synth_shapes(n: usize, size: usize, seed: u64) -> Result<Dataset> {
    let classes = SYNTH_CLASSES.len();
    if n < classes {
        return Err(Error::InvalidArgument(format!("synth_shapes needs n >= {classes}, got {n}")));
    }
    if size < 4 {
        return Err(Error::InvalidArgument(format!("synth_shapes needs size >= 4, got {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.05).expect("valid sigma");
    let plane = size * size;
    let mut data = vec![0.0; n * plane];
    let mut labels = Vec::with_capacity(n);
    for (i, img) in data.chunks_exact_mut(plane).enumerate() {
        let label = i % classes;
        labels.push(label);
        let intensity = rng.random_range(0.8..1.0);
        match label {
            0 => {
                let r = rng.random_range(1..size - 2);
                for x in 0..size {
                    img[r * size + x] = intensity;
                    img[(r + 1) * size + x] = intensity;
                }
            }
            1 => {
                let c = rng.random_range(1..size - 2);
                for y in 0..size {
                    img[y * size + c] = intensity;
                    img[y * size + c + 1] = intensity;
                }
            }
            2 => {
                let d = rng.random_range(-1i32..=1) as isize;
                for y in 0..size as isize {
                    for dx in 0..2 {
                        let x = y + d + dx;
                        if (0..size as isize).contains(&x) {
                            img[y as usize * size + x as usize] = intensity;
                        }
                    }
                }
            }
            _ => {
                let mid = (size as f64 - 1.0) / 2.0;
                let cy = mid + rng.random_range(-0.75..0.75);
                let cx = mid + rng.random_range(-0.75..0.75);
                let sigma: f64 = rng.random_range(1.1..1.6);
                for y in 0..size {
                    for x in 0..size {
                        let r2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                        img[y * size + x] = intensity * (-r2 / (2.0 * sigma * sigma)).exp();
                    }
                }
            }
        }
        for v in img.iter_mut() {
            *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    let images = Tensor::new(vec![n, 1, size, size], data)?;
    Dataset::new("synth", images, labels, classes, Representation::Plain)
}

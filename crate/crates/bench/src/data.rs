//! Synthetic labeled image sets.

use autodesign::nncore::{Dataset, LabeledSet, Tensor};
use autodesign::{rng, Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// How labels relate to pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// One random prototype image per class plus isotropic noise of scale
    /// `difficulty`.
    #[default]
    Prototypes,
    /// Two classes of zero-mean noise that differ only in scale; no linear
    /// function of the pixels separates them.
    Variance,
    /// Two classes given by the sign product of the leftmost and rightmost
    /// columns; only a receptive field spanning the full width separates them.
    DistantXor,
}

fn default_channels() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    #[serde(default)]
    pub task: Task,
    /// Training samples.
    pub n: usize,
    /// Validation samples; defaults to `n / 4` (at least one per class).
    #[serde(default)]
    pub n_val: Option<usize>,
    pub classes: usize,
    pub image_size: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    pub difficulty: f64,
    /// Fraction of training labels replaced by a different class; validation
    /// labels stay clean.
    #[serde(default)]
    pub label_noise: f64,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn n_val(&self) -> usize {
        self.n_val.unwrap_or((self.n / 4).max(self.classes))
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Input("a dataset needs at least 2 classes".into()));
        }
        if self.n < self.classes || self.n_val() < self.classes {
            return Err(Error::Input(format!(
                "need at least one sample per class (n = {}, n_val = {}, classes = {})",
                self.n,
                self.n_val(),
                self.classes
            )));
        }
        if self.image_size < 4 {
            return Err(Error::Input(format!("image_size must be >= 4, got {}", self.image_size)));
        }
        if self.channels == 0 {
            return Err(Error::Input("channels must be positive".into()));
        }
        if !(self.difficulty >= 0.0 && self.difficulty.is_finite()) {
            return Err(Error::Input(format!("difficulty must be >= 0, got {}", self.difficulty)));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return Err(Error::Input(format!("label_noise must be in [0, 1), got {}", self.label_noise)));
        }
        if self.task != Task::Prototypes && self.classes != 2 {
            return Err(Error::Input(format!("{:?} task has exactly 2 classes", self.task)));
        }
        Ok(())
    }

    pub fn row_len(&self) -> usize {
        self.channels * self.image_size * self.image_size
    }
}

fn normal<R: Rng>(r: &mut R) -> f64 {
    r.sample(StandardNormal)
}

/// Balanced labels (`i mod classes`) in shuffled order.
fn balanced_labels<R: Rng>(n: usize, classes: usize, r: &mut R) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(r);
    labels
}

fn sample_split<R: Rng>(spec: &DatasetSpec, protos: &[Vec<f64>], n: usize, r: &mut R) -> Result<LabeledSet> {
    let labels = balanced_labels(n, spec.classes, r);
    let (c, s) = (spec.channels, spec.image_size);
    let d = spec.row_len();
    let mut data = Vec::with_capacity(n * d);
    for &y in &labels {
        match spec.task {
            Task::Prototypes => {
                for p in &protos[y] {
                    data.push(p + spec.difficulty * normal(r));
                }
            }
            Task::Variance => {
                // scale ratio 3 at difficulty 0, shrinking toward 1
                let scale = if y == 0 { 1.0 } else { 1.0 + 2.0 / (1.0 + spec.difficulty) };
                for _ in 0..d {
                    data.push(scale * normal(r));
                }
            }
            Task::DistantXor => {
                let sa: f64 = if r.gen::<bool>() { 1.0 } else { -1.0 };
                let sb = if y == 1 { sa } else { -sa };
                let noise = 0.3 * (1.0 + spec.difficulty);
                for _ in 0..c {
                    for _ in 0..s {
                        for col in 0..s {
                            let base = if col == 0 {
                                sa
                            } else if col == s - 1 {
                                sb
                            } else {
                                0.0
                            };
                            data.push(base + noise * normal(r));
                        }
                    }
                }
            }
        }
    }
    LabeledSet::new(Tensor::new(vec![n, c, s, s], data)?, labels)
}

/// Deterministic train/validation split for `spec`.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut r = rng::stream(spec.seed, rng::STREAM_DATA);
    let protos: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| (0..spec.row_len()).map(|_| normal(&mut r)).collect())
        .collect();
    let mut train = sample_split(spec, &protos, spec.n, &mut r)?;
    if spec.label_noise > 0.0 {
        for y in &mut train.labels {
            if r.gen::<f64>() < spec.label_noise {
                *y = (*y + r.gen_range(1..spec.classes)) % spec.classes;
            }
        }
    }
    let val = sample_split(spec, &protos, spec.n_val(), &mut r)?;
    Dataset::new(train, val, spec.classes)
}

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Inputs `[n, C, H, W]` (or `[n, features]`) with one class label per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSet {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn new(inputs: Tensor, labels: Vec<usize>) -> Result<Self> {
        if inputs.batch() != labels.len() {
            return Err(Error::Input(format!(
                "{} input rows but {} labels",
                inputs.batch(),
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn batch(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        (
            self.inputs.select_rows(idx),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// Train/validation pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub train: LabeledSet,
    pub val: LabeledSet,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(train: LabeledSet, val: LabeledSet, num_classes: usize) -> Result<Self> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::Input("train and validation sets must be nonempty".into()));
        }
        if train.inputs.row_len() != val.inputs.row_len() {
            return Err(Error::Input("train and validation rows differ in size".into()));
        }
        if let Some(&y) = train.labels.iter().chain(&val.labels).find(|&&y| y >= num_classes) {
            return Err(Error::Input(format!("label {y} >= num_classes {num_classes}")));
        }
        Ok(Self {
            train,
            val,
            num_classes,
        })
    }
}

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Labelled samples stored contiguously, one row-major sample after another.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    sample_shape: Vec<usize>,
    features: Vec<f64>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        sample_shape: Vec<usize>,
        features: Vec<f64>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let width: usize = sample_shape.iter().product();
        if sample_shape.is_empty() || width == 0 {
            return Err(Error::Shape(format!("invalid sample shape {sample_shape:?}")));
        }
        if features.len() != width * labels.len() {
            return Err(Error::Shape(format!(
                "{} feature values for {} samples of shape {sample_shape:?}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("non-finite feature value".into()));
        }
        Ok(Self {
            sample_shape,
            features,
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

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let w = self.sample_len();
        &self.features[i * w..(i + 1) * w]
    }

    /// Widens the label space, e.g. to align a test split with its training set.
    pub fn with_num_classes(mut self, num_classes: usize) -> Result<Self> {
        if let Some(&label) = self.labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        self.num_classes = num_classes;
        Ok(self)
    }

    /// Stacks the selected samples into a `(len, sample_shape...)` tensor.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut data = Vec::with_capacity(indices.len() * self.sample_len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Shape(format!("sample index {i} out of {}", self.len())));
            }
            data.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.sample_shape);
        Ok((Tensor::new(shape, data)?, labels))
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.sample_len());
        for &i in indices {
            features.extend_from_slice(self.sample(i));
        }
        Dataset {
            sample_shape: self.sample_shape.clone(),
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// First `n` samples and the rest.
    pub fn split_at(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.len());
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        (self.subset(&head), self.subset(&tail))
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

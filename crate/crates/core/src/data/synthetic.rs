//! Seeded synthetic classification data.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// One isotropic Gaussian cluster per class around a random center.
    Blobs,
    /// Interleaved 2-D spiral arms, one per class.
    Spiral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub num_classes: usize,
    pub num_samples: usize,
    /// Feature dimension. Spirals are always 2-D.
    pub dim: usize,
    /// Standard deviation of the per-sample Gaussian noise.
    pub noise: f64,
    /// Standard deviation of the blob centers around the origin.
    pub separation: f64,
    /// Class proportions; uniform when absent.
    pub proportions: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            kind: SyntheticKind::Blobs,
            num_classes: 10,
            num_samples: 6000,
            dim: 16,
            noise: 1.0,
            separation: 1.0,
            proportions: None,
            seed: 0,
        }
    }
}

/// Splits `total` into integer counts proportional to `weights` by the
/// largest-remainder rule. Ties go to the lower index.
pub fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidSpec("synthetic data needs at least 2 classes".into()));
        }
        if self.num_samples < self.num_classes {
            return Err(Error::InvalidSpec(format!(
                "{} samples cannot cover {} classes",
                self.num_samples, self.num_classes
            )));
        }
        if self.dim == 0 || (self.kind == SyntheticKind::Spiral && self.dim != 2) {
            return Err(Error::InvalidSpec(format!(
                "dimension {} invalid for {:?}",
                self.dim, self.kind
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite())
            || !(self.separation > 0.0 && self.separation.is_finite())
        {
            return Err(Error::InvalidSpec("noise must be >= 0 and separation > 0".into()));
        }
        if let Some(p) = &self.proportions {
            if p.len() != self.num_classes
                || p.iter().any(|w| !(*w >= 0.0 && w.is_finite()))
                || p.iter().sum::<f64>() <= 0.0
            {
                return Err(Error::InvalidSpec(
                    "proportions must be one non-negative weight per class".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        match &self.proportions {
            Some(p) => apportion(self.num_samples, p),
            None => apportion(self.num_samples, &vec![1.0; self.num_classes]),
        }
    }
}

/// Generates a dataset whose class counts follow [`SyntheticSpec::class_counts`]
/// exactly, in shuffled order.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut center_rng = seed::rng(spec.seed, &[0]);
    let mut sample_rng = seed::rng(spec.seed, &[1]);

    let centers: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| {
            (0..spec.dim)
                .map(|_| spec.separation * center_rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();

    let mut labels: Vec<usize> = spec
        .class_counts()
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
        .collect();
    labels.shuffle(&mut sample_rng);

    let mut features = Vec::with_capacity(labels.len() * spec.dim);
    let classes = spec.num_classes as f64;
    for &label in &labels {
        match spec.kind {
            SyntheticKind::Blobs => {
                for &c in &centers[label] {
                    let n: f64 = sample_rng.sample(StandardNormal);
                    features.push(c + spec.noise * n);
                }
            }
            SyntheticKind::Spiral => {
                let t: f64 = sample_rng.random();
                let angle = label as f64 * std::f64::consts::TAU / classes
                    + 4.0 * t
                    + spec.noise * sample_rng.sample::<f64, _>(StandardNormal);
                let r = spec.separation * t;
                features.push(r * angle.cos());
                features.push(r * angle.sin());
            }
        }
    }
    Dataset::new(vec![spec.dim], features, labels, spec.num_classes)
}

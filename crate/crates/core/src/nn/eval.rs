use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::layer::log_sum_exp;
use crate::nn::model::LayeredModel;

const EVAL_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

/// Argmax accuracy (first maximum wins ties) and mean cross-entropy.
pub fn evaluate(model: &LayeredModel, data: &Dataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = model.num_classes();
    let mut correct = 0usize;
    let mut loss = 0.0;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (x, labels) = data.batch(chunk)?;
        let logits = model.logits(&x)?;
        for (row, &label) in logits.data().chunks(classes).zip(&labels) {
            if label >= classes {
                return Err(Error::LabelOutOfRange { label, num_classes: classes });
            }
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            if best == label {
                correct += 1;
            }
            loss += log_sum_exp(row) - row[label];
        }
    }
    let n = data.len() as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        loss: loss / n,
    })
}

//! Softmax and the cross-entropy training loss.

use super::tape::Var;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Row-wise softmax of a `B×K` tensor using the max-shift trick.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let k = logits.last_dim();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Mean negative log-likelihood of `labels` under softmax(`logits`).
/// Returns the scalar loss and the probabilities.
pub fn softmax_cross_entropy<'t>(logits: Var<'t>, labels: &[usize]) -> Result<(Var<'t>, Tensor)> {
    let lv = logits.value();
    let shape = lv.shape().to_vec();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("logits {shape:?} with {} labels", labels.len()),
        ));
    }
    let (batch, k) = (shape[0], shape[1]);
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    let mut loss = 0.0;
    for (row, &label) in lv.data().chunks(k).zip(labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
    }
    loss /= batch as f64;
    let probs = softmax_rows(&lv);
    let p = probs.clone();
    let labels = labels.to_vec();
    let var = logits.tape().op(
        Tensor::scalar(loss),
        &[logits],
        Box::new(move |g, _| {
            let scale = g.data()[0] / batch as f64;
            let mut d = p.clone();
            for (row, &label) in d.data_mut().chunks_mut(k).zip(&labels) {
                row[label] -= 1.0;
                row.iter_mut().for_each(|v| *v *= scale);
            }
            vec![Some(d)]
        }),
    );
    Ok((var, probs))
}

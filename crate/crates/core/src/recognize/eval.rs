//! Evaluation: top-k accuracy with deterministic tie-breaking and
//! unweighted mean class accuracy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::SkeletonSequence;

use super::pipeline::{classify_sample, prepare_sample, PipelineModels, SampleData};
use super::train::val_stream_seed;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub top1: f64,
    pub top5: f64,
    pub mean_class_acc: f64,
    /// Per-class top-1 accuracy; null for classes absent from the data.
    pub per_class: Vec<Option<f64>>,
}

/// Rank of the true label when classes are sorted by descending probability,
/// ties broken by ascending class index. Rank 0 means a top-1 hit.
pub fn rank_of_label(probs: &[f64], label: usize) -> usize {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
    order.iter().position(|&c| c == label).expect("label in range")
}

/// Scores already-prepared samples under the current parameters.
pub fn evaluate_samples(models: &PipelineModels, samples: &[SampleData]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("empty evaluation set".into()));
    }
    let num_classes = models.gcn.num_classes;
    let k = 5.min(num_classes);
    let mut top1_hits = 0usize;
    let mut topk_hits = 0usize;
    let mut class_total = vec![0usize; num_classes];
    let mut class_hits = vec![0usize; num_classes];
    for data in samples {
        let label = data
            .label
            .ok_or_else(|| Error::InvalidInput("evaluation sequence without a label".into()))?;
        if label >= num_classes {
            return Err(Error::InvalidInput(format!(
                "label {label} out of range for {num_classes} classes"
            )));
        }
        let probs = classify_sample(models, data)?;
        let rank = rank_of_label(&probs, label);
        class_total[label] += 1;
        if rank == 0 {
            top1_hits += 1;
            class_hits[label] += 1;
        }
        if rank < k {
            topk_hits += 1;
        }
    }
    let n = samples.len() as f64;
    let per_class: Vec<Option<f64>> = class_total
        .iter()
        .zip(&class_hits)
        .map(|(&total, &hits)| (total > 0).then(|| hits as f64 / total as f64))
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    Ok(EvalReport {
        top1: top1_hits as f64 / n,
        top5: topk_hits as f64 / n,
        mean_class_acc: present.iter().sum::<f64>() / present.len() as f64,
        per_class,
    })
}

/// Full-pipeline evaluation of labeled sequences (corrupted or clean): each
/// input is restored if it has holes, decomposed with a fixed per-index
/// stream, and classified.
pub fn evaluate(
    models: &PipelineModels,
    data: &[SkeletonSequence],
    seed: u64,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::InvalidInput("empty evaluation set".into()));
    }
    let topo = super::pipeline::pipeline_topology();
    let mut samples = Vec::with_capacity(data.len());
    for (i, seq) in data.iter().enumerate() {
        samples.push(prepare_sample(models, &topo, seq, val_stream_seed(seed, i))?);
    }
    evaluate_samples(models, &samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_breaks_ties_by_class_index() {
        // Classes 0 and 2 tie; class 0 wins the tie.
        let probs = [0.4, 0.2, 0.4];
        assert_eq!(rank_of_label(&probs, 0), 0);
        assert_eq!(rank_of_label(&probs, 2), 1);
        assert_eq!(rank_of_label(&probs, 1), 2);
    }

    #[test]
    fn rank_of_argmax_is_zero() {
        let probs = [0.1, 0.7, 0.2];
        assert_eq!(rank_of_label(&probs, 1), 0);
    }

    // Accuracy bookkeeping tested through a hand-rolled tally rather than the
    // full pipeline: fabricate per-sample outcomes by calling the arithmetic
    // the way evaluate_samples does.
    #[test]
    fn imbalanced_classes_split_top1_and_mean() {
        // 2 classes, sizes (9, 1), everything predicted class 0:
        // top1 = 0.9, mean class accuracy = (1.0 + 0.0)/2 = 0.5.
        let labels: Vec<usize> = std::iter::repeat_n(0, 9).chain(std::iter::once(1)).collect();
        let mut class_total = [0usize; 2];
        let mut class_hits = [0usize; 2];
        let mut top1 = 0usize;
        for &label in &labels {
            let probs = [0.8, 0.2]; // always predicts class 0
            let rank = rank_of_label(&probs, label);
            class_total[label] += 1;
            if rank == 0 {
                top1 += 1;
                class_hits[label] += 1;
            }
        }
        let top1 = top1 as f64 / labels.len() as f64;
        let mean = (class_hits[0] as f64 / class_total[0] as f64
            + class_hits[1] as f64 / class_total[1] as f64)
            / 2.0;
        assert_eq!(top1, 0.9);
        assert_eq!(mean, 0.5);
    }
}

//! GCN classification over fused position and acceleration channels, the
//! stage-2 training loop, and the evaluation metrics.

mod eval;
mod gcn;
mod pipeline;
mod train;

pub use eval::{evaluate, evaluate_samples, rank_of_label, EvalReport};
pub use gcn::{classify, classify_graph, normalized_adjacency, GcnBlock, GcnModel, GcnVars};
pub use pipeline::{
    center_positions,
    classify_sample, prepare_sample, sample_graph, Dataset, PipelineModels, PromptSet, SampleData,
    SampleGraph,
};
pub use train::{train, EpochStats, TrainConfig, TrainHistory};

use crate::error::{Error, Result};

/// Classification loss plus the weighted acceleration consistency term:
/// -log p[label] + lambda * acc_loss.
pub fn total_loss(probs: &[f64], label: usize, acc_loss: f64, lambda: f64) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::InvalidInput(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numeric("non-finite class probabilities".into()));
    }
    if lambda < 0.0 {
        return Err(Error::invariant("lambda", format!("{lambda} < 0")));
    }
    Ok(-probs[label].ln() + lambda * acc_loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_zero_acc_loss_is_zero() {
        let probs = [0.0, 1.0, 0.0];
        assert_eq!(total_loss(&probs, 1, 0.0, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn uniform_four_class_is_ln_four() {
        let probs = [0.25; 4];
        let l = total_loss(&probs, 2, 0.0, 0.0).unwrap();
        assert!((l - 4.0_f64.ln()).abs() < 1e-9);
        assert!((l - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn weighted_acceleration_term_adds_closed_form() {
        let probs = [0.25; 4];
        let l = total_loss(&probs, 0, 0.5, 0.1).unwrap();
        assert!((l - 1.436294).abs() < 1e-6);
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        assert!(total_loss(&[0.5, 0.5], 2, 0.0, 0.0).is_err());
    }
}

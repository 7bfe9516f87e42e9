//! Run configuration: every training and inference hyperparameter, with
//! strict parsing (unknown keys rejected) and range validation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Entity/relation embedding size; 0 disables the translational feature.
    pub k: usize,
    /// Margin of the ranking loss.
    pub margin: f64,
    pub focal_beta: f64,
    pub focal_gamma: f64,
    /// Detection-prior exponent during training.
    pub lambda_train: f64,
    /// Detection-prior exponent at inference.
    pub lambda_infer: f64,
    pub nms_iou: f64,
    pub score_threshold: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub node_width: usize,
    pub edge_width: usize,
    pub message_iterations: usize,
    pub seed: u64,
    /// Keep entity/relation matrices untouched during training.
    pub freeze_kge: bool,
    /// Add the normal/translation alignment penalty to the ranking loss.
    pub orthogonality_penalty: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            k: 50,
            margin: 4.0,
            focal_beta: 0.5,
            focal_gamma: 0.2,
            lambda_train: 1.0,
            lambda_infer: 2.8,
            nms_iou: 0.5,
            score_threshold: 0.2,
            epochs: 12,
            batch_size: 16,
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            node_width: 64,
            edge_width: 64,
            message_iterations: 1,
            seed: 0,
            freeze_kge: false,
            orthogonality_penalty: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let checks: &[(&str, bool)] = &[
            ("margin must be positive", self.margin > 0.0),
            ("focal_beta must be in (0, 1)", self.focal_beta > 0.0 && self.focal_beta < 1.0),
            ("focal_gamma must be non-negative", self.focal_gamma >= 0.0),
            ("lambda_train must be positive", self.lambda_train > 0.0),
            ("lambda_infer must be positive", self.lambda_infer > 0.0),
            ("nms_iou must be in (0, 1]", self.nms_iou > 0.0 && self.nms_iou <= 1.0),
            (
                "score_threshold must be in [0, 1]",
                (0.0..=1.0).contains(&self.score_threshold),
            ),
            ("epochs must be at least 1", self.epochs >= 1),
            ("batch_size must be at least 1", self.batch_size >= 1),
            (
                "learning_rate must be positive and finite",
                self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            ),
            (
                "weight_decay must be non-negative",
                self.weight_decay >= 0.0 && self.weight_decay.is_finite(),
            ),
            ("node_width must be at least 1", self.node_width >= 1),
            ("edge_width must be at least 1", self.edge_width >= 1),
            (
                "message_iterations must be at least 1",
                self.message_iterations >= 1,
            ),
        ];
        for (msg, ok) in checks {
            if !ok {
                return Err(Error::Config((*msg).to_string()));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        config.validate()?;
        Ok(config)
    }
}

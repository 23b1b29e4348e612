//! Training phases, pseudo labels, the two-student loop and the label noise
//! experiment.

mod data;
mod eval;
mod iterate;
mod noise;
mod phase;
mod pseudo;
mod rundir;
#[cfg(test)]
mod testkit;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::EvalConfig;

pub use data::{group_by_mixture, MixtureGroup};
pub use eval::{clip_accuracy, evaluate_student, validation_score, ValScore};
pub use iterate::{iterate_two_students, IterationLog, IterationRow, LoopData, StopReason};
pub use noise::{noise_robustness_experiment, NoiseRow};
pub use phase::{
    batch_gradients, retrain_f_on_pseudo, retrain_w_on_target, run_phase, train_f_on_source,
    train_w_on_source_with_kd, EpochLog, Learner, Objective, PhaseData, PhaseResult, PhaseSpec,
};
pub use pseudo::{generate_pseudo_labels, mean_pseudo_error_rate, sample_key, PseudoLabels};
pub use rundir::{
    iterations_csv, metrics_csv, noise_curve_csv, write_iterations_csv, write_metrics_csv,
    write_noise_curve_csv, RUN_ROOT_ENV,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatienceMetric {
    EventF,
    SegmentF,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Epochs of the first training of each student.
    pub epochs: usize,
    /// Epochs of every retraining phase.
    pub retrain_epochs: usize,
    pub lr_initial: f64,
    pub lr_retrain: f64,
    pub lambda_d: f64,
    /// Mixtures per batch; every TSD sample of a mixture joins its batch.
    pub batch_size: usize,
    pub seed: u64,
    pub adversarial: bool,
    /// Keep the adversarial term inside the two-student loop.
    pub adversarial_in_loop: bool,
    pub max_iterations: usize,
    pub patience_metric: PatienceMetric,
    /// Minimum gain of the stopping metric that counts as improvement.
    pub improvement_tol: f64,
    pub eval: EvalConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            retrain_epochs: 100,
            lr_initial: 1e-3,
            lr_retrain: 1e-4,
            lambda_d: crate::losses::DEFAULT_LAMBDA_D,
            batch_size: 8,
            seed: 0,
            adversarial: true,
            adversarial_in_loop: false,
            max_iterations: 3,
            patience_metric: PatienceMetric::EventF,
            improvement_tol: 1e-3,
            eval: EvalConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.retrain_epochs == 0 {
            return Err(Error::InvalidInput("epochs must be at least 1".into()));
        }
        if !(self.lr_initial > 0.0 && self.lr_retrain > 0.0) {
            return Err(Error::InvalidInput(
                "learning rates must be positive".into(),
            ));
        }
        if !(self.lambda_d >= 0.0) {
            return Err(Error::InvalidInput("lambda_d must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be positive".into()));
        }
        self.eval.validate()
    }
}

//! Synthetic data, training losses, the derivative-free trainer and metrics.

pub mod augment;
pub mod experiment;
pub mod generator;
pub mod loss;
pub mod metrics;
pub mod rollout;
pub mod spsa;

pub use augment::{distractor_peak_augment, PeakAugment};
pub use experiment::{evaluate, generate_corpus, run_ablation_experiment, AblationExperiment, AblationOutcome};
pub use generator::{generate_sequence, Motion, ObjectRole, ObjectTrack, SceneConfig, SyntheticSequence};
pub use loss::{prediction_loss, sequence_loss, state_aux_losses, AuxHeadParams, LossWeights, StepOutputs};
pub use metrics::{auc_thresholds, compute_corpus_metrics, compute_metrics, MetricsReport};
pub use rollout::TrainingExample;
pub use spsa::{moving_average, spsa_train, spsa_train_prepared, SpsaConfig, SpsaOutcome};

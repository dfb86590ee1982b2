//! Train-then-evaluate ablation study on synthetic crossing-distractor
//! sequences.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::Result;
use crate::model::{ModelParams, MEMORY_GAIN};
use crate::scalar::Scalar;
use crate::synth::generator::{generate_sequence, SceneConfig, SyntheticSequence};
use crate::synth::metrics::{compute_corpus_metrics, MetricsReport};
use crate::synth::spsa::{moving_average, spsa_train, SpsaConfig};
use crate::tracker::{track_sequence, Ablation, TrackerConfig};

#[derive(Clone, Debug)]
pub struct AblationExperiment {
    /// Scene of the held-out evaluation sequences.
    pub scene: SceneConfig,
    /// Training sequences use the same scene, shortened to this many frames.
    pub train_frames: usize,
    pub train_sequences: usize,
    pub eval_sequences: usize,
    pub train_seed_base: u64,
    pub eval_seed_base: u64,
    /// Predictor gain on the target memory of the starting parameters.
    pub memory_gain: f64,
    pub spsa: SpsaConfig,
    /// Required OP@0.5 lead of the trained tracker over appearance only.
    pub required_margin: f64,
}

impl Default for AblationExperiment {
    fn default() -> Self {
        AblationExperiment {
            scene: SceneConfig::default(),
            train_frames: 20,
            train_sequences: 60,
            eval_sequences: 100,
            train_seed_base: 0,
            eval_seed_base: 1_000_000,
            memory_gain: MEMORY_GAIN,
            spsa: SpsaConfig::default(),
            required_margin: 0.10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AblationOutcome<T> {
    pub params: ModelParams<T>,
    pub loss_trace: Vec<f64>,
    pub appearance_only: MetricsReport,
    pub no_propagation: MetricsReport,
    pub full: MetricsReport,
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

impl<T> AblationOutcome<T> {
    pub fn op50(report: &MetricsReport) -> f64 {
        report.op_at(0.5)
    }

    /// Full tracker ahead of appearance only by `margin`, and no worse than
    /// the variant without propagation.
    pub fn passed(&self, margin: f64) -> bool {
        let (base, nop, full) = (
            Self::op50(&self.appearance_only),
            Self::op50(&self.no_propagation),
            Self::op50(&self.full),
        );
        full >= base + margin && nop <= full
    }

    /// `(start, end)` of the 50-step moving average of the loss.
    pub fn loss_ends(&self) -> Option<(f64, f64)> {
        let ma = moving_average(&self.loss_trace, 50);
        Some((*ma.get(ma.len().min(50).checked_sub(1)?)?, *ma.last()?))
    }
}

pub fn generate_corpus(scene: &SceneConfig, seed_base: u64, count: usize) -> Result<Vec<SyntheticSequence>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| generate_sequence(scene, seed_base + i))
        .collect()
}

/// Tracks every sequence from its first annotation and scores the boxes.
pub fn evaluate<T: Scalar>(
    seqs: &[SyntheticSequence],
    cfg: &TrackerConfig<T>,
    thresholds: &[f64],
) -> Result<MetricsReport> {
    let preds = seqs
        .par_iter()
        .map(|s| track_sequence(&s.frames_as::<T>(), &s.gt_boxes[0], cfg).map(|r| r.boxes))
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<_> = preds
        .iter()
        .zip(seqs)
        .map(|(p, s)| (p.as_slice(), s.gt_boxes.as_slice()))
        .collect();
    compute_corpus_metrics(&pairs, thresholds)
}

pub fn run_ablation_experiment<T: Scalar>(
    exp: &AblationExperiment,
    tracker: &TrackerConfig<T>,
    thresholds: &[f64],
) -> Result<AblationOutcome<T>> {
    let train_scene = SceneConfig {
        frames: exp.train_frames,
        ..exp.scene.clone()
    };
    let corpus = generate_corpus(&train_scene, exp.train_seed_base, exp.train_sequences)?;
    let held_out = generate_corpus(&exp.scene, exp.eval_seed_base, exp.eval_sequences)?;

    let t0 = Instant::now();
    let initial = ModelParams::<T>::memory_seeded(T::lit(exp.memory_gain));
    let trained = spsa_train(&initial, &corpus, tracker, &exp.spsa)?;
    let train_seconds = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let run = |ablation| {
        let cfg = TrackerConfig {
            ablation,
            params: trained.params.clone(),
            ..tracker.clone()
        };
        evaluate(&held_out, &cfg, thresholds)
    };
    let appearance_only = run(Ablation::AppearanceOnly)?;
    let no_propagation = run(Ablation::NoPropagation)?;
    let full = run(Ablation::Full)?;
    Ok(AblationOutcome {
        params: trained.params,
        loss_trace: trained.loss_trace,
        appearance_only,
        no_propagation,
        full,
        train_seconds,
        eval_seconds: t1.elapsed().as_secs_f64(),
    })
}

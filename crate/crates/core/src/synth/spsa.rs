//! Simultaneous-perturbation stochastic approximation over the model bundle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::scalar::Scalar;
use crate::synth::augment::PeakAugment;
use crate::synth::generator::SyntheticSequence;
use crate::synth::loss::LossWeights;
use crate::synth::rollout::TrainingExample;
use crate::tracker::TrackerConfig;

/// Name prefix of the correspondence-net tensors.
pub const CORRESPONDENCE_PREFIX: &str = "correspondence.";

#[derive(Clone, Debug, PartialEq)]
pub struct SpsaConfig {
    pub steps: usize,
    /// Step size `a_k = a / (k + 1 + stability)^alpha`.
    pub a: f64,
    /// Perturbation size `c_k = c / (k + 1)^gamma`.
    pub c: f64,
    pub stability: f64,
    pub alpha: f64,
    pub gamma: f64,
    /// Sequences averaged per gradient estimate.
    pub batch: usize,
    /// Per-coordinate bound on a single update.
    pub max_update: f64,
    /// Also perturb the correspondence nets (slow: no field caching).
    pub train_correspondence: bool,
    pub weights: LossWeights,
    pub augment: PeakAugment,
    pub seed: u64,
}

impl Default for SpsaConfig {
    fn default() -> Self {
        SpsaConfig {
            steps: 2000,
            a: 0.005,
            c: 0.02,
            stability: 100.0,
            alpha: 0.602,
            gamma: 0.101,
            batch: 4,
            max_update: 0.05,
            train_correspondence: false,
            weights: LossWeights::default(),
            augment: PeakAugment::default(),
            seed: 0,
        }
    }
}

impl SpsaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.c > 0.0 && self.max_update > 0.0) {
            return Err(Error::config("SPSA gains must be positive"));
        }
        if !(self.stability >= 0.0 && self.alpha > 0.0 && self.gamma >= 0.0) {
            return Err(Error::config("SPSA decay exponents must be positive"));
        }
        if self.batch == 0 {
            return Err(Error::config("SPSA batch must be at least one"));
        }
        self.weights.validate()?;
        self.augment.validate()
    }

    pub fn step_size(&self, k: usize) -> f64 {
        self.a / (k as f64 + 1.0 + self.stability).powf(self.alpha)
    }

    pub fn perturbation(&self, k: usize) -> f64 {
        self.c / (k as f64 + 1.0).powf(self.gamma)
    }
}

#[derive(Clone, Debug)]
pub struct SpsaOutcome<T> {
    pub params: ModelParams<T>,
    /// Mean of the two perturbed losses at each step.
    pub loss_trace: Vec<f64>,
}

/// Which entries of the flat trainable vector are perturbed.
pub fn perturbation_mask<T: Scalar>(params: &ModelParams<T>, train_correspondence: bool) -> Vec<bool> {
    params
        .trainable_layout()
        .into_iter()
        .flat_map(|(name, n)| {
            let on = train_correspondence || !name.starts_with(CORRESPONDENCE_PREFIX);
            std::iter::repeat(on).take(n)
        })
        .collect()
}

/// Trailing moving averages with window `w` (shorter at the start).
pub fn moving_average(trace: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    let mut out = Vec::with_capacity(trace.len());
    let mut sum = 0.0;
    for (i, &v) in trace.iter().enumerate() {
        sum += v;
        if i >= w {
            sum -= trace[i - w];
        }
        out.push(sum / (i + 1).min(w) as f64);
    }
    out
}

/// Caches the corpus, then trains.
pub fn spsa_train<T: Scalar>(
    initial: &ModelParams<T>,
    corpus: &[SyntheticSequence],
    tracker: &TrackerConfig<T>,
    cfg: &SpsaConfig,
) -> Result<SpsaOutcome<T>> {
    let mut tracker = tracker.clone();
    tracker.params = initial.clone();
    let examples = corpus
        .par_iter()
        .map(|seq| TrainingExample::prepare(seq, &tracker, cfg.train_correspondence))
        .collect::<Result<Vec<_>>>()?;
    spsa_train_prepared(initial, &examples, cfg)
}

fn batch_loss<T: Scalar>(
    examples: &[&TrainingExample<T>],
    seeds: &[u64],
    params: &ModelParams<T>,
    cfg: &SpsaConfig,
) -> Result<f64> {
    let losses = examples
        .par_iter()
        .zip(seeds)
        .map(|(ex, &seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            ex.loss(params, &cfg.weights, &cfg.augment, &mut rng).map(|l| l.to_f64_lossy())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// SPSA on pre-cached examples. Each step draws a batch of sequences and a
/// Rademacher direction, evaluates the loss on both sides with common
/// augmentation noise, and takes a clipped step against the estimate.
pub fn spsa_train_prepared<T: Scalar>(
    initial: &ModelParams<T>,
    examples: &[TrainingExample<T>],
    cfg: &SpsaConfig,
) -> Result<SpsaOutcome<T>> {
    cfg.validate()?;
    initial.validate()?;
    if examples.is_empty() {
        return Err(Error::config("training corpus is empty"));
    }
    if cfg.train_correspondence && examples.iter().any(|e| e.has_frozen_correspondence()) {
        return Err(Error::config("corpus was cached with frozen correspondence nets"));
    }
    let mask = perturbation_mask(initial, cfg.train_correspondence);
    let mut theta: Vec<f64> = initial.trainable_vector().iter().map(|v| v.to_f64_lossy()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut plus = initial.clone();
    let mut minus = initial.clone();
    for k in 0..cfg.steps {
        let batch: Vec<&TrainingExample<T>> = (0..cfg.batch)
            .map(|_| &examples[rng.gen_range(0..examples.len())])
            .collect();
        let seeds: Vec<u64> = (0..cfg.batch).map(|_| rng.gen()).collect();
        let delta: Vec<f64> = mask
            .iter()
            .map(|&on| if !on { 0.0 } else if rng.gen::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let ck = cfg.perturbation(k);
        let shifted = |sign: f64| -> Vec<T> {
            theta.iter().zip(&delta).map(|(&t, &d)| T::lit(t + sign * ck * d)).collect()
        };
        plus.set_trainable_vector(&shifted(1.0))?;
        minus.set_trainable_vector(&shifted(-1.0))?;
        let lp = batch_loss(&batch, &seeds, &plus, cfg)?;
        let lm = batch_loss(&batch, &seeds, &minus, cfg)?;
        if !lp.is_finite() || !lm.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {k}: {lp} / {lm}")));
        }
        trace.push(0.5 * (lp + lm));
        let g = (lp - lm) / (2.0 * ck);
        let ak = cfg.step_size(k);
        for (t, &d) in theta.iter_mut().zip(&delta) {
            if d != 0.0 {
                *t -= (ak * g * d).clamp(-cfg.max_update, cfg.max_update);
            }
        }
    }
    let mut params = initial.clone();
    params.set_trainable_vector(&theta.iter().map(|&v| T::lit(v)).collect::<Vec<_>>())?;
    Ok(SpsaOutcome { params, loss_trace: trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost_volume::DisplacementWindow;
    use crate::synth::generator::{generate_sequence, SceneConfig};

    fn tiny_corpus(n: u64) -> Vec<SyntheticSequence> {
        let cfg = SceneConfig {
            width: 10,
            height: 10,
            frames: 4,
            margin: 2.0,
            ..SceneConfig::default()
        };
        (0..n).map(|s| generate_sequence(&cfg, s).unwrap()).collect()
    }

    fn tracker() -> TrackerConfig<f64> {
        TrackerConfig {
            displacement: DisplacementWindow::new(2),
            ..TrackerConfig::default()
        }
    }

    #[test]
    fn zero_steps_leave_params_unchanged() {
        let p = ModelParams::<f64>::initial();
        let cfg = SpsaConfig { steps: 0, ..SpsaConfig::default() };
        let out = spsa_train(&p, &tiny_corpus(2), &tracker(), &cfg).unwrap();
        assert_eq!(out.params, p);
        assert!(out.loss_trace.is_empty());
    }

    #[test]
    fn seeded_training_is_deterministic() {
        let p = ModelParams::<f64>::initial();
        let cfg = SpsaConfig { steps: 3, seed: 4, ..SpsaConfig::default() };
        let corpus = tiny_corpus(3);
        let a = spsa_train(&p, &corpus, &tracker(), &cfg).unwrap();
        let b = spsa_train(&p, &corpus, &tracker(), &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.loss_trace, b.loss_trace);
        assert_ne!(a.params, p);
        assert_eq!(a.params.correspondence, p.correspondence);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let p = ModelParams::<f64>::initial();
        assert!(spsa_train(&p, &[], &tracker(), &SpsaConfig::default()).is_err());
    }

    #[test]
    fn mask_skips_correspondence_unless_asked() {
        let p = ModelParams::<f64>::initial();
        let frozen = perturbation_mask(&p, false);
        let all = perturbation_mask(&p, true);
        assert_eq!(frozen.len(), p.trainable_count());
        assert!(all.iter().all(|&b| b));
        let n_corr: usize = p
            .trainable_layout()
            .iter()
            .filter(|(n, _)| n.starts_with(CORRESPONDENCE_PREFIX))
            .map(|(_, l)| l)
            .sum();
        assert_eq!(frozen.iter().filter(|&&b| !b).count(), n_corr);
    }

    #[test]
    fn moving_average_matches_direct() {
        let t: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let m = moving_average(&t, 3);
        assert_eq!(m[0], 0.0);
        assert_eq!(m[1], 0.5);
        assert_eq!(m[9], 8.0);
    }
}

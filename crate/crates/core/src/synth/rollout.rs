//! Training-time rollouts with the parameter-independent parts cached.
//!
//! The appearance filter is frozen, so its scores are computed once per
//! sequence. Cost volumes never depend on the parameters; when the
//! correspondence nets are frozen too, the whole correspondence field and
//! its reliability are cached instead.

use rand::Rng;

use crate::correspondence::{correspondence_from_costs, reliability_map, CorrespondenceField};
use crate::cost_volume::{build_cost_volume, CostVolume};
use crate::error::{Error, Result};
use crate::fusion::{fuse_scores, localize_target};
use crate::geometry::TargetBox;
use crate::grid::{hann_window, Grid2D, Point};
use crate::model::ModelParams;
use crate::propagation::{init_states, propagate_states};
use crate::scalar::Scalar;
use crate::state_update::{build_gru_input, conv_gru_step};
use crate::synth::augment::{distractor_peak_augment, PeakAugment};
use crate::synth::generator::SyntheticSequence;
use crate::synth::loss::{sequence_loss, LossWeights, StepOutputs};
use crate::tracker::{init_tracker, TrackerConfig};
use crate::appearance::apply_filter;

#[derive(Clone, Debug)]
enum Motion<T> {
    Costs(Vec<CostVolume<T>>),
    Fields(Vec<(CorrespondenceField<T>, Grid2D<T>)>),
}

/// One training sequence with its cached per-frame quantities.
#[derive(Clone, Debug)]
pub struct TrainingExample<T> {
    pub width: usize,
    pub height: usize,
    pub stride: f64,
    pub b0: TargetBox,
    /// Unwindowed appearance scores of every frame.
    pub scores: Vec<Grid2D<T>>,
    /// Ground-truth centers in grid coordinates.
    pub gt_centers: Vec<Point<f64>>,
    pub window_floor: T,
    motion: Motion<T>,
}

impl<T: Scalar> TrainingExample<T> {
    /// Caches the sequence. With `trainable_correspondence = false` the
    /// correspondence nets of `cfg.params` are baked into the cache.
    pub fn prepare(seq: &SyntheticSequence, cfg: &TrackerConfig<T>, trainable_correspondence: bool) -> Result<Self> {
        seq.validate()?;
        if seq.len() < 2 {
            return Err(Error::config("training sequences need at least two frames"));
        }
        let frames = seq.frames_as::<T>();
        let b0 = seq.gt_boxes[0];
        let state = init_tracker(&frames[0], &b0, cfg)?;
        let scores = frames
            .iter()
            .map(|x| apply_filter(&state.filter, x))
            .collect::<Result<Vec<_>>>()?;
        let costs = frames
            .windows(2)
            .map(|pair| build_cost_volume(&pair[0], &pair[1], cfg.displacement))
            .collect::<Result<Vec<_>>>()?;
        let motion = if trainable_correspondence {
            Motion::Costs(costs)
        } else {
            Motion::Fields(
                costs
                    .iter()
                    .map(|cv| {
                        let p = correspondence_from_costs(cv, &cfg.params.correspondence)?;
                        let xi = reliability_map(&p);
                        Ok((p, xi))
                    })
                    .collect::<Result<Vec<_>>>()?,
            )
        };
        Ok(TrainingExample {
            width: seq.width(),
            height: seq.height(),
            stride: seq.stride,
            b0,
            scores,
            gt_centers: seq.gt_boxes.iter().map(|b| b.grid_center(seq.stride)).collect(),
            window_floor: cfg.window_floor,
            motion,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn has_frozen_correspondence(&self) -> bool {
        matches!(self.motion, Motion::Fields(_))
    }

    /// Runs the network pipeline over frames `1..N` in closed loop: the
    /// search window follows the model's own previous peak, as in tracking,
    /// but there is no lost-frame gating. Distractor peaks are added to the
    /// appearance scores.
    pub fn rollout<R: Rng + ?Sized>(
        &self,
        params: &ModelParams<T>,
        augment: &PeakAugment,
        rng: &mut R,
    ) -> Result<Vec<StepOutputs<T>>> {
        let mut h = init_states(&self.b0, &params.initializer, self.width, self.height, self.stride)?;
        let mut steps = Vec::with_capacity(self.len().saturating_sub(1));
        let mut center = match self.b0.center_cell(self.stride, self.width, self.height) {
            Some(c) => c.point(),
            None => self.b0.grid_center(self.stride),
        };
        for t in 1..self.len() {
            let window = hann_window(self.width, self.height, center, self.window_floor);
            let (h_hat, xi) = match &self.motion {
                Motion::Fields(fields) => {
                    let (p, xi) = &fields[t - 1];
                    (propagate_states(&h, p)?, xi.clone())
                }
                Motion::Costs(costs) => {
                    let p = correspondence_from_costs(&costs[t - 1], &params.correspondence)?;
                    (propagate_states(&h, &p)?, reliability_map(&p))
                }
            };
            let s = distractor_peak_augment(&self.scores[t], rng, self.gt_centers[t], augment)?.hadamard(&window);
            let fused = fuse_scores(&h_hat, &xi, &s, &params.predictor)?;
            center = localize_target(&fused.masked.hadamard(&window)).0.point();
            let f = build_gru_input(&fused, &s)?;
            h = conv_gru_step(&h_hat, &f, &params.gru)?;
            steps.push(StepOutputs {
                fused: fused.masked,
                raw: fused.raw,
                states: h.clone(),
                propagated: h_hat,
            });
        }
        Ok(steps)
    }

    pub fn loss<R: Rng + ?Sized>(
        &self,
        params: &ModelParams<T>,
        weights: &LossWeights,
        augment: &PeakAugment,
        rng: &mut R,
    ) -> Result<T> {
        let steps = self.rollout(params, augment, rng)?;
        let gt: Vec<Point<T>> = self.gt_centers[1..]
            .iter()
            .map(|p| Point::new(T::lit(p.x), T::lit(p.y)))
            .collect();
        sequence_loss(&steps, &gt, weights, &params.aux_head, &params.initializer.label)
    }
}

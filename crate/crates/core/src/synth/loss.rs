//! Training losses over a tracking rollout.

use crate::error::{Error, Result};
use crate::grid::{gaussian_label_map, sigmoid, Cell, Grid2D, LabelConfig, Point};
use crate::propagation::StateField;
use crate::scalar::Scalar;

/// Probability clipping used by the binary cross-entropy.
pub const BCE_CLIP: f64 = 1e-7;

/// Chebyshev radius (cells) of the positive region in the state labels.
pub const TARGET_MASK_RADIUS: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Weight of the unmasked predictor output term.
    pub alpha: f64,
    /// Weight of the two state classification terms.
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 0.1, beta: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) || !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::config("loss weights must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// Per-cell `sigmoid(w . h + b)`: does this state vector belong to the target?
#[derive(Clone, Debug, PartialEq)]
pub struct AuxHeadParams<T> {
    pub weights: Vec<T>,
    pub bias: T,
}

impl<T: Scalar> AuxHeadParams<T> {
    pub fn zeros(state_dim: usize) -> Self {
        AuxHeadParams {
            weights: vec![T::zero(); state_dim],
            bias: T::zero(),
        }
    }

    /// Reads state channel 0: `sigmoid(3 h0)`.
    pub fn target_marker(state_dim: usize) -> Self {
        let mut p = Self::zeros(state_dim);
        if let Some(w) = p.weights.first_mut() {
            *w = T::lit(3.0);
        }
        p
    }

    pub fn state_dim(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(Error::shape("aux head needs at least one input channel"));
        }
        if !self.bias.is_finite() || self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("aux head parameters".into()));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> AuxHeadParams<U> {
        AuxHeadParams {
            weights: self.weights.iter().map(|w| U::lit(w.to_f64_lossy())).collect(),
            bias: U::lit(self.bias.to_f64_lossy()),
        }
    }

    pub fn apply(&self, h: &StateField<T>) -> Result<Grid2D<T>> {
        if h.channels() != self.weights.len() {
            return Err(Error::shape("aux head and states disagree on the state dimension"));
        }
        Ok(Grid2D::from_fn(h.width(), h.height(), |c| {
            let z = h
                .cell(c)
                .iter()
                .zip(&self.weights)
                .fold(self.bias, |acc, (&x, &w)| acc + x * w);
            sigmoid(z)
        }))
    }
}

/// `|score - z|^2` with `z` the Gaussian label at `gt_center`.
pub fn prediction_loss<T: Scalar>(score: &Grid2D<T>, gt_center: Point<T>, cfg: &LabelConfig<T>) -> T {
    let z = gaussian_label_map(gt_center, cfg, score.width(), score.height());
    score
        .as_slice()
        .iter()
        .zip(z.as_slice())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum()
}

/// Row-major positive cells: within [`TARGET_MASK_RADIUS`] of the cell
/// nearest `gt_center`.
pub fn target_mask<T: Scalar>(gt_center: Point<T>, width: usize, height: usize) -> Vec<bool> {
    let center = gt_center.nearest_cell(width, height);
    (0..width * height)
        .map(|i| {
            let c = Cell::new(i % width, i / width);
            center.is_some_and(|center| c.chebyshev(center) <= TARGET_MASK_RADIUS)
        })
        .collect()
}

/// Mean clipped binary cross-entropy of `prob` against `mask`.
pub fn binary_cross_entropy<T: Scalar>(prob: &Grid2D<T>, mask: &[bool]) -> T {
    let lo = T::lit(BCE_CLIP);
    let hi = T::one() - lo;
    let total: T = prob
        .as_slice()
        .iter()
        .zip(mask)
        .map(|(&p, &y)| {
            let p = p.max(lo).min(hi);
            if y {
                -p.ln()
            } else {
                -(T::one() - p).ln()
            }
        })
        .sum();
    total / T::lit(prob.len() as f64)
}

/// `(L_state, L_state_prop)`: the head's BCE on the updated and on the
/// propagated states.
pub fn state_aux_losses<T: Scalar>(
    h: &StateField<T>,
    h_hat: &StateField<T>,
    gt_center: Point<T>,
    head: &AuxHeadParams<T>,
) -> Result<(T, T)> {
    let mask = target_mask(gt_center, h.width(), h.height());
    let a = binary_cross_entropy(&head.apply(h)?, &mask);
    let b = binary_cross_entropy(&head.apply(h_hat)?, &mask);
    Ok((a, b))
}

/// Everything the loss needs from one tracked frame `t >= 1`.
#[derive(Clone, Debug)]
pub struct StepOutputs<T> {
    /// Masked fused confidence.
    pub fused: Grid2D<T>,
    /// Predictor output before masking.
    pub raw: Grid2D<T>,
    /// States after the GRU update.
    pub states: StateField<T>,
    /// States propagated into this frame.
    pub propagated: StateField<T>,
}

/// Loss contribution of a single frame.
pub fn step_loss<T: Scalar>(
    step: &StepOutputs<T>,
    gt_center: Point<T>,
    weights: &LossWeights,
    head: &AuxHeadParams<T>,
    label: &LabelConfig<T>,
) -> Result<T> {
    let pred = prediction_loss(&step.fused, gt_center, label);
    let raw = prediction_loss(&step.raw, gt_center, label);
    let (ls, lp) = state_aux_losses(&step.states, &step.propagated, gt_center, head)?;
    Ok(pred + T::lit(weights.alpha) * raw + T::lit(weights.beta) * (ls + lp))
}

/// Mean of [`step_loss`] over frames `1..N`; `steps[i]` belongs to frame
/// `i + 1` and `gt_centers[i]` is its ground truth.
pub fn sequence_loss<T: Scalar>(
    steps: &[StepOutputs<T>],
    gt_centers: &[Point<T>],
    weights: &LossWeights,
    head: &AuxHeadParams<T>,
    label: &LabelConfig<T>,
) -> Result<T> {
    if steps.is_empty() {
        return Err(Error::config("sequence loss needs at least two frames"));
    }
    if steps.len() != gt_centers.len() {
        return Err(Error::shape("one ground-truth center per tracked frame required"));
    }
    weights.validate()?;
    let mut total = T::zero();
    for (step, &c) in steps.iter().zip(gt_centers) {
        total += step_loss(step, c, weights, head, label)?;
    }
    Ok(total / T::lit(steps.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid3D;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_grid(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Grid2D<f64> {
        Grid2D::from_fn(w, h, |_| rng.gen_range(0.0..1.0))
    }

    fn rand_states(rng: &mut ChaCha8Rng, w: usize, h: usize, s: usize) -> Grid3D<f64> {
        Grid3D::from_fn(w, h, s, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn prediction_loss_closed_forms() {
        let label = LabelConfig::default();
        let c = Point::new(3.3, 4.6);
        let z = gaussian_label_map(c, &label, 9, 8);
        assert_eq!(prediction_loss(&z, c, &label), 0.0);
        let zero = Grid2D::zeros(9, 8);
        let mut expected = 0.0;
        for y in 0..8 {
            for x in 0..9 {
                let d2 = (x as f64 - c.x).powi(2) + (y as f64 - c.y).powi(2);
                expected += (-d2 / (0.9f64 * 0.9)).exp();
            }
        }
        assert!((prediction_loss(&zero, c, &label) - expected).abs() < 1e-12);
    }

    #[test]
    fn flat_half_head_gives_ln2() {
        let head = AuxHeadParams::<f64>::zeros(4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = rand_states(&mut rng, 6, 5, 4);
        let (a, b) = state_aux_losses(&h, &h, Point::new(2.0, 2.0), &head).unwrap();
        assert!((a - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((b - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions_hit_the_clip_floor() {
        let mask = target_mask(Point::new(3.0, 3.0), 7, 7);
        let prob = Grid2D::from_fn(7, 7, |c| if mask[c.y * 7 + c.x] { 1.0 } else { 0.0 });
        let loss = binary_cross_entropy(&prob, &mask);
        assert!(loss >= 0.0 && loss <= 1e-6 * (1e7f64).ln());
    }

    #[test]
    fn target_mask_is_three_by_three() {
        let m = target_mask(Point::new(4.4, 2.6), 10, 10);
        assert_eq!(m.iter().filter(|&&b| b).count(), 9);
        assert!(m[3 * 10 + 4] && m[4 * 10 + 5] && !m[3 * 10 + 6]);
        let corner = target_mask(Point::new(0.0, 0.0), 10, 10);
        assert_eq!(corner.iter().filter(|&&b| b).count(), 4);
    }

    #[test]
    fn sequence_loss_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let head = AuxHeadParams::target_marker(3);
        let label = LabelConfig::default();
        let steps: Vec<_> = (0..4)
            .map(|_| StepOutputs {
                fused: rand_grid(&mut rng, 6, 6),
                raw: rand_grid(&mut rng, 6, 6),
                states: rand_states(&mut rng, 6, 6, 3),
                propagated: rand_states(&mut rng, 6, 6, 3),
            })
            .collect();
        let gts: Vec<_> = (0..4).map(|i| Point::new(1.0 + i as f64, 2.5)).collect();
        let plain = LossWeights { alpha: 0.0, beta: 0.0 };
        let l = sequence_loss(&steps, &gts, &plain, &head, &label).unwrap();
        let mean_pred: f64 = steps
            .iter()
            .zip(&gts)
            .map(|(s, &c)| prediction_loss(&s.fused, c, &label))
            .sum::<f64>()
            / 4.0;
        assert!((l - mean_pred).abs() < 1e-12);
        let one = sequence_loss(&steps[..1], &gts[..1], &LossWeights::default(), &head, &label).unwrap();
        let direct = step_loss(&steps[0], gts[0], &LossWeights::default(), &head, &label).unwrap();
        assert_eq!(one, direct);
        assert!(sequence_loss::<f64>(&[], &[], &plain, &head, &label).is_err());
        assert!(sequence_loss(&steps, &gts[..2], &plain, &head, &label).is_err());
    }
}

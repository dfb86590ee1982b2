//! Target confidence from appearance scores, propagated states and
//! reliability, with appearance-gated masking.

use crate::error::{Error, Result};
use crate::grid::{conv2d_same, Activation, Cell, ConvBlockParams, Grid2D, Grid3D};
use crate::propagation::StateField;
use crate::scalar::Scalar;

pub const PREDICTOR_HIDDEN: usize = 16;

/// Default appearance-mask threshold.
pub const MASK_THRESHOLD: f64 = 0.05;

/// Input channel layout: `[s, h_hat(0..S), xi]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorParams<T> {
    pub conv1: ConvBlockParams<T>,
    pub conv2: ConvBlockParams<T>,
    /// Cells with appearance score `<= mu` are zeroed in the output.
    pub mu: T,
}

impl<T: Scalar> PredictorParams<T> {
    pub fn zeros(state_dim: usize) -> Self {
        PredictorParams {
            conv1: ConvBlockParams::zeros(state_dim + 2, PREDICTOR_HIDDEN, Activation::Relu),
            conv2: ConvBlockParams::zeros(PREDICTOR_HIDDEN, 1, Activation::Sigmoid),
            mu: T::lit(MASK_THRESHOLD),
        }
    }

    /// `sigmoid(gain * relu(s) + offset)`: fused argmax follows the
    /// appearance argmax on the unmasked region.
    pub fn appearance_replicating(state_dim: usize, gain: T, offset: T) -> Self {
        let mut p = Self::zeros(state_dim);
        p.conv1.set_weight(1, 1, 0, 0, gain);
        p.conv2.set_weight(1, 1, 0, 0, T::one());
        p.conv2.bias[0] = offset;
        p
    }

    pub fn state_dim(&self) -> usize {
        self.conv1.c_in - 2
    }

    pub fn validate(&self) -> Result<()> {
        self.conv1.validate()?;
        self.conv2.validate()?;
        if self.conv1.c_in < 3 || self.conv1.c_out != self.conv2.c_in || self.conv2.c_out != 1 {
            return Err(Error::shape("predictor must map S+2 -> k -> 1 channels"));
        }
        if !(self.mu >= T::zero() && self.mu < T::one()) {
            return Err(Error::config("mask threshold must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> PredictorParams<U> {
        PredictorParams {
            conv1: self.conv1.cast(),
            conv2: self.conv2.cast(),
            mu: U::lit(self.mu.to_f64_lossy()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusedScores<T> {
    /// Predictor output before masking, in `[0, 1]`.
    pub raw: Grid2D<T>,
    /// `raw` where `s > mu`, zero elsewhere.
    pub masked: Grid2D<T>,
}

/// Fuses scores with the appearance mask enabled.
pub fn fuse_scores<T: Scalar>(
    h_hat: &StateField<T>,
    xi: &Grid2D<T>,
    s: &Grid2D<T>,
    params: &PredictorParams<T>,
) -> Result<FusedScores<T>> {
    fuse_scores_with(h_hat, xi, s, params, true)
}

/// Fuses scores; `apply_mask = false` leaves `masked == raw`.
pub fn fuse_scores_with<T: Scalar>(
    h_hat: &StateField<T>,
    xi: &Grid2D<T>,
    s: &Grid2D<T>,
    params: &PredictorParams<T>,
    apply_mask: bool,
) -> Result<FusedScores<T>> {
    params.validate()?;
    if !s.same_shape(xi) || h_hat.width() != s.width() || h_hat.height() != s.height() {
        return Err(Error::shape("fusion inputs differ in size"));
    }
    if h_hat.channels() != params.state_dim() {
        return Err(Error::shape(format!(
            "predictor expects {} state channels, got {}",
            params.state_dim(),
            h_hat.channels()
        )));
    }
    let input = Grid3D::concat(&[&Grid3D::from_plane(s), h_hat, &Grid3D::from_plane(xi)])?;
    let hidden = conv2d_same(&input, &params.conv1)?;
    let out = conv2d_same(&hidden, &params.conv2)?;
    let raw = Grid2D::from_raw(s.width(), s.height(), out.into_vec());
    let masked = if apply_mask {
        Grid2D::from_raw(
            s.width(),
            s.height(),
            raw.as_slice()
                .iter()
                .zip(s.as_slice())
                .map(|(&v, &a)| if a > params.mu { v } else { T::zero() })
                .collect(),
        )
    } else {
        raw.clone()
    };
    Ok(FusedScores { raw, masked })
}

/// Highest-scoring cell; ties go to the smallest row-major index.
pub fn localize_target<T: Scalar>(scores: &Grid2D<T>) -> (Cell, T) {
    let mut best = 0;
    let data = scores.as_slice();
    for (i, &v) in data.iter().enumerate().skip(1) {
        if v > data[best] {
            best = i;
        }
    }
    (scores.cell_of(best), data[best])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagation::STATE_DIM;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn inputs(rng: &mut ChaCha8Rng, w: usize, h: usize) -> (StateField<f64>, Grid2D<f64>, Grid2D<f64>) {
        (
            Grid3D::from_fn(w, h, STATE_DIM, |_, _| rng.gen_range(-1.0..1.0)),
            Grid2D::from_fn(w, h, |_| rng.gen_range(-5.0..0.0)),
            Grid2D::from_fn(w, h, |_| rng.gen_range(-0.2..1.0)),
        )
    }

    #[test]
    fn everything_masked_below_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (hh, xi, _) = inputs(&mut rng, 6, 6);
        let s = Grid2D::from_fn(6, 6, |_| rng.gen_range(-1.0..=0.05));
        let params = PredictorParams::appearance_replicating(STATE_DIM, 8.0, -4.0);
        let f = fuse_scores(&hh, &xi, &s, &params).unwrap();
        assert!(f.masked.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_weights_give_one_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (hh, xi, s) = inputs(&mut rng, 6, 5);
        let f = fuse_scores(&hh, &xi, &s, &PredictorParams::zeros(STATE_DIM)).unwrap();
        for (i, &v) in f.raw.as_slice().iter().enumerate() {
            assert_eq!(v, 0.5);
            let expect = if s.as_slice()[i] > 0.05 { 0.5 } else { 0.0 };
            assert_eq!(f.masked.as_slice()[i], expect);
        }
    }

    #[test]
    fn replicating_predictor_follows_appearance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = PredictorParams::appearance_replicating(STATE_DIM, 8.0, -4.0);
        for _ in 0..50 {
            let (hh, xi, s) = inputs(&mut rng, 7, 7);
            let f = fuse_scores(&hh, &xi, &s, &params).unwrap();
            for (i, &v) in f.raw.as_slice().iter().enumerate() {
                let expect = 1.0 / (1.0 + (-(8.0 * s.as_slice()[i].max(0.0) - 4.0)).exp());
                assert!((v - expect).abs() < 1e-12);
            }
            if s.max() > 0.05 {
                assert_eq!(localize_target(&f.masked).0, localize_target(&s).0);
            }
        }
    }

    #[test]
    fn tie_breaking() {
        let mut g = Grid2D::<f64>::zeros(8, 8);
        assert_eq!(localize_target(&g).0, Cell::new(0, 0));
        g.set(Cell { y: 2, x: 3 }, 1.0);
        g.set(Cell { y: 5, x: 1 }, 1.0);
        assert_eq!(localize_target(&g), (Cell { y: 2, x: 3 }, 1.0));
        let mut single = Grid2D::<f64>::zeros(4, 4);
        single.set(Cell::new(3, 1), 0.2);
        assert_eq!(localize_target(&single).0, Cell::new(3, 1));
    }

    #[test]
    fn shape_checks() {
        let hh = Grid3D::<f64>::zeros(4, 4, STATE_DIM);
        let xi = Grid2D::<f64>::zeros(4, 4);
        let s = Grid2D::<f64>::zeros(5, 4);
        assert!(fuse_scores(&hh, &xi, &s, &PredictorParams::zeros(STATE_DIM)).is_err());
    }
}

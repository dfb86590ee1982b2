//! Distractor-peak augmentation of appearance scores.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{Cell, Grid2D, Point};
use crate::scalar::Scalar;

/// Minimum Euclidean distance (cells) between an added peak and the target.
pub const MIN_PEAK_DISTANCE: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeakAugment {
    pub prob: f64,
    pub amplitude: (f64, f64),
    /// Gaussian standard deviation of each peak, in cells.
    pub sigma: f64,
}

impl Default for PeakAugment {
    fn default() -> Self {
        PeakAugment {
            prob: 0.5,
            amplitude: (0.3, 1.0),
            sigma: 0.9,
        }
    }
}

impl PeakAugment {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.prob) {
            return Err(Error::config("augmentation probability must lie in [0, 1]"));
        }
        let (lo, hi) = self.amplitude;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::config("peak amplitude range must be ordered and nonnegative"));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::config("peak sigma must be positive"));
        }
        Ok(())
    }
}

/// With probability `cfg.prob`, adds one or two Gaussian peaks far from
/// `gt_center`; the input is returned unchanged otherwise or when no cell
/// is far enough away.
pub fn distractor_peak_augment<T: Scalar, R: Rng + ?Sized>(
    s: &Grid2D<T>,
    rng: &mut R,
    gt_center: Point<f64>,
    cfg: &PeakAugment,
) -> Result<Grid2D<T>> {
    cfg.validate()?;
    if rng.gen::<f64>() >= cfg.prob {
        return Ok(s.clone());
    }
    let candidates: Vec<Cell> = (0..s.len())
        .map(|i| s.cell_of(i))
        .filter(|c| c.point::<f64>().dist2(gt_center) >= MIN_PEAK_DISTANCE * MIN_PEAK_DISTANCE)
        .collect();
    if candidates.is_empty() {
        return Ok(s.clone());
    }
    let count = rng.gen_range(1..=2);
    let denom = 2.0 * cfg.sigma * cfg.sigma;
    let mut out = s.clone();
    for _ in 0..count {
        let at = *candidates.choose(rng).expect("non-empty");
        let amp = if cfg.amplitude.0 < cfg.amplitude.1 {
            rng.gen_range(cfg.amplitude.0..cfg.amplitude.1)
        } else {
            cfg.amplitude.0
        };
        let center = at.point::<f64>();
        for (i, v) in out.as_mut_slice().iter_mut().enumerate() {
            let d2 = s.cell_of(i).point::<f64>().dist2(center);
            *v += T::lit(amp * (-d2 / denom).exp());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scores(seed: u64) -> Grid2D<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Grid2D::from_fn(12, 12, |_| rng.gen_range(-0.2..0.8))
    }

    #[test]
    fn zero_probability_is_identity() {
        let s = scores(1);
        let cfg = PeakAugment { prob: 0.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            assert_eq!(distractor_peak_augment(&s, &mut rng, Point::new(5.0, 5.0), &cfg).unwrap(), s);
        }
    }

    #[test]
    fn peaks_land_away_from_target() {
        let s = Grid2D::<f64>::zeros(12, 12);
        let cfg = PeakAugment { prob: 1.0, sigma: 0.3, ..Default::default() };
        let gt = Point::new(6.0, 6.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let out = distractor_peak_augment(&s, &mut rng, gt, &cfg).unwrap();
            let (i, v) = out
                .as_slice()
                .iter()
                .enumerate()
                .fold((0, f64::MIN), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
            assert!(v >= 0.3);
            assert!(out.cell_of(i).point::<f64>().dist2(gt) >= 9.0);
        }
    }

    #[test]
    fn seeded_placement_is_deterministic() {
        let s = scores(2);
        let cfg = PeakAugment { prob: 1.0, ..Default::default() };
        let a = distractor_peak_augment(&s, &mut ChaCha8Rng::seed_from_u64(9), Point::new(2.0, 3.0), &cfg).unwrap();
        let b = distractor_peak_augment(&s, &mut ChaCha8Rng::seed_from_u64(9), Point::new(2.0, 3.0), &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, s);
    }

    #[test]
    fn rejects_bad_probability() {
        let cfg = PeakAugment { prob: 1.5, ..Default::default() };
        assert!(distractor_peak_augment(&scores(0), &mut ChaCha8Rng::seed_from_u64(0), Point::new(0.0, 0.0), &cfg).is_err());
    }

    proptest! {
        #[test]
        fn augmentation_only_adds(seed in any::<u64>(), prob in 0.0f64..=1.0, gx in 0.0f64..12.0, gy in 0.0f64..12.0) {
            let s = scores(seed);
            let cfg = PeakAugment { prob, ..Default::default() };
            let out = distractor_peak_augment(&s, &mut ChaCha8Rng::seed_from_u64(seed), Point::new(gx, gy), &cfg).unwrap();
            for (a, b) in out.as_slice().iter().zip(s.as_slice()) {
                prop_assert!(a >= b);
            }
        }
    }
}

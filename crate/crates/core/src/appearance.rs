//! Single-filter discriminative appearance model.
//!
//! The filter minimizes `1/n sum_j |conv(x_j, w) - c_j|^2 + lambda^2 |w|^2`
//! over an augmented first-frame training set. The objective is quadratic,
//! so it is solved with conjugate gradient on the normal equations, applying
//! the convolution and its adjoint instead of forming the matrix.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::TargetBox;
use crate::grid::{conv2d_same, gaussian_label_map, Activation, Cell, ConvBlockParams, Grid2D, Grid3D, LabelConfig, Point};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct FilterWeights<T> {
    /// `3x3xD -> 1` kernel, no bias, no activation.
    pub kernel: ConvBlockParams<T>,
    pub lambda: T,
}

impl<T: Scalar> FilterWeights<T> {
    pub fn zeros(channels: usize, lambda: T) -> Self {
        FilterWeights {
            kernel: ConvBlockParams::zeros(channels, 1, Activation::None),
            lambda,
        }
    }

    pub fn channels(&self) -> usize {
        self.kernel.c_in
    }

    pub fn norm(&self) -> T {
        self.kernel.kernel.iter().map(|&v| v * v).sum::<T>().sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample<T> {
    pub features: Grid3D<T>,
    pub label: Grid2D<T>,
    /// Label peak location in grid coordinates.
    pub center: Point<T>,
}

/// Augmentation settings for the first-frame training set.
#[derive(Clone, Copy, Debug)]
pub struct AugmentConfig {
    pub max_shift: i32,
    pub flip_prob: f64,
    /// Noise standard deviation relative to the feature RMS.
    pub noise_rel: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            max_shift: 3,
            flip_prob: 0.5,
            noise_rel: 0.05,
        }
    }
}

fn shift_features<T: Scalar>(x: &Grid3D<T>, sx: i32, sy: i32) -> Grid3D<T> {
    let (w, h) = (x.width(), x.height());
    Grid3D::from_fn(w, h, x.channels(), |c, ch| {
        match c.offset(-sx as isize, -sy as isize, w, h) {
            Some(src) => x.get(src, ch),
            None => T::zero(),
        }
    })
}

fn flip_features<T: Scalar>(x: &Grid3D<T>) -> Grid3D<T> {
    let w = x.width();
    Grid3D::from_fn(w, x.height(), x.channels(), |c, ch| x.get(Cell::new(w - 1 - c.x, c.y), ch))
}

/// The original first-frame sample followed by `n_aug` augmented copies
/// (integer shift, optional horizontal flip, Gaussian feature noise); labels
/// follow the same geometric transforms.
pub fn build_training_set<T: Scalar, R: Rng>(
    x0: &Grid3D<T>,
    b0: &TargetBox,
    n_aug: usize,
    rng: &mut R,
    stride: f64,
    label: &LabelConfig<T>,
    aug: &AugmentConfig,
) -> Result<Vec<TrainingSample<T>>> {
    label.validate()?;
    if b0.is_degenerate() {
        return Err(Error::config("degenerate target box"));
    }
    let (w, h) = (x0.width(), x0.height());
    let center: Point<T> = b0.grid_center(stride);
    let mut out = Vec::with_capacity(n_aug + 1);
    out.push(TrainingSample {
        features: x0.clone(),
        label: gaussian_label_map(center, label, w, h),
        center,
    });
    let rms = (x0.as_slice().iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>()
        / x0.as_slice().len() as f64)
        .sqrt();
    let noise = Normal::new(0.0, (aug.noise_rel * rms).max(0.0)).map_err(|e| Error::config(e.to_string()))?;
    for _ in 0..n_aug {
        let sx = rng.gen_range(-aug.max_shift..=aug.max_shift);
        let sy = rng.gen_range(-aug.max_shift..=aug.max_shift);
        let flip = rng.gen_bool(aug.flip_prob);
        let mut features = shift_features(x0, sx, sy);
        let mut c = Point::new(center.x + T::lit(sx as f64), center.y + T::lit(sy as f64));
        if flip {
            features = flip_features(&features);
            c.x = T::lit((w - 1) as f64) - c.x;
        }
        for v in features.as_mut_slice() {
            *v += T::lit(noise.sample(rng));
        }
        out.push(TrainingSample {
            label: gaussian_label_map(c, label, w, h),
            features,
            center: c,
        });
    }
    Ok(out)
}

/// Adjoint of `w -> conv(x, w)`: correlates `v` with the features.
fn conv_adjoint<T: Scalar>(x: &Grid3D<T>, v: &[T], out: &mut [T]) {
    let (w, h, d) = (x.width(), x.height(), x.channels());
    for ky in 0..3 {
        for kx in 0..3 {
            for y in 0..h {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for xx in 0..w {
                    let sx = xx as isize + kx as isize - 1;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let g = v[y * w + xx];
                    if g == T::zero() {
                        continue;
                    }
                    let cell = x.cell(Cell::new(sx as usize, sy as usize));
                    let base = (ky * 3 + kx) * d;
                    for (o, &f) in out[base..base + d].iter_mut().zip(cell) {
                        *o += g * f;
                    }
                }
            }
        }
    }
}

/// Quadratic filter-learning problem over a fixed training set.
struct FilterProblem<'a, T> {
    samples: &'a [TrainingSample<T>],
    lambda2: T,
    channels: usize,
}

impl<T: Scalar> FilterProblem<'_, T> {
    fn filter(&self, w: &[T]) -> ConvBlockParams<T> {
        let mut k = ConvBlockParams::zeros(self.channels, 1, Activation::None);
        k.kernel.copy_from_slice(w);
        k
    }

    fn inv_n(&self) -> T {
        T::one() / T::lit(self.samples.len() as f64)
    }

    /// Normal-equation operator `(1/n sum A^T A + lambda^2) w`.
    fn apply(&self, w: &[T]) -> Vec<T> {
        let k = self.filter(w);
        let mut out = vec![T::zero(); w.len()];
        for s in self.samples {
            let resp = conv2d_same(&s.features, &k).expect("shapes checked");
            conv_adjoint(&s.features, resp.as_slice(), &mut out);
        }
        let inv_n = self.inv_n();
        out.iter_mut().zip(w).for_each(|(o, &wi)| *o = *o * inv_n + self.lambda2 * wi);
        out
    }

    /// Right-hand side `1/n sum A^T c`.
    fn rhs(&self) -> Vec<T> {
        let mut out = vec![T::zero(); 9 * self.channels];
        for s in self.samples {
            conv_adjoint(&s.features, s.label.as_slice(), &mut out);
        }
        let inv_n = self.inv_n();
        out.iter_mut().for_each(|o| *o *= inv_n);
        out
    }

    /// Diagonal of the normal-equation operator.
    fn diagonal(&self) -> Vec<T> {
        let d = self.channels;
        let mut diag = vec![T::zero(); 9 * d];
        for s in self.samples {
            let (w, h) = (s.features.width(), s.features.height());
            for ky in 0..3 {
                for kx in 0..3 {
                    for y in 0..h {
                        for x in 0..w {
                            let (sx, sy) = (x as isize + kx as isize - 1, y as isize + ky as isize - 1);
                            if sx < 0 || sy < 0 || sx >= w as isize || sy >= h as isize {
                                continue;
                            }
                            let cell = s.features.cell(Cell::new(sx as usize, sy as usize));
                            for (c, &f) in cell.iter().enumerate() {
                                diag[(ky * 3 + kx) * d + c] += f * f;
                            }
                        }
                    }
                }
            }
        }
        let inv_n = self.inv_n();
        diag.iter_mut().for_each(|v| *v = *v * inv_n + self.lambda2);
        diag
    }

    fn objective(&self, w: &[T]) -> T {
        let k = self.filter(w);
        let mut data = T::zero();
        for s in self.samples {
            let resp = conv2d_same(&s.features, &k).expect("shapes checked");
            for (&a, &b) in resp.as_slice().iter().zip(s.label.as_slice()) {
                data += (a - b) * (a - b);
            }
        }
        data * self.inv_n() + self.lambda2 * dot(w, w)
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

/// Learned filter plus the objective value after every CG iteration
/// (index 0 is the zero initialization).
#[derive(Clone, Debug)]
pub struct FilterFit<T> {
    pub weights: FilterWeights<T>,
    pub objective_trace: Vec<T>,
    pub iterations: usize,
}

/// Learns the appearance filter with at most `cg_iters` CG iterations.
pub fn learn_filter<T: Scalar>(samples: &[TrainingSample<T>], lambda: T, cg_iters: usize) -> Result<FilterWeights<T>> {
    learn_filter_traced(samples, lambda, cg_iters).map(|f| f.weights)
}

pub fn learn_filter_traced<T: Scalar>(
    samples: &[TrainingSample<T>],
    lambda: T,
    cg_iters: usize,
) -> Result<FilterFit<T>> {
    let first = samples.first().ok_or_else(|| Error::config("no training samples"))?;
    if cg_iters == 0 {
        return Err(Error::config("cg_iters must be at least 1"));
    }
    if !(lambda >= T::zero()) || !lambda.is_finite() {
        return Err(Error::config("lambda must be a finite non-negative number"));
    }
    let d = first.features.channels();
    for s in samples {
        if !s.features.same_shape(&first.features)
            || s.label.width() != s.features.width()
            || s.label.height() != s.features.height()
        {
            return Err(Error::shape("training samples differ in shape"));
        }
    }
    let problem = FilterProblem {
        samples,
        lambda2: lambda * lambda,
        channels: d,
    };
    if problem.diagonal().iter().any(|&v| v <= T::zero()) {
        return Err(Error::SingularSystem);
    }

    let n = 9 * d;
    let b = problem.rhs();
    let b_norm = dot(&b, &b).sqrt();
    let tol = T::lit(1e-14) * (T::one() + b_norm);
    let mut w = vec![T::zero(); n];
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut trace = vec![problem.objective(&w)];
    let mut iterations = 0;
    for _ in 0..cg_iters {
        if rr.sqrt() <= tol {
            break;
        }
        let gp = problem.apply(&p);
        let curvature = dot(&p, &gp);
        if !(curvature > T::zero()) {
            return Err(Error::SingularSystem);
        }
        let alpha = rr / curvature;
        for i in 0..n {
            w[i] += alpha * p[i];
            r[i] -= alpha * gp[i];
        }
        let rr_next = dot(&r, &r);
        let beta = rr_next / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_next;
        iterations += 1;
        let f = problem.objective(&w);
        let prev = *trace.last().expect("non-empty");
        debug_assert!(
            f <= prev + T::lit(1e-6).max(T::epsilon() * T::lit(256.0)) * (T::one() + prev.abs()),
            "CG objective increased: {prev} -> {f}"
        );
        trace.push(f);
        if !f.is_finite() {
            return Err(Error::NonFinite("filter objective".into()));
        }
    }
    let mut kernel = ConvBlockParams::zeros(d, 1, Activation::None);
    kernel.kernel = w;
    Ok(FilterFit {
        weights: FilterWeights { kernel, lambda },
        objective_trace: trace,
        iterations,
    })
}

/// Appearance score map `s = conv(x, w)`.
pub fn apply_filter<T: Scalar>(w: &FilterWeights<T>, x: &Grid3D<T>) -> Result<Grid2D<T>> {
    let out = conv2d_same(x, &w.kernel)?;
    Ok(Grid2D::from_raw(x.width(), x.height(), out.into_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::localize_target;
    use crate::oracle::{dense_filter_system, solve_dense};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn blob_frame(rng: &mut ChaCha8Rng, w: usize, h: usize, d: usize, at: Cell) -> Grid3D<f64> {
        let sig: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Grid3D::from_fn(w, h, d, |c, ch| {
            let r2 = c.point::<f64>().dist2(at.point());
            sig[ch] * (-r2 / 2.0).exp() + 0.05 * rng.gen_range(-1.0..1.0)
        })
    }

    #[test]
    fn no_augmentation_returns_original() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = blob_frame(&mut rng, 8, 8, 3, Cell::new(4, 4));
        let b0 = TargetBox::new(72.0, 72.0, 32.0, 32.0);
        let set = build_training_set(&x, &b0, 0, &mut rng, 16.0, &LabelConfig::default(), &AugmentConfig::default()).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set[0].features, x);
        assert_eq!(localize_target(&set[0].label).0, Cell::new(4, 4));
    }

    #[test]
    fn shift_moves_label_with_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = blob_frame(&mut rng, 10, 10, 2, Cell::new(4, 5));
        let shifted = shift_features(&x, 2, 0);
        assert_eq!(shifted.cell(Cell::new(6, 5)), x.cell(Cell::new(4, 5)));
        let aug = AugmentConfig {
            max_shift: 3,
            flip_prob: 0.0,
            noise_rel: 0.0,
        };
        let b0 = TargetBox::new(4.5 * 16.0, 5.5 * 16.0, 16.0, 16.0);
        let set = build_training_set(&x, &b0, 40, &mut rng, 16.0, &LabelConfig::default(), &aug).unwrap();
        for s in &set[1..] {
            let (peak, _) = localize_target(&s.label);
            let sx = s.center.x as isize - 4;
            let sy = s.center.y as isize - 5;
            assert_eq!(peak, Cell::new((4 + sx) as usize, (5 + sy) as usize));
            if (2..8).contains(&peak.x) && (2..8).contains(&peak.y) {
                assert_eq!(s.features.cell(peak), x.cell(Cell::new(4, 5)));
            }
        }
    }

    #[test]
    fn augmentation_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = blob_frame(&mut rng, 8, 8, 3, Cell::new(3, 3));
        let b0 = TargetBox::new(56.0, 56.0, 16.0, 16.0);
        let run = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            build_training_set(&x, &b0, 6, &mut r, 16.0, &LabelConfig::default(), &AugmentConfig::default()).unwrap()
        };
        assert_eq!(run(9), run(9));
    }

    #[test]
    fn cg_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = blob_frame(&mut rng, 4, 4, 2, Cell::new(1, 2));
        let b0 = TargetBox::new(1.5 * 16.0, 2.5 * 16.0, 16.0, 16.0);
        let samples = build_training_set(&x, &b0, 0, &mut rng, 16.0, &LabelConfig::default(), &AugmentConfig::default()).unwrap();
        let lambda = 0.1;
        let fit = learn_filter_traced(&samples, lambda, 18).unwrap();
        let (g, b) = dense_filter_system(&samples, lambda);
        let direct = solve_dense(g.clone(), b.clone()).unwrap();
        for (a, e) in fit.weights.kernel.kernel.iter().zip(&direct) {
            assert!((a - e).abs() <= 1e-5, "{a} vs {e}");
        }
        for pair in fit.objective_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12);
        }
        // gradient 2 (G w - b) of the objective at the solution
        let w = &fit.weights.kernel.kernel;
        let grad: f64 = (0..w.len())
            .map(|i| {
                let gw: f64 = (0..w.len()).map(|j| g[i][j] * w[j]).sum();
                (2.0 * (gw - b[i])).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(grad <= 1e-4 * (1.0 + b_norm));
    }

    #[test]
    fn huge_lambda_shrinks_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = blob_frame(&mut rng, 8, 8, 4, Cell::new(4, 4));
        let b0 = TargetBox::new(72.0, 72.0, 16.0, 16.0);
        let samples = build_training_set(&x, &b0, 3, &mut rng, 16.0, &LabelConfig::default(), &AugmentConfig::default()).unwrap();
        let w = learn_filter(&samples, 1e6, 20).unwrap();
        assert!(w.norm() <= 1e-3);
    }

    #[test]
    fn zero_features_without_regularization_is_singular() {
        let x = Grid3D::<f64>::zeros(5, 5, 2);
        let b0 = TargetBox::new(40.0, 40.0, 16.0, 16.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let samples = build_training_set(&x, &b0, 0, &mut rng, 16.0, &LabelConfig::default(), &AugmentConfig::default()).unwrap();
        assert!(matches!(learn_filter(&samples, 0.0, 10), Err(Error::SingularSystem)));
    }

    #[test]
    fn filter_round_trip_and_linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let at = Cell::new(5, 3);
        let x = blob_frame(&mut rng, 10, 8, 4, at);
        let b0 = TargetBox::new(5.5 * 16.0, 3.5 * 16.0, 16.0, 16.0);
        let samples = build_training_set(&x, &b0, 8, &mut rng, 16.0, &LabelConfig::default(), &AugmentConfig::default()).unwrap();
        let w = learn_filter(&samples, 0.05, 50).unwrap();
        let s = apply_filter(&w, &x).unwrap();
        assert!(localize_target(&s).0.chebyshev(at) <= 1);

        let scaled = x.map(|v| 2.5 * v);
        let s2 = apply_filter(&w, &scaled).unwrap();
        for (a, b) in s2.as_slice().iter().zip(s.as_slice()) {
            assert!((a - 2.5 * b).abs() < 1e-12);
        }
        let zero = FilterWeights::zeros(4, 0.1);
        assert!(apply_filter(&zero, &x).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }
}

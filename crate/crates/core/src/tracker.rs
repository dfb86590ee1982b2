//! The frame-by-frame tracking loop and its online heuristics.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::appearance::{apply_filter, build_training_set, learn_filter, AugmentConfig, FilterWeights};
use crate::cost_volume::DisplacementWindow;
use crate::error::{Error, Result};
use crate::fusion::{fuse_scores_with, localize_target};
use crate::geometry::TargetBox;
use crate::grid::{hann_window, Cell, Grid2D, Grid3D, LabelConfig, WINDOW_FLOOR};
use crate::model::ModelParams;
use crate::propagation::{init_states, propagation_pipeline, StateField};
use crate::scalar::Scalar;
use crate::state_update::{build_gru_input, conv_gru_step};

/// Which parts of the pipeline take part in localization.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Ablation {
    #[default]
    Full,
    /// Argmax of the windowed appearance score; no states.
    AppearanceOnly,
    /// Identity propagation: `h_hat = h`, reliability zero.
    NoPropagation,
    /// Reliability channel zeroed before fusion.
    NoReliability,
    /// Appearance score zeroed everywhere and the mask disabled.
    NoAppearance,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Full,
        Ablation::AppearanceOnly,
        Ablation::NoPropagation,
        Ablation::NoReliability,
        Ablation::NoAppearance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::AppearanceOnly => "appearance-only",
            Ablation::NoPropagation => "no-propagation",
            Ablation::NoReliability => "no-reliability",
            Ablation::NoAppearance => "no-appearance",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config(format!("unknown ablation '{s}'")))
    }
}

#[derive(Clone, Debug)]
pub struct TrackerConfig<T> {
    /// Image pixels per feature cell.
    pub stride: f64,
    /// Peak fused confidence below which the target counts as lost.
    pub lost_threshold: T,
    /// Largest appearance/fused peak offset (cells) resolved in favor of
    /// the appearance peak.
    pub drift_offset_max: usize,
    pub window_floor: T,
    pub displacement: DisplacementWindow,
    pub label: LabelConfig<T>,
    pub filter_lambda: T,
    pub cg_iters: usize,
    pub n_aug: usize,
    pub augment: AugmentConfig,
    /// Seeds first-frame augmentation.
    pub seed: u64,
    pub ablation: Ablation,
    pub params: ModelParams<T>,
}

impl<T: Scalar> Default for TrackerConfig<T> {
    fn default() -> Self {
        TrackerConfig {
            stride: 16.0,
            lost_threshold: T::lit(0.05),
            drift_offset_max: 1,
            window_floor: T::lit(WINDOW_FLOOR),
            displacement: DisplacementWindow::new(9),
            label: LabelConfig::default(),
            filter_lambda: T::lit(0.1),
            cg_iters: 60,
            n_aug: 8,
            augment: AugmentConfig::default(),
            seed: 0,
            ablation: Ablation::Full,
            params: ModelParams::initial(),
        }
    }
}

impl<T: Scalar> TrackerConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.stride > 0.0) {
            return Err(Error::config("stride must be positive"));
        }
        if !(self.lost_threshold >= T::zero() && self.lost_threshold < T::one()) {
            return Err(Error::config("lost threshold must lie in [0, 1)"));
        }
        if !(self.window_floor >= T::zero() && self.window_floor <= T::one()) {
            return Err(Error::config("window floor must lie in [0, 1]"));
        }
        self.label.validate()?;
        self.params.validate()
    }
}

/// Recurrent tracker state threaded through the sequence.
#[derive(Clone, Debug)]
pub struct TrackerState<T> {
    pub states: StateField<T>,
    pub x_prev: Grid3D<T>,
    pub filter: FilterWeights<T>,
    pub target_box: TargetBox,
    pub frame: usize,
    pub lost: bool,
}

/// Per-frame record written by `track`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameDiagnostics {
    pub frame: usize,
    pub target_box: TargetBox,
    /// Peak of the windowed appearance score.
    pub max_s: f64,
    /// Peak of the windowed fused score (absent for frame 0 and the
    /// appearance-only path).
    pub max_fused: Option<f64>,
    pub mean_xi: Option<f64>,
    pub lost: bool,
}

/// Box centered on `cell` with the size of `prev`.
pub fn grid_to_image_box(cell: Cell, prev: &TargetBox, stride: f64) -> TargetBox {
    TargetBox::new(
        (cell.x as f64 + 0.5) * stride,
        (cell.y as f64 + 0.5) * stride,
        prev.width,
        prev.height,
    )
}

/// Learns the appearance filter on the augmented first frame and
/// initializes the states.
pub fn init_tracker<T: Scalar>(x0: &Grid3D<T>, b0: &TargetBox, cfg: &TrackerConfig<T>) -> Result<TrackerState<T>> {
    cfg.validate()?;
    if b0.is_degenerate() {
        return Err(Error::config("degenerate initial box"));
    }
    let (w, h) = (x0.width(), x0.height());
    if b0.center_cell(cfg.stride, w, h).is_none() {
        return Err(Error::AnnotationOutOfCrop);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samples = build_training_set(x0, b0, cfg.n_aug, &mut rng, cfg.stride, &cfg.label, &cfg.augment)?;
    let filter = learn_filter(&samples, cfg.filter_lambda, cfg.cg_iters)?;
    let states = init_states(b0, &cfg.params.initializer, w, h, cfg.stride)?;
    Ok(TrackerState {
        states,
        x_prev: x0.clone(),
        filter,
        target_box: *b0,
        frame: 0,
        lost: false,
    })
}

fn window_for<T: Scalar>(state: &TrackerState<T>, cfg: &TrackerConfig<T>, w: usize, h: usize) -> Grid2D<T> {
    let center = match state.target_box.center_cell(cfg.stride, w, h) {
        Some(c) => c.point(),
        None => state.target_box.grid_center(cfg.stride),
    };
    hann_window(w, h, center, cfg.window_floor)
}

/// One step of the tracking loop.
pub fn track_frame<T: Scalar>(
    state: &TrackerState<T>,
    x: &Grid3D<T>,
    cfg: &TrackerConfig<T>,
) -> Result<(TrackerState<T>, TargetBox, FrameDiagnostics)> {
    if !x.same_shape(&state.x_prev) {
        return Err(Error::shape("frame differs in shape from the previous frame"));
    }
    let (w, h) = (x.width(), x.height());
    let window = window_for(state, cfg, w, h);
    let mut s = apply_filter(&state.filter, x)?.hadamard(&window);
    let frame = state.frame + 1;

    if cfg.ablation == Ablation::AppearanceOnly {
        let (peak, value) = localize_target(&s);
        let lost = value < cfg.lost_threshold;
        let target_box = if lost {
            state.target_box
        } else {
            grid_to_image_box(peak, &state.target_box, cfg.stride)
        };
        let next = TrackerState {
            states: state.states.clone(),
            x_prev: x.clone(),
            filter: state.filter.clone(),
            target_box,
            frame,
            lost,
        };
        let diag = FrameDiagnostics {
            frame,
            target_box,
            max_s: s.max().to_f64_lossy(),
            max_fused: None,
            mean_xi: None,
            lost,
        };
        return Ok((next, target_box, diag));
    }

    if cfg.ablation == Ablation::NoAppearance {
        s = Grid2D::zeros(w, h);
    }
    let (h_hat, mut xi) = match cfg.ablation {
        Ablation::NoPropagation => (state.states.clone(), Grid2D::zeros(w, h)),
        _ => {
            let prop = propagation_pipeline(x, &state.x_prev, &state.states, &cfg.params.correspondence, cfg.displacement)?;
            (prop.states, prop.reliability)
        }
    };
    let mean_xi = xi.mean().to_f64_lossy();
    if cfg.ablation == Ablation::NoReliability {
        xi = Grid2D::zeros(w, h);
    }
    let apply_mask = cfg.ablation != Ablation::NoAppearance;
    let fused = fuse_scores_with(&h_hat, &xi, &s, &cfg.params.predictor, apply_mask)?;
    let confidence = fused.masked.hadamard(&window);
    let (fused_peak, peak_value) = localize_target(&confidence);

    let mut target_cell = fused_peak;
    if cfg.ablation != Ablation::NoAppearance {
        let (appearance_peak, _) = localize_target(&s);
        if appearance_peak.chebyshev(fused_peak) <= cfg.drift_offset_max
            && confidence.get(appearance_peak) > cfg.lost_threshold
        {
            target_cell = appearance_peak;
        }
    }

    let lost = peak_value < cfg.lost_threshold;
    let (states, target_box) = if lost {
        (state.states.clone(), state.target_box)
    } else {
        let f = build_gru_input(&fused, &s)?;
        (
            conv_gru_step(&h_hat, &f, &cfg.params.gru)?,
            grid_to_image_box(target_cell, &state.target_box, cfg.stride),
        )
    };
    let next = TrackerState {
        states,
        x_prev: x.clone(),
        filter: state.filter.clone(),
        target_box,
        frame,
        lost,
    };
    let diag = FrameDiagnostics {
        frame,
        target_box,
        max_s: s.max().to_f64_lossy(),
        max_fused: Some(peak_value.to_f64_lossy()),
        mean_xi: Some(mean_xi),
        lost,
    };
    Ok((next, target_box, diag))
}

#[derive(Clone, Debug)]
pub struct TrackRun {
    /// One box per input frame; frame 0 is the annotation.
    pub boxes: Vec<TargetBox>,
    pub diagnostics: Vec<FrameDiagnostics>,
}

/// Runs the loop over a whole sequence.
pub fn track_sequence<T: Scalar>(frames: &[Grid3D<T>], b0: &TargetBox, cfg: &TrackerConfig<T>) -> Result<TrackRun> {
    let first = frames.first().ok_or_else(|| Error::config("empty frame sequence"))?;
    let mut state = init_tracker(first, b0, cfg)?;
    let (w, h) = (first.width(), first.height());
    let s0 = apply_filter(&state.filter, first)?.hadamard(&window_for(&state, cfg, w, h));
    let mut boxes = vec![*b0];
    let mut diagnostics = vec![FrameDiagnostics {
        frame: 0,
        target_box: *b0,
        max_s: s0.max().to_f64_lossy(),
        max_fused: None,
        mean_xi: None,
        lost: false,
    }];
    for x in &frames[1..] {
        let (next, b, diag) = track_frame(&state, x, cfg)?;
        boxes.push(b);
        diagnostics.push(diag);
        state = next;
    }
    Ok(TrackRun { boxes, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::PredictorParams;
    use crate::propagation::STATE_DIM;

    /// Frame with a Gaussian blob of signature `sig` at `at` over a static texture.
    fn frame(at: (f64, f64), sig: &[f64], texture: &Grid3D<f64>) -> Grid3D<f64> {
        Grid3D::from_fn(texture.width(), texture.height(), sig.len(), |c, ch| {
            let d2 = (c.x as f64 - at.0).powi(2) + (c.y as f64 - at.1).powi(2);
            texture.get(c, ch) + sig[ch] * (-d2 / 1.5).exp()
        })
    }

    fn texture(w: usize, h: usize, d: usize, seed: u64) -> Grid3D<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Grid3D::from_fn(w, h, d, |_, _| rng.gen_range(-0.3..0.3))
    }

    fn sig() -> Vec<f64> {
        vec![1.0, -0.5, 0.8, 0.2, -0.9, 0.4, 0.6, -0.3]
    }

    fn small_cfg() -> TrackerConfig<f64> {
        TrackerConfig {
            displacement: DisplacementWindow::new(4),
            ..TrackerConfig::default()
        }
    }

    #[test]
    fn grid_box_mapping() {
        let prev = TargetBox::new(100.0, 80.0, 30.0, 20.0);
        let b = grid_to_image_box(Cell::new(0, 0), &prev, 16.0);
        assert_eq!((b.cx, b.cy, b.width, b.height), (8.0, 8.0, 30.0, 20.0));
        let cell = prev.center_cell(16.0, 18, 18).unwrap();
        let back = grid_to_image_box(cell, &prev, 16.0);
        assert!((back.cx - prev.cx).abs() <= 8.0 && (back.cy - prev.cy).abs() <= 8.0);
    }

    #[test]
    fn init_matches_components_and_is_deterministic() {
        let tex = texture(12, 12, 8, 1);
        let x0 = frame((5.0, 6.0), &sig(), &tex);
        let b0 = TargetBox::new(5.5 * 16.0, 6.5 * 16.0, 24.0, 24.0);
        let cfg = small_cfg();
        let st = init_tracker(&x0, &b0, &cfg).unwrap();
        assert_eq!(st.frame, 0);
        assert!(!st.lost);
        let h0 = init_states(&b0, &cfg.params.initializer, 12, 12, 16.0).unwrap();
        assert_eq!(st.states, h0);
        let again = init_tracker(&x0, &b0, &cfg).unwrap();
        assert_eq!(again.filter, st.filter);
        assert!(matches!(
            init_tracker(&x0, &TargetBox::new(5.0, 5.0, 0.0, 4.0), &cfg),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            init_tracker(&x0, &TargetBox::new(500.0, 5.0, 4.0, 4.0), &cfg),
            Err(Error::AnnotationOutOfCrop)
        ));
    }

    #[test]
    fn fully_masked_frame_is_lost_and_frozen() {
        let tex = texture(10, 10, 8, 2);
        let x0 = frame((4.0, 4.0), &sig(), &tex);
        let b0 = TargetBox::new(4.5 * 16.0, 4.5 * 16.0, 24.0, 24.0);
        let mut cfg = small_cfg();
        cfg.params.predictor.mu = 0.99;
        let st = init_tracker(&x0, &b0, &cfg).unwrap();
        let (next, b, diag) = track_frame(&st, &x0, &cfg).unwrap();
        assert!(next.lost && diag.lost);
        assert_eq!(b, b0);
        assert_eq!(next.states, st.states);
        assert_eq!(diag.max_fused, Some(0.0));
    }

    #[test]
    fn identical_second_frame_keeps_position() {
        let tex = texture(14, 14, 8, 3);
        let x0 = frame((6.0, 7.0), &sig(), &tex);
        let b0 = TargetBox::new(6.5 * 16.0, 7.5 * 16.0, 24.0, 24.0);
        let cfg = small_cfg();
        let run = track_sequence(&[x0.clone(), x0], &b0, &cfg).unwrap();
        assert_eq!(run.boxes.len(), 2);
        assert!((run.boxes[1].cx - b0.cx).abs() <= 16.0);
        assert!((run.boxes[1].cy - b0.cy).abs() <= 16.0);
        assert!(!run.diagnostics[1].lost);
    }

    #[test]
    fn follows_rightward_motion() {
        let tex = texture(18, 18, 8, 4);
        let frames: Vec<_> = (0..6).map(|t| frame((5.0 + t as f64, 8.0), &sig(), &tex)).collect();
        let b0 = TargetBox::new(5.5 * 16.0, 8.5 * 16.0, 24.0, 24.0);
        let run = track_sequence(&frames, &b0, &small_cfg()).unwrap();
        for pair in run.boxes.windows(2) {
            assert!((pair[1].cx - pair[0].cx - 16.0).abs() <= 16.0);
            assert!((pair[1].cy - pair[0].cy).abs() <= 16.0);
        }
    }

    #[test]
    fn single_and_static_sequences() {
        let tex = texture(12, 12, 8, 5);
        let x0 = frame((6.0, 5.0), &sig(), &tex);
        let b0 = TargetBox::new(6.5 * 16.0, 5.5 * 16.0, 24.0, 24.0);
        let cfg = small_cfg();
        let run = track_sequence(std::slice::from_ref(&x0), &b0, &cfg).unwrap();
        assert_eq!(run.boxes, vec![b0]);
        let frames = vec![x0; 5];
        let run = track_sequence(&frames, &b0, &cfg).unwrap();
        for b in &run.boxes {
            assert!((b.cx - b0.cx).abs() <= 16.0 && (b.cy - b0.cy).abs() <= 16.0);
        }
        for d in &run.diagnostics[1..] {
            assert!(d.max_fused.is_some() && d.mean_xi.is_some());
        }
        assert!(track_sequence::<f64>(&[], &b0, &cfg).is_err());
    }

    #[test]
    fn replicating_predictor_matches_baseline() {
        let tex = texture(16, 16, 8, 6);
        let frames: Vec<_> = (0..8)
            .map(|t| frame((4.0 + 0.8 * t as f64, 6.0 + 0.5 * t as f64), &sig(), &tex))
            .collect();
        let b0 = TargetBox::new(4.5 * 16.0, 6.5 * 16.0, 24.0, 24.0);
        let cfg = small_cfg();
        assert_eq!(
            cfg.params.predictor,
            PredictorParams::appearance_replicating(STATE_DIM, 8.0, -4.0)
        );
        let full = track_sequence(&frames, &b0, &cfg).unwrap();
        let base_cfg = TrackerConfig {
            ablation: Ablation::AppearanceOnly,
            ..cfg
        };
        let base = track_sequence(&frames, &b0, &base_cfg).unwrap();
        assert_eq!(full.boxes, base.boxes);
    }

    #[test]
    fn ablation_names_round_trip() {
        for a in Ablation::ALL {
            assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
        }
        assert!("bogus".parse::<Ablation>().is_err());
    }
}

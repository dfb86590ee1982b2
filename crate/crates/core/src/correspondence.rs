//! Dense correspondence from matching costs.
//!
//! Raw costs are processed slice by slice (one `W x H` slice per
//! previous-frame cell), normalized over current-frame locations, processed
//! again and normalized over previous-frame locations. The result is a
//! per-current-cell distribution over its source cells.

use crate::cost_volume::{CostVolume, DisplacementVolume, DisplacementWindow};
use crate::error::{Error, Result};
use crate::grid::{conv3x3_into, softmax_in_place, Activation, Cell, ConvBlockParams, Grid2D};
use crate::scalar::Scalar;

/// Processed matching costs, same layout as [`CostVolume`].
pub type MatchingCosts<T> = DisplacementVolume<T>;

/// Hidden width of the slice networks.
pub const SLICE_HIDDEN: usize = 8;

/// Two conv blocks applied to every cost-volume slice with shared weights:
/// `1 -> 8` (affine, relu) then `8 -> 1` (affine).
#[derive(Clone, Debug, PartialEq)]
pub struct SliceNet<T> {
    pub conv1: ConvBlockParams<T>,
    pub conv2: ConvBlockParams<T>,
}

impl<T: Scalar> SliceNet<T> {
    pub fn zeros() -> Self {
        SliceNet {
            conv1: ConvBlockParams::zeros_with_affine(1, SLICE_HIDDEN, Activation::Relu),
            conv2: ConvBlockParams::zeros_with_affine(SLICE_HIDDEN, 1, Activation::None),
        }
    }

    /// Weights under which the net computes `gain * input` exactly, as long
    /// as `gain * input + shift > 0` everywhere.
    ///
    /// Hidden unit 0 carries the shifted, scaled input through the relu and
    /// the output conv removes the shift again. Only center taps are used,
    /// so zero-padded neighbors never leak in.
    pub fn pass_through(gain: T, shift: T) -> Self {
        let mut net = Self::zeros();
        net.conv1.set_weight(1, 1, 0, 0, gain);
        net.conv1.bias[0] = shift;
        net.conv2.set_weight(1, 1, 0, 0, T::one());
        net.conv2.bias[0] = -shift;
        net
    }

    pub fn validate(&self) -> Result<()> {
        self.conv1.validate()?;
        self.conv2.validate()?;
        if self.conv1.c_in != 1 || self.conv1.c_out != self.conv2.c_in || self.conv2.c_out != 1 {
            return Err(Error::shape("slice net must map 1 -> k -> 1 channels"));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> SliceNet<U> {
        SliceNet {
            conv1: self.conv1.cast(),
            conv2: self.conv2.cast(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondenceNetParams<T> {
    /// Applied to raw costs before the current-frame softmax.
    pub stage1: SliceNet<T>,
    /// Applied to the initial correspondence before the previous-frame softmax.
    pub stage2: SliceNet<T>,
}

/// Gains of the shipped pass-through configuration.
pub const PASS_THROUGH_GAIN1: f64 = 40.0;
pub const PASS_THROUGH_GAIN2: f64 = 12.0;
const PASS_THROUGH_SHIFT: f64 = 50.0;

impl<T: Scalar> CorrespondenceNetParams<T> {
    /// Training-free configuration: processed costs are proportional to raw
    /// costs, and the refined scores proportional to the initial correspondence.
    pub fn pass_through() -> Self {
        Self::pass_through_with(T::lit(PASS_THROUGH_GAIN1), T::lit(PASS_THROUGH_GAIN2))
    }

    pub fn pass_through_with(gain1: T, gain2: T) -> Self {
        CorrespondenceNetParams {
            stage1: SliceNet::pass_through(gain1, T::lit(PASS_THROUGH_SHIFT)),
            stage2: SliceNet::pass_through(gain2, T::lit(PASS_THROUGH_SHIFT)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stage1.validate()?;
        self.stage2.validate()
    }

    pub fn cast<U: Scalar>(&self) -> CorrespondenceNetParams<U> {
        CorrespondenceNetParams {
            stage1: self.stage1.cast(),
            stage2: self.stage2.cast(),
        }
    }
}

/// `p(r' | r)` for every current cell `r`, indexed by the reverse
/// displacement slot `k` with `r' = r - d_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondenceField<T> {
    width: usize,
    height: usize,
    window: DisplacementWindow,
    prob: Vec<T>,
    valid: Vec<bool>,
}

impl<T: Scalar> CorrespondenceField<T> {
    /// Builds a field from explicit rows; rows must be normalized over their
    /// valid slots.
    pub fn from_rows(
        width: usize,
        height: usize,
        window: DisplacementWindow,
        prob: Vec<T>,
    ) -> Result<Self> {
        let m = window.len();
        if prob.len() != width * height * m {
            return Err(Error::shape("correspondence rows have the wrong length"));
        }
        let mut valid = vec![false; prob.len()];
        for y in 0..height {
            for x in 0..width {
                for k in 0..m {
                    let (dx, dy) = window.displacement(k);
                    let i = (y * width + x) * m + k;
                    valid[i] = Cell::new(x, y).offset(-dx, -dy, width, height).is_some();
                    if !valid[i] && prob[i] != T::zero() {
                        return Err(Error::shape("probability mass on an off-grid source"));
                    }
                    if prob[i] < T::zero() || !prob[i].is_finite() {
                        return Err(Error::NonFinite("negative or non-finite probability".into()));
                    }
                }
            }
        }
        Ok(CorrespondenceField {
            width,
            height,
            window,
            prob,
            valid,
        })
    }

    /// Uniform distribution over every cell's valid sources.
    pub fn uniform(width: usize, height: usize, window: DisplacementWindow) -> Self {
        let m = window.len();
        let mut prob = vec![T::zero(); width * height * m];
        for y in 0..height {
            for x in 0..width {
                let r = Cell::new(x, y);
                let slots: Vec<usize> = (0..m)
                    .filter(|&k| {
                        let (dx, dy) = window.displacement(k);
                        r.offset(-dx, -dy, width, height).is_some()
                    })
                    .collect();
                let v = T::one() / T::lit(slots.len() as f64);
                for k in slots {
                    prob[(y * width + x) * m + k] = v;
                }
            }
        }
        Self::from_rows(width, height, window, prob).expect("uniform rows are well formed")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn window(&self) -> DisplacementWindow {
        self.window
    }

    pub fn row(&self, r: Cell) -> &[T] {
        let m = self.window.len();
        let i = (r.y * self.width + r.x) * m;
        &self.prob[i..i + m]
    }

    pub fn row_valid(&self, r: Cell) -> &[bool] {
        let m = self.window.len();
        let i = (r.y * self.width + r.x) * m;
        &self.valid[i..i + m]
    }

    /// `p(source | r)`; zero when `source` is outside the window.
    pub fn prob(&self, source: Cell, r: Cell) -> T {
        let d = self.window.d_max as isize;
        let dx = r.x as isize - source.x as isize;
        let dy = r.y as isize - source.y as isize;
        if dx.abs() > d || dy.abs() > d {
            return T::zero();
        }
        self.row(r)[self.window.slot(dx, dy)]
    }

    /// Most likely source cell for `r` (ties: lowest slot).
    pub fn argmax_source(&self, r: Cell) -> Cell {
        let row = self.row(r);
        let valid = self.row_valid(r);
        let mut best = None::<usize>;
        for k in 0..row.len() {
            if valid[k] && best.map_or(true, |b| row[k] > row[b]) {
                best = Some(k);
            }
        }
        let (dx, dy) = self.window.displacement(best.expect("every cell has a source"));
        r.offset(-dx, -dy, self.width, self.height).expect("valid slot")
    }

    /// Number of valid sources of `r`.
    pub fn support(&self, r: Cell) -> usize {
        self.row_valid(r).iter().filter(|&&v| v).count()
    }
}

/// Scratch buffers for slice processing.
struct SliceScratch<T> {
    slice: Vec<T>,
    hidden: Vec<T>,
    out: Vec<T>,
}

impl<T: Scalar> SliceScratch<T> {
    fn new(cells: usize, hidden: usize) -> Self {
        SliceScratch {
            slice: vec![T::zero(); cells],
            hidden: vec![T::zero(); cells * hidden],
            out: vec![T::zero(); cells],
        }
    }
}

/// Runs `net` on every per-source slice of `vol` and gathers the outputs at
/// the valid entries. Invalid entries of the result are zero.
fn apply_slice_net<T: Scalar>(vol: &DisplacementVolume<T>, net: &SliceNet<T>) -> DisplacementVolume<T> {
    let (w, h) = (vol.width(), vol.height());
    let win = vol.window();
    let m = win.len();
    let mut out = vec![T::zero(); w * h * m];
    let mut scratch = SliceScratch::new(w * h, net.conv1.c_out);
    for y in 0..h {
        for x in 0..w {
            let src = Cell::new(x, y);
            let base = vol.offset_of(src, 0);
            scratch.slice.iter_mut().for_each(|v| *v = T::zero());
            for k in 0..m {
                if vol.valid_mask()[base + k] {
                    let (dx, dy) = win.displacement(k);
                    let t = src.offset(dx, dy, w, h).expect("valid slot");
                    scratch.slice[t.y * w + t.x] = vol.values()[base + k];
                }
            }
            conv3x3_into(&scratch.slice, w, h, &net.conv1, &mut scratch.hidden);
            conv3x3_into(&scratch.hidden, w, h, &net.conv2, &mut scratch.out);
            for k in 0..m {
                if vol.valid_mask()[base + k] {
                    let (dx, dy) = win.displacement(k);
                    let t = src.offset(dx, dy, w, h).expect("valid slot");
                    out[base + k] = scratch.out[t.y * w + t.x];
                }
            }
        }
    }
    vol.with_values(out)
}

/// Processed matching costs `phi` from raw costs.
pub fn process_matching_costs<T: Scalar>(cv: &CostVolume<T>, stage1: &SliceNet<T>) -> Result<MatchingCosts<T>> {
    stage1.validate()?;
    Ok(apply_slice_net(cv, stage1))
}

/// Softmax of every source row over its valid current-frame locations.
pub fn initial_correspondence<T: Scalar>(phi: &MatchingCosts<T>) -> Result<MatchingCosts<T>> {
    let m = phi.window().len();
    let mut values = phi.values().to_vec();
    let valid = phi.valid_mask();
    for (row, mask) in values.chunks_mut(m).zip(valid.chunks(m)) {
        if !softmax_in_place(row, mask) {
            return Err(Error::EmptySupport);
        }
    }
    Ok(phi.with_values(values))
}

/// Second slice network, regrouped by current cell and normalized over
/// previous-frame locations.
pub fn refine_correspondence<T: Scalar>(
    phi_prime: &MatchingCosts<T>,
    stage2: &SliceNet<T>,
) -> Result<CorrespondenceField<T>> {
    stage2.validate()?;
    let scores = apply_slice_net(phi_prime, stage2);
    let (w, h) = (scores.width(), scores.height());
    let win = scores.window();
    let m = win.len();
    let mut prob = vec![T::zero(); w * h * m];
    let mut valid = vec![false; w * h * m];
    for y in 0..h {
        for x in 0..w {
            let r = Cell::new(x, y);
            let base = (y * w + x) * m;
            for k in 0..m {
                let (dx, dy) = win.displacement(k);
                if let Some(src) = r.offset(-dx, -dy, w, h) {
                    valid[base + k] = true;
                    prob[base + k] = scores.get(src, k);
                }
            }
            if !softmax_in_place(&mut prob[base..base + m], &valid[base..base + m]) {
                return Err(Error::EmptySupport);
            }
        }
    }
    Ok(CorrespondenceField {
        width: w,
        height: h,
        window: win,
        prob,
        valid,
    })
}

/// Negated Shannon entropy (natural log) of every correspondence row.
pub fn reliability_map<T: Scalar>(p: &CorrespondenceField<T>) -> Grid2D<T> {
    Grid2D::from_fn(p.width, p.height, |r| {
        p.row(r)
            .iter()
            .zip(p.row_valid(r))
            .filter(|(&v, &ok)| ok && v > T::zero())
            .map(|(&v, _)| v * v.ln())
            .sum()
    })
}

/// Full correspondence stack from a cost volume.
pub fn correspondence_from_costs<T: Scalar>(
    cv: &CostVolume<T>,
    nets: &CorrespondenceNetParams<T>,
) -> Result<CorrespondenceField<T>> {
    let phi = process_matching_costs(cv, &nets.stage1)?;
    let phi_prime = initial_correspondence(&phi)?;
    refine_correspondence(&phi_prime, &nets.stage2)
}

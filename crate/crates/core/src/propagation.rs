//! Scene-state initialization and propagation between frames.

use crate::correspondence::{correspondence_from_costs, reliability_map, CorrespondenceField, CorrespondenceNetParams};
use crate::cost_volume::{build_cost_volume, CostVolume, DisplacementWindow};
use crate::error::{Error, Result};
use crate::geometry::TargetBox;
use crate::grid::{conv2d_same, gaussian_label_map, Activation, ConvBlockParams, Grid2D, Grid3D, LabelConfig};
use crate::scalar::Scalar;

/// Per-cell state vectors, `W x H x S`.
pub type StateField<T> = Grid3D<T>;

/// State dimension used throughout.
pub const STATE_DIM: usize = 8;

/// Maps the first-frame label map to initial states: one conv, then tanh.
#[derive(Clone, Debug, PartialEq)]
pub struct InitializerParams<T> {
    pub conv: ConvBlockParams<T>,
    pub label: LabelConfig<T>,
}

impl<T: Scalar> InitializerParams<T> {
    /// Channel 0 marks the target (`+tanh(1.5)` at the label peak,
    /// `-tanh(1.5)` far away); remaining channels start at zero.
    pub fn target_marker(state_dim: usize) -> Self {
        let mut conv = ConvBlockParams::zeros(1, state_dim, Activation::Tanh);
        conv.set_weight(1, 1, 0, 0, T::lit(3.0));
        conv.bias[0] = T::lit(-1.5);
        InitializerParams {
            conv,
            label: LabelConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.conv.validate()?;
        self.label.validate()?;
        if self.conv.c_in != 1 || self.conv.activation != Activation::Tanh {
            return Err(Error::shape("initializer must be a 1-channel conv with tanh"));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> InitializerParams<U> {
        InitializerParams {
            conv: self.conv.cast(),
            label: LabelConfig {
                sigma: U::lit(self.label.sigma.to_f64_lossy()),
                peak: U::lit(self.label.peak.to_f64_lossy()),
            },
        }
    }
}

/// Initial states from the first-frame annotation.
pub fn init_states<T: Scalar>(
    b0: &TargetBox,
    params: &InitializerParams<T>,
    width: usize,
    height: usize,
    stride: f64,
) -> Result<StateField<T>> {
    params.validate()?;
    if b0.center_cell(stride, width, height).is_none() {
        return Err(Error::AnnotationOutOfCrop);
    }
    let label = gaussian_label_map(b0.grid_center(stride), &params.label, width, height);
    conv2d_same(&Grid3D::from_plane(&label), &params.conv)
}

/// Expectation of the previous states under the correspondence distribution.
pub fn propagate_states<T: Scalar>(h_prev: &StateField<T>, p: &CorrespondenceField<T>) -> Result<StateField<T>> {
    let (w, h) = (h_prev.width(), h_prev.height());
    if p.width() != w || p.height() != h {
        return Err(Error::shape("state field and correspondence differ in size"));
    }
    let s = h_prev.channels();
    let win = p.window();
    let mut out = StateField::zeros(w, h, s);
    for y in 0..h {
        for x in 0..w {
            let r = crate::grid::Cell::new(x, y);
            let row = p.row(r);
            let valid = p.row_valid(r);
            let acc = out.cell_mut(r);
            for k in 0..win.len() {
                if !valid[k] || row[k] == T::zero() {
                    continue;
                }
                let (dx, dy) = win.displacement(k);
                let src = r.offset(-dx, -dy, w, h).expect("valid slot");
                let pk = row[k];
                for (a, &v) in acc.iter_mut().zip(h_prev.cell(src)) {
                    *a += pk * v;
                }
            }
        }
    }
    Ok(out)
}

/// Output of one propagation step.
#[derive(Clone, Debug)]
pub struct Propagation<T> {
    /// Propagated states at current-frame locations.
    pub states: StateField<T>,
    /// Negated correspondence entropy per current cell.
    pub reliability: Grid2D<T>,
    pub correspondence: CorrespondenceField<T>,
}

/// Propagation from a precomputed cost volume.
pub fn propagate_with_costs<T: Scalar>(
    cv: &CostVolume<T>,
    h_prev: &StateField<T>,
    nets: &CorrespondenceNetParams<T>,
) -> Result<Propagation<T>> {
    let correspondence = correspondence_from_costs(cv, nets)?;
    let states = propagate_states(h_prev, &correspondence)?;
    let reliability = reliability_map(&correspondence);
    Ok(Propagation {
        states,
        reliability,
        correspondence,
    })
}

/// Cost volume, correspondence, expectation and reliability in one call.
pub fn propagation_pipeline<T: Scalar>(
    x_curr: &Grid3D<T>,
    x_prev: &Grid3D<T>,
    h_prev: &StateField<T>,
    nets: &CorrespondenceNetParams<T>,
    window: DisplacementWindow,
) -> Result<Propagation<T>> {
    if h_prev.width() != x_curr.width() || h_prev.height() != x_curr.height() {
        return Err(Error::shape("state field and features differ in size"));
    }
    let cv = build_cost_volume(x_prev, x_curr, window)?;
    propagate_with_costs(&cv, h_prev, nets)
}

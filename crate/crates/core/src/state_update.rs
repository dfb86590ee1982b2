//! Convolutional GRU that writes current-frame evidence into the states.

use crate::error::{Error, Result};
use crate::fusion::FusedScores;
use crate::grid::{conv3x3_into, Activation, ConvBlockParams, Grid2D, Grid3D};
use crate::propagation::StateField;
use crate::scalar::Scalar;

/// Channels of the GRU observation: `[fused, s, max fused, max s]`.
pub const GRU_INPUT_CHANNELS: usize = 4;

/// Gate and candidate convolutions, each `4 + S -> S`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams<T> {
    pub update_gate: ConvBlockParams<T>,
    pub reset_gate: ConvBlockParams<T>,
    pub candidate: ConvBlockParams<T>,
}

impl<T: Scalar> GruParams<T> {
    /// Zero kernels with the standard gate biases (update `-1`, reset `0`).
    pub fn zeros(state_dim: usize) -> Self {
        let c_in = GRU_INPUT_CHANNELS + state_dim;
        let mut update_gate = ConvBlockParams::zeros(c_in, state_dim, Activation::Sigmoid);
        update_gate.bias.iter_mut().for_each(|b| *b = -T::one());
        GruParams {
            update_gate,
            reset_gate: ConvBlockParams::zeros(c_in, state_dim, Activation::Sigmoid),
            candidate: ConvBlockParams::zeros(c_in, state_dim, Activation::Tanh),
        }
    }

    /// Zero init plus a target memory on state channel 0. The candidate is
    /// `tanh(8 (sum of fused over the 3x3 neighbourhood - max fused) + 2)`,
    /// positive within one cell of the fused peak and near -1 elsewhere; the
    /// update gate of that channel sits at one half.
    pub fn target_memory(state_dim: usize) -> Self {
        let mut p = Self::zeros(state_dim);
        for ky in 0..3 {
            for kx in 0..3 {
                p.candidate.set_weight(ky, kx, 0, 0, T::lit(8.0));
            }
        }
        p.candidate.set_weight(1, 1, 2, 0, T::lit(-8.0));
        p.candidate.bias[0] = T::lit(2.0);
        p.update_gate.bias[0] = T::zero();
        p
    }

    pub fn state_dim(&self) -> usize {
        self.candidate.c_out
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.state_dim();
        for (name, block, act) in [
            ("update gate", &self.update_gate, Activation::Sigmoid),
            ("reset gate", &self.reset_gate, Activation::Sigmoid),
            ("candidate", &self.candidate, Activation::Tanh),
        ] {
            block.validate()?;
            if block.c_in != GRU_INPUT_CHANNELS + s || block.c_out != s {
                return Err(Error::shape(format!("{name} must map {} -> {s} channels", GRU_INPUT_CHANNELS + s)));
            }
            if block.activation != act {
                return Err(Error::shape(format!("{name} has the wrong activation")));
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> GruParams<U> {
        GruParams {
            update_gate: self.update_gate.cast(),
            reset_gate: self.reset_gate.cast(),
            candidate: self.candidate.cast(),
        }
    }
}

/// Observation for the GRU; channels 2 and 3 are spatially constant.
pub fn build_gru_input<T: Scalar>(fused: &FusedScores<T>, s: &Grid2D<T>) -> Result<Grid3D<T>> {
    if !fused.masked.same_shape(s) {
        return Err(Error::shape("fused scores and appearance scores differ in size"));
    }
    let (w, h) = (s.width(), s.height());
    let max_f = Grid2D::filled(w, h, fused.masked.max());
    let max_s = Grid2D::filled(w, h, s.max());
    Grid3D::stack(&[&fused.masked, s, &max_f, &max_s])
}

/// Intermediate values of one GRU step.
#[derive(Clone, Debug)]
pub struct GruStep<T> {
    pub states: StateField<T>,
    pub update: Grid3D<T>,
    pub reset: Grid3D<T>,
    pub candidate: Grid3D<T>,
}

/// One ConvGRU update of the propagated states.
pub fn conv_gru_step<T: Scalar>(h_hat: &StateField<T>, f: &Grid3D<T>, params: &GruParams<T>) -> Result<StateField<T>> {
    conv_gru_step_detailed(h_hat, f, params).map(|s| s.states)
}

pub fn conv_gru_step_detailed<T: Scalar>(
    h_hat: &StateField<T>,
    f: &Grid3D<T>,
    params: &GruParams<T>,
) -> Result<GruStep<T>> {
    params.validate()?;
    let s = params.state_dim();
    if h_hat.channels() != s || f.channels() != GRU_INPUT_CHANNELS {
        return Err(Error::shape("GRU input or state has the wrong channel count"));
    }
    if h_hat.width() != f.width() || h_hat.height() != f.height() {
        return Err(Error::shape("GRU input and state differ in size"));
    }
    let (w, h) = (f.width(), f.height());
    let n = w * h;
    let joint = Grid3D::concat(&[f, h_hat])?;
    let mut z = vec![T::zero(); n * s];
    let mut r = vec![T::zero(); n * s];
    conv3x3_into(joint.as_slice(), w, h, &params.update_gate, &mut z);
    conv3x3_into(joint.as_slice(), w, h, &params.reset_gate, &mut r);

    let gated: Vec<T> = r.iter().zip(h_hat.as_slice()).map(|(&a, &b)| a * b).collect();
    let gated = Grid3D::from_raw(w, h, s, gated);
    let joint_reset = Grid3D::concat(&[f, &gated])?;
    let mut cand = vec![T::zero(); n * s];
    conv3x3_into(joint_reset.as_slice(), w, h, &params.candidate, &mut cand);

    let states: Vec<T> = h_hat
        .as_slice()
        .iter()
        .zip(&z)
        .zip(&cand)
        .map(|((&prev, &zz), &c)| (T::one() - zz) * prev + zz * c)
        .collect();
    Ok(GruStep {
        states: Grid3D::from_raw(w, h, s, states),
        update: Grid3D::from_raw(w, h, s, z),
        reset: Grid3D::from_raw(w, h, s, r),
        candidate: Grid3D::from_raw(w, h, s, cand),
    })
}

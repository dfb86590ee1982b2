//! The bundle of every learned network in the tracker and its flat views.

use crate::correspondence::{CorrespondenceNetParams, SliceNet};
use crate::error::{Error, Result};
use crate::fusion::PredictorParams;
use crate::grid::{ConvBlockParams, Norm};
use crate::propagation::{InitializerParams, STATE_DIM};
use crate::scalar::Scalar;
use crate::state_update::GruParams;
use crate::synth::loss::AuxHeadParams;

/// Default appearance-replicating predictor: `sigmoid(8 relu(s) - 4)`.
pub const REPLICATING_GAIN: f64 = 8.0;
pub const REPLICATING_OFFSET: f64 = -4.0;
/// Predictor gain on the target-memory term of [`ModelParams::memory_seeded`].
pub const MEMORY_GAIN: f64 = 0.25;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub correspondence: CorrespondenceNetParams<T>,
    pub initializer: InitializerParams<T>,
    pub predictor: PredictorParams<T>,
    pub gru: GruParams<T>,
    pub aux_head: AuxHeadParams<T>,
}

/// One named tensor of the bundle.
pub struct TensorView<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [T],
    pub trainable: bool,
}

impl<T: Scalar> ModelParams<T> {
    /// Untrained starting point: pass-through correspondence, target-marking
    /// initializer, appearance-replicating predictor, target-memory GRU.
    pub fn initial() -> Self {
        Self::initial_with_dim(STATE_DIM)
    }

    pub fn initial_with_dim(state_dim: usize) -> Self {
        ModelParams {
            correspondence: CorrespondenceNetParams::pass_through(),
            initializer: InitializerParams::target_marker(state_dim),
            predictor: PredictorParams::appearance_replicating(
                state_dim,
                T::lit(REPLICATING_GAIN),
                T::lit(REPLICATING_OFFSET),
            ),
            gru: GruParams::target_memory(state_dim),
            aux_head: AuxHeadParams::target_marker(state_dim),
        }
    }

    /// [`ModelParams::initial`] with the predictor also reading the target
    /// memory: a hidden unit sums `h0 + 1` over the 3x3 neighbourhood and
    /// adds `gain` times that to the output logit. Starting point for
    /// training.
    pub fn memory_seeded(gain: T) -> Self {
        let mut p = Self::initial();
        for ky in 0..3 {
            for kx in 0..3 {
                p.predictor.conv1.set_weight(ky, kx, 1, 1, T::one());
            }
        }
        p.predictor.conv1.bias[1] = T::lit(9.0);
        p.predictor.conv2.set_weight(1, 1, 1, 0, gain);
        p
    }

    pub fn state_dim(&self) -> usize {
        self.gru.state_dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.correspondence.validate()?;
        self.initializer.validate()?;
        self.predictor.validate()?;
        self.gru.validate()?;
        self.aux_head.validate()?;
        let s = self.state_dim();
        if self.initializer.conv.c_out != s || self.predictor.state_dim() != s || self.aux_head.weights.len() != s {
            return Err(Error::shape("networks disagree on the state dimension"));
        }
        Ok(())
    }

    /// Visits every tensor in a fixed order.
    pub fn visit_mut(&mut self, mut f: impl FnMut(TensorView<'_, T>)) {
        fn conv<T: Scalar>(
            prefix: &str,
            block: &mut ConvBlockParams<T>,
            f: &mut dyn FnMut(TensorView<'_, T>),
        ) {
            let (ci, co) = (block.c_in, block.c_out);
            f(TensorView {
                name: format!("{prefix}.kernel"),
                shape: vec![3, 3, ci, co],
                data: &mut block.kernel,
                trainable: true,
            });
            f(TensorView {
                name: format!("{prefix}.bias"),
                shape: vec![co],
                data: &mut block.bias,
                trainable: true,
            });
            if let Norm::Affine { scale, shift } = &mut block.norm {
                f(TensorView {
                    name: format!("{prefix}.norm_scale"),
                    shape: vec![co],
                    data: scale,
                    trainable: true,
                });
                f(TensorView {
                    name: format!("{prefix}.norm_shift"),
                    shape: vec![co],
                    data: shift,
                    trainable: true,
                });
            }
        }
        fn slice_net<T: Scalar>(prefix: &str, net: &mut SliceNet<T>, f: &mut dyn FnMut(TensorView<'_, T>)) {
            conv(&format!("{prefix}.conv1"), &mut net.conv1, f);
            conv(&format!("{prefix}.conv2"), &mut net.conv2, f);
        }
        let f: &mut dyn FnMut(TensorView<'_, T>) = &mut f;
        slice_net("correspondence.stage1", &mut self.correspondence.stage1, f);
        slice_net("correspondence.stage2", &mut self.correspondence.stage2, f);
        conv("initializer.conv", &mut self.initializer.conv, f);
        f(TensorView {
            name: "initializer.label_sigma".into(),
            shape: vec![1],
            data: std::slice::from_mut(&mut self.initializer.label.sigma),
            trainable: false,
        });
        f(TensorView {
            name: "initializer.label_peak".into(),
            shape: vec![1],
            data: std::slice::from_mut(&mut self.initializer.label.peak),
            trainable: false,
        });
        conv("predictor.conv1", &mut self.predictor.conv1, f);
        conv("predictor.conv2", &mut self.predictor.conv2, f);
        f(TensorView {
            name: "predictor.mu".into(),
            shape: vec![1],
            data: std::slice::from_mut(&mut self.predictor.mu),
            trainable: false,
        });
        conv("gru.update_gate", &mut self.gru.update_gate, f);
        conv("gru.reset_gate", &mut self.gru.reset_gate, f);
        conv("gru.candidate", &mut self.gru.candidate, f);
        let s = self.aux_head.weights.len();
        f(TensorView {
            name: "aux_head.weights".into(),
            shape: vec![s],
            data: &mut self.aux_head.weights,
            trainable: true,
        });
        f(TensorView {
            name: "aux_head.bias".into(),
            shape: vec![1],
            data: std::slice::from_mut(&mut self.aux_head.bias),
            trainable: true,
        });
    }

    /// Trainable parameters as one flat vector.
    pub fn trainable_vector(&self) -> Vec<T> {
        let mut out = Vec::new();
        let mut copy = self.clone();
        copy.visit_mut(|t| {
            if t.trainable {
                out.extend_from_slice(t.data);
            }
        });
        out
    }

    /// Overwrites the trainable parameters from a flat vector.
    pub fn set_trainable_vector(&mut self, values: &[T]) -> Result<()> {
        let expected = self.trainable_count();
        if values.len() != expected {
            return Err(Error::shape(format!("expected {expected} parameters, got {}", values.len())));
        }
        let mut offset = 0;
        self.visit_mut(|t| {
            if t.trainable {
                let n = t.data.len();
                t.data.copy_from_slice(&values[offset..offset + n]);
                offset += n;
            }
        });
        Ok(())
    }

    /// `(name, length)` of every trainable tensor in flat-vector order.
    pub fn trainable_layout(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        self.clone().visit_mut(|t| {
            if t.trainable {
                out.push((t.name, t.data.len()));
            }
        });
        out
    }

    pub fn trainable_count(&self) -> usize {
        let mut n = 0;
        self.clone().visit_mut(|t| {
            if t.trainable {
                n += t.data.len();
            }
        });
        n
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            correspondence: self.correspondence.cast(),
            initializer: self.initializer.cast(),
            predictor: self.predictor.cast(),
            gru: self.gru.cast(),
            aux_head: self.aux_head.cast(),
        }
    }
}

impl<T: Scalar> Default for ModelParams<T> {
    fn default() -> Self {
        Self::initial()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_vector_round_trip() {
        let p = ModelParams::<f64>::initial();
        p.validate().unwrap();
        let v = p.trainable_vector();
        assert_eq!(v.len(), p.trainable_count());
        // roughly five thousand trainable values
        assert!((4000..6000).contains(&v.len()), "{}", v.len());
        let mut q = p.clone();
        let bumped: Vec<f64> = v.iter().map(|x| x + 1.0).collect();
        q.set_trainable_vector(&bumped).unwrap();
        assert_ne!(p, q);
        q.set_trainable_vector(&v).unwrap();
        assert_eq!(p, q);
        assert_eq!(q.predictor.mu, 0.05);
    }
}

use super::{OptimizerKind, TrainConfig, TrainError};
use crate::numerics::Tensor;

/// Step counter and Adam moments, one buffer per parameter tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Applies one update to `params` in place. SGD ignores the moment buffers.
pub fn optimizer_step(
    params: &mut [&mut Tensor],
    grads: &[Vec<f64>],
    state: &mut OptimizerState,
    config: &TrainConfig,
) -> Result<(), TrainError> {
    if params.len() != grads.len() {
        return Err(TrainError::ShapeMismatch {
            index: params.len().min(grads.len()),
            expected: params.len(),
            found: grads.len(),
        });
    }
    for (index, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.numel() != g.len() {
            return Err(TrainError::ShapeMismatch {
                index,
                expected: p.numel(),
                found: g.len(),
            });
        }
    }
    let lr = config.learning_rate;
    match config.optimizer {
        OptimizerKind::Sgd => {
            state.step += 1;
            for (p, g) in params.iter_mut().zip(grads) {
                for (w, d) in p.data_mut().iter_mut().zip(g) {
                    *w -= lr * d;
                }
            }
        }
        OptimizerKind::Adam => {
            if state.first.is_empty() {
                state.first = grads.iter().map(|g| vec![0.0; g.len()]).collect();
                state.second = state.first.clone();
            }
            for (index, (m, g)) in state.first.iter().zip(grads).enumerate() {
                if m.len() != g.len() {
                    return Err(TrainError::ShapeMismatch {
                        index,
                        expected: m.len(),
                        found: g.len(),
                    });
                }
            }
            state.step += 1;
            let (b1, b2, eps) = (config.beta1, config.beta2, config.epsilon);
            let c1 = 1.0 - b1.powi(state.step as i32);
            let c2 = 1.0 - b2.powi(state.step as i32);
            for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.first).zip(&mut state.second) {
                for (((w, &d), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *m = b1 * *m + (1.0 - b1) * d;
                    *v = b2 * *v + (1.0 - b2) * d * d;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}

use crate::error::{Error, Result};
use crate::nn::model::{Gradients, LayeredModel};
use crate::tensor::Tensor;

/// Classical momentum SGD state: `v' = momentum * v + g`, `p' = p - lr * v'`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub velocity: Vec<Vec<Tensor>>,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl OptimizerState {
    /// Zero velocity shaped like `model`'s parameters.
    pub fn new(model: &LayeredModel, learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::InvalidSpec(format!("learning rate {learning_rate}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidSpec(format!("momentum {momentum} not in [0, 1)")));
        }
        Ok(Self {
            velocity: Gradients::zeros_like(model).layers,
            learning_rate,
            momentum,
        })
    }
}

fn check_shapes(model: &LayeredModel, other: &[Vec<Tensor>], what: &str) -> Result<()> {
    if other.len() != model.layers().len() {
        return Err(Error::Shape(format!(
            "{what} covers {} layers, model has {}",
            other.len(),
            model.layers().len()
        )));
    }
    for (i, (layer, ts)) in model.layers().iter().zip(other).enumerate() {
        let params = layer.params();
        if params.len() != ts.len()
            || params.iter().zip(ts).any(|((_, p), t)| p.shape() != t.shape())
        {
            return Err(Error::LayerShape {
                layer: i,
                detail: format!("{what} shapes do not mirror the parameters"),
            });
        }
    }
    Ok(())
}

/// One in-place momentum step.
pub fn sgd_step(model: &mut LayeredModel, grads: &Gradients, state: &mut OptimizerState) -> Result<()> {
    check_shapes(model, &grads.layers, "gradient")?;
    check_shapes(model, &state.velocity, "velocity")?;
    let (lr, mu) = (state.learning_rate, state.momentum);
    let params = model.param_data_mut();
    let vels = state.velocity.iter_mut().flatten();
    let gs = grads.layers.iter().flatten();
    for ((p, v), g) in params.into_iter().zip(vels).zip(gs) {
        for ((pi, vi), &gi) in p.iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vi = mu * *vi + gi;
            *pi -= lr * *vi;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;

    fn one_param_model(p: f64) -> LayeredModel {
        let layer = Layer::Dense {
            weight: Tensor::new(vec![1, 1], vec![p]).unwrap(),
            bias: Tensor::vector(vec![0.0]),
        };
        LayeredModel::new(vec![1], vec![layer]).unwrap()
    }

    fn grads(g: f64) -> Gradients {
        Gradients {
            layers: vec![vec![Tensor::new(vec![1, 1], vec![g]).unwrap(), Tensor::vector(vec![0.0])]],
        }
    }

    #[test]
    fn plain_sgd_step() {
        let mut m = one_param_model(1.0);
        let mut st = OptimizerState::new(&m, 0.1, 0.0).unwrap();
        sgd_step(&mut m, &grads(0.5), &mut st).unwrap();
        assert!((m.flat_params()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_decays_velocity_only() {
        let mut m = one_param_model(1.0);
        let mut st = OptimizerState::new(&m, 0.1, 0.5).unwrap();
        st.velocity[0][0].data_mut()[0] = 0.0;
        sgd_step(&mut m, &grads(0.0), &mut st).unwrap();
        assert_eq!(m.flat_params()[0], 1.0);

        st.velocity[0][0].data_mut()[0] = 2.0;
        st.learning_rate = 0.0;
        sgd_step(&mut m, &grads(0.0), &mut st).unwrap();
        assert_eq!(m.flat_params()[0], 1.0);
        assert_eq!(st.velocity[0][0].data()[0], 1.0);
    }

    #[test]
    fn two_momentum_steps_match_unrolled_recurrence() {
        let (lr, mu, p0, g1, g2) = (0.05, 0.9, 0.7, 0.3, -1.1);
        let mut m = one_param_model(p0);
        let mut st = OptimizerState::new(&m, lr, mu).unwrap();
        sgd_step(&mut m, &grads(g1), &mut st).unwrap();
        sgd_step(&mut m, &grads(g2), &mut st).unwrap();
        // v1 = g1, p1 = p0 - lr g1; v2 = mu g1 + g2, p2 = p1 - lr v2
        let expected = p0 - lr * g1 - lr * (mu * g1 + g2);
        assert!((m.flat_params()[0] - expected).abs() < 1e-15);
        assert!((st.velocity[0][0].data()[0] - (mu * g1 + g2)).abs() < 1e-15);
    }

    #[test]
    fn mismatched_gradient_is_rejected() {
        let mut m = one_param_model(1.0);
        let mut st = OptimizerState::new(&m, 0.1, 0.0).unwrap();
        let bad = Gradients { layers: vec![vec![Tensor::vector(vec![0.0])]] };
        assert!(sgd_step(&mut m, &bad, &mut st).is_err());
        assert!(OptimizerState::new(&m, 0.1, 1.0).is_err());
    }
}

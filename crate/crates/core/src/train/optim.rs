//! RMSProp, Adagrad and Adam.

use std::fmt;
use std::str::FromStr;

use crate::tensor::Tensor;

/// Denominator guard shared by all three optimizers.
pub const EPSILON: f64 = 1e-8;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    RmsProp,
    Adagrad,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::RmsProp => "rmsprop",
            OptimizerKind::Adagrad => "adagrad",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rmsprop" => Ok(OptimizerKind::RmsProp),
            "adagrad" => Ok(OptimizerKind::Adagrad),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(format!("unknown optimizer `{other}`")),
        }
    }
}

/// `cache <- decay*cache + (1-decay)*g^2; p <- p - lr*g/(sqrt(cache)+eps)`
pub fn rmsprop_step(param: &mut Tensor, grad: &Tensor, cache: &mut Tensor, lr: f64, decay: f64, eps: f64) {
    assert_eq!(param.shape(), grad.shape());
    assert_eq!(param.shape(), cache.shape());
    for ((p, &g), c) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(cache.data_mut())
    {
        *c = decay * *c + (1.0 - decay) * g * g;
        *p -= lr * g / (c.sqrt() + eps);
    }
}

/// `acc <- acc + g^2; p <- p - lr*g/(sqrt(acc)+eps)`
pub fn adagrad_step(param: &mut Tensor, grad: &Tensor, accum: &mut Tensor, lr: f64, eps: f64) {
    assert_eq!(param.shape(), grad.shape());
    assert_eq!(param.shape(), accum.shape());
    for ((p, &g), a) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(accum.data_mut())
    {
        *a += g * g;
        *p -= lr * g / (a.sqrt() + eps);
    }
}

/// Bias-corrected Adam update; `step` is the 1-based step count after increment.
pub fn adam_step(param: &mut Tensor, grad: &Tensor, m: &mut Tensor, v: &mut Tensor, step: u64, lr: f64, eps: f64) {
    assert_eq!(param.shape(), grad.shape());
    assert!(step >= 1);
    let bc1 = 1.0 - ADAM_BETA1.powi(step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(step as i32);
    for (((p, &g), m), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(m.data_mut())
        .zip(v.data_mut())
    {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Per-parameter auxiliary tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    /// RMSProp mean-square cache, Adagrad accumulator, or Adam first moment.
    pub first: Vec<Tensor>,
    /// Adam second moment; empty otherwise.
    pub second: Vec<Tensor>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new<'a>(kind: OptimizerKind, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let first: Vec<Tensor> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.shape().to_vec()))
            .collect();
        let second = if kind == OptimizerKind::Adam {
            first.clone()
        } else {
            Vec::new()
        };
        OptimizerState {
            kind,
            first,
            second,
            step: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    pub state: OptimizerState,
    pub learning_rate: f64,
    /// RMSProp decay rate; ignored by the others.
    pub decay: f64,
    pub epsilon: f64,
}

impl Optimizer {
    pub fn new<'a>(
        kind: OptimizerKind,
        learning_rate: f64,
        decay: f64,
        params: impl IntoIterator<Item = &'a Tensor>,
    ) -> Self {
        Optimizer {
            state: OptimizerState::new(kind, params),
            learning_rate,
            decay,
            epsilon: EPSILON,
        }
    }

    /// Apply one update to every parameter, in order.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.state.first.len());
        self.state.step += 1;
        let (lr, eps, t) = (self.learning_rate, self.epsilon, self.state.step);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            match self.state.kind {
                OptimizerKind::RmsProp => {
                    rmsprop_step(p, g, &mut self.state.first[i], lr, self.decay, eps)
                }
                OptimizerKind::Adagrad => adagrad_step(p, g, &mut self.state.first[i], lr, eps),
                OptimizerKind::Adam => {
                    let (m, v) = (&mut self.state.first[i], &mut self.state.second[i]);
                    adam_step(p, g, m, v, t, lr, eps)
                }
            }
        }
    }
}

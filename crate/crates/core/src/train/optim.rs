//! Adam and momentum SGD over the parameters of a [`Module`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{OptimizerKind, OptimizerSnapshot};
use crate::nn::{Module, TensorRole};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdParams {
    pub learning_rate: f64,
    pub momentum: f64,
}

fn check_finite<T: Scalar>(name: &str, g: &[T]) -> Result<()> {
    if let Some(i) = g.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: format!("gradient of `{name}` at element {i}"),
        });
    }
    Ok(())
}

/// One bias-corrected Adam update of `w` at timestep `t >= 1`.
pub fn adam_step<T: Scalar>(
    name: &str,
    w: &mut [T],
    g: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    hp: &AdamParams,
) -> Result<()> {
    check_finite(name, g)?;
    if t == 0 {
        return Err(Error::invalid("adam_step", "timestep starts at 1"));
    }
    let (b1, b2) = (T::of_f64(hp.beta1), T::of_f64(hp.beta2));
    let (one_b1, one_b2) = (T::of_f64(1.0 - hp.beta1), T::of_f64(1.0 - hp.beta2));
    let c1 = T::of_f64(1.0 / (1.0 - hp.beta1.powf(t as f64)));
    let c2 = T::of_f64(1.0 / (1.0 - hp.beta2.powf(t as f64)));
    let (lr, eps) = (T::of_f64(hp.learning_rate), T::of_f64(hp.eps));
    for i in 0..w.len() {
        m[i] = b1 * m[i] + one_b1 * g[i];
        v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
        let m_hat = m[i] * c1;
        let v_hat = v[i] * c2;
        w[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// `v <- momentum * v + g; w <- w - lr * v`.
pub fn sgd_step<T: Scalar>(name: &str, w: &mut [T], g: &[T], velocity: &mut [T], hp: &SgdParams) -> Result<()> {
    check_finite(name, g)?;
    let (mu, lr) = (T::of_f64(hp.momentum), T::of_f64(hp.learning_rate));
    for i in 0..w.len() {
        velocity[i] = mu * velocity[i] + g[i];
        w[i] -= lr * velocity[i];
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerParams {
    Adam(AdamParams),
    Sgd(SgdParams),
}

impl OptimizerParams {
    pub fn kind(&self) -> OptimizerKind {
        match self {
            OptimizerParams::Adam(_) => OptimizerKind::Adam,
            OptimizerParams::Sgd(_) => OptimizerKind::Sgd,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lr, ok) = match self {
            OptimizerParams::Adam(a) => (
                a.learning_rate,
                (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0,
            ),
            OptimizerParams::Sgd(s) => (s.learning_rate, (0.0..1.0).contains(&s.momentum)),
        };
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning_rate {lr} must be positive")));
        }
        if !ok {
            return Err(Error::Config(
                "betas and momentum must be in [0, 1), eps_adam positive".into(),
            ));
        }
        Ok(())
    }
}

/// Optimizer with per-parameter state slots in traversal order, created
/// lazily on the first step.
#[derive(Debug, Clone)]
pub struct Optimizer<T: Scalar> {
    params: OptimizerParams,
    step: u64,
    /// Adam: first moments then second moments. SGD: velocities.
    slots: Vec<Tensor<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(params: OptimizerParams) -> Result<Self> {
        params.validate()?;
        Ok(Optimizer {
            params,
            step: 0,
            slots: Vec::new(),
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    fn init_slots<M: Module<T> + ?Sized>(&mut self, model: &M) -> Result<()> {
        let mut shapes = Vec::new();
        model.visit("", &mut |_, t, role| {
            if role == TensorRole::Param {
                shapes.push(t.dims().to_vec());
            }
        });
        let copies = match self.params {
            OptimizerParams::Adam(_) => 2,
            OptimizerParams::Sgd(_) => 1,
        };
        self.slots = (0..copies)
            .flat_map(|_| shapes.iter().cloned())
            .map(Tensor::zeros)
            .collect::<Result<_>>()?;
        Ok(())
    }

    /// Global L2 norm of all parameter gradients.
    pub fn grad_norm<M: Module<T> + ?Sized>(model: &M) -> f64 {
        let mut sum = 0.0;
        model.visit("", &mut |_, t, role| {
            if role == TensorRole::Param {
                if let Some(g) = t.grad() {
                    sum += g.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>();
                }
            }
        });
        sum.sqrt()
    }

    /// Update every parameter from its accumulated gradient, optionally after
    /// rescaling all gradients to a global norm of at most `max_grad_norm`.
    /// Gradients are zeroed afterwards.
    pub fn step<M: Module<T> + ?Sized>(&mut self, model: &mut M, max_grad_norm: Option<f64>) -> Result<()> {
        if self.slots.is_empty() {
            self.init_slots(model)?;
        }
        let scale = match max_grad_norm {
            Some(max) => {
                let norm = Self::grad_norm(model);
                if norm > max && norm.is_finite() {
                    Some(T::of_f64(max / norm))
                } else {
                    None
                }
            }
            None => None,
        };
        self.step += 1;
        let n = match self.params {
            OptimizerParams::Adam(_) => self.slots.len() / 2,
            OptimizerParams::Sgd(_) => self.slots.len(),
        };
        let (params, t) = (self.params, self.step);
        let (first, second) = self.slots.split_at_mut(n);
        let mut i = 0;
        let mut result = Ok(());
        model.visit_mut("", &mut |name, w, role| {
            if role != TensorRole::Param || result.is_err() {
                return;
            }
            let mut g = match w.grad() {
                Some(g) => g.to_vec(),
                None => vec![T::zero(); w.numel()],
            };
            if let Some(s) = scale {
                g.iter_mut().for_each(|v| *v *= s);
            }
            result = match &params {
                OptimizerParams::Adam(hp) => {
                    let (m, v) = (&mut first[i], &mut second[i]);
                    adam_step(name, w.data_mut(), &g, m.data_mut(), v.data_mut(), t, hp)
                }
                OptimizerParams::Sgd(hp) => sgd_step(name, w.data_mut(), &g, first[i].data_mut(), hp),
            };
            w.zero_grad();
            i += 1;
        });
        result?;
        if i != n {
            return Err(Error::invalid("optimizer", format!("state has {n} slots, model has {i} parameters")));
        }
        Ok(())
    }
}

impl Optimizer<f32> {
    pub fn snapshot(&self) -> OptimizerSnapshot {
        OptimizerSnapshot {
            kind: self.params.kind(),
            step: self.step,
            slots: self.slots.clone(),
        }
    }

    /// Rebuild from a snapshot; `params` must be of the same kind.
    pub fn restore(params: OptimizerParams, snap: &OptimizerSnapshot) -> Result<Self> {
        if params.kind() != snap.kind {
            return Err(Error::Config(format!(
                "checkpoint optimizer {:?} differs from configured {:?}",
                snap.kind,
                params.kind()
            )));
        }
        let mut opt = Optimizer::new(params)?;
        opt.step = snap.step;
        opt.slots = snap.slots.clone();
        Ok(opt)
    }
}

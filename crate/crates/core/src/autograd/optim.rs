use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd { momentum: f32 },
    Adam { beta1: f32, beta2: f32, eps: f32 },
}

impl OptimizerKind {
    pub fn sgd() -> Self {
        OptimizerKind::Sgd { momentum: 0.0 }
    }

    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    fn buffer_count(&self) -> usize {
        match *self {
            OptimizerKind::Sgd { momentum } if momentum == 0.0 => 0,
            OptimizerKind::Sgd { .. } => 1,
            OptimizerKind::Adam { .. } => 2,
        }
    }
}

/// Step decay: the learning rate is multiplied by `gamma` once for every
/// milestone epoch that has been reached.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub milestones: Vec<u32>,
    pub gamma: f32,
}

/// Everything about an optimizer except its per-parameter buffers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerMeta {
    pub kind: OptimizerKind,
    pub learning_rate: f32,
    pub schedule: Option<LrSchedule>,
    pub step: u64,
    pub epoch: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    meta: OptimizerMeta,
    /// Momentum (SGD) or first/second moments (Adam), created on first update.
    buffers: BTreeMap<String, Vec<Tensor>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f32, schedule: Option<LrSchedule>) -> Self {
        Self {
            meta: OptimizerMeta {
                kind,
                learning_rate,
                schedule,
                step: 0,
                epoch: 0,
            },
            buffers: BTreeMap::new(),
        }
    }

    pub fn from_parts(meta: OptimizerMeta, buffers: BTreeMap<String, Vec<Tensor>>) -> Result<Self> {
        let want = meta.kind.buffer_count();
        if let Some((id, b)) = buffers.iter().find(|(_, b)| b.len() != want) {
            return Err(Error::CheckpointMismatch(format!(
                "optimizer buffer `{id}` has {} slots, expected {want}",
                b.len()
            )));
        }
        Ok(Self { meta, buffers })
    }

    pub fn meta(&self) -> &OptimizerMeta {
        &self.meta
    }

    pub fn kind(&self) -> OptimizerKind {
        self.meta.kind
    }

    pub fn step(&self) -> u64 {
        self.meta.step
    }

    pub fn buffers(&self) -> &BTreeMap<String, Vec<Tensor>> {
        &self.buffers
    }

    /// Selects the epoch used for the learning-rate schedule.
    pub fn set_epoch(&mut self, epoch: u32) {
        self.meta.epoch = epoch;
    }

    pub fn current_lr(&self) -> f32 {
        match &self.meta.schedule {
            None => self.meta.learning_rate,
            Some(s) => {
                let reached = s.milestones.iter().filter(|&&m| m <= self.meta.epoch).count();
                let mut lr = self.meta.learning_rate;
                for _ in 0..reached {
                    lr *= s.gamma;
                }
                lr
            }
        }
    }

    /// Applies one update to every parameter. `grads` must cover exactly the parameter set.
    pub fn apply_update(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        for (id, p) in params.iter() {
            let g = grads.get(id).ok_or_else(|| Error::MissingGradient(id.clone()))?;
            if g.shape() != p.shape() {
                return Err(Error::ParameterShape {
                    id: id.clone(),
                    expected: p.shape().to_vec(),
                    found: g.shape().to_vec(),
                });
            }
        }
        if let Some(extra) = grads.keys().find(|id| params.get(id).is_none()) {
            return Err(Error::UnknownGradient(extra.clone()));
        }

        self.meta.step += 1;
        let lr = self.current_lr();
        let kind = self.meta.kind;
        let slots = kind.buffer_count();
        let t = self.meta.step;

        for (id, p) in params.iter_mut() {
            let g = grads[id].data();
            let bufs = self
                .buffers
                .entry(id.clone())
                .or_insert_with(|| vec![Tensor::zeros(p.shape().to_vec()); slots]);
            let theta = p.data_mut();
            match kind {
                OptimizerKind::Sgd { momentum } if momentum == 0.0 => {
                    for (w, &gi) in theta.iter_mut().zip(g) {
                        *w -= lr * gi;
                    }
                }
                OptimizerKind::Sgd { momentum } => {
                    let buf = bufs[0].data_mut();
                    for i in 0..theta.len() {
                        buf[i] = momentum * buf[i] + g[i];
                        theta[i] -= lr * buf[i];
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let bc1 = 1.0 - beta1.powi(t as i32);
                    let bc2 = 1.0 - beta2.powi(t as i32);
                    let (m_buf, v_buf) = bufs.split_at_mut(1);
                    let m = m_buf[0].data_mut();
                    let v = v_buf[0].data_mut();
                    for i in 0..theta.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }

    /// Re-keys the per-parameter buffers.
    pub fn map_ids(&self, mut f: impl FnMut(&str) -> Result<String>) -> Result<Self> {
        let mut buffers = BTreeMap::new();
        for (id, b) in &self.buffers {
            buffers.insert(f(id)?, b.clone());
        }
        Ok(Self {
            meta: self.meta.clone(),
            buffers,
        })
    }

    pub fn bits_eq(&self, other: &OptimizerState) -> bool {
        self.meta == other.meta
            && self.buffers.len() == other.buffers.len()
            && self.buffers.iter().zip(&other.buffers).all(|((ka, a), (kb, b))| {
                ka == kb && a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.bits_eq(y))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f32) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::from_vec(vec![v]));
        p
    }

    fn grad(v: f32) -> Gradients {
        let mut g = Gradients::new();
        g.insert("w".into(), Tensor::from_vec(vec![v]));
        g
    }

    #[test]
    fn sgd_one_step() {
        let mut p = single(1.0);
        let mut opt = OptimizerState::new(OptimizerKind::sgd(), 0.1, None);
        opt.apply_update(&mut p, &grad(0.5)).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[0.95]);
        assert_eq!(opt.step(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params_bit_identical() {
        for start in [1.25f32, -0.0, 3.0e-38] {
            let mut p = single(start);
            let before = p.clone();
            let mut opt = OptimizerState::new(OptimizerKind::sgd(), 0.1, None);
            opt.apply_update(&mut p, &grad(0.0)).unwrap();
            assert!(p.bits_eq(&before));
            assert_eq!(opt.step(), 1);
        }
    }

    #[test]
    fn adam_first_step_matches_hand_recurrence() {
        // m = 0.1, v = 0.001, m_hat = 1, v_hat = 1, theta = 1 - 1e-3 * 1 / (1 + 1e-8)
        let mut p = single(1.0);
        let mut opt = OptimizerState::new(OptimizerKind::adam(), 1e-3, None);
        opt.apply_update(&mut p, &grad(1.0)).unwrap();
        let expected = 1.0f64 - 1e-3 / (1.0 + 1e-8);
        let got = p.get("w").unwrap().data()[0] as f64;
        assert!((got - expected).abs() <= 1.2e-7, "{got} vs {expected}");
    }

    #[test]
    fn missing_and_unknown_gradients() {
        let mut p = single(1.0);
        let mut opt = OptimizerState::new(OptimizerKind::sgd(), 0.1, None);
        assert!(matches!(
            opt.apply_update(&mut p, &Gradients::new()),
            Err(Error::MissingGradient(id)) if id == "w"
        ));
        let mut g = grad(1.0);
        g.insert("other".into(), Tensor::from_vec(vec![1.0]));
        assert!(matches!(opt.apply_update(&mut p, &g), Err(Error::UnknownGradient(_))));
        assert_eq!(opt.step(), 0);
    }

    #[test]
    fn step_decay_at_milestones() {
        let mut opt = OptimizerState::new(
            OptimizerKind::sgd(),
            1.0,
            Some(LrSchedule {
                milestones: vec![2, 4],
                gamma: 0.5,
            }),
        );
        let lrs: Vec<f32> = (0..6)
            .map(|e| {
                opt.set_epoch(e);
                opt.current_lr()
            })
            .collect();
        assert_eq!(lrs, vec![1.0, 1.0, 0.5, 0.5, 0.25, 0.25]);
    }

    #[test]
    fn momentum_buffers_match_param_shapes() {
        let mut p = ParamStore::new();
        p.insert("a", Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap());
        let mut g = Gradients::new();
        g.insert("a".into(), Tensor::new(vec![2, 3], vec![1.0; 6]).unwrap());
        let mut opt = OptimizerState::new(OptimizerKind::Sgd { momentum: 0.9 }, 0.1, None);
        opt.apply_update(&mut p, &g).unwrap();
        opt.apply_update(&mut p, &g).unwrap();
        assert_eq!(opt.buffers()["a"][0].shape(), &[2, 3]);
        // buf: 1, then 1.9; theta: -0.1, then -0.29
        assert!((p.get("a").unwrap().data()[0] + 0.29).abs() < 1e-6);
    }
}

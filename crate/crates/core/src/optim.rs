//! SGD with momentum and AdamW over a [`ParamStore`], with learning-rate
//! schedules. Optimizer state is a flat name → tensor map so it can be
//! checkpointed next to the weights.

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    AdamW,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::AdamW => "adamw",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// Fixed learning rate.
    Constant,
    /// `lr · (1 − t/T)^power`.
    Poly,
    /// `min_lr + (lr − min_lr)(1 + cos(π t/T))/2`.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub schedule: Schedule,
    /// Exponent of the polynomial schedule.
    pub power: f64,
    /// Floor of the cosine schedule.
    pub min_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::segmentation()
    }
}

impl OptimizerConfig {
    /// SGD, momentum 0.9, polynomial decay (power 0.9) from 1e-2.
    pub fn segmentation() -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr: 1e-2,
            schedule: Schedule::Poly,
            power: 0.9,
            min_lr: 0.0,
            momentum: 0.9,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// AdamW at a fixed 3e-4.
    pub fn screening() -> Self {
        Self {
            kind: OptimizerKind::AdamW,
            lr: 3e-4,
            schedule: Schedule::Constant,
            weight_decay: 1e-2,
            ..Self::segmentation()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("optimizer: {what}")));
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must be in [0, 1)");
        }
        if self.weight_decay < 0.0 || self.eps <= 0.0 || self.min_lr < 0.0 || self.power <= 0.0 {
            return bad("weight_decay, min_lr must be >= 0 and eps, power > 0");
        }
        Ok(())
    }

    /// Learning rate for step `t` (0-based) out of `total` steps.
    pub fn lr_at(&self, t: usize, total: usize) -> f64 {
        let frac = if total == 0 { 0.0 } else { (t as f64 / total as f64).min(1.0) };
        match self.schedule {
            Schedule::Constant => self.lr,
            Schedule::Poly => self.lr * (1.0 - frac).powf(self.power),
            Schedule::Cosine => self.min_lr + (self.lr - self.min_lr) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()),
        }
    }
}

#[derive(Debug)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    params: Vec<(String, Var)>,
    state: BTreeMap<String, Tensor>,
    steps: usize,
}

impl Optimizer {
    /// Optimizes every trainable parameter of `store` whose name passes `filter`.
    pub fn new(cfg: &OptimizerConfig, store: &ParamStore, filter: impl Fn(&str) -> bool) -> Result<Self> {
        cfg.validate()?;
        let params: Vec<_> = store.trainable().into_iter().filter(|(n, _)| filter(n)).collect();
        if params.is_empty() {
            return Err(Error::Config("optimizer has no parameters".into()));
        }
        Ok(Self {
            cfg: cfg.clone(),
            params,
            state: BTreeMap::new(),
            steps: 0,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Applies one update with learning rate `lr`. Parameters without a gradient are left alone.
    pub fn step(&mut self, grads: &GradStore, lr: f64) -> Result<()> {
        self.steps += 1;
        let t = self.steps as i32;
        let c = &self.cfg;
        for (name, var) in &self.params {
            let Some(g) = grads.get(var.as_tensor()) else { continue };
            let g = &g.detach();
            let p = &var.as_tensor().detach();
            match c.kind {
                OptimizerKind::Sgd => {
                    let g = if c.weight_decay > 0.0 { (g + (p * c.weight_decay)?)? } else { g.clone() };
                    let key = format!("{name}.momentum");
                    let buf = match self.state.get(&key) {
                        Some(b) if c.momentum > 0.0 => ((b * c.momentum)? + &g)?,
                        _ => g,
                    };
                    var.set(&(p - (&buf * lr)?)?)?;
                    if c.momentum > 0.0 {
                        self.state.insert(key, buf);
                    }
                }
                OptimizerKind::AdamW => {
                    let (mk, vk) = (format!("{name}.exp_avg"), format!("{name}.exp_avg_sq"));
                    let m = match self.state.get(&mk) {
                        Some(m) => ((m * c.beta1)? + (g * (1.0 - c.beta1))?)?,
                        None => (g * (1.0 - c.beta1))?,
                    };
                    let v = match self.state.get(&vk) {
                        Some(v) => ((v * c.beta2)? + (g.sqr()? * (1.0 - c.beta2))?)?,
                        None => (g.sqr()? * (1.0 - c.beta2))?,
                    };
                    let m_hat = (&m / (1.0 - c.beta1.powi(t)))?;
                    let v_hat = (&v / (1.0 - c.beta2.powi(t)))?;
                    let update = m_hat.div(&(v_hat.sqrt()? + c.eps)?)?;
                    let decayed = (p * (1.0 - lr * c.weight_decay))?;
                    var.set(&(decayed - (update * lr)?)?)?;
                    self.state.insert(mk, m);
                    self.state.insert(vk, v);
                }
            }
        }
        Ok(())
    }

    /// Optimizer state including the step counter (as a scalar tensor under `steps`).
    pub fn state_dict(&self) -> Result<BTreeMap<String, Tensor>> {
        let mut out: BTreeMap<String, Tensor> = self.state.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        let dev = self.params[0].1.as_tensor().device();
        out.insert("steps".into(), Tensor::new(&[self.steps as u32], dev)?);
        Ok(out)
    }

    pub fn load_state_dict(&mut self, state: &BTreeMap<String, Tensor>) -> Result<()> {
        let steps = state
            .get("steps")
            .ok_or_else(|| Error::Checkpoint("optimizer state lacks `steps`".into()))?
            .to_vec1::<u32>()?;
        let known: std::collections::BTreeSet<_> = self.params.iter().map(|(n, _)| n.as_str()).collect();
        let mut loaded = BTreeMap::new();
        for (k, v) in state {
            if k == "steps" {
                continue;
            }
            let owner = k.rsplit_once('.').map(|(a, _)| a).unwrap_or("");
            if !known.contains(owner) {
                return Err(Error::Incompatible(format!("optimizer state for unknown parameter `{k}`")));
            }
            loaded.insert(k.clone(), v.clone());
        }
        self.state = loaded;
        self.steps = steps.first().copied().unwrap_or(0) as usize;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;
    use candle_core::{DType, Device};

    fn quadratic(store: &ParamStore) -> Var {
        let w = store.root().param("w", &[3], Init::Const(1.0)).unwrap();
        w.set(&Tensor::new(&[1.0f64, -2.0, 3.0], &Device::Cpu).unwrap()).unwrap();
        w
    }

    fn loss(w: &Var) -> Tensor {
        w.as_tensor().sqr().unwrap().sum_all().unwrap()
    }

    #[test]
    fn schedules() {
        let mut c = OptimizerConfig::segmentation();
        assert_eq!(c.lr_at(0, 100), 1e-2);
        assert!((c.lr_at(50, 100) - 1e-2 * 0.5f64.powf(0.9)).abs() < 1e-15);
        assert_eq!(c.lr_at(100, 100), 0.0);
        c.schedule = Schedule::Cosine;
        assert!((c.lr_at(50, 100) - 5e-3).abs() < 1e-15);
        let s = OptimizerConfig::screening();
        assert_eq!(s.lr_at(77, 100), 3e-4);
    }

    #[test]
    fn sgd_matches_hand_update() {
        let store = ParamStore::new(DType::F64, Device::Cpu, 0);
        let w = quadratic(&store);
        let cfg = OptimizerConfig {
            weight_decay: 0.0,
            ..OptimizerConfig::segmentation()
        };
        let mut opt = Optimizer::new(&cfg, &store, |_| true).unwrap();
        for _ in 0..2 {
            let g = loss(&w).backward().unwrap();
            opt.step(&g, 0.1).unwrap();
        }
        // w1 = w0 - 0.1·2w0 = 0.8 w0; buf1 = 2w0; buf2 = 0.9·2w0 + 1.6w0 = 3.4w0; w2 = 0.8w0 - 0.34w0
        let got: Vec<f64> = w.as_tensor().to_vec1().unwrap();
        for (g, w0) in got.iter().zip([1.0, -2.0, 3.0]) {
            assert!((g - 0.46 * w0).abs() < 1e-12);
        }
    }

    #[test]
    fn state_never_holds_a_graph() {
        for base in [OptimizerConfig::segmentation(), OptimizerConfig::screening()] {
            let store = ParamStore::new(DType::F64, Device::Cpu, 0);
            let w = quadratic(&store);
            let mut opt = Optimizer::new(&base, &store, |_| true).unwrap();
            for _ in 0..3 {
                opt.step(&loss(&w).backward().unwrap(), 0.1).unwrap();
            }
            assert!(opt.state.values().all(|t| !t.track_op()));
        }
    }

    #[test]
    fn adamw_first_step_is_sign_step() {
        let store = ParamStore::new(DType::F64, Device::Cpu, 0);
        let w = quadratic(&store);
        let cfg = OptimizerConfig {
            weight_decay: 0.0,
            ..OptimizerConfig::screening()
        };
        let mut opt = Optimizer::new(&cfg, &store, |_| true).unwrap();
        opt.step(&loss(&w).backward().unwrap(), 0.01).unwrap();
        let got: Vec<f64> = w.as_tensor().to_vec1().unwrap();
        for (g, w0) in got.iter().zip([1.0f64, -2.0, 3.0]) {
            assert!((g - (w0 - 0.01 * w0.signum())).abs() < 1e-7);
        }
    }

    #[test]
    fn state_round_trip_continues_identically() {
        let run = |split: bool| {
            let store = ParamStore::new(DType::F64, Device::Cpu, 0);
            let w = quadratic(&store);
            let cfg = OptimizerConfig::screening();
            let mut opt = Optimizer::new(&cfg, &store, |_| true).unwrap();
            opt.step(&loss(&w).backward().unwrap(), 0.05).unwrap();
            if split {
                let st = opt.state_dict().unwrap();
                opt = Optimizer::new(&cfg, &store, |_| true).unwrap();
                opt.load_state_dict(&st).unwrap();
            }
            opt.step(&loss(&w).backward().unwrap(), 0.05).unwrap();
            w.as_tensor().to_vec1::<f64>().unwrap()
        };
        assert_eq!(run(false), run(true));
    }
}

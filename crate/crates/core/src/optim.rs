//! Optimizers and learning-rate schedules.
//!
//! TrAct reaches the optimizer only as a substituted gradient; optimizer
//! state is never adjusted for it. Weight decay is coupled (added to the
//! gradient) for both SGD and Adam.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::error::{shape_err, Error, Result};
use crate::nn::{Linear, ParamStore};

/// A per-tensor update rule. `slot` identifies the tensor across steps.
pub trait Optimizer {
    fn step(&mut self, slot: usize, param: &mut [f64], grad: &[f64], lr: f64) -> Result<()>;
}

fn check_len(param: &[f64], grad: &[f64]) -> Result<()> {
    if param.len() != grad.len() {
        return shape_err(format!("{} parameters, {} gradient values", param.len(), grad.len()));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct SgdMomentum {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: BTreeMap<usize, Vec<f64>>,
}

impl SgdMomentum {
    pub fn new(momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!("momentum {momentum} outside [0, 1)")));
        }
        Ok(SgdMomentum {
            momentum,
            weight_decay,
            velocity: BTreeMap::new(),
        })
    }

    pub fn velocity(&self, slot: usize) -> Option<&[f64]> {
        self.velocity.get(&slot).map(Vec::as_slice)
    }
}

impl Optimizer for SgdMomentum {
    /// `v ← μ·v + g + wd·W; W ← W − lr·v`.
    fn step(&mut self, slot: usize, param: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        check_len(param, grad)?;
        let v = self.velocity.entry(slot).or_insert_with(|| vec![0.0; param.len()]);
        for ((p, g), v) in param.iter_mut().zip(grad).zip(v.iter_mut()) {
            *v = self.momentum * *v + g + self.weight_decay * *p;
            *p -= lr * *v;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct AdamSlot {
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    slots: BTreeMap<usize, AdamSlot>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            slots: BTreeMap::new(),
        }
    }
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Result<Self> {
        for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidArgument(format!("{name} {b} outside [0, 1)")));
            }
        }
        Ok(Adam {
            beta1,
            beta2,
            eps,
            weight_decay,
            slots: BTreeMap::new(),
        })
    }
}

impl Optimizer for Adam {
    fn step(&mut self, slot: usize, param: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        check_len(param, grad)?;
        let s = self.slots.entry(slot).or_insert_with(|| AdamSlot {
            t: 0,
            m: vec![0.0; param.len()],
            v: vec![0.0; param.len()],
        });
        s.t += 1;
        let c1 = 1.0 - self.beta1.powi(s.t as i32);
        let c2 = 1.0 - self.beta2.powi(s.t as i32);
        for i in 0..param.len() {
            let g = grad[i] + self.weight_decay * param[i];
            s.m[i] = self.beta1 * s.m[i] + (1.0 - self.beta1) * g;
            s.v[i] = self.beta2 * s.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = s.m[i] / c1;
            let v_hat = s.v[i] / c2;
            param[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptKind::Sgd),
            "adam" => Ok(OptKind::Adam),
            other => Err(Error::InvalidArgument(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerRouting {
    pub first_layer: OptKind,
    pub rest: OptKind,
}

impl OptimizerRouting {
    pub fn uniform(kind: OptKind) -> Self {
        OptimizerRouting {
            first_layer: kind,
            rest: kind,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerSettings {
    pub momentum: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            momentum: 0.9,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

fn build(kind: OptKind, s: &OptimizerSettings) -> Result<Box<dyn Optimizer + Send>> {
    Ok(match kind {
        OptKind::Sgd => Box::new(SgdMomentum::new(s.momentum, s.weight_decay)?),
        OptKind::Adam => Box::new(Adam::new(s.beta1, s.beta2, s.eps, s.weight_decay)?),
    })
}

/// Sends layer 0 (weight and bias) to one optimizer and every other layer
/// to another.
pub struct RoutedOptimizer {
    first: Box<dyn Optimizer + Send>,
    rest: Box<dyn Optimizer + Send>,
}

impl RoutedOptimizer {
    pub fn new(routing: OptimizerRouting, settings: &OptimizerSettings) -> Result<Self> {
        Ok(RoutedOptimizer {
            first: build(routing.first_layer, settings)?,
            rest: build(routing.rest, settings)?,
        })
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Linear>], lr: f64) -> Result<()> {
        if params.layers.len() != grads.len() {
            return shape_err("gradient list does not match parameter layers");
        }
        for (i, (p, g)) in params.layers.iter_mut().zip(grads).enumerate() {
            let (p, g) = match (p, g) {
                (Some(p), Some(g)) => (p, g),
                (None, None) => continue,
                _ => return shape_err(format!("layer {i}: parameter/gradient presence differs")),
            };
            let opt = if i == 0 { &mut self.first } else { &mut self.rest };
            opt.step(2 * i, p.w.data_mut(), g.w.data(), lr)?;
            opt.step(2 * i + 1, &mut p.b, &g.b, lr)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LrSchedule {
    Constant,
    Cosine { total_steps: usize },
    StepDecay { milestones: Vec<usize>, factor: f64 },
}

impl LrSchedule {
    /// Decay by `factor` after 1/3 and 2/3 of `total_steps`.
    pub fn thirds(total_steps: usize, factor: f64) -> Self {
        LrSchedule::StepDecay {
            milestones: vec![total_steps / 3, 2 * total_steps / 3],
            factor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let LrSchedule::StepDecay { milestones, .. } = self {
            if milestones.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument(format!(
                    "milestones must be strictly increasing: {milestones:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Learning rate in effect at `step` (0-based).
pub fn lr_at(schedule: &LrSchedule, step: usize, base_lr: f64) -> f64 {
    match schedule {
        LrSchedule::Constant => base_lr,
        LrSchedule::Cosine { total_steps } => {
            let total = (*total_steps).max(1);
            let t = step.min(total) as f64 / total as f64;
            base_lr * 0.5 * (1.0 + (PI * t).cos())
        }
        LrSchedule::StepDecay { milestones, factor } => {
            let passed = milestones.iter().filter(|&&m| step >= m).count();
            base_lr * factor.powi(passed as i32)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;

    #[test]
    fn plain_sgd() {
        let mut opt = SgdMomentum::new(0.0, 0.0).unwrap();
        let mut p = vec![1.0, -2.0];
        opt.step(0, &mut p, &[0.5, 1.0], 0.1).unwrap();
        assert_eq!(p, vec![1.0 - 0.05, -2.0 - 0.1]);
        let mut q = vec![3.0];
        let mut opt = SgdMomentum::new(0.9, 0.0).unwrap();
        opt.step(0, &mut q, &[0.0], 1.0).unwrap();
        assert_eq!(q, vec![3.0]);
        assert!(opt.step(0, &mut q, &[0.0, 1.0], 1.0).is_err());
        assert!(SgdMomentum::new(1.0, 0.0).is_err());
    }

    #[test]
    fn momentum_two_steps() {
        let mut opt = SgdMomentum::new(0.9, 0.0).unwrap();
        let mut p = vec![0.0];
        let (g1, g2, lr) = (1.0, -0.5, 0.1);
        opt.step(0, &mut p, &[g1], lr).unwrap();
        opt.step(0, &mut p, &[g2], lr).unwrap();
        let v2 = 0.9 * g1 + g2;
        assert!((opt.velocity(0).unwrap()[0] - v2).abs() < 1e-15);
        assert!((p[0] - (-lr * g1 - lr * v2)).abs() < 1e-15);
    }

    #[test]
    fn coupled_weight_decay() {
        let mut opt = SgdMomentum::new(0.0, 0.1).unwrap();
        let mut p = vec![2.0];
        opt.step(0, &mut p, &[0.0], 0.5).unwrap();
        assert!((p[0] - (2.0 - 0.5 * 0.2)).abs() < 1e-15);
    }

    /// Independent scalar Adam, written out step by step.
    fn scalar_adam(grads: &[f64], lr: f64) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v, mut w) = (0.0, 0.0, 0.0);
        for (t, g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            w -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        w
    }

    #[test]
    fn adam_against_scalar_oracle() {
        let grads = [0.3, -1.2, 0.05];
        let mut opt = Adam::default();
        let mut p = vec![0.0];
        for g in grads {
            opt.step(4, &mut p, &[g], 0.01).unwrap();
        }
        assert!((p[0] - scalar_adam(&grads, 0.01)).abs() < 1e-15);
    }

    #[test]
    fn adam_limits() {
        let mut opt = Adam::default();
        let mut p = vec![0.0, 5.0];
        let mut last = p.clone();
        for _ in 0..200 {
            opt.step(0, &mut p, &[2.0, -7.0], 0.01).unwrap();
            let d0 = (p[0] - last[0]).abs();
            assert!((d0 - 0.01).abs() < 1e-6, "step size {d0}");
            last = p.clone();
        }
        let mut opt = Adam::default();
        let mut q = vec![1.5];
        for _ in 0..10 {
            opt.step(0, &mut q, &[0.0], 0.1).unwrap();
        }
        assert_eq!(q, vec![1.5]);
        assert!(Adam::new(1.0, 0.9, 1e-8, 0.0).is_err());
    }

    #[test]
    fn schedules() {
        let cos = LrSchedule::Cosine { total_steps: 100 };
        assert_eq!(lr_at(&cos, 0, 0.2), 0.2);
        assert!(lr_at(&cos, 100, 0.2).abs() < 1e-17);
        assert!((lr_at(&cos, 50, 0.2) - 0.1).abs() < 1e-15);
        let sd = LrSchedule::thirds(90, 0.1);
        assert_eq!(sd, LrSchedule::StepDecay { milestones: vec![30, 60], factor: 0.1 });
        assert_eq!(lr_at(&sd, 0, 1.0), 1.0);
        assert_eq!(lr_at(&sd, 29, 1.0), 1.0);
        assert!((lr_at(&sd, 30, 1.0) - 0.1).abs() < 1e-15);
        assert!((lr_at(&sd, 89, 1.0) - 0.01).abs() < 1e-15);
        assert_eq!(lr_at(&LrSchedule::Constant, 1234, 0.3), 0.3);
        assert!(LrSchedule::StepDecay { milestones: vec![5, 5], factor: 0.1 }.validate().is_err());
    }

    fn toy_store() -> (ParamStore, Vec<Option<Linear>>) {
        let l = |v: f64| Linear { w: Mat::from_rows(&[[v, -v]]), b: vec![v] };
        let store = ParamStore { layers: vec![Some(l(1.0)), None, Some(l(2.0))], seed: 0 };
        let grads = vec![Some(l(0.5)), None, Some(l(-0.25))];
        (store, grads)
    }

    #[test]
    fn routing_matches_single_optimizer_runs() {
        let s = OptimizerSettings::default();
        let (store, grads) = toy_store();
        let run = |routing| {
            let mut p = store.clone();
            let mut opt = RoutedOptimizer::new(routing, &s).unwrap();
            opt.step(&mut p, &grads, 0.05).unwrap();
            opt.step(&mut p, &grads, 0.05).unwrap();
            p
        };
        let mixed = run(OptimizerRouting { first_layer: OptKind::Sgd, rest: OptKind::Adam });
        let sgd = run(OptimizerRouting::uniform(OptKind::Sgd));
        let adam = run(OptimizerRouting::uniform(OptKind::Adam));
        assert_eq!(mixed.layers[0], sgd.layers[0]);
        assert_eq!(mixed.layers[2], adam.layers[2]);
        assert_ne!(sgd.layers[2], adam.layers[2]);
    }
}

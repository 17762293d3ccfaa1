use std::str::FromStr;

use crate::error::{Error, Result};
use crate::field::{FieldGrad, VoxelField};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    /// Gradient descent with heavy-ball momentum; `momentum = 0` is plain SGD.
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd { .. } => "sgd",
            OptimizerKind::Adam { .. } => "adam",
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd { momentum: 0.9 }),
            "adam" => Ok(OptimizerKind::adam()),
            other => Err(Error::InvalidInput(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr_density: f64,
    pub lr_albedo: f64,
    /// Per-step multiplicative learning-rate decay; 1 keeps it constant.
    pub decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Sgd { momentum: 0.9 },
            lr_density: 1.0,
            lr_albedo: 1.0,
            decay: 1.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.lr_density) || !ok(self.lr_albedo) {
            return Err(Error::InvalidInput("learning rates must be finite and >= 0".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "learning-rate decay must lie in (0, 1], got {}",
                self.decay
            )));
        }
        match self.kind {
            OptimizerKind::Sgd { momentum } if !(0.0..1.0).contains(&momentum) => Err(
                Error::InvalidInput(format!("momentum must lie in [0, 1), got {momentum}")),
            ),
            OptimizerKind::Adam { beta1, beta2, eps }
                if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) =>
            {
                Err(Error::InvalidInput("invalid Adam hyper-parameters".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Slot {
    fn new(n: usize, second: bool) -> Self {
        Self {
            m: vec![0.0; n],
            v: if second { vec![0.0; n] } else { Vec::new() },
        }
    }
}

/// First-order optimizer over the raw parameters of a [`VoxelField`].
#[derive(Debug, Clone)]
pub struct FieldOptimizer {
    config: OptimizerConfig,
    density: Slot,
    albedo: Slot,
    steps: u64,
}

impl FieldOptimizer {
    pub fn new(config: OptimizerConfig, field: &VoxelField) -> Result<Self> {
        config.validate()?;
        let adam = matches!(config.kind, OptimizerKind::Adam { .. });
        let n = field.voxel_count();
        Ok(Self {
            config,
            density: Slot::new(n, adam),
            albedo: Slot::new(3 * n, adam),
            steps: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update from a raw-space gradient.
    pub fn step(&mut self, field: &mut VoxelField, grad: &FieldGrad) -> Result<()> {
        let n = field.voxel_count();
        if grad.density.len() != n || grad.albedo.len() != 3 * n {
            return Err(Error::dimension(
                "optimizer gradient length",
                n,
                grad.density.len(),
            ));
        }
        let scale = self.config.decay.powi(self.steps.min(i32::MAX as u64) as i32);
        self.steps += 1;
        let t = self.steps as i32;
        let (lr_d, lr_a) = (self.config.lr_density * scale, self.config.lr_albedo * scale);
        let kind = self.config.kind;
        update(kind, t, lr_d, field.density_raw_mut(), &grad.density, &mut self.density);
        update(kind, t, lr_a, field.albedo_raw_mut(), &grad.albedo, &mut self.albedo);
        Ok(())
    }
}

fn update(kind: OptimizerKind, t: i32, lr: f64, params: &mut [f64], grad: &[f64], slot: &mut Slot) {
    match kind {
        OptimizerKind::Sgd { momentum } => {
            for ((p, g), m) in params.iter_mut().zip(grad).zip(slot.m.iter_mut()) {
                *m = momentum * *m + g;
                *p -= lr * *m;
            }
        }
        OptimizerKind::Adam { beta1, beta2, eps } => {
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            for (((p, g), m), v) in params
                .iter_mut()
                .zip(grad)
                .zip(slot.m.iter_mut())
                .zip(slot.v.iter_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Aabb;

    fn field() -> VoxelField {
        VoxelField::new([2, 2, 2], Aabb::cube(1.0).unwrap(), 0.3, -0.2).unwrap()
    }

    fn grad(f: &VoxelField, g: f64) -> FieldGrad {
        let mut out = FieldGrad::zeros(f.voxel_count());
        out.density.iter_mut().for_each(|v| *v = g);
        out.albedo.iter_mut().for_each(|v| *v = -g);
        out
    }

    #[test]
    fn sgd_without_momentum_is_plain_descent() {
        let mut f = field();
        let cfg = OptimizerConfig {
            kind: OptimizerKind::Sgd { momentum: 0.0 },
            lr_density: 0.5,
            lr_albedo: 0.25,
            decay: 1.0,
        };
        let mut opt = FieldOptimizer::new(cfg, &f).unwrap();
        let g = grad(&f, 2.0);
        opt.step(&mut f, &g).unwrap();
        assert!(f.density_raw().iter().all(|&v| (v - (0.3 - 1.0)).abs() < 1e-15));
        assert!(f.albedo_raw().iter().all(|&v| (v - (-0.2 + 0.5)).abs() < 1e-15));
    }

    #[test]
    fn momentum_accumulates() {
        let mut f = field();
        let cfg = OptimizerConfig {
            kind: OptimizerKind::Sgd { momentum: 0.5 },
            lr_density: 1.0,
            lr_albedo: 1.0,
            decay: 1.0,
        };
        let mut opt = FieldOptimizer::new(cfg, &f).unwrap();
        let g = grad(&f, 1.0);
        opt.step(&mut f, &g).unwrap();
        opt.step(&mut f, &g).unwrap();
        // steps of 1 then 1.5
        assert!((f.density_raw()[0] - (0.3 - 2.5)).abs() < 1e-12);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut f = field();
        let cfg = OptimizerConfig {
            kind: OptimizerKind::adam(),
            lr_density: 0.01,
            lr_albedo: 0.02,
            decay: 1.0,
        };
        let mut opt = FieldOptimizer::new(cfg, &f).unwrap();
        let g = grad(&f, 123.0);
        opt.step(&mut f, &g).unwrap();
        assert!((f.density_raw()[3] - (0.3 - 0.01)).abs() < 1e-9);
        assert!((f.albedo_raw()[5] - (-0.2 + 0.02)).abs() < 1e-9);
    }

    #[test]
    fn zero_learning_rate_is_bitwise_noop() {
        for kind in [OptimizerKind::Sgd { momentum: 0.9 }, OptimizerKind::adam()] {
            let mut f = field();
            let before = f.clone();
            let cfg = OptimizerConfig {
                kind,
                lr_density: 0.0,
                lr_albedo: 0.0,
                decay: 1.0,
            };
            let mut opt = FieldOptimizer::new(cfg, &f).unwrap();
            for i in 0..5 {
                let g = grad(&f, i as f64 - 2.0);
                opt.step(&mut f, &g).unwrap();
            }
            assert_eq!(f.density_raw(), before.density_raw());
            assert_eq!(f.albedo_raw(), before.albedo_raw());
        }
    }

    #[test]
    fn decay_shrinks_steps() {
        let mut f = field();
        let cfg = OptimizerConfig {
            kind: OptimizerKind::Sgd { momentum: 0.0 },
            lr_density: 1.0,
            lr_albedo: 1.0,
            decay: 0.5,
        };
        let mut opt = FieldOptimizer::new(cfg, &f).unwrap();
        let g = grad(&f, 1.0);
        for _ in 0..3 {
            opt.step(&mut f, &g).unwrap();
        }
        assert!((f.density_raw()[0] - (0.3 - 1.75)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_config_and_shapes() {
        let f = field();
        let mut cfg = OptimizerConfig::default();
        cfg.lr_density = -1.0;
        assert!(FieldOptimizer::new(cfg, &f).is_err());
        let mut opt = FieldOptimizer::new(OptimizerConfig::default(), &f).unwrap();
        let mut g = f.clone();
        assert!(opt.step(&mut g, &FieldGrad::zeros(3)).is_err());
    }
}

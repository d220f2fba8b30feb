//! Adam with L2 weight decay folded into the gradient.

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::numeric::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64, params: &[Tensor]) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| Tensor::zeros(p.shape()))
                .collect::<Vec<_>>()
        };
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                "adam",
                format!(
                    "{} params / {} grads for {} slots",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            ));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    "adam",
                    format!("{:?} vs {:?}", p.shape(), g.shape()),
                ));
            }
            let p = p.data_mut();
            let (m, v) = (m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                let grad = g.data()[i] + self.weight_decay * p[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad * grad;
                let update = self.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
                p[i] -= update;
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self, ckpt: &mut Checkpoint) {
        ckpt.set_meta("adam.step", self.step);
        for (i, (m, v)) in self.m.iter().zip(&self.v).enumerate() {
            ckpt.insert(format!("adam.m.{i}"), m.clone());
            ckpt.insert(format!("adam.v.{i}"), v.clone());
        }
    }

    /// Restores moments and step count; hyper-parameters stay as configured.
    pub fn load_state(&mut self, ckpt: &Checkpoint) -> Result<()> {
        self.step = ckpt.meta("adam.step")?;
        for i in 0..self.m.len() {
            for (kind, slot) in [("m", &mut self.m[i]), ("v", &mut self.v[i])] {
                let key = format!("adam.{kind}.{i}");
                let t = ckpt.tensor(&key).ok_or_else(|| {
                    Error::format("checkpoint", format!("missing tensor `{key}`"))
                })?;
                if t.shape() != slot.shape() {
                    return Err(Error::format(
                        "checkpoint",
                        format!("tensor `{key}` has shape {:?}", t.shape()),
                    ));
                }
                *slot = t.clone();
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let mut p = vec![Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
        let g = vec![Tensor::new(vec![3], vec![0.3, -4.0, 0.0]).unwrap()];
        let mut adam = Adam::new(0.1, 0.0, &p);
        adam.step(&mut p, &g).unwrap();
        // bias-corrected first step is lr * g / (|g| + eps)
        assert!((p[0].data()[0] - 0.9).abs() < 1e-6);
        assert!((p[0].data()[1] + 1.9).abs() < 1e-6);
        assert_eq!(p[0].data()[2], 0.5);
    }

    #[test]
    fn zero_lr_leaves_params_bit_exact() {
        let init = vec![Tensor::new(vec![2], vec![0.123456789, -7.5]).unwrap()];
        let mut p = init.clone();
        let mut adam = Adam::new(0.0, 1e-3, &p);
        for _ in 0..5 {
            adam.step(&mut p, &[Tensor::new(vec![2], vec![1.0, -3.0]).unwrap()])
                .unwrap();
        }
        assert_eq!(p, init);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut p = vec![Tensor::new(vec![1], vec![5.0]).unwrap()];
        let mut adam = Adam::new(0.1, 0.0, &p);
        for _ in 0..500 {
            let g = Tensor::new(vec![1], vec![2.0 * (p[0].data()[0] - 1.0)]).unwrap();
            adam.step(&mut p, &[g]).unwrap();
        }
        assert!((p[0].data()[0] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut p = vec![Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()];
        let mut adam = Adam::new(0.01, 0.0, &p);
        adam.step(&mut p, &[Tensor::new(vec![2], vec![0.5, -0.5]).unwrap()])
            .unwrap();
        let mut ckpt = Checkpoint::new();
        adam.to_checkpoint(&mut ckpt);
        let mut fresh = Adam::new(0.01, 0.0, &p);
        fresh
            .load_state(&Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap())
            .unwrap();
        assert_eq!(fresh, adam);
    }
}

use super::dense::Matrix;
use crate::error::{invalid, Result};

/// Adam with bias correction, one moment pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|(r, c)| Matrix::zeros(*r, *c)).collect(),
            v: shapes.iter().map(|(r, c)| Matrix::zeros(*r, *c)).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(invalid!("optimizer expects {} tensors", self.m.len()));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(invalid!("gradient shape mismatch for tensor {k}"));
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (((pi, gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let update = (*mi / bc1) / ((*vi / bc2).sqrt() + self.eps);
                *pi -= self.lr * update;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lr_is_bit_identical() {
        let mut p = Matrix::from_vec(1, 3, vec![0.1, -0.2, 3.0]).unwrap();
        let before = p.clone();
        let mut opt = Adam::new(0.0, &[(1, 3)]);
        let g = Matrix::from_vec(1, 3, vec![1.0, -1.0, 0.5]).unwrap();
        opt.step(&mut [&mut p], &[g]).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = Matrix::from_vec(1, 1, vec![5.0]).unwrap();
        let mut opt = Adam::new(0.1, &[(1, 1)]);
        for _ in 0..500 {
            let g = p.scale(2.0);
            opt.step(&mut [&mut p], &[g]).unwrap();
        }
        assert!(p.data()[0].abs() < 1e-2);
    }
}

//! SGD with classical momentum.

use alloc::vec::Vec;

use crate::matrix::Matrix;

/// `v <- mu*v + g; p <- p - lr*v`, one velocity buffer per parameter.
pub struct Sgd {
    momentum: f64,
    velocities: Vec<Matrix>,
}

impl Sgd {
    pub fn new(momentum: f64, params: &[&Matrix]) -> Self {
        Sgd {
            momentum,
            velocities: params
                .iter()
                .map(|p| Matrix::zeros(p.rows(), p.cols()))
                .collect(),
        }
    }

    /// Applies one update; `grads[i]` may be `None` when a parameter was
    /// unreachable from the loss (its velocity still decays).
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Option<&Matrix>], lr: f64) {
        assert_eq!(params.len(), self.velocities.len());
        assert_eq!(grads.len(), self.velocities.len());
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocities).zip(grads) {
            *v = v.scale(self.momentum);
            if let Some(g) = g {
                v.add_scaled_assign(g, 1.0);
            }
            p.add_scaled_assign(v, -lr);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn momentum_accumulates_across_steps() {
        let mut p = Matrix::from_vec(1, 1, vec![1.0]);
        let g = Matrix::from_vec(1, 1, vec![1.0]);
        let mut opt = Sgd::new(0.9, &[&p]);
        opt.step(&mut [&mut p], &[Some(&g)], 0.1);
        assert!((p.scalar() - 0.9).abs() < 1e-15); // v=1, p=1-0.1
        opt.step(&mut [&mut p], &[Some(&g)], 0.1);
        assert!((p.scalar() - (0.9 - 0.1 * 1.9)).abs() < 1e-15); // v=1.9
    }
}

use serde::{Deserialize, Serialize};

use super::{DiffError, Result, Tensor};

/// Moment estimates and step count of an [`Adam`] optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub state: AdamState,
}

impl Adam {
    pub fn new(lr: f64, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.rows, p.cols)).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: AdamState {
                step: 0,
                m: zeros(),
                v: zeros(),
            },
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        let n = self.state.m.len();
        if params.len() != n || grads.len() != n {
            return Err(DiffError::ParameterCount(params.len().max(grads.len()), n));
        }
        for i in 0..n {
            for (a, b) in [(&params[i], &grads[i]), (&params[i], &self.state.m[i])] {
                if a.shape() != b.shape() {
                    return Err(DiffError::Shape {
                        op: "adam",
                        left: a.shape(),
                        right: b.shape(),
                    });
                }
            }
        }
        self.state.step += 1;
        let t = self.state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..n {
            let (m, v) = (&mut self.state.m[i].data, &mut self.state.v[i].data);
            for (((p, &g), m), v) in params[i].data.iter_mut().zip(&grads[i].data).zip(m).zip(v) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

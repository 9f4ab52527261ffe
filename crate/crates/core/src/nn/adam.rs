use crate::nn::{Gradient, Mlp};
use crate::scalar::Scalar;

/// Adam optimiser state for one network (minimises).
#[derive(Debug, Clone)]
pub struct Adam<S> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    m: Vec<S>,
    v: Vec<S>,
    t: i32,
}

impl<S: Scalar> Adam<S> {
    pub fn new(net: &Mlp<S>, lr: S) -> Self {
        let n = net.n_params();
        Adam {
            lr,
            beta1: S::of(0.9),
            beta2: S::of(0.999),
            eps: S::of(1e-8),
            m: vec![S::zero(); n],
            v: vec![S::zero(); n],
            t: 0,
        }
    }

    pub fn step(&mut self, net: &mut Mlp<S>, grad: &Gradient<S>) {
        self.t += 1;
        let c1 = S::one() - self.beta1.powi(self.t);
        let c2 = S::one() - self.beta2.powi(self.t);
        let g = grad.flat();
        for (k, p) in net.params_mut().enumerate() {
            self.m[k] = self.beta1 * self.m[k] + (S::one() - self.beta1) * g[k];
            self.v[k] = self.beta2 * self.v[k] + (S::one() - self.beta2) * g[k] * g[k];
            let mh = self.m[k] / c1;
            let vh = self.v[k] / c2;
            *p = *p - self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

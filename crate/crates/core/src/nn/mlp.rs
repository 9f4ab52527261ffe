use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Output activation; hidden layers always use `tanh`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Tanh,
}

impl Activation {
    pub fn tag(self) -> u32 {
        match self {
            Activation::Linear => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(Activation::Linear),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Fully connected layer, weights row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<S> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> Dense<S> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![S::zero(); inputs * outputs],
            bias: vec![S::zero(); outputs],
        }
    }

    fn apply(&self, x: &[S]) -> Vec<S> {
        (0..self.outputs)
            .map(|o| {
                let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                row.iter().zip(x).fold(self.bias[o], |acc, (&w, &xi)| acc + w * xi)
            })
            .collect()
    }
}

/// Multilayer perceptron with `tanh` hidden units.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<S> {
    pub layers: Vec<Dense<S>>,
    pub output: Activation,
}

/// Parameter-shaped gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<S> {
    pub layers: Vec<Dense<S>>,
}

impl<S: Scalar> Gradient<S> {
    pub fn zeros_like(net: &Mlp<S>) -> Self {
        Gradient {
            layers: net.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect(),
        }
    }

    pub fn scale(&mut self, k: S) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|g| *g = *g * k);
        }
    }

    pub fn flat(&self) -> Vec<S> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.flat().iter().all(|g| g.is_finite())
    }
}

/// Activations recorded by a forward pass; `values[0]` is the input.
#[derive(Debug, Clone)]
pub struct Trace<S> {
    pub values: Vec<Vec<S>>,
}

impl<S: Scalar> Trace<S> {
    pub fn output(&self) -> &[S] {
        self.values.last().expect("trace holds at least the input")
    }
}

impl<S: Scalar> Mlp<S> {
    pub fn zeros(sizes: &[usize], output: Activation) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        Mlp {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            output,
        }
    }

    /// Uniform fan-in initialisation `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`,
    /// with the final layer drawn from `U(-final_scale, final_scale)`.
    pub fn random<R: Rng + ?Sized>(sizes: &[usize], output: Activation, final_scale: f64, rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes, output);
        let n = net.layers.len();
        for (i, l) in net.layers.iter_mut().enumerate() {
            let bound = if i + 1 == n {
                final_scale
            } else {
                1.0 / (l.inputs as f64).sqrt()
            };
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = S::of(rng.random_range(-bound..=bound));
            }
        }
        net
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> Vec<S> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut S> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
    }

    /// Internal shape consistency (layer chaining and buffer lengths).
    pub fn check(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Contract("network has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::Contract(format!("layer {i} buffers do not match its shape")));
            }
            if i > 0 && self.layers[i - 1].outputs != l.inputs {
                return Err(Error::Contract(format!("layer {i} does not chain with layer {}", i - 1)));
            }
        }
        Ok(())
    }

    fn check_input(&self, input: &[S]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Contract(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[S]) -> Result<Vec<S>> {
        Ok(self.forward_trace(input)?.values.pop().expect("non-empty trace"))
    }

    pub fn forward_trace(&self, input: &[S]) -> Result<Trace<S>> {
        self.check_input(input)?;
        let n = self.layers.len();
        let mut values = Vec::with_capacity(n + 1);
        values.push(input.to_vec());
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = l.apply(values.last().expect("non-empty"));
            if i + 1 < n || self.output == Activation::Tanh {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            values.push(z);
        }
        Ok(Trace { values })
    }

    /// Gradient of `upstream . output` with respect to every parameter.
    pub fn backward(&self, input: &[S], upstream: &[S]) -> Result<Gradient<S>> {
        let trace = self.forward_trace(input)?;
        let mut grad = Gradient::zeros_like(self);
        self.backward_into(&trace, upstream, &mut grad)?;
        Ok(grad)
    }

    /// Accumulates parameter gradients of `upstream . output` into `grad` and
    /// returns the gradient with respect to the input.
    pub fn backward_into(&self, trace: &Trace<S>, upstream: &[S], grad: &mut Gradient<S>) -> Result<Vec<S>> {
        if upstream.len() != self.output_dim() {
            return Err(Error::Contract(format!(
                "upstream gradient has {} entries, network has {} outputs",
                upstream.len(),
                self.output_dim()
            )));
        }
        if trace.values.len() != self.layers.len() + 1 {
            return Err(Error::Contract("trace does not belong to this network".into()));
        }
        let n = self.layers.len();
        let mut delta = upstream.to_vec();
        for i in (0..n).rev() {
            let l = &self.layers[i];
            let out = &trace.values[i + 1];
            if i + 1 < n || self.output == Activation::Tanh {
                for (d, &y) in delta.iter_mut().zip(out) {
                    *d = *d * (S::one() - y * y);
                }
            }
            let x = &trace.values[i];
            let g = &mut grad.layers[i];
            for o in 0..l.outputs {
                let d = delta[o];
                g.bias[o] = g.bias[o] + d;
                let row = &mut g.weights[o * l.inputs..(o + 1) * l.inputs];
                for (gw, &xi) in row.iter_mut().zip(x) {
                    *gw = *gw + d * xi;
                }
            }
            let mut prev = vec![S::zero(); l.inputs];
            for o in 0..l.outputs {
                let d = delta[o];
                let row = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                for (p, &w) in prev.iter_mut().zip(row) {
                    *p = *p + d * w;
                }
            }
            delta = prev;
        }
        Ok(delta)
    }

    /// Gradient of `upstream . output` with respect to the input only.
    pub fn input_gradient(&self, trace: &Trace<S>, upstream: &[S]) -> Result<Vec<S>> {
        if upstream.len() != self.output_dim() || trace.values.len() != self.layers.len() + 1 {
            return Err(Error::Contract("upstream gradient or trace does not match the network".into()));
        }
        let n = self.layers.len();
        let mut delta = upstream.to_vec();
        for i in (0..n).rev() {
            let l = &self.layers[i];
            if i + 1 < n || self.output == Activation::Tanh {
                for (d, &y) in delta.iter_mut().zip(&trace.values[i + 1]) {
                    *d = *d * (S::one() - y * y);
                }
            }
            let mut prev = vec![S::zero(); l.inputs];
            for (o, &d) in delta.iter().enumerate() {
                let row = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                for (p, &w) in prev.iter_mut().zip(row) {
                    *p = *p + d * w;
                }
            }
            delta = prev;
        }
        Ok(delta)
    }

    /// Polyak averaging: `self <- (1 - tau) self + tau online`.
    pub fn soft_update(&mut self, online: &Mlp<S>, tau: S) {
        for (t, o) in self.params_mut().zip(online.params()) {
            *t = (S::one() - tau) * *t + tau * o;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::<f64>::zeros(&[3, 5, 2], Activation::Linear);
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_tanh_unit() {
        let mut net = Mlp::<f64>::zeros(&[1, 1], Activation::Tanh);
        net.layers[0].weights[0] = 1.0;
        for x in [-3.0, -0.5, 0.0, 0.7, 2.0] {
            assert_eq!(net.forward(&[x]).unwrap(), vec![f64::tanh(x)]);
        }
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let net = Mlp::<f64>::zeros(&[2, 3, 1], Activation::Linear);
        assert!(matches!(net.forward(&[1.0]), Err(Error::Contract(_))));
        assert!(matches!(net.backward(&[1.0, 2.0], &[1.0, 1.0]), Err(Error::Contract(_))));
        let mut broken = net.clone();
        broken.layers[1].inputs = 4;
        assert!(broken.check().is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::<f64>::random(&[3, 8, 8, 2], Activation::Tanh, 0.5, &mut rng);
        let g = net.backward(&[0.1, 0.2, 0.3], &[0.0, 0.0]).unwrap();
        assert!(g.flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_gradient_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::<f64>::random(&[3, 2], Activation::Linear, 1.0, &mut rng);
        let x = [0.5, -1.5, 2.0];
        let up = [0.25, -3.0];
        let g = net.backward(&x, &up).unwrap();
        for o in 0..2 {
            assert_eq!(g.layers[0].bias[o], up[o]);
            for i in 0..3 {
                assert_eq!(g.layers[0].weights[o * 3 + i], up[o] * x[i]);
            }
        }
    }

    #[test]
    fn soft_update_is_exact_convex_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let online = Mlp::<f64>::random(&[2, 4, 1], Activation::Linear, 1.0, &mut rng);
        let mut target = Mlp::<f64>::random(&[2, 4, 1], Activation::Linear, 1.0, &mut rng);
        let old = target.params();
        let tau = 0.005;
        target.soft_update(&online, tau);
        for ((t, o), n) in old.iter().zip(online.params()).zip(target.params()) {
            assert_eq!(n, (1.0 - tau) * t + tau * o);
        }
    }

    #[test]
    fn f32_nets_work() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::<f32>::random(&[2, 4, 1], Activation::Tanh, 1.0, &mut rng);
        let y = net.forward(&[0.3, 0.1]).unwrap();
        assert!(y[0].abs() <= 1.0);
    }
}

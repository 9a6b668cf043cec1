//! Fully connected feed-forward networks with manual reverse mode.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::Params;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
    Sigmoid,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Softmax over the last layer: a distribution over classes.
    Softmax,
    /// The last layer's activations as a latent vector.
    Latent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    /// Layer widths including input and output, e.g. `[784, 128, 10]`.
    pub sizes: Vec<usize>,
    #[serde(default = "default_hidden")]
    pub hidden: Activation,
    /// Activation of the last layer (before the softmax, if any).
    #[serde(default = "default_output")]
    pub output: Activation,
    pub head: Head,
}

fn default_hidden() -> Activation {
    Activation::Relu
}

fn default_output() -> Activation {
    Activation::Identity
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardNet {
    pub spec: NetSpec,
    pub params: Params,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct NetTape {
    /// Input of every layer followed by the output of the last layer
    /// (after activation, before the head).
    acts: Vec<Vec<f64>>,
    pub out: Vec<f64>,
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Backward through `p = softmax(z)`: p ⊙ (g − ⟨g, p⟩).
pub fn softmax_backward(p: &[f64], g: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    p.iter().zip(g).map(|(pi, gi)| pi * (gi - dot)).collect()
}

impl FeedForwardNet {
    pub fn new(name: &str, spec: NetSpec, rng: &mut ChaCha8Rng) -> FeedForwardNet {
        assert!(
            spec.sizes.len() >= 2,
            "a network needs input and output widths"
        );
        let mut params = Params::default();
        for l in 0..spec.sizes.len() - 1 {
            let (n_in, n_out) = (spec.sizes[l], spec.sizes[l + 1]);
            let bound = (6.0 / (n_in + n_out) as f64).sqrt();
            let w = (0..n_in * n_out)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            params.add(format!("{name}.l{l}.weight"), vec![n_out, n_in], w);
            params.add(format!("{name}.l{l}.bias"), vec![n_out], vec![0.0; n_out]);
        }
        FeedForwardNet { spec, params }
    }

    pub fn layers(&self) -> usize {
        self.spec.sizes.len() - 1
    }

    pub fn input_width(&self) -> usize {
        self.spec.sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.spec.sizes.last().expect("sizes")
    }

    fn activation(&self, l: usize) -> Activation {
        if l + 1 == self.layers() {
            self.spec.output
        } else {
            self.spec.hidden
        }
    }

    pub fn forward(&self, x: &[f64]) -> NetTape {
        assert_eq!(x.len(), self.input_width(), "network input width");
        let mut acts = vec![x.to_vec()];
        for l in 0..self.layers() {
            let w = &self.params.blocks[2 * l].data;
            let b = &self.params.blocks[2 * l + 1].data;
            let input = acts.last().expect("input");
            let n_in = input.len();
            let act = self.activation(l);
            let out: Vec<f64> = (0..b.len())
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    let z = b[o] + row.iter().zip(input).map(|(a, c)| a * c).sum::<f64>();
                    act.apply(z)
                })
                .collect();
            acts.push(out);
        }
        let last = acts.last().expect("output");
        let out = match self.spec.head {
            Head::Softmax => softmax(last),
            Head::Latent => last.clone(),
        };
        NetTape { acts, out }
    }

    /// Accumulate parameter gradients of `⟨upstream, out⟩` into `grads` and
    /// return the gradient with respect to the input.
    pub fn backward(&self, tape: &NetTape, upstream: &[f64], grads: &mut Params) -> Vec<f64> {
        assert_eq!(upstream.len(), tape.out.len(), "upstream width");
        let mut g = match self.spec.head {
            Head::Softmax => softmax_backward(&tape.out, upstream),
            Head::Latent => upstream.to_vec(),
        };
        for l in (0..self.layers()).rev() {
            let act = self.activation(l);
            let out = &tape.acts[l + 1];
            for (gi, &a) in g.iter_mut().zip(out) {
                *gi *= act.derivative(a);
            }
            let input = &tape.acts[l];
            let n_in = input.len();
            {
                let gw = &mut grads.blocks[2 * l].data;
                for (o, &go) in g.iter().enumerate() {
                    if go == 0.0 {
                        continue;
                    }
                    let row = &mut gw[o * n_in..(o + 1) * n_in];
                    for (r, &x) in row.iter_mut().zip(input) {
                        *r += go * x;
                    }
                }
            }
            for (gb, &go) in grads.blocks[2 * l + 1].data.iter_mut().zip(&g) {
                *gb += go;
            }
            let w = &self.params.blocks[2 * l].data;
            let mut gin = vec![0.0; n_in];
            for (o, &go) in g.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                let row = &w[o * n_in..(o + 1) * n_in];
                for (gi, &wv) in gin.iter_mut().zip(row) {
                    *gi += go * wv;
                }
            }
            g = gin;
        }
        g
    }
}

//! Neural-probabilistic predicates: the networks and circuits behind each
//! NPP, flavored probability queries, and backpropagation into them.

pub mod checkpoint;
pub mod circuit;
pub mod net;
pub mod params;
pub mod tensor;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::{NppFlavor, Program, QueryFlavor};
use crate::grounder::InstanceKey;
pub use circuit::{Circuit, CircuitError, CircuitSpec, CircuitTape, LeafSpec};
pub use net::{softmax, softmax_backward, Activation, FeedForwardNet, Head, NetSpec, NetTape};
pub use params::{Block, Params};
pub use tensor::{Tensor, TensorError};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum NppError {
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("NPP `{npp}` ({flavor:?}) cannot answer {query:?} queries")]
    UnsupportedQuery {
        npp: String,
        flavor: NppFlavor,
        query: QueryFlavor,
    },
    #[error("backward pass for {0:?} queries is not supported")]
    UnsupportedBackward(QueryFlavor),
    #[error("backward called before forward")]
    BackwardWithoutForward,
    #[error("upstream gradient has {found} entries, expected {expected}")]
    UpstreamShape { expected: usize, found: usize },
    #[error("input has {found} values, `{npp}` expects {expected}")]
    InputShape {
        npp: String,
        expected: usize,
        found: usize,
    },
    #[error("no model bound to NPP `{0}`")]
    Unbound(String),
    #[error("model `{name}`: {reason}")]
    BadSpec { name: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "flavor", rename_all = "snake_case")]
pub enum ModelSpec {
    Nn {
        net: NetSpec,
    },
    Pc {
        circuit: CircuitSpec,
    },
    /// A circuit over the latent output of a (possibly shared) encoder.
    NnPc {
        encoder: String,
        circuit: CircuitSpec,
    },
}

impl ModelSpec {
    pub fn flavor(&self) -> NppFlavor {
        match self {
            ModelSpec::Nn { .. } => NppFlavor::Nn,
            ModelSpec::Pc { .. } => NppFlavor::Pc,
            ModelSpec::NnPc { .. } => NppFlavor::NnPc,
        }
    }
}

/// Models for every NPP binding of a program, plus shared encoders.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BankSpec {
    #[serde(default)]
    pub encoders: BTreeMap<String, NetSpec>,
    pub models: BTreeMap<String, ModelSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NppModel {
    Nn { net: usize },
    Pc { circuit: usize },
    NnPc { encoder: usize, circuit: usize },
}

impl NppModel {
    pub fn flavor(&self) -> NppFlavor {
        match self {
            NppModel::Nn { .. } => NppFlavor::Nn,
            NppModel::Pc { .. } => NppFlavor::Pc,
            NppModel::NnPc { .. } => NppFlavor::NnPc,
        }
    }
}

/// All NPP parameters of a program.
#[derive(Debug, Clone, PartialEq)]
pub struct NppBank {
    pub nets: Vec<(String, FeedForwardNet)>,
    pub circuits: Vec<(String, Circuit)>,
    pub models: Vec<(String, NppModel)>,
    /// NPP predicate name -> model index.
    by_npp: BTreeMap<String, usize>,
}

/// Gradient buffers laid out like an [`NppBank`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BankGrads {
    pub nets: Vec<Params>,
    pub circuits: Vec<Params>,
}

impl BankGrads {
    pub fn fill_zero(&mut self) {
        self.nets
            .iter_mut()
            .chain(&mut self.circuits)
            .for_each(Params::fill_zero);
    }

    pub fn add_assign(&mut self, other: &BankGrads) {
        for (a, b) in self.nets.iter_mut().zip(&other.nets) {
            a.add_assign(b);
        }
        for (a, b) in self.circuits.iter_mut().zip(&other.circuits) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, f: f64) {
        self.nets
            .iter_mut()
            .chain(&mut self.circuits)
            .for_each(|p| p.scale(f));
    }

    pub fn all_finite(&self) -> bool {
        self.nets
            .iter()
            .chain(&self.circuits)
            .all(Params::all_finite)
    }

    pub fn is_zero(&self) -> bool {
        self.nets
            .iter()
            .chain(&self.circuits)
            .all(|p| p.blocks.iter().all(|b| b.data.iter().all(|&x| x == 0.0)))
    }
}

/// Which model produced a forward pass, and its intermediate values.
#[derive(Debug, Clone)]
enum Tape {
    Nn(NetTape),
    Pc(CircuitTape),
    NnPc(NetTape, CircuitTape),
}

/// The result of one NPP query: the output vector and what backward needs.
#[derive(Debug, Clone)]
pub struct Forward {
    pub p: Vec<f64>,
    pub query: QueryFlavor,
    model: usize,
    tape: Tape,
}

impl Forward {
    /// log P(x, C=v) for generative models.
    pub fn logjoint(&self) -> Option<&[f64]> {
        match &self.tape {
            Tape::Nn(_) => None,
            Tape::Pc(t) | Tape::NnPc(_, t) => Some(&t.logjoint),
        }
    }
}

fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl NppBank {
    /// Instantiate the models a program's NPP declarations bind to.
    pub fn build(program: &Program, spec: &BankSpec, seed: u64) -> Result<NppBank, NppError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bank = NppBank {
            nets: Vec::new(),
            circuits: Vec::new(),
            models: Vec::new(),
            by_npp: BTreeMap::new(),
        };
        let mut encoders: BTreeMap<&str, usize> = BTreeMap::new();
        for (name, net) in &spec.encoders {
            if net.head != Head::Latent {
                return Err(NppError::BadSpec {
                    name: name.clone(),
                    reason: "an encoder needs a latent head".into(),
                });
            }
            encoders.insert(name, bank.nets.len());
            bank.nets.push((
                name.clone(),
                FeedForwardNet::new(name, net.clone(), &mut rng),
            ));
        }
        let mut by_binding: BTreeMap<&str, usize> = BTreeMap::new();
        for decl in &program.npps {
            if bank.by_npp.contains_key(&decl.name) {
                continue;
            }
            if let Some(&m) = by_binding.get(decl.binding.as_str()) {
                bank.by_npp.insert(decl.name.clone(), m);
                continue;
            }
            let ms = spec
                .models
                .get(&decl.binding)
                .ok_or_else(|| NppError::Unbound(decl.name.clone()))?;
            if let Some(f) = decl.flavor {
                if f != ms.flavor() {
                    return Err(NppError::BadSpec {
                        name: decl.binding.clone(),
                        reason: format!(
                            "declared as {} but configured as {}",
                            f.keyword(),
                            ms.flavor().keyword()
                        ),
                    });
                }
            }
            let classes = decl.outcomes.len();
            let bad = |reason: String| NppError::BadSpec {
                name: decl.binding.clone(),
                reason,
            };
            let model = match ms {
                ModelSpec::Nn { net } => {
                    if net.head != Head::Softmax || net.sizes.last() != Some(&classes) {
                        return Err(bad(format!("needs a softmax head of width {classes}")));
                    }
                    bank.nets.push((
                        decl.binding.clone(),
                        FeedForwardNet::new(&decl.binding, net.clone(), &mut rng),
                    ));
                    NppModel::Nn {
                        net: bank.nets.len() - 1,
                    }
                }
                ModelSpec::Pc { circuit } => {
                    bank.circuits.push((
                        decl.binding.clone(),
                        Circuit::new(circuit.clone(), classes, &mut rng)?,
                    ));
                    NppModel::Pc {
                        circuit: bank.circuits.len() - 1,
                    }
                }
                ModelSpec::NnPc { encoder, circuit } => {
                    let &e = encoders
                        .get(encoder.as_str())
                        .ok_or_else(|| bad(format!("unknown encoder `{encoder}`")))?;
                    let latent = bank.nets[e].1.output_width();
                    if latent != circuit.width * circuit.height {
                        return Err(bad(format!(
                            "encoder width {latent} does not match a {}x{} circuit",
                            circuit.width, circuit.height
                        )));
                    }
                    bank.circuits.push((
                        decl.binding.clone(),
                        Circuit::new(circuit.clone(), classes, &mut rng)?,
                    ));
                    NppModel::NnPc {
                        encoder: e,
                        circuit: bank.circuits.len() - 1,
                    }
                }
            };
            by_binding.insert(&decl.binding, bank.models.len());
            bank.by_npp.insert(decl.name.clone(), bank.models.len());
            bank.models.push((decl.binding.clone(), model));
        }
        Ok(bank)
    }

    pub fn model_of(&self, npp: &str) -> Result<usize, NppError> {
        self.by_npp
            .get(npp)
            .copied()
            .ok_or_else(|| NppError::Unbound(npp.to_string()))
    }

    pub fn zero_grads(&self) -> BankGrads {
        BankGrads {
            nets: self
                .nets
                .iter()
                .map(|(_, n)| n.params.zeros_like())
                .collect(),
            circuits: self
                .circuits
                .iter()
                .map(|(_, c)| c.params().zeros_like())
                .collect(),
        }
    }

    pub fn has_generative(&self) -> bool {
        self.models.iter().any(|(_, m)| m.flavor().is_generative())
    }

    /// Re-derive cached circuit quantities after a parameter update.
    pub fn refresh(&mut self) {
        for (_, c) in &mut self.circuits {
            c.refresh();
        }
    }

    pub fn input_width(&self, model: usize) -> usize {
        match self.models[model].1 {
            NppModel::Nn { net } => self.nets[net].1.input_width(),
            NppModel::Pc { circuit } => self.circuits[circuit].1.scope_size(),
            NppModel::NnPc { encoder, .. } => self.nets[encoder].1.input_width(),
        }
    }

    fn check_input(&self, model: usize, x: &Tensor) -> Result<(), NppError> {
        let expected = self.input_width(model);
        if x.len() != expected {
            return Err(NppError::InputShape {
                npp: self.models[model].0.clone(),
                expected,
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Answer a flavored query for the data `x`.
    ///
    /// Conditional queries return P(C|x), joint queries P(x, C), likelihood
    /// queries P(x|C) and prior queries P(C) (all of x marginalized).
    pub fn forward(
        &self,
        model: usize,
        x: &Tensor,
        query: QueryFlavor,
    ) -> Result<Forward, NppError> {
        self.check_input(model, x)?;
        let (name, m) = &self.models[model];
        if !query.supported_by(m.flavor()) {
            return Err(NppError::UnsupportedQuery {
                npp: name.clone(),
                flavor: m.flavor(),
                query,
            });
        }
        let (tape, circuit) = match *m {
            NppModel::Nn { net } => {
                let t = self.nets[net].1.forward(&x.values);
                return Ok(Forward {
                    p: t.out.clone(),
                    query,
                    model,
                    tape: Tape::Nn(t),
                });
            }
            NppModel::Pc { circuit } => {
                let c = &self.circuits[circuit].1;
                let input = if query == QueryFlavor::Prior {
                    x.clone().with_mask(vec![false; x.len()])?
                } else {
                    x.clone()
                };
                (Tape::Pc(c.forward(&input)?), c)
            }
            NppModel::NnPc { encoder, circuit } => {
                let e = self.nets[encoder].1.forward(&x.values);
                let mut z = Tensor::vector(e.out.clone());
                if query == QueryFlavor::Prior {
                    z = z.with_mask(vec![false; e.out.len()])?;
                }
                let c = &self.circuits[circuit].1;
                let ct = c.forward(&z)?;
                (Tape::NnPc(e, ct), c)
            }
        };
        let lj = match &tape {
            Tape::Pc(t) | Tape::NnPc(_, t) => &t.logjoint,
            Tape::Nn(_) => unreachable!(),
        };
        let p = match query {
            QueryFlavor::Conditional => {
                let l = logsumexp(lj);
                lj.iter().map(|v| (v - l).exp()).collect()
            }
            QueryFlavor::Joint | QueryFlavor::Prior => lj.iter().map(|v| v.exp()).collect(),
            QueryFlavor::Likelihood => {
                let n = circuit.scope_size();
                let marginal =
                    circuit.logjoint(&Tensor::vector(vec![0.0; n]).with_mask(vec![false; n])?)?;
                lj.iter()
                    .zip(&marginal)
                    .map(|(a, b)| (a - b).exp())
                    .collect()
            }
        };
        Ok(Forward {
            p,
            query,
            model,
            tape,
        })
    }

    /// Accumulate the gradient of `⟨upstream, p⟩` into `grads`.
    pub fn backward(
        &self,
        fwd: &Forward,
        upstream: &[f64],
        grads: &mut BankGrads,
    ) -> Result<(), NppError> {
        if upstream.len() != fwd.p.len() {
            return Err(NppError::UpstreamShape {
                expected: fwd.p.len(),
                found: upstream.len(),
            });
        }
        let g_lj: Vec<f64> = match fwd.query {
            QueryFlavor::Conditional => softmax_backward(&fwd.p, upstream),
            QueryFlavor::Joint => fwd.p.iter().zip(upstream).map(|(p, g)| p * g).collect(),
            q => return Err(NppError::UnsupportedBackward(q)),
        };
        match (&fwd.tape, self.models[fwd.model].1) {
            (Tape::Nn(t), NppModel::Nn { net }) => {
                self.nets[net].1.backward(t, upstream, &mut grads.nets[net]);
            }
            (Tape::Pc(t), NppModel::Pc { circuit }) => {
                self.circuits[circuit]
                    .1
                    .backward(t, &g_lj, &mut grads.circuits[circuit]);
            }
            (Tape::NnPc(et, ct), NppModel::NnPc { encoder, circuit }) => {
                let gz = self.circuits[circuit]
                    .1
                    .backward(ct, &g_lj, &mut grads.circuits[circuit]);
                self.nets[encoder]
                    .1
                    .backward(et, &gz, &mut grads.nets[encoder]);
            }
            _ => unreachable!("tape matches model"),
        }
        Ok(())
    }

    /// L_NPP for one input: −log Σ_v P(x, C=v).
    pub fn nll(&self, model: usize, x: &Tensor) -> Result<(f64, Forward), NppError> {
        let (name, m) = &self.models[model];
        if !m.flavor().is_generative() {
            return Err(NppError::UnsupportedQuery {
                npp: name.clone(),
                flavor: m.flavor(),
                query: QueryFlavor::Joint,
            });
        }
        let fwd = self.forward(model, x, QueryFlavor::Joint)?;
        let lj = fwd.logjoint().expect("generative");
        Ok((-logsumexp(lj), fwd))
    }

    /// Accumulate `scale · ∂L_NPP/∂θ` into the circuit gradients. The
    /// encoder of an NN+PC model is not trained by L_NPP.
    pub fn nll_backward(&self, fwd: &Forward, scale: f64, grads: &mut BankGrads) {
        let lj = fwd.logjoint().expect("generative forward");
        let l = logsumexp(lj);
        let g: Vec<f64> = lj.iter().map(|v| -scale * (v - l).exp()).collect();
        match (&fwd.tape, self.models[fwd.model].1) {
            (Tape::Pc(t), NppModel::Pc { circuit })
            | (Tape::NnPc(_, t), NppModel::NnPc { circuit, .. }) => {
                self.circuits[circuit]
                    .1
                    .backward(t, &g, &mut grads.circuits[circuit]);
            }
            _ => unreachable!("nll forward is generative"),
        }
    }
}

/// One ground NPP instance bound to its data, with the tape of its last forward pass.
#[derive(Debug, Clone)]
pub struct NppInstance {
    pub key: InstanceKey,
    pub model: usize,
    pub input: Tensor,
    last: Option<Forward>,
}

impl NppInstance {
    pub fn new(bank: &NppBank, key: InstanceKey, input: Tensor) -> Result<NppInstance, NppError> {
        let model = bank.model_of(&key.npp)?;
        bank.check_input(model, &input)?;
        Ok(NppInstance {
            key,
            model,
            input,
            last: None,
        })
    }

    pub fn forward(&mut self, bank: &NppBank, query: QueryFlavor) -> Result<Vec<f64>, NppError> {
        let f = bank.forward(self.model, &self.input, query)?;
        let p = f.p.clone();
        self.last = Some(f);
        Ok(p)
    }

    pub fn backward(
        &self,
        bank: &NppBank,
        upstream: &[f64],
        grads: &mut BankGrads,
    ) -> Result<(), NppError> {
        let f = self.last.as_ref().ok_or(NppError::BackwardWithoutForward)?;
        bank.backward(f, upstream, grads)
    }

    pub fn nll(&self, bank: &NppBank) -> Result<f64, NppError> {
        Ok(bank.nll(self.model, &self.input)?.0)
    }
}

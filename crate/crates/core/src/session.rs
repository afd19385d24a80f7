use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::params::{ParamId, ParamSet};
use crate::tensor::TensorError;

/// One forward (and optionally backward) pass over a single sentence.
///
/// `train` enables dropout; `trainable` registers parameters so that they
/// receive gradients. Dropout masks come from a generator seeded per
/// session, so a pass is reproducible from its seed alone.
pub struct Session<'p> {
    pub graph: Graph<'p>,
    vars: Vec<Var>,
    train: bool,
    rng: ChaCha8Rng,
}

impl<'p> Session<'p> {
    pub fn new(params: &'p ParamSet, train: bool, trainable: bool, seed: u64) -> Self {
        let mut graph = Graph::new();
        let vars = params.register(&mut graph, trainable);
        Session {
            graph,
            vars,
            train,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Inference pass: no dropout, no gradients.
    pub fn inference(params: &'p ParamSet) -> Self {
        Self::new(params, false, false, 0)
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.index()]
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    /// Elementwise dropout, active only in training mode.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var, TensorError> {
        if !self.train {
            return Ok(x);
        }
        self.graph.dropout(x, rate, &mut self.rng)
    }

    /// Dropout with one mask shared by every row, active only in training.
    pub fn shared_dropout(&mut self, x: Var, rate: f64) -> Result<Var, TensorError> {
        if !self.train {
            return Ok(x);
        }
        self.graph.shared_dropout(x, rate, &mut self.rng)
    }

    /// Gradients of every registered parameter, zero where none flowed.
    pub fn param_grads(&self) -> Vec<Vec<f64>> {
        self.vars
            .iter()
            .map(|&v| match self.graph.grad(v) {
                Some(g) => g.to_vec(),
                None => vec![0.0; self.graph.value(v).len()],
            })
            .collect()
    }

    /// Parameter gradients moved out of the graph, zero where none flowed.
    pub fn into_param_grads(mut self) -> Vec<Vec<f64>> {
        let vars = std::mem::take(&mut self.vars);
        vars.iter()
            .map(|&v| {
                let n = self.graph.value(v).len();
                self.graph.take_grad(v).unwrap_or_else(|| vec![0.0; n])
            })
            .collect()
    }

    /// Add every parameter gradient into `acc`.
    pub fn accumulate_grads(&self, acc: &mut [Vec<f64>]) {
        for (&v, dst) in self.vars.iter().zip(acc.iter_mut()) {
            if let Some(g) = self.graph.grad(v) {
                dst.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
    }
}

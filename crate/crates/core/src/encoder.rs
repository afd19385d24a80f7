//! Multi-layer bidirectional LSTM.

use rand::Rng;

use crate::autodiff::{dropout_mask, Var};
use crate::config::LstmDropoutMode;
use crate::error::{Error, Result};
use crate::params::{uniform, ParamId, ParamSet};
use crate::session::Session;
use crate::tensor::Tensor;

/// Parameters of one direction of one layer. Gate blocks are ordered
/// input, forget, output, candidate.
#[derive(Clone, Copy, Debug)]
pub struct LstmBank {
    pub input: ParamId,
    pub recurrent: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct BiLstm {
    layers: Vec<[LstmBank; 2]>,
    input_dim: usize,
    hidden: usize,
    dropout: f64,
    mode: LstmDropoutMode,
}

impl BiLstm {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        input_dim: usize,
        hidden: usize,
        layers: usize,
        dropout: f64,
        mode: LstmDropoutMode,
        init_scale: f64,
        forget_bias: f64,
        rng: &mut R,
    ) -> Self {
        let mut out = Vec::with_capacity(layers);
        for k in 0..layers {
            let d = if k == 0 { input_dim } else { 2 * hidden };
            let mut bank = |dir: &str| {
                let input = params.add(
                    format!("lstm.{}.{}.input", k, dir),
                    uniform(&[d, 4 * hidden], init_scale, rng),
                );
                let recurrent = params.add(
                    format!("lstm.{}.{}.recurrent", k, dir),
                    uniform(&[hidden, 4 * hidden], init_scale, rng),
                );
                let mut b = Tensor::zeros(&[4 * hidden]);
                b.data_mut()[hidden..2 * hidden]
                    .iter_mut()
                    .for_each(|v| *v = forget_bias);
                let bias = params.add(format!("lstm.{}.{}.bias", k, dir), b);
                LstmBank {
                    input,
                    recurrent,
                    bias,
                }
            };
            let fw = bank("fw");
            let bw = bank("bw");
            out.push([fw, bw]);
        }
        BiLstm {
            layers: out,
            input_dim,
            hidden,
            dropout,
            mode,
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn layers(&self) -> &[[LstmBank; 2]] {
        &self.layers
    }

    /// `l × 2h` token representations: forward states then backward states.
    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let shape = s.graph.value(x).shape().to_vec();
        if shape.len() != 2 || shape[0] == 0 {
            return Err(Error::Data("encoder input must be a non-empty l×d matrix".into()));
        }
        if shape[1] != self.input_dim {
            return Err(Error::Mismatch(format!(
                "encoder expects {}-d token vectors, got {}",
                self.input_dim, shape[1]
            )));
        }
        let mut cur = x;
        for (k, banks) in self.layers.iter().enumerate() {
            if k > 0 && self.mode == LstmDropoutMode::InterLayer {
                cur = s.shared_dropout(cur, self.dropout)?;
            }
            let mut dirs = [cur; 2];
            for (dir, bank) in banks.iter().enumerate() {
                let w = s.var(bank.input);
                let b = s.var(bank.bias);
                let u = s.var(bank.recurrent);
                let pre = s.graph.matmul(cur, w)?;
                let pre = s.graph.add_bias(pre, b)?;
                let mask = (s.is_training()
                    && self.mode == LstmDropoutMode::Recurrent
                    && self.dropout > 0.0)
                    .then(|| dropout_mask(&[self.hidden], self.dropout, s.rng()));
                dirs[dir] = s.graph.lstm(pre, u, dir == 1, mask)?;
            }
            cur = s.graph.concat(&dirs)?;
        }
        Ok(cur)
    }
}

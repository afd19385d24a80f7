//! Start/end feed-forward heads and the biaffine span scorer
//! `r[s,e] = h_sᵀ U h_e + W (h_s ⊕ h_e) + b`.

use rand::Rng;

use crate::autodiff::Var;
use crate::config::Activation;
use crate::error::Result;
use crate::params::{uniform, ParamId, ParamSet};
use crate::session::Session;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
struct Dense {
    weight: ParamId,
    bias: ParamId,
}

/// One feed-forward head: `depth` layers of `act(x·W + b)` with dropout.
#[derive(Clone, Debug)]
pub struct Ffnn {
    layers: Vec<Dense>,
    activation: Activation,
    dropout: f64,
}

impl Ffnn {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        input_dim: usize,
        size: usize,
        depth: usize,
        activation: Activation,
        dropout: f64,
        init_scale: f64,
        rng: &mut R,
    ) -> Self {
        let layers = (0..depth)
            .map(|k| {
                let d = if k == 0 { input_dim } else { size };
                Dense {
                    weight: params.add(
                        format!("{}.{}.weight", name, k),
                        uniform(&[d, size], init_scale, rng),
                    ),
                    bias: params.add(format!("{}.{}.bias", name, k), Tensor::zeros(&[size])),
                }
            })
            .collect();
        Ffnn {
            layers,
            activation,
            dropout,
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let mut cur = x;
        for layer in &self.layers {
            let w = s.var(layer.weight);
            let b = s.var(layer.bias);
            let y = s.graph.matmul(cur, w)?;
            let y = s.graph.add_bias(y, b)?;
            let y = match self.activation {
                Activation::Tanh => s.graph.tanh(y),
                Activation::Sigmoid => s.graph.sigmoid(y),
            };
            cur = s.dropout(y, self.dropout)?;
        }
        Ok(cur)
    }
}

/// Separate start and end heads plus the biaffine parameters `U` (`d×c×d`),
/// `W` (`2d×c`) and `b` (`c`).
#[derive(Clone, Debug)]
pub struct BiaffineScorer {
    start: Ffnn,
    end: Ffnn,
    bilinear: Option<ParamId>,
    linear: ParamId,
    bias: ParamId,
    head_dim: usize,
    classes: usize,
}

impl BiaffineScorer {
    /// With `use_bilinear` false the `U` term is dropped and no tensor is
    /// allocated for it.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        input_dim: usize,
        head_dim: usize,
        depth: usize,
        activation: Activation,
        dropout: f64,
        classes: usize,
        use_bilinear: bool,
        init_scale: f64,
        rng: &mut R,
    ) -> Self {
        let start = Ffnn::new(
            params, "ffnn_start", input_dim, head_dim, depth, activation, dropout, init_scale, rng,
        );
        let end = Ffnn::new(
            params, "ffnn_end", input_dim, head_dim, depth, activation, dropout, init_scale, rng,
        );
        let bilinear = use_bilinear.then(|| {
            params.add(
                "biaffine.U",
                uniform(&[head_dim, classes, head_dim], init_scale, rng),
            )
        });
        let linear = params.add(
            "biaffine.W",
            uniform(&[2 * head_dim, classes], init_scale, rng),
        );
        let bias = params.add("biaffine.b", Tensor::zeros(&[classes]));
        BiaffineScorer {
            start,
            end,
            bilinear,
            linear,
            bias,
            head_dim,
            classes,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn has_bilinear(&self) -> bool {
        self.bilinear.is_some()
    }

    /// `(h_s, h_e)`, each `l × head_dim`.
    pub fn heads(&self, s: &mut Session, x: Var) -> Result<(Var, Var)> {
        Ok((self.start.forward(s, x)?, self.end.forward(s, x)?))
    }

    /// `l×l×c` scores from head representations. Cells with `s > e` are
    /// computed but never read.
    pub fn score(&self, s: &mut Session, hs: Var, he: Var) -> Result<Var> {
        let d = self.head_dim;
        let w = s.var(self.linear);
        let b = s.var(self.bias);
        let w_start = s.graph.slice_rows(w, 0, d)?;
        let w_end = s.graph.slice_rows(w, d, 2 * d)?;
        let a = s.graph.matmul(hs, w_start)?;
        let a = s.graph.add_bias(a, b)?;
        let e = s.graph.matmul(he, w_end)?;
        let linear = s.graph.pairwise_sum(a, e)?;
        match self.bilinear {
            Some(u) => {
                let u = s.var(u);
                let bil = s.graph.pairwise_bilinear(hs, u, he)?;
                Ok(s.graph.add(bil, linear)?)
            }
            None => Ok(linear),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (hs, he) = self.heads(s, x)?;
        self.score(s, hs, he)
    }

    pub fn linear_param(&self) -> ParamId {
        self.linear
    }

    pub fn bias_param(&self) -> ParamId {
        self.bias
    }

    pub fn bilinear_param(&self) -> Option<ParamId> {
        self.bilinear
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build(input: usize, d: usize, c: usize, bil: bool, seed: u64) -> (ParamSet, BiaffineScorer) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let sc = BiaffineScorer::new(
            &mut p,
            input,
            d,
            1,
            Activation::Tanh,
            0.2,
            c,
            bil,
            0.8,
            &mut rng,
        );
        (p, sc)
    }

    fn random(shape: &[usize], seed: u64) -> Tensor {
        uniform(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn bias_only_scores_equal_bias() {
        let (mut p, sc) = build(3, 4, 3, true, 0);
        for id in [sc.bilinear_param().unwrap(), sc.linear_param()] {
            p.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        *p.get_mut(sc.bias_param()) = Tensor::vector(vec![0.5, -1.0, 2.0]);
        let mut s = Session::inference(&p);
        let x = s.graph.constant(random(&[4, 3], 1));
        let r = sc.forward(&mut s, x).unwrap();
        let t = s.graph.value(r);
        assert_eq!(t.shape(), &[4, 4, 3]);
        for cell in t.data().chunks(3) {
            assert_eq!(cell, &[0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn zero_head_weights_give_zero_heads_and_heads_are_separate() {
        let (p, sc) = build(3, 4, 2, true, 2);
        let mut s = Session::inference(&p);
        let x = s.graph.constant(random(&[2, 3], 3));
        let (hs, he) = sc.heads(&mut s, x).unwrap();
        assert_ne!(s.graph.value(hs), s.graph.value(he));

        let mut zeroed = p.clone();
        for (name, t) in p.names().iter().zip(zeroed.tensors_mut()) {
            if name.starts_with("ffnn_") {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let mut s = Session::inference(&zeroed);
        let x = s.graph.constant(random(&[2, 3], 3));
        let (hs, he) = sc.heads(&mut s, x).unwrap();
        assert!(s.graph.value(hs).data().iter().all(|&v| v == 0.0));
        assert!(s.graph.value(he).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_token_has_one_cell() {
        let (p, sc) = build(3, 4, 5, true, 4);
        let mut s = Session::inference(&p);
        let x = s.graph.constant(random(&[1, 3], 5));
        let r = sc.forward(&mut s, x).unwrap();
        assert_eq!(s.graph.value(r).shape(), &[1, 1, 5]);
    }

    #[test]
    fn scores_match_loop_evaluation() {
        let (d, c, l) = (2, 2, 3);
        let (p, sc) = build(3, d, c, true, 6);
        let mut s = Session::inference(&p);
        let x = s.graph.constant(random(&[l, 3], 7));
        let (hs, he) = sc.heads(&mut s, x).unwrap();
        let r = sc.score(&mut s, hs, he).unwrap();
        let (hs, he, r) = (s.graph.value(hs), s.graph.value(he), s.graph.value(r));
        let u = p.get(sc.bilinear_param().unwrap());
        let w = p.get(sc.linear_param());
        let b = p.get(sc.bias_param());
        for st in 0..l {
            for en in 0..l {
                for k in 0..c {
                    let mut v = b.data()[k];
                    for i in 0..d {
                        for j in 0..d {
                            v += hs.get(&[st, i]) * u.get(&[i, k, j]) * he.get(&[en, j]);
                        }
                    }
                    for i in 0..d {
                        v += w.get(&[i, k]) * hs.get(&[st, i]);
                        v += w.get(&[d + i, k]) * he.get(&[en, i]);
                    }
                    assert!((r.get(&[st, en, k]) - v).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn removing_bilinear_term_keeps_linear_part() {
        let (p_full, full) = build(3, 4, 3, true, 8);
        let (_, lin) = build(3, 4, 3, false, 8);
        assert!(!lin.has_bilinear());
        // Same parameters minus U, in a set that the linear-only scorer indexes.
        let mut p_lin = ParamSet::new();
        for (n, t) in p_full.names().iter().zip(p_full.tensors()) {
            if n != "biaffine.U" {
                p_lin.add(n.clone(), t.clone());
            }
        }
        let mut zero_u = p_full.clone();
        zero_u
            .get_mut(full.bilinear_param().unwrap())
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = 0.0);
        let x = random(&[3, 3], 9);
        let eval = |p: &ParamSet, sc: &BiaffineScorer| {
            let mut s = Session::inference(p);
            let xv = s.graph.constant(x.clone());
            let r = sc.forward(&mut s, xv).unwrap();
            s.graph.value(r).clone()
        };
        let a = eval(&zero_u, &full);
        let b = eval(&p_lin, &lin);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (p, sc) = build(3, 3, 3, true, 10);
        let x = random(&[3, 3], 11);
        let readout = random(&[3, 3, 3], 12);
        let names = p.names().to_vec();
        let report = check_gradients(p.tensors(), 1e-5, |ts| {
            let mut q = ParamSet::new();
            for (n, t) in names.iter().zip(ts) {
                q.add(n.clone(), t.clone());
            }
            let mut s = Session::new(&q, false, true, 0);
            let xv = s.graph.constant(x.clone());
            let r = sc.forward(&mut s, xv).unwrap();
            let w = s.graph.constant(readout.clone());
            let y = s.graph.mul(r, w).unwrap();
            let y = s.graph.sum(y);
            s.graph.backward(y).unwrap();
            (s.graph.value(y).item(), s.param_grads())
        });
        for r in report {
            assert!(r.relative_error < 1e-4, "{}: {}", names[r.index], r.relative_error);
        }
    }
}

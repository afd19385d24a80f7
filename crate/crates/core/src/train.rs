//! Span classification loss, Adam and the epoch loop.

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::autodiff::{Graph, Var};
use crate::config::{SelectionMetric, TrainConfig};
use crate::data::{AnnotatedSentence, Categories};
use crate::decoder::{DecodeMode, NON_ENTITY};
use crate::embedding::StaticEmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::gradcheck::{check_gradients, GroupCheck};
use crate::model::{Example, Model};
use crate::params::ParamSet;
use crate::scores::ScoreTensor;
use crate::session::Session;
use crate::span::count_valid_spans;

/// Gold category index of every valid span of one sentence; spans that are
/// not annotated are non-entity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GoldLabelTensor {
    len: usize,
    labels: Vec<usize>,
}

impl GoldLabelTensor {
    pub fn new(sentence: &AnnotatedSentence, categories: &Categories) -> Result<Self> {
        let len = sentence.len();
        let mut labels = vec![NON_ENTITY; len * len];
        for e in sentence.entities() {
            if e.start > e.end || e.end >= len {
                return Err(Error::Data(format!(
                    "sentence {}: span ({}, {}) is not a valid span",
                    sentence.id(),
                    e.start,
                    e.end
                )));
            }
            let k = categories.index(&e.category).ok_or_else(|| {
                Error::Data(format!(
                    "sentence {}: unknown category {}",
                    sentence.id(),
                    e.category
                ))
            })?;
            let cell = &mut labels[e.start * len + e.end];
            if *cell != NON_ENTITY && *cell != k {
                return Err(Error::Data(format!(
                    "sentence {}: span ({}, {}) has two categories",
                    sentence.id(),
                    e.start,
                    e.end
                )));
            }
            *cell = k;
        }
        Ok(GoldLabelTensor { len, labels })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn label(&self, start: usize, end: usize) -> usize {
        assert!(start <= end && end < self.len);
        self.labels[start * self.len + end]
    }

    /// `(flattened cell, gold class)` for every valid span, row-major.
    pub fn targets(&self) -> Vec<(usize, usize)> {
        let l = self.len;
        let mut out = Vec::with_capacity(count_valid_spans(l));
        for s in 0..l {
            for e in s..l {
                out.push((s * l + e, self.labels[s * l + e]));
            }
        }
        out
    }
}

/// Summed softmax cross-entropy over all valid spans of `scores` (`l×l×c`).
pub fn sentence_loss(g: &mut Graph, scores: Var, gold: &GoldLabelTensor) -> Result<Var> {
    let shape = g.value(scores).shape();
    if shape.len() != 3 || shape[0] != gold.len() || shape[1] != gold.len() {
        return Err(Error::Mismatch(format!(
            "score tensor {:?} does not match a sentence of length {}",
            shape,
            gold.len()
        )));
    }
    Ok(g.cross_entropy(scores, &gold.targets())?)
}

/// Loss value for a plain score tensor.
pub fn score_tensor_loss(scores: &ScoreTensor, gold: &GoldLabelTensor) -> Result<f64> {
    let t = crate::tensor::Tensor::new(
        vec![scores.len(), scores.len(), scores.categories()],
        scores.data().to_vec(),
    )?;
    let mut g = Graph::new();
    let v = g.constant(t);
    let loss = sentence_loss(&mut g, v, gold)?;
    Ok(g.value(loss).item())
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamSet, config: &TrainConfig) -> Self {
        Adam {
            learning_rate: config.learning_rate,
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            epsilon: config.adam_epsilon,
            step: 0,
            m: params.zero_grads(),
            v: params.zero_grads(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut ParamSet, grads: &[Vec<f64>]) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

/// Scale `grads` so that their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        grads
            .iter_mut()
            .flatten()
            .for_each(|g| *g *= scale);
    }
    norm
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Dropout seed of one sentence in one epoch.
fn sentence_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    splitmix(splitmix(seed ^ splitmix(epoch as u64)) ^ index as u64)
}

struct SentenceGrads {
    loss: f64,
    spans: usize,
    grads: Vec<Vec<f64>>,
}

fn sentence_grads(
    model: &Model,
    example: Example,
    static_table: Option<&StaticEmbeddingTable>,
    train: bool,
    seed: u64,
) -> Result<SentenceGrads> {
    let gold = GoldLabelTensor::new(example.sentence, model.categories())?;
    let mut s = Session::new(model.params(), train, true, seed);
    let scores = model.forward(&mut s, example, static_table)?;
    let loss = sentence_loss(&mut s.graph, scores, &gold)?;
    s.graph.backward(loss)?;
    let value = s.graph.value(loss).item();
    Ok(SentenceGrads {
        loss: value,
        spans: count_valid_spans(gold.len()),
        grads: s.into_param_grads(),
    })
}

/// Loss and parameter gradients of one sentence without dropout.
pub fn loss_and_grads(
    model: &Model,
    example: Example,
    static_table: Option<&StaticEmbeddingTable>,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let r = sentence_grads(model, example, static_table, false, 0)?;
    Ok((r.loss, r.grads))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    /// Mean loss per valid span, measured before each batch update.
    pub loss: f64,
    pub spans: usize,
    pub updates: usize,
}

/// One pass over `examples` in a seeded random order. `epoch` is 1-based and
/// feeds the shuffle and dropout seeds.
pub fn train_epoch(
    model: &mut Model,
    opt: &mut Adam,
    examples: &[Example],
    static_table: Option<&StaticEmbeddingTable>,
    epoch: usize,
) -> Result<EpochStats> {
    if examples.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let config = model.config().clone();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(config.seed ^ 0x5348_5546) ^ epoch as u64);
    order.shuffle(&mut rng);
    let mut total_loss = 0.0;
    let mut total_spans = 0;
    let mut updates = 0;
    for batch in order.chunks(config.batch_size.max(1)) {
        let results: Vec<SentenceGrads> = {
            let m: &Model = model;
            batch
                .par_iter()
                .map(|&i| {
                    sentence_grads(
                        m,
                        examples[i],
                        static_table,
                        true,
                        sentence_seed(config.seed, epoch, i),
                    )
                })
                .collect::<Result<_>>()?
        };
        let mut iter = results.into_iter();
        let first = iter.next().expect("non-empty batch");
        total_loss += first.loss;
        total_spans += first.spans;
        let mut grads = first.grads;
        for r in iter {
            total_loss += r.loss;
            total_spans += r.spans;
            for (a, b) in grads.iter_mut().zip(&r.grads) {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            }
        }
        let norm = clip_global_norm(&mut grads, config.clip_norm);
        debug!("epoch {} batch {} gradient norm {:.4}", epoch, updates, norm);
        opt.update(model.params_mut(), &grads);
        updates += 1;
    }
    Ok(EpochStats {
        loss: total_loss / total_spans as f64,
        spans: total_spans,
        updates,
    })
}

/// Decode every example and score against its annotations.
pub fn evaluate_model(
    model: &Model,
    examples: &[Example],
    static_table: Option<&StaticEmbeddingTable>,
    mode: DecodeMode,
) -> Result<EvalReport> {
    let pred = model.predict_all(examples, static_table, mode)?;
    let gold: Vec<AnnotatedSentence> = examples.iter().map(|e| e.sentence.clone()).collect();
    evaluate(&gold, &pred)
}

/// Index of the best development F1; the earliest epoch wins ties.
pub fn select_epoch(dev_f1: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &f) in dev_f1.iter().enumerate() {
        if best.is_none_or(|b| f > dev_f1[b]) {
            best = Some(i);
        }
    }
    best
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_f1: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    /// Score the training split after every epoch.
    pub eval_train: bool,
    /// Stop once the training F1 reaches this value (implies `eval_train`).
    pub target_train_f1: Option<f64>,
    /// Cap on epochs; the configured count when `None`.
    pub max_epochs: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub selected_epoch: usize,
    pub reached_target: bool,
}

/// Train for the configured number of epochs and leave the selected
/// parameters in `model`: the best development epoch when a development
/// split is given and selection is by development F1, else the last epoch.
pub fn fit<F: FnMut(&EpochRecord)>(
    model: &mut Model,
    train: &[Example],
    dev: Option<&[Example]>,
    static_table: Option<&StaticEmbeddingTable>,
    options: &FitOptions,
    mut on_epoch: F,
) -> Result<FitResult> {
    if train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let config = model.config().clone();
    let epochs = options.max_epochs.unwrap_or(config.epochs);
    if epochs == 0 {
        return Err(Error::Config("at least one epoch is required".into()));
    }
    let dev = dev.filter(|d| !d.is_empty());
    let by_dev = dev.is_some() && config.early_stopping_metric == SelectionMetric::DevF1;
    let mut opt = Adam::new(model.params(), &config);
    let mut history = Vec::with_capacity(epochs);
    let mut dev_f1s = Vec::new();
    let mut best: Option<ParamSet> = None;
    let mut reached_target = false;
    for epoch in 1..=epochs {
        let stats = train_epoch(model, &mut opt, train, static_table, epoch)?;
        let mut record = EpochRecord {
            epoch,
            loss: stats.loss,
            train_f1: None,
            dev_precision: None,
            dev_recall: None,
            dev_f1: None,
        };
        if options.eval_train || options.target_train_f1.is_some() {
            let r = evaluate_model(model, train, static_table, config.decode_mode)?;
            record.train_f1 = Some(r.micro.f1);
        }
        if let Some(d) = dev {
            let r = evaluate_model(model, d, static_table, config.decode_mode)?;
            record.dev_precision = Some(r.micro.precision);
            record.dev_recall = Some(r.micro.recall);
            record.dev_f1 = Some(r.micro.f1);
            dev_f1s.push(r.micro.f1);
            if by_dev && select_epoch(&dev_f1s) == Some(dev_f1s.len() - 1) {
                best = Some(model.params().clone());
            }
        }
        info!(
            "epoch {} loss {:.6}{}{}",
            epoch,
            record.loss,
            record.train_f1.map_or(String::new(), |f| format!(" train F1 {:.4}", f)),
            record.dev_f1.map_or(String::new(), |f| format!(" dev F1 {:.4}", f)),
        );
        on_epoch(&record);
        history.push(record);
        if let (Some(target), Some(f)) = (options.target_train_f1, history.last().unwrap().train_f1) {
            if f >= target {
                reached_target = true;
                break;
            }
        }
    }
    let selected_epoch = if by_dev {
        let idx = select_epoch(&dev_f1s).expect("at least one epoch");
        model.load_params(best.expect("best parameters recorded"))?;
        idx + 1
    } else {
        history.len()
    };
    Ok(FitResult {
        history,
        selected_epoch,
        reached_target,
    })
}

/// Central-difference check of every parameter group of `model` on the
/// summed loss of `examples`, without dropout.
pub fn check_model_gradients(
    model: &Model,
    examples: &[Example],
    static_table: Option<&StaticEmbeddingTable>,
    eps: f64,
) -> Result<Vec<GroupCheck>> {
    let names = model.params().names().to_vec();
    let mut failure: Option<Error> = None;
    let mut probe = model.clone();
    let report = check_gradients(model.params().tensors(), eps, |ts| {
        let mut p = ParamSet::new();
        for (n, t) in names.iter().zip(ts) {
            p.add(n.clone(), t.clone());
        }
        probe.load_params(p).expect("same layout");
        let mut loss = 0.0;
        let mut grads = probe.params().zero_grads();
        for ex in examples {
            match loss_and_grads(&probe, *ex, static_table) {
                Ok((l, g)) => {
                    loss += l;
                    for (a, b) in grads.iter_mut().zip(&g) {
                        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                    }
                }
                Err(e) => {
                    failure.get_or_insert(e);
                }
            }
        }
        (loss, grads)
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

/// Parameter group name and its check result.
pub type NamedCheck = (String, GroupCheck);

/// Gradient check of the full model on a reduced configuration: BiLSTM 8,
/// FFNN 6, 20-d inputs (contextual 4, fine-tuned static 10, character CNN
/// 2×3), three classes and three random sentences of at most four tokens.
pub fn reduced_gradcheck(seed: u64) -> Result<Vec<NamedCheck>> {
    use crate::data::synth;
    use crate::data::{EntitySpan, Sentence};
    use crate::embedding::{CharVocab, ContextualVectors};
    use crate::model::Dataset;
    use crate::span::Span;
    use crate::tensor::Tensor;
    use rand::Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = synth::vocabulary();
    let mut sentences = Vec::new();
    for i in 0..3 {
        let l = rng.gen_range(1..=4);
        let tokens: Vec<String> = (0..l)
            .map(|_| words[rng.gen_range(0..words.len())].to_string())
            .collect();
        let mut spans: Vec<Span> = Vec::new();
        let mut ents = Vec::new();
        for _ in 0..3 {
            let s = rng.gen_range(0..l);
            let e = rng.gen_range(s..l);
            let span = Span::new(s, e);
            if spans.iter().all(|&o| o != span && !o.clashes(span)) {
                spans.push(span);
                let cat = if rng.gen_bool(0.5) { "A" } else { "B" };
                ents.push(EntitySpan::new(s, e, cat));
            }
        }
        sentences.push(AnnotatedSentence::new(Sentence::new(format!("g{}", i), tokens), ents)?);
    }
    let mut config = TrainConfig::default();
    config.apply_overrides(&[
        "lstm_size=8",
        "ffnn_size=6",
        "contextual_dim=4",
        "static_dim=10",
        "char_cnn_size=2",
        "finetune_static=true",
        "init_scale=0.5",
    ])?;
    config.seed = seed;
    let mut contextual = ContextualVectors::new(4);
    for (i, s) in sentences.iter().enumerate() {
        let data = (0..s.len() * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        contextual.insert(i as u32, Tensor::new(vec![s.len(), 4], data)?)?;
    }
    let table = synth::embeddings(10, seed);
    let categories = Categories::new(["A", "B"]);
    let chars = CharVocab::from_sentences(&sentences);
    let mut model = Model::new(config, categories, chars, Some(&table))?;
    let names = model.params().names().to_vec();
    for (i, name) in names.iter().enumerate() {
        if name.ends_with("bias") || name.ends_with(".b") {
            let p = model.params_mut().get_mut(crate::params::ParamId::from_index(i));
            p.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.5..0.5));
        }
    }
    let data = Dataset::new(sentences).with_contextual(contextual);
    let examples = data.examples();
    let report = check_model_gradients(&model, &examples, None, 1e-5)?;
    Ok(report
        .into_iter()
        .map(|r| (model.params().names()[r.index].clone(), r))
        .collect())
}

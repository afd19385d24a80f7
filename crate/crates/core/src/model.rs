//! The full span scorer: token vectors, BiLSTM, heads and biaffine map.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::Var;
use crate::config::TrainConfig;
use crate::data::{AnnotatedSentence, Categories, EntitySpan};
use crate::decoder::{decode, DecodeMode};
use crate::embedding::{CharCnn, CharVocab, ContextualVectors, StaticEmbeddingTable, TokenEmbedder, TokenSources};
use crate::encoder::BiLstm;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamSet};
use crate::scorer::BiaffineScorer;
use crate::scores::ScoreTensor;
use crate::session::Session;
use crate::tensor::Tensor;

/// Sentences of one corpus file with their optional contextual vectors,
/// which are keyed by position in the file.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub sentences: Vec<AnnotatedSentence>,
    pub contextual: Option<ContextualVectors>,
}

impl Dataset {
    pub fn new(sentences: Vec<AnnotatedSentence>) -> Self {
        Dataset {
            sentences,
            contextual: None,
        }
    }

    pub fn with_contextual(mut self, contextual: ContextualVectors) -> Self {
        self.contextual = Some(contextual);
        self
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn examples(&self) -> Vec<Example<'_>> {
        self.sentences
            .iter()
            .enumerate()
            .map(|(i, sentence)| Example {
                sentence,
                contextual: self.contextual.as_ref().and_then(|c| c.get(i)),
            })
            .collect()
    }
}

/// A sentence paired with its contextual vectors, if any.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub sentence: &'a AnnotatedSentence,
    pub contextual: Option<&'a Tensor>,
}

#[derive(Clone, Debug)]
pub struct Model {
    config: TrainConfig,
    categories: Categories,
    char_vocab: CharVocab,
    static_vocab: Option<StaticEmbeddingTable>,
    params: ParamSet,
    embedder: TokenEmbedder,
    encoder: BiLstm,
    scorer: BiaffineScorer,
}

impl Model {
    /// Fresh parameters drawn from a generator seeded with `config.seed`.
    ///
    /// `static_table` must be given when static vectors are fine-tuned; its
    /// rows initialise the trainable table and its vocabulary is kept with
    /// the model.
    pub fn new(
        config: TrainConfig,
        categories: Categories,
        char_vocab: CharVocab,
        static_table: Option<&StaticEmbeddingTable>,
    ) -> Result<Self> {
        config.validate()?;
        if categories.names().is_empty() {
            return Err(Error::Data("no entity categories".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let char_cnn = config.use_char.then(|| {
            CharCnn::new(
                &mut params,
                char_vocab.size(),
                config.char_embedding_size,
                config.char_cnn_size,
                &config.char_filter_widths,
                config.init_scale,
                &mut rng,
            )
        });
        let mut static_vocab = None;
        let mut static_param = None;
        if config.use_static && config.finetune_static {
            let table = static_table.ok_or_else(|| {
                Error::Config("finetune_static needs a static embedding table".into())
            })?;
            check_static_dim(&config, table)?;
            let mut data = vec![0.0; config.static_dim];
            data.extend_from_slice(table.matrix().data());
            let t = Tensor::new(vec![table.len() + 1, config.static_dim], data)?;
            static_param = Some(params.add("static.embedding", t));
            static_vocab = Some(table.clone());
        } else if let (true, Some(table)) = (config.use_static, static_table) {
            check_static_dim(&config, table)?;
        }
        let embedder = TokenEmbedder::new(
            config.use_contextual.then_some(config.contextual_dim),
            config.use_static.then_some(config.static_dim),
            static_param,
            char_cnn,
            config.embedding_dropout,
        )?;
        let encoder = BiLstm::new(
            &mut params,
            embedder.output_dim(),
            config.lstm_size,
            config.lstm_layers,
            config.lstm_dropout,
            config.lstm_dropout_mode,
            config.init_scale,
            config.forget_bias,
            &mut rng,
        );
        let scorer = BiaffineScorer::new(
            &mut params,
            encoder.output_dim(),
            config.ffnn_size,
            config.ffnn_depth,
            config.ffnn_activation,
            config.ffnn_dropout,
            categories.class_count(),
            config.use_biaffine,
            config.init_scale,
            &mut rng,
        );
        Ok(Model {
            config,
            categories,
            char_vocab,
            static_vocab,
            params,
            embedder,
            encoder,
            scorer,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn categories(&self) -> &Categories {
        &self.categories
    }

    pub fn char_vocab(&self) -> &CharVocab {
        &self.char_vocab
    }

    /// Vocabulary of a fine-tuned static table, stored with the model.
    pub fn static_vocab(&self) -> Option<&StaticEmbeddingTable> {
        self.static_vocab.as_ref()
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn encoder(&self) -> &BiLstm {
        &self.encoder
    }

    pub fn scorer(&self) -> &BiaffineScorer {
        &self.scorer
    }

    pub fn embedder(&self) -> &TokenEmbedder {
        &self.embedder
    }

    /// Replace every parameter tensor; names and shapes must match.
    pub fn load_params(&mut self, params: ParamSet) -> Result<()> {
        if params.names() != self.params.names() {
            return Err(Error::Mismatch(format!(
                "parameter names differ: expected {} tensors, got {}",
                self.params.len(),
                params.len()
            )));
        }
        for ((name, a), b) in params.names().iter().zip(params.tensors()).zip(self.params.tensors()) {
            if a.shape() != b.shape() {
                return Err(Error::Mismatch(format!(
                    "parameter {} has shape {:?}, model expects {:?}",
                    name,
                    a.shape(),
                    b.shape()
                )));
            }
        }
        self.params = params;
        Ok(())
    }

    /// Check that the resources given to the model have the widths it expects.
    pub fn check_resources(
        &self,
        static_table: Option<&StaticEmbeddingTable>,
        contextual: Option<&ContextualVectors>,
    ) -> Result<()> {
        if self.config.use_static && self.static_vocab.is_none() {
            match static_table {
                Some(t) => check_static_dim(&self.config, t)?,
                None => {
                    return Err(Error::Config(
                        "model uses static embeddings but none were provided".into(),
                    ))
                }
            }
        }
        if self.config.use_contextual {
            match contextual {
                Some(c) if c.dim() != self.config.contextual_dim => {
                    return Err(Error::Mismatch(format!(
                        "contextual vectors have dimension {}, model expects {}",
                        c.dim(),
                        self.config.contextual_dim
                    )))
                }
                Some(_) => {}
                None => {
                    return Err(Error::Config(
                        "model uses contextual vectors but none were provided".into(),
                    ))
                }
            }
        }
        Ok(())
    }

    /// `l×l×c` span scores for one sentence.
    pub fn forward(
        &self,
        s: &mut Session,
        example: Example,
        static_table: Option<&StaticEmbeddingTable>,
    ) -> Result<Var> {
        let sentence = example.sentence;
        let src = TokenSources {
            sentence_id: sentence.id(),
            tokens: sentence.tokens(),
            contextual: example.contextual,
            static_table: self.static_vocab.as_ref().or(static_table),
            char_vocab: Some(&self.char_vocab),
        };
        let x = self.embedder.forward(s, &src)?;
        let h = self.encoder.forward(s, x)?;
        self.scorer.forward(s, h)
    }

    pub fn scores(
        &self,
        example: Example,
        static_table: Option<&StaticEmbeddingTable>,
    ) -> Result<ScoreTensor> {
        let mut s = Session::inference(&self.params);
        let r = self.forward(&mut s, example, static_table)?;
        ScoreTensor::from_tensor(s.graph.value(r))
    }

    /// Decoded entities for one sentence.
    pub fn predict(
        &self,
        example: Example,
        static_table: Option<&StaticEmbeddingTable>,
        mode: DecodeMode,
    ) -> Result<AnnotatedSentence> {
        let scores = self.scores(example, static_table)?;
        let entities = decode(&scores, mode)
            .into_iter()
            .map(|ls| {
                let name = self
                    .categories
                    .name(ls.category)
                    .expect("decoder emits known categories");
                EntitySpan::new(ls.span.start(), ls.span.end(), name)
            })
            .collect();
        example.sentence.with_entities(entities)
    }

    /// Predictions for every example, in input order.
    pub fn predict_all(
        &self,
        examples: &[Example],
        static_table: Option<&StaticEmbeddingTable>,
        mode: DecodeMode,
    ) -> Result<Vec<AnnotatedSentence>> {
        examples
            .par_iter()
            .map(|ex| self.predict(*ex, static_table, mode))
            .collect()
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.params.position(name)
    }
}

fn check_static_dim(config: &TrainConfig, table: &StaticEmbeddingTable) -> Result<()> {
    if table.dim() != config.static_dim {
        return Err(Error::Mismatch(format!(
            "static embeddings have dimension {}, model expects {}",
            table.dim(),
            config.static_dim
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sentence;

    fn small_config() -> TrainConfig {
        let mut c = TrainConfig::default();
        c.apply_overrides(&[
            "lstm_size=4",
            "lstm_layers=2",
            "ffnn_size=3",
            "static_dim=5",
            "char_cnn_size=2",
            "use_contextual=false",
        ])
        .unwrap();
        c
    }

    fn sentence() -> AnnotatedSentence {
        let toks = ["Bank", "of", "China"].map(String::from).to_vec();
        AnnotatedSentence::new(
            Sentence::new("s0", toks),
            vec![EntitySpan::new(0, 2, "ORG"), EntitySpan::new(2, 2, "GPE")],
        )
        .unwrap()
    }

    fn table() -> StaticEmbeddingTable {
        StaticEmbeddingTable::from_rows(5, vec![("China".into(), vec![0.1; 5])]).unwrap()
    }

    #[test]
    fn forward_shape_and_prediction() {
        let s = sentence();
        let cats = Categories::from_sentences([&s]);
        let model = Model::new(
            small_config(),
            cats,
            CharVocab::from_sentences([&s]),
            None,
        )
        .unwrap();
        let t = table();
        let ex = Example {
            sentence: &s,
            contextual: None,
        };
        let scores = model.scores(ex, Some(&t)).unwrap();
        assert_eq!((scores.len(), scores.categories()), (3, 3));
        let pred = model.predict(ex, Some(&t), DecodeMode::Nested).unwrap();
        assert_eq!(pred.tokens(), s.tokens());
    }

    #[test]
    fn construction_is_seeded() {
        let s = sentence();
        let build = |seed: u64| {
            let mut c = small_config();
            c.seed = seed;
            Model::new(
                c,
                Categories::from_sentences([&s]),
                CharVocab::from_sentences([&s]),
                None,
            )
            .unwrap()
        };
        assert_eq!(build(1).params(), build(1).params());
        assert_ne!(build(1).params(), build(2).params());
    }

    #[test]
    fn mismatched_resources_are_reported() {
        let s = sentence();
        let model = Model::new(
            small_config(),
            Categories::from_sentences([&s]),
            CharVocab::from_sentences([&s]),
            None,
        )
        .unwrap();
        let wrong = StaticEmbeddingTable::from_rows(4, vec![("a".into(), vec![0.0; 4])]).unwrap();
        assert!(matches!(
            model.check_resources(Some(&wrong), None),
            Err(Error::Mismatch(_))
        ));
        assert!(model.check_resources(None, None).is_err());
        model.check_resources(Some(&table()), None).unwrap();
    }

    #[test]
    fn fine_tuned_static_table_is_a_parameter() {
        let s = sentence();
        let mut c = small_config();
        c.finetune_static = true;
        let t = table();
        let model = Model::new(
            c,
            Categories::from_sentences([&s]),
            CharVocab::from_sentences([&s]),
            Some(&t),
        )
        .unwrap();
        let id = model.param_id("static.embedding").unwrap();
        assert_eq!(model.params().get(id).shape(), &[2, 5]);
        assert_eq!(model.params().get(id).row(0), &[0.0; 5]);
        assert_eq!(model.params().get(id).row(1), &[0.1; 5]);
        let ex = Example {
            sentence: &s,
            contextual: None,
        };
        model.scores(ex, None).unwrap();
    }
}

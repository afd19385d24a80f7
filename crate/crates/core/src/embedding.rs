//! Token input vectors: precomputed contextual vectors, static word vectors
//! and a character CNN, concatenated in that order.
//!
//! Static vector files are text: an optional `<count> <dim>` header line, then
//! one `token v1 … vd` line per word. Lookup is case-sensitive and unknown
//! words map to the zero vector.
//!
//! Contextual vector files are binary (`CTXV`): the magic `CTXV`, a `u32`
//! dimension, then per sentence a `u32` sentence index (position in its
//! corpus file), a `u32` token count and `count × dim` `f32` values, all
//! little-endian.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use log::warn;
use rand::Rng;

use crate::autodiff::Var;
use crate::data::AnnotatedSentence;
use crate::error::{Error, Result};
use crate::params::{uniform, ParamId, ParamSet};
use crate::session::Session;
use crate::tensor::Tensor;

pub const CTXV_MAGIC: &[u8; 4] = b"CTXV";

/// Word vectors with a case-sensitive vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticEmbeddingTable {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    matrix: Tensor,
}

impl StaticEmbeddingTable {
    /// Build from `(word, vector)` rows. Later duplicates of a word are
    /// ignored with a warning.
    pub fn from_rows(dim: usize, rows: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Data("embedding dimension must be positive".into()));
        }
        if rows.is_empty() {
            return Err(Error::Data("embedding table has no rows".into()));
        }
        let mut words = Vec::with_capacity(rows.len());
        let mut index = HashMap::with_capacity(rows.len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (word, v) in rows {
            if v.len() != dim {
                return Err(Error::Data(format!(
                    "embedding for '{}' has {} components, expected {}",
                    word,
                    v.len(),
                    dim
                )));
            }
            if index.contains_key(&word) {
                warn!("duplicate embedding for '{}' ignored", word);
                continue;
            }
            index.insert(word.clone(), words.len());
            words.push(word);
            data.extend(v);
        }
        let matrix = Tensor::new(vec![words.len(), dim], data)?;
        Ok(StaticEmbeddingTable {
            dim,
            words,
            index,
            matrix,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn row_index(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// The stored vector, or zeros for an unknown token.
    pub fn lookup(&self, token: &str) -> Vec<f64> {
        match self.row_index(token) {
            Some(i) => self.matrix.row(i).to_vec(),
            None => vec![0.0; self.dim],
        }
    }

    /// Rows for a token sequence as an `l×dim` tensor.
    pub fn lookup_all(&self, tokens: &[String]) -> Tensor {
        let mut data = Vec::with_capacity(tokens.len() * self.dim);
        for t in tokens {
            match self.row_index(t) {
                Some(i) => data.extend_from_slice(self.matrix.row(i)),
                None => data.extend(std::iter::repeat_n(0.0, self.dim)),
            }
        }
        Tensor::new(vec![tokens.len(), self.dim], data).expect("non-empty sentence")
    }

    pub fn read_text<R: BufRead>(reader: R, source_name: &str) -> Result<Self> {
        let mut rows = Vec::new();
        let mut dim: Option<usize> = None;
        let mut declared_count: Option<usize> = None;
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if idx == 0 && fields.len() == 2 {
                if let (Ok(count), Ok(d)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>())
                {
                    if d == 0 {
                        return Err(Error::parse(source_name, line_no, "zero dimension in header"));
                    }
                    declared_count = Some(count);
                    dim = Some(d);
                    continue;
                }
            }
            let values = fields[1..]
                .iter()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(source_name, line_no, format!("bad component: {}", e)))?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::parse(source_name, line_no, "non-finite component"));
            }
            let d = *dim.get_or_insert(values.len());
            if values.len() != d || d == 0 {
                return Err(Error::parse(
                    source_name,
                    line_no,
                    format!("expected {} components, got {}", d, values.len()),
                ));
            }
            rows.push((fields[0].to_string(), values));
        }
        if let Some(count) = declared_count {
            if count != rows.len() {
                warn!(
                    "{}: header declares {} words, file has {}",
                    source_name,
                    count,
                    rows.len()
                );
            }
        }
        let dim = dim.ok_or_else(|| Error::parse(source_name, 1, "no embeddings"))?;
        Self::from_rows(dim, rows)
    }

    pub fn read_text_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::read_text(BufReader::new(File::open(path)?), &path.display().to_string())
    }

    /// Text format with a `<count> <dim>` header.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.words.len(), self.dim)?;
        for (i, word) in self.words.iter().enumerate() {
            write!(w, "{}", word)?;
            for v in self.matrix.row(i) {
                write!(w, " {}", v)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Character inventory. Index 0 is the shared unknown-character entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharVocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl CharVocab {
    pub fn new(chars: impl IntoIterator<Item = char>) -> Self {
        let set: BTreeSet<char> = chars.into_iter().collect();
        let chars: Vec<char> = set.into_iter().collect();
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i + 1)).collect();
        CharVocab { chars, index }
    }

    /// Every character of the given sentences, sorted.
    pub fn from_sentences<'a>(sentences: impl IntoIterator<Item = &'a AnnotatedSentence>) -> Self {
        Self::new(
            sentences
                .into_iter()
                .flat_map(|s| s.tokens().iter().flat_map(|t| t.chars())),
        )
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    /// Table rows including the unknown entry.
    pub fn size(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn id(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(0)
    }

    pub fn ids(&self, token: &str) -> Vec<usize> {
        token.chars().map(|c| self.id(c)).collect()
    }
}

#[derive(Clone, Debug)]
struct ConvBank {
    width: usize,
    weight: ParamId,
    bias: ParamId,
}

/// Convolution over character embeddings followed by tanh and max-pooling
/// over positions, one filter bank per width.
///
/// Each token of `n` characters yields `n` windows per bank, one starting at
/// every character; positions past the last character read as zero vectors.
/// Short tokens are therefore padded with zeros up to the filter width and
/// padding never adds windows of its own.
#[derive(Clone, Debug)]
pub struct CharCnn {
    table: ParamId,
    banks: Vec<ConvBank>,
    embedding_dim: usize,
    channels: usize,
}

impl CharCnn {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        vocab_size: usize,
        embedding_dim: usize,
        channels: usize,
        widths: &[usize],
        init_scale: f64,
        rng: &mut R,
    ) -> Self {
        let table = params.add(
            "char.embedding",
            uniform(&[vocab_size, embedding_dim], init_scale, rng),
        );
        let banks = widths
            .iter()
            .map(|&width| ConvBank {
                width,
                weight: params.add(
                    format!("char.conv{}.weight", width),
                    uniform(&[width * embedding_dim, channels], init_scale, rng),
                ),
                bias: params.add(format!("char.conv{}.bias", width), Tensor::zeros(&[channels])),
            })
            .collect();
        CharCnn {
            table,
            banks,
            embedding_dim,
            channels,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.channels * self.banks.len()
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    /// `l × output_dim` character features for a token sequence given as
    /// character ids.
    pub fn forward(&self, s: &mut Session, words: &[Vec<usize>]) -> Result<Var> {
        if words.is_empty() {
            return Err(Error::Data("character CNN needs at least one token".into()));
        }
        if words.iter().any(Vec::is_empty) {
            return Err(Error::Data("character CNN input contains an empty token".into()));
        }
        let ids: Vec<usize> = words.iter().flatten().copied().collect();
        let lengths: Vec<usize> = words.iter().map(Vec::len).collect();
        let mut segments = Vec::with_capacity(words.len());
        let mut start = 0;
        for &len in &lengths {
            segments.push((start, len));
            start += len;
        }
        let table = s.var(self.table);
        let chars = s.graph.gather(table, &ids)?;
        let mut pooled = Vec::with_capacity(self.banks.len());
        for bank in &self.banks {
            let windows = s.graph.unfold(chars, &segments, bank.width)?;
            let weight = s.var(bank.weight);
            let bias = s.var(bank.bias);
            let conv = s.graph.matmul(windows, weight)?;
            let conv = s.graph.add_bias(conv, bias)?;
            let conv = s.graph.tanh(conv);
            pooled.push(s.graph.segment_max(conv, &lengths)?);
        }
        Ok(s.graph.concat(&pooled)?)
    }

    /// Feature vector of a single token.
    pub fn encode_token(&self, params: &ParamSet, vocab: &CharVocab, token: &str) -> Result<Vec<f64>> {
        if token.is_empty() {
            return Err(Error::Data("cannot encode an empty token".into()));
        }
        let mut s = Session::inference(params);
        let out = self.forward(&mut s, &[vocab.ids(token)])?;
        Ok(s.graph.value(out).data().to_vec())
    }
}

/// Precomputed per-token contextual vectors keyed by sentence index.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextualVectors {
    dim: usize,
    records: BTreeMap<u32, Tensor>,
}

impl ContextualVectors {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0);
        ContextualVectors {
            dim,
            records: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Store `vectors` (`tokens × dim`) for sentence `index`.
    pub fn insert(&mut self, index: u32, vectors: Tensor) -> Result<()> {
        if vectors.rank() != 2 || vectors.shape()[1] != self.dim {
            return Err(Error::Data(format!(
                "contextual vectors for sentence {} have shape {:?}, expected n×{}",
                index,
                vectors.shape(),
                self.dim
            )));
        }
        if self.records.insert(index, vectors).is_some() {
            return Err(Error::Data(format!(
                "duplicate contextual record for sentence {}",
                index
            )));
        }
        Ok(())
    }

    pub fn get(&self, index: usize) -> Option<&Tensor> {
        u32::try_from(index).ok().and_then(|i| self.records.get(&i))
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let fmt_err = |m: String| Error::format("CTXV", m);
        if bytes.len() < 8 || &bytes[..4] != CTXV_MAGIC {
            return Err(fmt_err("missing CTXV header".into()));
        }
        let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        if dim == 0 {
            return Err(fmt_err("zero dimension".into()));
        }
        let mut out = ContextualVectors::new(dim);
        let mut pos = 8;
        while pos < bytes.len() {
            if bytes.len() - pos < 8 {
                return Err(fmt_err(format!("truncated record header at byte {}", pos)));
            }
            let index = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap());
            let count = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
            pos += 8;
            if count == 0 {
                return Err(fmt_err(format!("sentence {} has zero tokens", index)));
            }
            let need = count
                .checked_mul(dim)
                .and_then(|n| n.checked_mul(4))
                .filter(|&n| n <= bytes.len() - pos)
                .ok_or_else(|| fmt_err(format!("truncated vectors for sentence {}", index)))?;
            let data: Vec<f64> = bytes[pos..pos + need]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(fmt_err(format!("non-finite value in sentence {}", index)));
            }
            pos += need;
            out.insert(index, Tensor::new(vec![count, dim], data)?)
                .map_err(|e| fmt_err(e.to_string()))?;
        }
        Ok(out)
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::parse(&bytes)
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let dim = u32::try_from(self.dim).map_err(|_| Error::format("CTXV", "dimension too large"))?;
        w.write_all(CTXV_MAGIC)?;
        w.write_all(&dim.to_le_bytes())?;
        for (&index, t) in &self.records {
            w.write_all(&index.to_le_bytes())?;
            w.write_all(&(t.shape()[0] as u32).to_le_bytes())?;
            for &v in t.data() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }
}

/// Which sources make up the token vector, and their widths.
#[derive(Clone, Debug)]
pub struct TokenEmbedder {
    contextual_dim: Option<usize>,
    static_dim: Option<usize>,
    static_param: Option<ParamId>,
    char_cnn: Option<CharCnn>,
    dropout: f64,
}

/// Per-sentence inputs resolved outside the graph.
pub struct TokenSources<'a> {
    pub sentence_id: &'a str,
    pub tokens: &'a [String],
    pub contextual: Option<&'a Tensor>,
    pub static_table: Option<&'a StaticEmbeddingTable>,
    pub char_vocab: Option<&'a CharVocab>,
}

impl TokenEmbedder {
    pub fn new(
        contextual_dim: Option<usize>,
        static_dim: Option<usize>,
        static_param: Option<ParamId>,
        char_cnn: Option<CharCnn>,
        dropout: f64,
    ) -> Result<Self> {
        let e = TokenEmbedder {
            contextual_dim,
            static_dim,
            static_param,
            char_cnn,
            dropout,
        };
        if e.output_dim() == 0 {
            return Err(Error::Config("all embedding sources are disabled".into()));
        }
        Ok(e)
    }

    pub fn output_dim(&self) -> usize {
        self.contextual_dim.unwrap_or(0)
            + self.static_dim.unwrap_or(0)
            + self.char_cnn.as_ref().map_or(0, CharCnn::output_dim)
    }

    pub fn contextual_dim(&self) -> Option<usize> {
        self.contextual_dim
    }

    pub fn static_dim(&self) -> Option<usize> {
        self.static_dim
    }

    pub fn char_cnn(&self) -> Option<&CharCnn> {
        self.char_cnn.as_ref()
    }

    /// `l × output_dim` token vectors in the order [contextual][static][chars],
    /// with embedding dropout in training mode.
    pub fn forward(&self, s: &mut Session, src: &TokenSources) -> Result<Var> {
        let l = src.tokens.len();
        if l == 0 {
            return Err(Error::Data(format!("sentence {}: no tokens", src.sentence_id)));
        }
        let mut parts = Vec::with_capacity(3);
        if let Some(dim) = self.contextual_dim {
            let ctx = src.contextual.ok_or_else(|| {
                Error::Data(format!(
                    "sentence {}: contextual vector missing for token 0",
                    src.sentence_id
                ))
            })?;
            let rows = ctx.shape()[0];
            if rows < l {
                return Err(Error::Data(format!(
                    "sentence {}: contextual vector missing for token {}",
                    src.sentence_id, rows
                )));
            }
            if rows != l {
                return Err(Error::Data(format!(
                    "sentence {}: {} contextual vectors for {} tokens",
                    src.sentence_id, rows, l
                )));
            }
            if ctx.shape()[1] != dim {
                return Err(Error::Mismatch(format!(
                    "contextual vectors have dimension {}, model expects {}",
                    ctx.shape()[1],
                    dim
                )));
            }
            parts.push(s.graph.constant(ctx.clone()));
        }
        if let Some(dim) = self.static_dim {
            match self.static_param {
                Some(id) => {
                    let table = src.static_table.ok_or_else(|| {
                        Error::Config("static embeddings enabled but no table loaded".into())
                    })?;
                    // Row 0 of the trainable table is reserved for unknown words.
                    let idx: Vec<usize> = src
                        .tokens
                        .iter()
                        .map(|t| table.row_index(t).map_or(0, |i| i + 1))
                        .collect();
                    let v = s.var(id);
                    parts.push(s.graph.gather(v, &idx)?);
                }
                None => {
                    let table = src.static_table.ok_or_else(|| {
                        Error::Config("static embeddings enabled but no table loaded".into())
                    })?;
                    if table.dim() != dim {
                        return Err(Error::Mismatch(format!(
                            "static embeddings have dimension {}, model expects {}",
                            table.dim(),
                            dim
                        )));
                    }
                    parts.push(s.graph.constant(table.lookup_all(src.tokens)));
                }
            }
        }
        if let Some(cnn) = &self.char_cnn {
            let vocab = src
                .char_vocab
                .ok_or_else(|| Error::Config("character CNN enabled but no vocabulary".into()))?;
            let ids: Vec<Vec<usize>> = src.tokens.iter().map(|t| vocab.ids(t)).collect();
            if let Some(i) = ids.iter().position(Vec::is_empty) {
                return Err(Error::Data(format!(
                    "sentence {}: token {} is empty",
                    src.sentence_id, i
                )));
            }
            parts.push(cnn.forward(s, &ids)?);
        }
        let x = if parts.len() == 1 {
            parts[0]
        } else {
            s.graph.concat(&parts)?
        };
        Ok(s.dropout(x, self.dropout)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table() -> StaticEmbeddingTable {
        StaticEmbeddingTable::read_text(
            "2 3\nChina 1 2 3\nchina -1 -2 -3\n".as_bytes(),
            "t",
        )
        .unwrap()
    }

    #[test]
    fn lookup_is_case_sensitive_with_zero_oov() {
        let t = table();
        assert_eq!(t.lookup("China"), vec![1.0, 2.0, 3.0]);
        assert_eq!(t.lookup("china"), vec![-1.0, -2.0, -3.0]);
        assert_eq!(t.lookup("CHINA"), vec![0.0; 3]);
    }

    #[test]
    fn text_without_header_and_errors() {
        let t = StaticEmbeddingTable::read_text("a 0.5 1\nb 2 3\n".as_bytes(), "t").unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.len(), 2);
        let err = StaticEmbeddingTable::read_text("a 1 2\nb 3\n".as_bytes(), "t").unwrap_err();
        assert!(err.to_string().contains("t:2"));
        assert!(StaticEmbeddingTable::read_text("a x y\n".as_bytes(), "t").is_err());
        assert!(StaticEmbeddingTable::read_text("".as_bytes(), "t").is_err());
    }

    #[test]
    fn text_round_trip() {
        let t = table();
        let mut buf = Vec::new();
        t.write_text(&mut buf).unwrap();
        assert_eq!(StaticEmbeddingTable::read_text(&buf[..], "t").unwrap(), t);
    }

    #[test]
    fn char_vocab_reserves_unknown() {
        let v = CharVocab::new("abca".chars());
        assert_eq!(v.size(), 4);
        assert_eq!(v.ids("cab?"), vec![3, 1, 2, 0]);
    }

    fn cnn(widths: &[usize], channels: usize, seed: u64) -> (ParamSet, CharCnn) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let c = CharCnn::new(&mut params, 8, 8, channels, widths, 0.5, &mut rng);
        (params, c)
    }

    #[test]
    fn char_cnn_output_is_150_wide_and_zero_for_zero_filters() {
        let (mut params, c) = cnn(&[3, 4, 5], 50, 1);
        assert_eq!(c.output_dim(), 150);
        for name in ["char.conv3", "char.conv4", "char.conv5"] {
            for suffix in [".weight", ".bias"] {
                let id = params.position(&format!("{}{}", name, suffix)).unwrap();
                params.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let vocab = CharVocab::new("abcde".chars());
        let out = c.encode_token(&params, &vocab, "abc").unwrap();
        assert_eq!(out, vec![0.0; 150]);
        assert!(c.encode_token(&params, &vocab, "").is_err());
    }

    #[test]
    fn single_character_uses_zero_padding() {
        let (params, c) = cnn(&[3, 4, 5], 4, 2);
        let vocab = CharVocab::new("abcde".chars());
        let out = c.encode_token(&params, &vocab, "b").unwrap();
        assert!(out.iter().all(|v| v.is_finite()));
        // Independent evaluation: one window per bank, the character's
        // embedding followed by zeros.
        let emb = params.get(params.position("char.embedding").unwrap());
        let row = emb.row(vocab.id('b'));
        for (bank, width) in [3usize, 4, 5].iter().enumerate() {
            let w = params.get(params.position(&format!("char.conv{}.weight", width)).unwrap());
            let b = params.get(params.position(&format!("char.conv{}.bias", width)).unwrap());
            for ch in 0..4 {
                // Only the first 8 inputs of the window are non-zero.
                let pre: f64 = (0..8).map(|p| row[p] * w.get(&[p, ch])).sum::<f64>() + b.data()[ch];
                assert!((out[bank * 4 + ch] - pre.tanh()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn trailing_zero_rows_outside_a_token_do_not_matter() {
        let (params, c) = cnn(&[3, 5], 3, 3);
        let vocab = CharVocab::new("abcde".chars());
        let a = c.encode_token(&params, &vocab, "abc").unwrap();
        // Same token encoded inside a batch followed by longer tokens.
        let mut s = Session::inference(&params);
        let out = c
            .forward(&mut s, &[vocab.ids("abc"), vocab.ids("deeeeeee")])
            .unwrap();
        for (x, y) in s.graph.value(out).row(0).iter().zip(&a) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn char_cnn_gradients_match_finite_differences() {
        let (params, c) = cnn(&[3, 4, 5], 5, 4);
        let vocab = CharVocab::new("abcdefg".chars());
        let words = vec![vocab.ids("abca"), vocab.ids("g"), vocab.ids("fedcbag")];
        let names: Vec<String> = params.names().to_vec();
        let report = check_gradients(params.tensors(), 1e-5, |ts| {
            let mut p = ParamSet::new();
            for (n, t) in names.iter().zip(ts) {
                p.add(n.clone(), t.clone());
            }
            let mut s = Session::new(&p, false, true, 0);
            let out = c.forward(&mut s, &words).unwrap();
            let out = s.graph.tanh(out);
            let y = s.graph.sum(out);
            s.graph.backward(y).unwrap();
            (s.graph.value(y).item(), s.param_grads())
        });
        for r in report {
            assert!(r.relative_error < 1e-4, "{}: {}", names[r.index], r.relative_error);
        }
    }

    #[test]
    fn ctxv_round_trip_and_rejections() {
        let mut v = ContextualVectors::new(2);
        v.insert(0, Tensor::new(vec![3, 2], vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0]).unwrap())
            .unwrap();
        v.insert(4, Tensor::new(vec![1, 2], vec![-1.0, 0.25]).unwrap())
            .unwrap();
        let mut buf = Vec::new();
        v.write(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"CTXV");
        assert_eq!(ContextualVectors::parse(&buf).unwrap(), v);
        assert!(ContextualVectors::parse(&buf[..buf.len() - 2]).is_err());

        let mut dup = buf.clone();
        dup.extend_from_slice(&buf[8..8 + 8 + 3 * 2 * 4]);
        assert!(ContextualVectors::parse(&dup).is_err());
    }

    fn embedder(ctx: bool, stat: bool, chars: bool) -> (ParamSet, TokenEmbedder) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ParamSet::new();
        let cnn = chars.then(|| CharCnn::new(&mut params, 10, 8, 50, &[3, 4, 5], 0.1, &mut rng));
        let e = TokenEmbedder::new(
            ctx.then_some(1024),
            stat.then_some(300),
            None,
            cnn,
            0.5,
        )
        .unwrap();
        (params, e)
    }

    #[test]
    fn assembled_widths_follow_enabled_sources() {
        assert_eq!(embedder(true, true, true).1.output_dim(), 1474);
        assert_eq!(embedder(false, true, true).1.output_dim(), 450);
        assert_eq!(embedder(true, false, true).1.output_dim(), 1174);
        assert!(TokenEmbedder::new(None, None, None, None, 0.0).is_err());
    }

    #[test]
    fn assembly_order_and_missing_contextual_vectors() {
        let (params, e) = embedder(true, true, true);
        let mut rows = vec![("China".to_string(), vec![0.5; 300])];
        rows.push(("x".to_string(), vec![0.25; 300]));
        let stat = StaticEmbeddingTable::from_rows(300, rows).unwrap();
        let vocab = CharVocab::new("Chinax".chars());
        let tokens = vec!["China".to_string(), "y".to_string()];
        let ctx = Tensor::filled(&[2, 1024], 2.0);
        let mut s = Session::inference(&params);
        let src = TokenSources {
            sentence_id: "s9",
            tokens: &tokens,
            contextual: Some(&ctx),
            static_table: Some(&stat),
            char_vocab: Some(&vocab),
        };
        let x = e.forward(&mut s, &src).unwrap();
        let t = s.graph.value(x);
        assert_eq!(t.shape(), &[2, 1474]);
        assert_eq!(t.row(0)[1023], 2.0);
        assert_eq!(t.row(0)[1024], 0.5);
        assert_eq!(t.row(1)[1024], 0.0);

        let short = Tensor::filled(&[1, 1024], 2.0);
        let src = TokenSources {
            contextual: Some(&short),
            ..src
        };
        let err = e.forward(&mut s, &src).unwrap_err().to_string();
        assert!(err.contains("s9") && err.contains("token 1"), "{}", err);
        let src = TokenSources {
            contextual: None,
            ..src
        };
        assert!(e.forward(&mut s, &src).is_err());
    }

    #[test]
    fn assembly_is_deterministic_without_dropout() {
        let (params, e) = embedder(false, false, true);
        let vocab = CharVocab::new("abc".chars());
        let tokens = vec!["ab".to_string(), "cab".to_string()];
        let run = || {
            let mut s = Session::new(&params, true, false, 7);
            let src = TokenSources {
                sentence_id: "0",
                tokens: &tokens,
                contextual: None,
                static_table: None,
                char_vocab: Some(&vocab),
            };
            let x = e.forward(&mut s, &src).unwrap();
            s.graph.value(x).clone()
        };
        assert_eq!(run(), run());
    }
}

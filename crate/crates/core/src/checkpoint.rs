//! Binary model checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "BNER"  u32 version
//! u32 n   n bytes of config text (key=value lines)
//! u32 n   n bytes of JSON metadata {categories, chars, static_vocab}
//! u32 count
//! count × { u32 n, n bytes of name, u32 rank, rank × u32 dim, f64 values }
//! ```
//!
//! Tensors appear in parameter declaration order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::data::Categories;
use crate::embedding::{CharVocab, StaticEmbeddingTable};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"BNER";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub categories: Vec<String>,
    pub chars: String,
    pub static_vocab: Option<Vec<String>>,
}

/// A decoded checkpoint before the model is rebuilt.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub metadata: Metadata,
    pub params: ParamSet,
}

fn len_u32(n: usize, what: &str) -> Result<[u8; 4]> {
    u32::try_from(n)
        .map(u32::to_le_bytes)
        .map_err(|_| Error::format("BNER", format!("{} too large", what)))
}

pub fn write_checkpoint<W: Write>(model: &Model, mut w: W) -> Result<()> {
    let metadata = Metadata {
        categories: model.categories().names().to_vec(),
        chars: model.char_vocab().chars().iter().collect(),
        static_vocab: model.static_vocab().map(|t| t.words().to_vec()),
    };
    let config = model.config().to_text();
    let meta = serde_json::to_string(&metadata).expect("metadata serializes");
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&len_u32(config.len(), "config")?)?;
    w.write_all(config.as_bytes())?;
    w.write_all(&len_u32(meta.len(), "metadata")?)?;
    w.write_all(meta.as_bytes())?;
    let params = model.params();
    w.write_all(&len_u32(params.len(), "tensor count")?)?;
    for (name, t) in params.names().iter().zip(params.tensors()) {
        w.write_all(&len_u32(name.len(), "name")?)?;
        w.write_all(name.as_bytes())?;
        w.write_all(&len_u32(t.rank(), "rank")?)?;
        for &d in t.shape() {
            w.write_all(&len_u32(d, "dimension")?)?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn write_checkpoint_file(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                "BNER",
                format!("truncated {} at byte {}", what, self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn text(&mut self, what: &str) -> Result<&'a str> {
        let n = self.u32(what)?;
        let b = self.take(n, what)?;
        std::str::from_utf8(b).map_err(|_| Error::format("BNER", format!("{} is not UTF-8", what)))
    }
}

/// Decode a checkpoint without rebuilding the model.
pub fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::format("BNER", "not a checkpoint (bad magic)"));
    }
    let version = c.u32("version")?;
    if version != VERSION as usize {
        return Err(Error::format(
            "BNER",
            format!("unsupported version {} (expected {})", version, VERSION),
        ));
    }
    let config = TrainConfig::parse_text(c.text("config")?, "checkpoint config")?;
    let metadata: Metadata = serde_json::from_str(c.text("metadata")?)
        .map_err(|e| Error::format("BNER", format!("bad metadata: {}", e)))?;
    let count = c.u32("tensor count")?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name = c.text("tensor name")?.to_string();
        if params.position(&name).is_some() {
            return Err(Error::format("BNER", format!("duplicate tensor {}", name)));
        }
        let rank = c.u32("rank")?;
        if rank > 8 {
            return Err(Error::format("BNER", format!("tensor {} has rank {}", name, rank)));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut n: usize = 1;
        for _ in 0..rank {
            let d = c.u32("dimension")?;
            n = n
                .checked_mul(d)
                .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= bytes.len()))
                .ok_or_else(|| Error::format("BNER", format!("tensor {} is too large", name)))?;
            shape.push(d);
        }
        let raw = c.take(n * 8, "tensor data")?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::format("BNER", format!("tensor {} has non-finite values", name)));
        }
        let t = Tensor::new(shape, data).map_err(|e| Error::format("BNER", e.to_string()))?;
        params.add(name, t);
    }
    if c.pos != bytes.len() {
        return Err(Error::format("BNER", "trailing bytes after last tensor"));
    }
    Ok(Checkpoint {
        config,
        metadata,
        params,
    })
}

impl Checkpoint {
    /// Rebuild the model and install the stored parameters.
    pub fn into_model(self) -> Result<Model> {
        let categories = Categories::new(self.metadata.categories.iter().cloned());
        if categories.names().len() != self.metadata.categories.len() {
            return Err(Error::format("BNER", "categories are not sorted and unique"));
        }
        let chars = CharVocab::new(self.metadata.chars.chars());
        let table = match &self.metadata.static_vocab {
            Some(words) => {
                let dim = self.config.static_dim;
                let rows = words.iter().map(|w| (w.clone(), vec![0.0; dim])).collect();
                Some(StaticEmbeddingTable::from_rows(dim, rows)?)
            }
            None => None,
        };
        let mut model = Model::new(self.config, categories, chars, table.as_ref())?;
        model.load_params(self.params)?;
        Ok(model)
    }
}

pub fn load_model(bytes: &[u8]) -> Result<Model> {
    parse_checkpoint(bytes)?.into_model()
}

pub fn read_model_file(path: impl AsRef<Path>) -> Result<Model> {
    load_model(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{embeddings, generate, SynthKind};
    use crate::model::Example;

    fn model(finetune: bool) -> (Model, StaticEmbeddingTable) {
        let data = generate(SynthKind::Nested, 5, 1, "s");
        let mut c = TrainConfig::default();
        c.apply_overrides(&[
            "lstm_size=3",
            "lstm_layers=2",
            "ffnn_size=4",
            "static_dim=6",
            "char_cnn_size=2",
            "use_contextual=false",
        ])
        .unwrap();
        c.finetune_static = finetune;
        let table = embeddings(6, 2);
        let m = Model::new(
            c,
            Categories::from_sentences(&data),
            CharVocab::from_sentences(&data),
            Some(&table),
        )
        .unwrap();
        (m, table)
    }

    #[test]
    fn round_trip_preserves_predictions() {
        for finetune in [false, true] {
            let (m, table) = model(finetune);
            let mut buf = Vec::new();
            write_checkpoint(&m, &mut buf).unwrap();
            assert_eq!(&buf[..4], b"BNER");
            let back = load_model(&buf).unwrap();
            assert_eq!(back.params(), m.params());
            assert_eq!(back.config(), m.config());
            let s = &generate(SynthKind::Nested, 1, 9, "x")[0];
            let ex = Example {
                sentence: s,
                contextual: None,
            };
            assert_eq!(
                back.scores(ex, Some(&table)).unwrap(),
                m.scores(ex, Some(&table)).unwrap()
            );
        }
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let (m, _) = model(false);
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        assert!(parse_checkpoint(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(parse_checkpoint(&bad).is_err());
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(parse_checkpoint(&bad).is_err());
        let mut extra = buf;
        extra.push(0);
        assert!(parse_checkpoint(&extra).is_err());
        assert!(parse_checkpoint(b"BN").is_err());
    }
}

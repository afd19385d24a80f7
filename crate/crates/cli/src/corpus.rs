use std::path::Path;

use anyhow::{Context, Result};
use biaffine_ner::data::conll::{read_conll_file, write_conll_file};
use biaffine_ner::data::jsonl::{read_spans_file, write_spans_file};
use biaffine_ner::data::AnnotatedSentence;
use biaffine_ner::embedding::{ContextualVectors, StaticEmbeddingTable};

use crate::Format;

/// Explicit format, else `.jsonl`/`.json` means span lines and anything else
/// CoNLL.
pub fn format_for(path: &Path, explicit: Option<Format>) -> Format {
    explicit.unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("json") => Format::Jsonl,
        _ => Format::Conll,
    })
}

pub fn read(path: &Path, explicit: Option<Format>) -> Result<Vec<AnnotatedSentence>> {
    let r = match format_for(path, explicit) {
        Format::Conll => read_conll_file(path),
        Format::Jsonl => read_spans_file(path),
    };
    r.with_context(|| format!("reading {}", path.display()))
}

pub fn write(path: &Path, explicit: Option<Format>, sentences: &[AnnotatedSentence]) -> Result<()> {
    let r = match format_for(path, explicit) {
        Format::Conll => write_conll_file(path, sentences),
        Format::Jsonl => write_spans_file(path, sentences),
    };
    r.with_context(|| format!("writing {}", path.display()))
}

pub fn read_static(path: Option<&Path>) -> Result<Option<StaticEmbeddingTable>> {
    path.map(|p| {
        StaticEmbeddingTable::read_text_file(p).with_context(|| format!("reading {}", p.display()))
    })
    .transpose()
}

pub fn read_contextual(path: Option<&Path>) -> Result<Option<ContextualVectors>> {
    path.map(|p| {
        ContextualVectors::read_file(p).with_context(|| format!("reading {}", p.display()))
    })
    .transpose()
}

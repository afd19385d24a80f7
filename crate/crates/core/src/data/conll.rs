//! CoNLL-style column files with BIO tags.
//!
//! One token per line, whitespace-separated columns, the token first and the
//! tag last; a blank line ends a sentence. `-DOCSTART-` lines start a new
//! document. Tags are `O`, `B-X` or `I-X`. An `I-X` that does not continue an
//! `X` entity opens a new one (IOB1 input), so output is always IOB2.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;

use super::{validate_flat, AnnotatedSentence, EntitySpan, Sentence};
use crate::error::{Error, Result};

const DOCSTART: &str = "-DOCSTART-";

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tag {
    Outside,
    Begin(String),
    Inside(String),
}

fn parse_tag(tag: &str) -> Option<Tag> {
    if tag == "O" {
        return Some(Tag::Outside);
    }
    let (prefix, category) = tag.split_once('-')?;
    if category.is_empty() {
        return None;
    }
    match prefix {
        "B" => Some(Tag::Begin(category.to_string())),
        "I" => Some(Tag::Inside(category.to_string())),
        _ => None,
    }
}

/// Convert a tag sequence into entity spans.
fn spans_from_tags(tags: &[Tag], sentence_id: &str) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, String)> = None;
    for (i, tag) in tags.iter().enumerate() {
        match tag {
            Tag::Outside => {
                if let Some((start, cat)) = open.take() {
                    spans.push(EntitySpan::new(start, i - 1, cat));
                }
            }
            Tag::Begin(cat) => {
                if let Some((start, prev)) = open.take() {
                    spans.push(EntitySpan::new(start, i - 1, prev));
                }
                open = Some((i, cat.clone()));
            }
            Tag::Inside(cat) => match &open {
                Some((_, prev)) if prev == cat => {}
                _ => {
                    warn!(
                        "sentence {}: I-{} at token {} does not continue an entity; treating as B-{}",
                        sentence_id, cat, i, cat
                    );
                    if let Some((start, prev)) = open.take() {
                        spans.push(EntitySpan::new(start, i - 1, prev));
                    }
                    open = Some((i, cat.clone()));
                }
            },
        }
    }
    if let Some((start, cat)) = open {
        spans.push(EntitySpan::new(start, tags.len() - 1, cat));
    }
    spans
}

/// IOB2 tags for a flat entity set.
pub fn tags_for(sentence: &AnnotatedSentence) -> Result<Vec<String>> {
    if !sentence.is_flat() {
        return Err(Error::Data(format!(
            "sentence {}: overlapping entities cannot be written as BIO tags",
            sentence.id()
        )));
    }
    let mut tags = vec!["O".to_string(); sentence.len()];
    for e in sentence.entities() {
        tags[e.start] = format!("B-{}", e.category);
        for t in &mut tags[e.start + 1..=e.end] {
            *t = format!("I-{}", e.category);
        }
    }
    Ok(tags)
}

struct Pending {
    tokens: Vec<String>,
    columns: Vec<Vec<String>>,
    tags: Vec<Tag>,
    first_line: usize,
}

impl Pending {
    fn new() -> Self {
        Pending {
            tokens: Vec::new(),
            columns: Vec::new(),
            tags: Vec::new(),
            first_line: 0,
        }
    }
}

/// Read all sentences from a CoNLL stream. `source_name` labels errors.
pub fn read_conll<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<AnnotatedSentence>> {
    let mut out = Vec::new();
    let mut pending = Pending::new();
    let mut document: Option<String> = None;
    let mut doc_count = 0;

    let flush = |pending: &mut Pending,
                     document: &Option<String>,
                     out: &mut Vec<AnnotatedSentence>|
     -> Result<()> {
        if pending.tokens.is_empty() {
            return Ok(());
        }
        let done = std::mem::replace(pending, Pending::new());
        let id = out.len().to_string();
        let spans = spans_from_tags(&done.tags, &id);
        let has_columns = done.columns.iter().any(|c| !c.is_empty());
        let sentence = Sentence {
            id,
            document: document.clone(),
            tokens: done.tokens,
            columns: if has_columns { done.columns } else { Vec::new() },
        };
        let annotated = AnnotatedSentence::new(sentence, spans)
            .map_err(|e| Error::parse(source_name, done.first_line, e.to_string()))?;
        out.push(annotated);
        Ok(())
    };

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            flush(&mut pending, &document, &mut out)?;
            continue;
        }
        if fields[0] == DOCSTART {
            flush(&mut pending, &document, &mut out)?;
            document = Some(format!("doc{}", doc_count));
            doc_count += 1;
            continue;
        }
        if fields.len() < 2 {
            return Err(Error::parse(
                source_name,
                line_no,
                format!("expected a token and a tag, got {:?}", line),
            ));
        }
        let tag_str = fields[fields.len() - 1];
        let tag = parse_tag(tag_str).ok_or_else(|| {
            Error::parse(source_name, line_no, format!("invalid BIO tag {:?}", tag_str))
        })?;
        let extra: Vec<String> = fields[1..fields.len() - 1]
            .iter()
            .map(|s| s.to_string())
            .collect();
        if let Some(prev) = pending.columns.first() {
            if prev.len() != extra.len() {
                return Err(Error::parse(
                    source_name,
                    line_no,
                    format!(
                        "expected {} columns as on the sentence's first line, got {}",
                        prev.len() + 2,
                        fields.len()
                    ),
                ));
            }
        }
        if pending.tokens.is_empty() {
            pending.first_line = line_no;
        }
        pending.tokens.push(fields[0].to_string());
        pending.columns.push(extra);
        pending.tags.push(tag);
    }
    flush(&mut pending, &document, &mut out)?;
    Ok(out)
}

pub fn read_conll_file(path: impl AsRef<Path>) -> Result<Vec<AnnotatedSentence>> {
    let path = path.as_ref();
    let f = File::open(path)?;
    read_conll(BufReader::new(f), &path.display().to_string())
}

/// Write sentences as CoNLL with IOB2 tags, columns separated by one space.
/// Fails if any sentence has overlapping entities.
pub fn write_conll<W: Write>(mut w: W, sentences: &[AnnotatedSentence]) -> Result<()> {
    validate_flat(sentences)?;
    let mut current_doc: Option<&str> = None;
    for s in sentences {
        if let Some(doc) = s.sentence.document.as_deref() {
            if current_doc != Some(doc) {
                let ncols = s.sentence.columns.first().map_or(0, Vec::len);
                write!(w, "{}", DOCSTART)?;
                for _ in 0..ncols {
                    write!(w, " -X-")?;
                }
                writeln!(w, " O")?;
                writeln!(w)?;
                current_doc = Some(doc);
            }
        }
        let tags = tags_for(s)?;
        for (i, (token, tag)) in s.tokens().iter().zip(&tags).enumerate() {
            write!(w, "{}", token)?;
            if let Some(cols) = s.sentence.columns.get(i) {
                for c in cols {
                    write!(w, " {}", c)?;
                }
            }
            writeln!(w, " {}", tag)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_conll_file(path: impl AsRef<Path>, sentences: &[AnnotatedSentence]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_conll(&mut w, sentences)?;
    w.flush()?;
    Ok(())
}

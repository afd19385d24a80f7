//! JSON-lines standoff annotations, one sentence per line:
//!
//! ```text
//! {"id":"s1","tokens":["Bank","of","China"],"entities":[{"start":0,"end":2,"category":"ORG"},{"start":2,"end":2,"category":"GPE"}]}
//! ```
//!
//! `end` is inclusive. `id` may be a string or a number and defaults to the
//! sentence's position in the file; `doc` is optional.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AnnotatedSentence, EntitySpan, Sentence};
use crate::error::{Error, Result};

#[derive(Deserialize)]
#[serde(untagged)]
enum RecordId {
    Text(String),
    Number(u64),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InRecord {
    #[serde(default)]
    id: Option<RecordId>,
    #[serde(default)]
    doc: Option<String>,
    tokens: Vec<String>,
    #[serde(default)]
    entities: Vec<EntitySpan>,
}

#[derive(Serialize)]
struct OutRecord<'a> {
    id: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    doc: Option<&'a str>,
    tokens: &'a [String],
    entities: &'a [EntitySpan],
}

/// Read every sentence of a JSON-lines stream. Blank lines are skipped.
pub fn read_spans<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<AnnotatedSentence>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(source_name, line_no, e.to_string()))?;
        let id = match rec.id {
            Some(RecordId::Text(s)) => s,
            Some(RecordId::Number(n)) => n.to_string(),
            None => out.len().to_string(),
        };
        let sentence = Sentence {
            id,
            document: rec.doc,
            tokens: rec.tokens,
            columns: Vec::new(),
        };
        let annotated = AnnotatedSentence::new(sentence, rec.entities)
            .map_err(|e| Error::parse(source_name, line_no, e.to_string()))?;
        out.push(annotated);
    }
    Ok(out)
}

pub fn read_spans_file(path: impl AsRef<Path>) -> Result<Vec<AnnotatedSentence>> {
    let path = path.as_ref();
    let f = File::open(path)?;
    read_spans(BufReader::new(f), &path.display().to_string())
}

/// Write one JSON object per sentence.
pub fn write_spans<W: Write>(mut w: W, sentences: &[AnnotatedSentence]) -> Result<()> {
    for s in sentences {
        let rec = OutRecord {
            id: s.id(),
            doc: s.sentence.document.as_deref(),
            tokens: s.tokens(),
            entities: s.entities(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_spans_file(path: impl AsRef<Path>, sentences: &[AnnotatedSentence]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_spans(&mut w, sentences)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str) -> Result<Vec<AnnotatedSentence>> {
        read_spans(text.as_bytes(), "test")
    }

    #[test]
    fn nested_bank_of_china() {
        let s = read(
            r#"{"tokens":["Bank","of","China"],"entities":[{"start":0,"end":2,"category":"ORG"},{"start":2,"end":2,"category":"GPE"}]}"#,
        )
        .unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].id(), "0");
        assert_eq!(
            s[0].entities(),
            &[EntitySpan::new(0, 2, "ORG"), EntitySpan::new(2, 2, "GPE")]
        );
    }

    #[test]
    fn empty_entities() {
        let s = read(r#"{"id":7,"tokens":["a"],"entities":[]}"#).unwrap();
        assert!(s[0].entities().is_empty());
        assert_eq!(s[0].id(), "7");
    }

    #[test]
    fn invalid_records_name_the_sentence() {
        let cases = [
            r#"{"id":"x1","tokens":["a","b"],"entities":[{"start":0,"end":2,"category":"X"}]}"#,
            r#"{"id":"x1","tokens":["a","b"],"entities":[{"start":1,"end":0,"category":"X"}]}"#,
            r#"{"id":"x1","tokens":["a","b","c"],"entities":[{"start":0,"end":1,"category":"X"},{"start":1,"end":2,"category":"Y"}]}"#,
        ];
        for c in cases {
            let err = read(c).unwrap_err().to_string();
            assert!(err.contains("x1"), "{}", err);
        }
        assert!(read("{not json").is_err());
        assert!(read(r#"{"tokens":[]}"#).is_err());
    }

    #[test]
    fn write_then_read_is_identity() {
        let text = "{\"id\":\"a\",\"doc\":\"d\",\"tokens\":[\"Bank\",\"of\",\"China\"],\"entities\":[{\"start\":0,\"end\":2,\"category\":\"ORG\"},{\"start\":2,\"end\":2,\"category\":\"GPE\"}]}\n";
        let s = read(text).unwrap();
        let mut buf = Vec::new();
        write_spans(&mut buf, &s).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), text);
    }
}

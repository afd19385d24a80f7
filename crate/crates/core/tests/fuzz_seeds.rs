//! Replays the checked-in fuzz seed corpora through the same checks the
//! fuzz targets make.

use std::fs;
use std::path::PathBuf;

use biaffine_ner::checkpoint::parse_checkpoint;
use biaffine_ner::config::TrainConfig;
use biaffine_ner::data::conll::{read_conll, write_conll};
use biaffine_ner::data::jsonl::{read_spans, write_spans};
use biaffine_ner::data::validate_flat;
use biaffine_ner::embedding::{ContextualVectors, StaticEmbeddingTable};
use biaffine_ner::scores::ScoreTensor;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {}", dir.display(), e))
        .map(|e| {
            let p = e.unwrap().path();
            (p.display().to_string(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {}", target);
    out
}

#[test]
fn conll_seeds() {
    let mut parsed = 0;
    for (_, data) in seeds("conll") {
        if let Ok(sentences) = read_conll(&data[..], "seed") {
            validate_flat(&sentences).unwrap();
            let mut out = Vec::new();
            write_conll(&mut out, &sentences).unwrap();
            let again = read_conll(&out[..], "seed").unwrap();
            assert_eq!(again.len(), sentences.len());
            parsed += 1;
        }
    }
    assert!(parsed >= 2);
}

#[test]
fn jsonl_seeds() {
    let mut rejected = 0;
    for (_, data) in seeds("jsonl") {
        match read_spans(&data[..], "seed") {
            Ok(sentences) => {
                let mut out = Vec::new();
                write_spans(&mut out, &sentences).unwrap();
                assert_eq!(read_spans(&out[..], "seed").unwrap(), sentences);
            }
            Err(_) => rejected += 1,
        }
    }
    assert_eq!(rejected, 1);
}

#[test]
fn ctxv_seeds() {
    for (name, data) in seeds("ctxv") {
        let r = ContextualVectors::parse(&data);
        assert_eq!(r.is_err(), name.contains("duplicate"), "{}", name);
        if let Ok(v) = r {
            let mut out = Vec::new();
            v.write(&mut out).unwrap();
            assert_eq!(ContextualVectors::parse(&out).unwrap().len(), v.len());
        }
    }
}

#[test]
fn scor_seeds() {
    for (name, data) in seeds("scor") {
        let t = ScoreTensor::parse_dump(&data).unwrap_or_else(|e| panic!("{}: {}", name, e));
        let mut out = Vec::new();
        t.write_dump(&mut out).unwrap();
        assert_eq!(out, data);
    }
}

#[test]
fn checkpoint_seeds() {
    for (name, data) in seeds("checkpoint") {
        let r = parse_checkpoint(&data);
        assert_eq!(r.is_err(), name.contains("truncated"), "{}", name);
        if let Ok(c) = r {
            c.into_model().unwrap();
        }
    }
}

#[test]
fn config_seeds() {
    for (name, data) in seeds("config") {
        let text = String::from_utf8(data).unwrap();
        let r = TrainConfig::parse_text(&text, "seed");
        assert_eq!(r.is_err(), name.contains("missing"), "{}", name);
        if let Ok(c) = r {
            assert_eq!(TrainConfig::parse_text(&c.to_text(), "seed").unwrap(), c);
        }
    }
}

#[test]
fn embedding_seeds() {
    for (name, data) in seeds("embeddings") {
        let r = StaticEmbeddingTable::read_text(&data[..], "seed");
        assert_eq!(r.is_err(), name.contains("short"), "{}", name);
        if let Ok(t) = r {
            let mut out = Vec::new();
            t.write_text(&mut out).unwrap();
            let again = StaticEmbeddingTable::read_text(&out[..], "seed").unwrap();
            assert_eq!(again.words(), t.words());
        }
    }
}

//! Seeded synthetic corpora with deterministic entity patterns.
//!
//! The vocabulary has 50 words. Flat corpora label person names (one or two
//! consecutive names) as `PER` and city names as `LOC`. Nested corpora label
//! city names as `LOC` and organisations as `ORG`, where an organisation is
//! either `<head> of <city>` or `<city> <head>` and always contains its city
//! as a nested `LOC`. Entities are separated by at least one filler word, so
//! gold labels are a pure function of the tokens.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AnnotatedSentence, EntitySpan, Sentence};
use crate::embedding::StaticEmbeddingTable;
use crate::error::{Error, Result};

const PERSONS: [&str; 10] = [
    "alice", "bruno", "carla", "dmitri", "elena", "farid", "greta", "hiro", "ines", "jonas",
];
const CITIES: [&str; 10] = [
    "paris", "lagos", "quito", "oslo", "delhi", "lima", "cairo", "seoul", "perth", "kyiv",
];
const ORG_HEADS: [&str; 4] = ["bank", "council", "university", "agency"];
const OF: &str = "of";
const FILLERS: [&str; 25] = [
    "the", "a", "met", "visited", "in", "and", "with", "from", "said", "today", "near", "old",
    "new", "big", "small", "saw", "left", "for", "to", "at", "by", "was", "is", "then", "later",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthKind {
    Flat,
    Nested,
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(SynthKind::Flat),
            "nested" => Ok(SynthKind::Nested),
            other => Err(Error::Config(format!(
                "unknown corpus kind '{}', expected flat or nested",
                other
            ))),
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthKind::Flat => "flat",
            SynthKind::Nested => "nested",
        })
    }
}

/// All 50 words of the synthetic vocabulary.
pub fn vocabulary() -> Vec<&'static str> {
    PERSONS
        .iter()
        .chain(&CITIES)
        .chain(&ORG_HEADS)
        .chain(std::iter::once(&OF))
        .chain(&FILLERS)
        .copied()
        .collect()
}

fn filler_pool(kind: SynthKind) -> Vec<&'static str> {
    match kind {
        SynthKind::Flat => FILLERS
            .iter()
            .chain(&ORG_HEADS)
            .chain(std::iter::once(&OF))
            .copied()
            .collect(),
        SynthKind::Nested => FILLERS.iter().chain(&PERSONS).copied().collect(),
    }
}

fn push_fillers(rng: &mut ChaCha8Rng, pool: &[&'static str], n: usize, tokens: &mut Vec<String>) {
    for _ in 0..n {
        tokens.push(pool.choose(rng).unwrap().to_string());
    }
}

fn push_entity(rng: &mut ChaCha8Rng, kind: SynthKind, tokens: &mut Vec<String>, ents: &mut Vec<EntitySpan>) {
    let start = tokens.len();
    let city = |rng: &mut ChaCha8Rng| CITIES.choose(rng).unwrap().to_string();
    match kind {
        SynthKind::Flat => {
            if rng.gen_bool(0.5) {
                let n = rng.gen_range(1..=2);
                for _ in 0..n {
                    tokens.push(PERSONS.choose(rng).unwrap().to_string());
                }
                ents.push(EntitySpan::new(start, start + n - 1, "PER"));
            } else {
                tokens.push(city(rng));
                ents.push(EntitySpan::new(start, start, "LOC"));
            }
        }
        SynthKind::Nested => match rng.gen_range(0..3) {
            0 => {
                tokens.push(city(rng));
                ents.push(EntitySpan::new(start, start, "LOC"));
            }
            1 => {
                tokens.push(ORG_HEADS.choose(rng).unwrap().to_string());
                tokens.push(OF.to_string());
                tokens.push(city(rng));
                ents.push(EntitySpan::new(start, start + 2, "ORG"));
                ents.push(EntitySpan::new(start + 2, start + 2, "LOC"));
            }
            _ => {
                tokens.push(city(rng));
                tokens.push(ORG_HEADS.choose(rng).unwrap().to_string());
                ents.push(EntitySpan::new(start, start + 1, "ORG"));
                ents.push(EntitySpan::new(start, start, "LOC"));
            }
        },
    }
}

fn one_sentence(rng: &mut ChaCha8Rng, kind: SynthKind, id: String) -> AnnotatedSentence {
    let pool = filler_pool(kind);
    let mut tokens = Vec::new();
    let mut ents = Vec::new();
    let n_ent = rng.gen_range(1..=3);
    let lead = rng.gen_range(0..=2);
    push_fillers(rng, &pool, lead, &mut tokens);
    for i in 0..n_ent {
        push_entity(rng, kind, &mut tokens, &mut ents);
        let gap = if i + 1 < n_ent {
            rng.gen_range(1..=2)
        } else {
            rng.gen_range(0..=2)
        };
        push_fillers(rng, &pool, gap, &mut tokens);
    }
    AnnotatedSentence::new(Sentence::new(id, tokens), ents).expect("generator emits valid spans")
}

/// `size` sentences with ids `{prefix}{index}`.
pub fn generate(kind: SynthKind, size: usize, seed: u64, prefix: &str) -> Vec<AnnotatedSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..size)
        .map(|i| one_sentence(&mut rng, kind, format!("{}{}", prefix, i)))
        .collect()
}

/// A training split and a held-out split whose token sequences never occur
/// in the training split.
pub fn generate_splits(
    kind: SynthKind,
    train_size: usize,
    heldout_size: usize,
    seed: u64,
) -> (Vec<AnnotatedSentence>, Vec<AnnotatedSentence>) {
    let train = generate(kind, train_size, seed, "train-");
    let seen: HashSet<Vec<String>> = train.iter().map(|s| s.tokens().to_vec()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut heldout = Vec::with_capacity(heldout_size);
    let mut held_seen = HashSet::new();
    while heldout.len() < heldout_size {
        let s = one_sentence(&mut rng, kind, format!("heldout-{}", heldout.len()));
        if !seen.contains(s.tokens()) && held_seen.insert(s.tokens().to_vec()) {
            heldout.push(s);
        }
    }
    (train, heldout)
}

/// Uniform random vectors in [-1, 1) for every word of the synthetic
/// vocabulary.
pub fn embeddings(dim: usize, seed: u64) -> StaticEmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = vocabulary();
    let mut rows = Vec::with_capacity(words.len());
    for w in words {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        rows.push((w.to_string(), v));
    }
    StaticEmbeddingTable::from_rows(dim, rows).expect("unique vocabulary")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{validate_flat, validate_nested, Categories};

    #[test]
    fn vocabulary_has_fifty_unique_words() {
        let v = vocabulary();
        assert_eq!(v.len(), 50);
        assert_eq!(v.iter().collect::<HashSet<_>>().len(), 50);
    }

    #[test]
    fn corpora_respect_their_kind() {
        let flat = generate(SynthKind::Flat, 200, 1, "s");
        validate_flat(&flat).unwrap();
        assert_eq!(Categories::from_sentences(&flat).names(), &["LOC", "PER"]);

        let nested = generate(SynthKind::Nested, 200, 1, "s");
        validate_nested(&nested).unwrap();
        assert!(nested.iter().any(|s| !s.is_flat()));
        assert_eq!(Categories::from_sentences(&nested).names(), &["LOC", "ORG"]);

        let words: HashSet<&str> = vocabulary().into_iter().collect();
        for s in flat.iter().chain(&nested) {
            assert!(s.tokens().iter().all(|t| words.contains(t.as_str())));
        }
    }

    #[test]
    fn generation_is_seeded() {
        assert_eq!(
            generate(SynthKind::Nested, 20, 5, "x"),
            generate(SynthKind::Nested, 20, 5, "x")
        );
        assert_ne!(
            generate(SynthKind::Nested, 20, 5, "x"),
            generate(SynthKind::Nested, 20, 6, "x")
        );
    }

    #[test]
    fn heldout_split_is_disjoint() {
        let (train, held) = generate_splits(SynthKind::Flat, 200, 50, 3);
        assert_eq!(held.len(), 50);
        let seen: HashSet<_> = train.iter().map(|s| s.tokens().to_vec()).collect();
        assert!(held.iter().all(|s| !seen.contains(s.tokens())));
    }
}

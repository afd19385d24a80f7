//! Annotated corpora: sentences, gold entity spans and category inventories.
//!
//! All span boundaries are inclusive token indices: an entity covering the
//! tokens `Bank of China` at positions 1, 2, 3 is `start = 1, end = 3`.

pub mod conll;
pub mod jsonl;
pub mod synth;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::span::Span;

/// An entity annotation with a category name.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub category: String,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, category: impl Into<String>) -> Self {
        EntitySpan {
            start,
            end,
            category: category.into(),
        }
    }

    pub fn span(&self) -> Span {
        Span::new(self.start, self.end)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub id: String,
    pub document: Option<String>,
    pub tokens: Vec<String>,
    /// Extra per-token CoNLL columns between the token and the tag; either
    /// empty or one entry per token.
    pub columns: Vec<Vec<String>>,
}

impl Sentence {
    pub fn new(id: impl Into<String>, tokens: Vec<String>) -> Self {
        Sentence {
            id: id.into(),
            document: None,
            tokens,
            columns: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A sentence with its entity set. Entities are kept sorted and
/// deduplicated; they lie within the sentence and never cross.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotatedSentence {
    pub sentence: Sentence,
    entities: Vec<EntitySpan>,
}

impl AnnotatedSentence {
    pub fn new(sentence: Sentence, mut entities: Vec<EntitySpan>) -> Result<Self> {
        let l = sentence.len();
        let id = &sentence.id;
        if l == 0 {
            return Err(Error::Data(format!("sentence {}: no tokens", id)));
        }
        if !sentence.columns.is_empty() && sentence.columns.len() != l {
            return Err(Error::Data(format!(
                "sentence {}: {} column rows for {} tokens",
                id,
                sentence.columns.len(),
                l
            )));
        }
        for e in &entities {
            if e.start > e.end {
                return Err(Error::Data(format!(
                    "sentence {}: entity start {} after end {}",
                    id, e.start, e.end
                )));
            }
            if e.end >= l {
                return Err(Error::Data(format!(
                    "sentence {}: entity ({},{}) outside {} tokens",
                    id, e.start, e.end, l
                )));
            }
            if e.category.is_empty() || e.category.chars().any(char::is_whitespace) {
                return Err(Error::Data(format!(
                    "sentence {}: invalid category name {:?}",
                    id, e.category
                )));
            }
        }
        entities.sort();
        entities.dedup();
        for (i, a) in entities.iter().enumerate() {
            for b in &entities[i + 1..] {
                if a.span().clashes(b.span()) {
                    return Err(Error::Data(format!(
                        "sentence {}: entities {} and {} cross",
                        id,
                        a.span(),
                        b.span()
                    )));
                }
            }
        }
        Ok(AnnotatedSentence { sentence, entities })
    }

    /// A sentence without annotations.
    pub fn unannotated(sentence: Sentence) -> Result<Self> {
        Self::new(sentence, Vec::new())
    }

    pub fn entities(&self) -> &[EntitySpan] {
        &self.entities
    }

    pub fn id(&self) -> &str {
        &self.sentence.id
    }

    pub fn tokens(&self) -> &[String] {
        &self.sentence.tokens
    }

    pub fn len(&self) -> usize {
        self.sentence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentence.is_empty()
    }

    /// True when no two entities share a token.
    pub fn is_flat(&self) -> bool {
        self.entities.iter().enumerate().all(|(i, a)| {
            self.entities[i + 1..]
                .iter()
                .all(|b| !a.span().overlaps(b.span()))
        })
    }

    /// Same sentence with a different entity set.
    pub fn with_entities(&self, entities: Vec<EntitySpan>) -> Result<Self> {
        Self::new(self.sentence.clone(), entities)
    }
}

/// Check that every sentence's entities are pairwise disjoint.
pub fn validate_flat(sentences: &[AnnotatedSentence]) -> Result<()> {
    for s in sentences {
        if !s.is_flat() {
            return Err(Error::Data(format!(
                "sentence {}: overlapping entities in flat annotation",
                s.id()
            )));
        }
    }
    Ok(())
}

/// Check that no sentence has crossing entities.
pub fn validate_nested(sentences: &[AnnotatedSentence]) -> Result<()> {
    for s in sentences {
        let ents = s.entities();
        for (i, a) in ents.iter().enumerate() {
            if ents[i + 1..].iter().any(|b| a.span().clashes(b.span())) {
                return Err(Error::Data(format!(
                    "sentence {}: crossing entities",
                    s.id()
                )));
            }
        }
    }
    Ok(())
}

/// Entity category names. Index 0 is the non-entity class; named categories
/// take indices `1..` in sorted name order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Categories {
    names: Vec<String>,
}

pub const NON_ENTITY_NAME: &str = "<none>";

impl Categories {
    /// Sorted, deduplicated inventory.
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = names.into_iter().map(Into::into).collect();
        Categories {
            names: set.into_iter().collect(),
        }
    }

    pub fn from_sentences<'a, I>(sentences: I) -> Self
    where
        I: IntoIterator<Item = &'a AnnotatedSentence>,
    {
        Self::new(
            sentences
                .into_iter()
                .flat_map(|s| s.entities().iter().map(|e| e.category.clone())),
        )
    }

    /// Named categories, sorted.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Class count including the non-entity class.
    pub fn class_count(&self) -> usize {
        self.names.len() + 1
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names
            .binary_search_by(|n| n.as_str().cmp(name))
            .ok()
            .map(|i| i + 1)
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        match index {
            0 => Some(NON_ENTITY_NAME),
            i => self.names.get(i - 1).map(String::as_str),
        }
    }

    /// Whether every gold category of `sentences` is known.
    pub fn covers(&self, sentences: &[AnnotatedSentence]) -> bool {
        sentences
            .iter()
            .all(|s| s.entities().iter().all(|e| self.index(&e.category).is_some()))
    }
}

/// Train/dev/test splits with a category inventory covering all of them.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub train: Vec<AnnotatedSentence>,
    pub dev: Vec<AnnotatedSentence>,
    pub test: Vec<AnnotatedSentence>,
}

impl Corpus {
    pub fn categories(&self) -> Categories {
        Categories::from_sentences(self.train.iter().chain(&self.dev).chain(&self.test))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sentence(tokens: &[&str]) -> Sentence {
        Sentence::new("s0", tokens.iter().map(|t| t.to_string()).collect())
    }

    #[test]
    fn nested_entities_are_accepted_and_sorted() {
        let s = AnnotatedSentence::new(
            sentence(&["Bank", "of", "China"]),
            vec![EntitySpan::new(2, 2, "GPE"), EntitySpan::new(0, 2, "ORG")],
        )
        .unwrap();
        assert_eq!(s.entities()[0], EntitySpan::new(0, 2, "ORG"));
        assert!(!s.is_flat());
        assert!(validate_nested(std::slice::from_ref(&s)).is_ok());
        assert!(validate_flat(std::slice::from_ref(&s)).is_err());
    }

    #[test]
    fn invariant_violations_are_rejected() {
        let toks = sentence(&["a", "b", "c", "d"]);
        let bad = [
            vec![EntitySpan::new(2, 1, "X")],
            vec![EntitySpan::new(1, 4, "X")],
            vec![EntitySpan::new(0, 2, "X"), EntitySpan::new(1, 3, "Y")],
            vec![EntitySpan::new(0, 0, "")],
        ];
        for ents in bad {
            assert!(AnnotatedSentence::new(toks.clone(), ents).is_err());
        }
        assert!(AnnotatedSentence::new(sentence(&[]), vec![]).is_err());
    }

    #[test]
    fn duplicates_collapse() {
        let s = AnnotatedSentence::new(
            sentence(&["a"]),
            vec![EntitySpan::new(0, 0, "X"), EntitySpan::new(0, 0, "X")],
        )
        .unwrap();
        assert_eq!(s.entities().len(), 1);
    }

    #[test]
    fn category_indices_are_sorted_from_one() {
        let c = Categories::new(["PER", "LOC", "PER", "ORG"]);
        assert_eq!(c.class_count(), 4);
        assert_eq!(c.index("LOC"), Some(1));
        assert_eq!(c.index("ORG"), Some(2));
        assert_eq!(c.index("PER"), Some(3));
        assert_eq!(c.index("MISC"), None);
        assert_eq!(c.name(0), Some(NON_ENTITY_NAME));
        assert_eq!(c.name(3), Some("PER"));
        assert_eq!(c.name(4), None);
    }
}

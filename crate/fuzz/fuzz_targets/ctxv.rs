#![no_main]

use biaffine_ner::embedding::ContextualVectors;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(vectors) = ContextualVectors::parse(data) {
        let mut out = Vec::new();
        vectors.write(&mut out).expect("parsed vectors write");
        let again = ContextualVectors::parse(&out).expect("written vectors parse");
        assert_eq!(again.len(), vectors.len());
    }
});

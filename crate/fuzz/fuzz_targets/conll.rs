#![no_main]

use biaffine_ner::data::conll::{read_conll, write_conll};
use biaffine_ner::data::validate_flat;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(sentences) = read_conll(data, "fuzz") {
        validate_flat(&sentences).expect("BIO decoding yields flat spans");
        let mut out = Vec::new();
        write_conll(&mut out, &sentences).expect("parsed corpus writes");
        let again = read_conll(&out[..], "fuzz").expect("written corpus parses");
        assert_eq!(again.len(), sentences.len());
        for (a, b) in again.iter().zip(&sentences) {
            assert_eq!(a.tokens(), b.tokens());
            assert_eq!(a.entities(), b.entities());
        }
    }
});

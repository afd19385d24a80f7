#![no_main]

use biaffine_ner::data::jsonl::{read_spans, write_spans};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(sentences) = read_spans(data, "fuzz") {
        let mut out = Vec::new();
        write_spans(&mut out, &sentences).expect("parsed corpus writes");
        let again = read_spans(&out[..], "fuzz").expect("written corpus parses");
        assert_eq!(again, sentences);
    }
});

#![no_main]

use biaffine_ner::decoder::{decode, DecodeMode};
use biaffine_ner::scores::ScoreTensor;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = ScoreTensor::parse_dump(data) {
        let mut out = Vec::new();
        t.write_dump(&mut out).expect("parsed dump writes");
        assert_eq!(out, data);
        if t.len() <= 64 {
            let _ = decode(&t, DecodeMode::Nested);
            let _ = decode(&t, DecodeMode::Flat);
        }
    }
});

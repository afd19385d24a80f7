#![no_main]

use biaffine_ner::config::TrainConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(c) = TrainConfig::parse_text(text, "fuzz") {
            let again = TrainConfig::parse_text(&c.to_text(), "fuzz").expect("written config parses");
            assert_eq!(again.to_text(), c.to_text());
        }
    }
});

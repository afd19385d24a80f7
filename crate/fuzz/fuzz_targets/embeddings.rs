#![no_main]

use biaffine_ner::embedding::StaticEmbeddingTable;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(table) = StaticEmbeddingTable::read_text(data, "fuzz") {
        let mut out = Vec::new();
        table.write_text(&mut out).expect("parsed table writes");
        let again = StaticEmbeddingTable::read_text(&out[..], "fuzz").expect("written table parses");
        assert_eq!(again.words(), table.words());
    }
});

#![no_main]

use biaffine_ner::checkpoint::parse_checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = parse_checkpoint(data);
});

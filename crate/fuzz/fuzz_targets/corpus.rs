#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(ds) = mixlab::data::parse_corpus(text, "fuzz") {
            assert!(ds.examples.iter().all(|e| e.label < ds.num_classes));
        }
    }
});

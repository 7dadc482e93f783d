#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = mixlab::harness::parse_sweep_csv(data) {
        assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.lambda)));
    }
});

#![no_main]

use std::str::FromStr;

use libfuzzer_sys::fuzz_target;
use mixlab::harness::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = ExperimentConfig::from_str(text) {
            let again = ExperimentConfig::from_str(&cfg.to_text()).expect("printed config parses");
            assert_eq!(cfg, again);
        }
    }
});

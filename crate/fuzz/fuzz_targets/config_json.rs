#![no_main]

use libfuzzer_sys::fuzz_target;
use twomicro::config::ExperimentConfig;

// The config parser must never panic on arbitrary bytes; accepted configs
// must re-serialize cleanly.
fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = ExperimentConfig::from_json(text) {
            let _ = serde_json::to_string(&cfg);
        }
    }
});

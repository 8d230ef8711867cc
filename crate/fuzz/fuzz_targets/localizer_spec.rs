#![no_main]

use libfuzzer_sys::fuzz_target;
use twomicro::symbols::{make_localizer, LocalizerSpec};

// Parsing a localizer spec and evaluating the resulting symbol must never
// panic, whatever numbers the JSON carries.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(spec) = serde_json::from_str::<LocalizerSpec>(text) else { return };
    if spec.dim() == 0 || spec.dim() > 3 {
        return;
    }
    if let Ok(sym) = make_localizer(&spec) {
        let n = spec.dim();
        let x = vec![0.5; n];
        for scale in [1e-3, 0.1, 1.0] {
            let xi: Vec<f64> = (0..n).map(|a| scale * (a as f64 + 0.3)).collect();
            let _ = sym.eval(&x, &xi, 0.01);
        }
    }
});

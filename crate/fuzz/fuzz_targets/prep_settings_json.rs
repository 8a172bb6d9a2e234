#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(settings) = pathtomo::PrepSettings::from_json(text) {
        // Settings that validate must run the preparation without panic;
        // errors (blocked-index, collisions, empty states) are fine.
        let _ = pathtomo::prep::prepare_paper_state(&settings);
    }
});

#![no_main]

use libfuzzer_sys::fuzz_target;
use pathtomo::optics::pgm::FrameMeta;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(meta) = serde_json::from_str::<FrameMeta>(text) {
        // Round-trip through the writer shape.
        let again = serde_json::to_string(&meta).unwrap();
        let _ = serde_json::from_str::<FrameMeta>(&again).unwrap();
    }
});

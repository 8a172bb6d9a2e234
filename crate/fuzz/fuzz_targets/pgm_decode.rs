#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = pathtomo::optics::pgm::decode(data) {
        // Decoded frames must be finite and shaped.
        assert!(img.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!(img.nrows() > 0 && img.ncols() > 0);
    }
});

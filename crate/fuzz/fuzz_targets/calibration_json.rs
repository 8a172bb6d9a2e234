#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cal) = pathtomo::Calibration::from_json(text) {
        // All stored factors are unit magnitude by contract.
        for i in 0..8 {
            for j in 0..8 {
                let f = cal.factor(i, j);
                assert!((f.norm() - 1.0).abs() < 1e-6);
            }
        }
        let _ = pathtomo::Calibration::from_json(&cal.to_json()).unwrap();
    }
});

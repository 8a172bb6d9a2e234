#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(g) = pathtomo::PathGeometry::from_json(text) {
        // A geometry that parses must satisfy its invariants and survive
        // the downstream bookkeeping without panicking.
        assert!(g.dim() >= 1);
        let _ = pathtomo::geometry::segment_table(&g);
        let _ = pathtomo::geometry::angle_set(&g);
        let _ = pathtomo::geometry::validate_geometry(&g);
        let _ = pathtomo::geometry::is_nonredundant_rectangle(&g);
    }
});

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rho) = pathtomo::DensityMatrix::from_json(text) {
        // Parsed matrices are Hermitian with unit trace by contract.
        let p = rho.purity();
        assert!(p.is_finite());
        let _ = rho.psd_violation();
        let _ = rho.nearest_physical();
        let round = pathtomo::DensityMatrix::from_json(&rho.to_json()).unwrap();
        assert_eq!(round.dim(), rho.dim());
    }
});

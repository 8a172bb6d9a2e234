//! Shared helpers for the integration and acceptance suites.

#![allow(dead_code)]

use pathtomo::optics::pixel_to_momentum;
use pathtomo::{CameraImage, OpticalConfig};

/// Least-squares fit of y = A + B cos(phase) + C sin(phase) at known phases.
/// Exact for noiseless sampled cosines, so it serves as an independent
/// visibility oracle: visibility = sqrt(B^2 + C^2) / A.
pub fn harmonic_fit(values: &[f64], phases: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let (mut sc, mut ss, mut scc, mut sss, mut scs) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut sy, mut syc, mut sys) = (0.0, 0.0, 0.0);
    for (&y, &p) in values.iter().zip(phases) {
        let (s, c) = p.sin_cos();
        sc += c;
        ss += s;
        scc += c * c;
        sss += s * s;
        scs += c * s;
        sy += y;
        syc += y * c;
        sys += y * s;
    }
    let m = [[n, sc, ss], [sc, scc, scs], [ss, scs, sss]];
    let rhs = [sy, syc, sys];
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d0 = det(&m);
    let mut sol = [0.0; 3];
    for k in 0..3 {
        let mut mk = m;
        for r in 0..3 {
            mk[r][k] = rhs[r];
        }
        sol[k] = det(&mk) / d0;
    }
    (sol[0], sol[1], sol[2])
}

/// Fringe visibility of the central column of `img`, measured against a
/// zero-coherence reference frame of the same geometry: the pointwise ratio
/// strips the envelope, and the harmonic fit reads the contrast exactly.
pub fn measured_visibility(
    img: &CameraImage,
    reference: &CameraImage,
    dy_camera_mm: f64,
    cfg: &OpticalConfig,
) -> f64 {
    let (cx, cy) = cfg.center();
    let col = cx.round() as usize;
    let peak = (0..reference.data.nrows())
        .map(|r| reference.data[[r, col]])
        .fold(0.0, f64::max);
    let mut ratio = Vec::new();
    let mut phases = Vec::new();
    for r in 0..img.data.nrows() {
        let env = reference.data[[r, col]];
        if env > 1e-3 * peak {
            ratio.push(img.data[[r, col]] / env);
            phases.push(pixel_to_momentum(r as f64, cy, cfg) * dy_camera_mm);
        }
    }
    let (a, b, c) = harmonic_fit(&ratio, &phases);
    (b * b + c * c).sqrt() / a
}

//! 16-bit binary PGM frame files with a JSON metadata sidecar.
//!
//! Frames are written as P5 with maxval 65535 and big-endian samples. The
//! sidecar `<stem>.json` carries the lens angle, the optical config and the
//! RNG seed; the hidden k-origin offset is written only on request.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{CameraImage, OpticalConfig};
use crate::error::{Error, Result};

const MAXVAL: u16 = 65535;
/// Caps width*height so hostile headers cannot trigger huge allocations.
const MAX_PIXELS: u64 = 100_000_000;

/// Scale a float frame onto u16 and emit P5 bytes. Returns the byte buffer
/// and the intensity value one count corresponds to.
pub fn encode(data: &Array2<f64>) -> (Vec<u8>, f64) {
    let max = data.iter().cloned().fold(0.0_f64, f64::max);
    let scale = if max > 0.0 { max / MAXVAL as f64 } else { 1.0 };
    let (rows, cols) = data.dim();
    let mut out = Vec::with_capacity(32 + rows * cols * 2);
    out.extend_from_slice(format!("P5\n{cols} {rows}\n{MAXVAL}\n").as_bytes());
    for v in data.iter() {
        let q = (v / scale).round().clamp(0.0, MAXVAL as f64) as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    (out, scale)
}

/// Parse a binary PGM (P5). Accepts 8- and 16-bit maxvals and `#` comments
/// in the header; never panics on malformed input.
pub fn decode(bytes: &[u8]) -> Result<Array2<f64>> {
    let mut pos = 0usize;
    let magic = take_token(bytes, &mut pos).ok_or_else(|| bad("missing magic"))?;
    if magic != b"P5" {
        return Err(bad("not a P5 file"));
    }
    let cols = take_number(bytes, &mut pos).ok_or_else(|| bad("missing width"))?;
    let rows = take_number(bytes, &mut pos).ok_or_else(|| bad("missing height"))?;
    let maxval = take_number(bytes, &mut pos).ok_or_else(|| bad("missing maxval"))?;
    if cols == 0 || rows == 0 {
        return Err(bad("zero dimension"));
    }
    if cols * rows > MAX_PIXELS {
        return Err(bad("image too large"));
    }
    if maxval == 0 || maxval > MAXVAL as u64 {
        return Err(bad("maxval out of range"));
    }
    // Exactly one whitespace byte separates the header from the samples.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(bad("missing header terminator")),
    }
    let (rows, cols) = (rows as usize, cols as usize);
    let two_byte = maxval > 255;
    let sample_bytes = if two_byte { 2 } else { 1 };
    let need = rows * cols * sample_bytes;
    let body = bytes.get(pos..pos + need).ok_or_else(|| bad("truncated sample data"))?;
    let mut data = Array2::zeros((rows, cols));
    for (idx, chunk) in body.chunks_exact(sample_bytes).enumerate() {
        let v = if two_byte {
            u16::from_be_bytes([chunk[0], chunk[1]]) as f64
        } else {
            chunk[0] as f64
        };
        data[[idx / cols, idx % cols]] = v;
    }
    Ok(data)
}

fn bad(msg: &str) -> Error {
    Error::PgmFormat(msg.to_string())
}

fn skip_space_and_comments(bytes: &[u8], pos: &mut usize) {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            return;
        }
    }
}

fn take_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    skip_space_and_comments(bytes, pos);
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (*pos > start).then(|| &bytes[start..*pos])
}

fn take_number(bytes: &[u8], pos: &mut usize) -> Option<u64> {
    let tok = take_token(bytes, pos)?;
    if tok.len() > 12 || !tok.iter().all(u8::is_ascii_digit) {
        return None;
    }
    std::str::from_utf8(tok).ok()?.parse().ok()
}

/// Frame metadata stored beside the PGM file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameMeta {
    pub theta_deg: Option<f64>,
    pub config: OpticalConfig,
    pub seed: u64,
    /// Intensity represented by one count in the PGM file.
    #[serde(default = "one")]
    pub count_scale: f64,
    #[serde(default)]
    pub lab_frame: bool,
    /// Present only when frames are written with ground truth revealed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_offset_px: Option<f64>,
}

fn one() -> f64 {
    1.0
}

/// Write `<dir>/<stem>.pgm` and `<dir>/<stem>.json`; returns the PGM path.
pub fn save_frame(
    dir: &Path,
    stem: &str,
    img: &CameraImage,
    reveal_truth: bool,
) -> Result<PathBuf> {
    let (bytes, scale) = encode(&img.data);
    let pgm_path = dir.join(format!("{stem}.pgm"));
    std::fs::write(&pgm_path, bytes)?;
    let meta = FrameMeta {
        theta_deg: img.theta_deg,
        config: img.config.clone(),
        seed: img.seed,
        count_scale: scale,
        lab_frame: img.lab_frame,
        origin_offset_px: reveal_truth.then_some(img.origin_offset_px),
    };
    std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&meta)?)?;
    Ok(pgm_path)
}

/// Load a frame and its sidecar. The hidden origin offset stays hidden
/// unless the sidecar reveals it.
pub fn load_frame(pgm_path: &Path) -> Result<CameraImage> {
    let data = decode(&std::fs::read(pgm_path)?)?;
    let meta_path = pgm_path.with_extension("json");
    let meta: FrameMeta = serde_json::from_str(&std::fs::read_to_string(&meta_path)?)?;
    if data.dim() != (meta.config.resolution_px[1], meta.config.resolution_px[0]) {
        return Err(Error::ConfigMismatch {
            what: format!(
                "PGM is {}x{} but sidecar says {}x{}",
                data.ncols(),
                data.nrows(),
                meta.config.resolution_px[0],
                meta.config.resolution_px[1]
            ),
        });
    }
    Ok(CameraImage {
        data,
        theta_deg: meta.theta_deg,
        config: meta.config,
        seed: meta.seed,
        lab_frame: meta.lab_frame,
        origin_offset_px: meta.origin_offset_px.unwrap_or(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_parsing_accepts_comments() {
        let bytes = b"P5 # a comment\n2 2\n# another\n65535\n\x00\x01\x00\x02\x00\x03\x00\x04";
        let img = decode(bytes).unwrap();
        assert_eq!(img.dim(), (2, 2));
        assert_eq!(img[[0, 0]], 1.0);
        assert_eq!(img[[1, 1]], 4.0);
    }

    #[test]
    fn rejects_malformed_headers() {
        assert!(decode(b"").is_err());
        assert!(decode(b"P6\n2 2\n255\n....").is_err());
        assert!(decode(b"P5\n0 5\n255\n").is_err());
        assert!(decode(b"P5\n99999999 99999999\n255\n").is_err());
        assert!(decode(b"P5\n2 2\n70000\n").is_err());
        assert!(decode(b"P5\n2 2\n65535\n\x00\x01").is_err());
        assert!(decode(b"P5\n2 -2\n255\n\x00\x00\x00\x00").is_err());
    }

    #[test]
    fn eight_bit_files_decode_too() {
        let bytes = b"P5\n3 1\n255\n\x0a\x14\x1e";
        let img = decode(bytes).unwrap();
        assert_eq!(img[[0, 0]], 10.0);
        assert_eq!(img[[0, 2]], 30.0);
    }

    proptest! {
        #[test]
        fn encode_decode_round_trips_counts(
            rows in 1usize..6,
            cols in 1usize..6,
            seed in 0u64..1000
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data = Array2::from_shape_fn((rows, cols), |_| {
                rng.gen_range(0.0..65535.0_f64).round()
            });
            let (bytes, scale) = encode(&data);
            let back = decode(&bytes).unwrap();
            for (a, b) in data.iter().zip(back.iter()) {
                // Counts survive up to the quantization step.
                prop_assert!((a - b * scale).abs() <= 0.5 * scale + 1e-9);
            }
        }

        #[test]
        fn decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
            let _ = decode(&bytes);
        }
    }

    #[test]
    fn frame_files_round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = OpticalConfig {
            resolution_px: [16, 12],
            ..OpticalConfig::desk_default()
        };
        let data = Array2::from_shape_fn((12, 16), |(r, c)| (r * 16 + c) as f64);
        let img = CameraImage {
            data,
            theta_deg: Some(45.0),
            config: cfg,
            seed: 9,
            lab_frame: false,
            origin_offset_px: 3.5,
        };
        let path = save_frame(dir.path(), "frame", &img, false).unwrap();
        let back = load_frame(&path).unwrap();
        assert_eq!(back.theta_deg, Some(45.0));
        assert_eq!(back.seed, 9);
        // Hidden offset is not revealed by default.
        assert_eq!(back.origin_offset_px, 0.0);
        let ratio = img.data[[11, 15]] / back.data[[11, 15]];
        for (a, b) in img.data.iter().zip(back.data.iter()) {
            assert!((a - b * ratio).abs() <= 0.51 * ratio);
        }

        let revealed = save_frame(dir.path(), "truth", &img, true).unwrap();
        assert_eq!(load_frame(&revealed).unwrap().origin_offset_px, 3.5);
    }
}

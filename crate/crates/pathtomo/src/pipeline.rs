//! End-to-end glue: simulate a full frame set for a state and feed the
//! tomography, the same path the CLI drives.

use rayon::prelude::*;

use crate::density::DensityMatrix;
use crate::error::Result;
use crate::geometry::MeasurementPlan;
use crate::optics::{direct_image, oft_image, CameraImage, NoiseModel, OpticalConfig};
use crate::prep::PrepSettings;
use crate::reconstruct::FrameSet;

/// Independent per-frame RNG stream derived from the run seed.
pub fn frame_seed(run_seed: u64, frame_index: u64) -> u64 {
    // splitmix64 step keeps streams uncorrelated without a CSPRNG.
    let mut z = run_seed
        .wrapping_add(frame_index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One OFT frame per plan angle plus the direct image. Frames are seeded
/// independently so the set is reproducible regardless of parallel order.
pub fn simulate_frames(
    rho: &DensityMatrix,
    plan: &MeasurementPlan,
    cfg: &OpticalConfig,
    noise: &NoiseModel,
    origin_offset_px: f64,
    run_seed: u64,
) -> Result<FrameSet> {
    let g = &plan.geometry;
    let direct = direct_image(rho, g, cfg, noise, frame_seed(run_seed, 0))?;
    let oft: Vec<CameraImage> = plan
        .angles
        .par_iter()
        .enumerate()
        .map(|(i, ap)| {
            oft_image(
                rho,
                g,
                ap.theta_deg,
                cfg,
                noise,
                origin_offset_px,
                frame_seed(run_seed, 1 + i as u64),
            )
        })
        .collect::<Result<_>>()?;
    Ok(FrameSet { direct: Some(direct), oft })
}

/// Two preparation settings whose states work as phase references: every
/// coherence is non-zero (weights 0.167 and 0.125 at worst) and the two
/// phase patterns differ.
pub fn reference_settings() -> (PrepSettings, PrepSettings) {
    let a = PrepSettings::default();
    let b = PrepSettings { zeta_deg: 30.0, ..Default::default() };
    (a, b)
}

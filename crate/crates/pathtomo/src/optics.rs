//! Synthetic camera frames.
//!
//! The direct image shows one Gaussian blob per path weighted by the
//! diagonal of the density matrix. An OFT frame is what the camera records
//! with the cylindrical lens rotated to angle theta: the geometry is rotated
//! so that lens axis lies along the k (row) axis, each cluster of paths with
//! a common untransformed coordinate u produces an interference pattern, and
//! the fringe of a pair encodes the coherence rho_ij in its contrast and
//! offset.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::density::DensityMatrix;
use crate::error::{Error, Result};
use crate::geometry::PathGeometry;

pub mod pgm;

/// Everything about the imaging chain: source wavelength, the cylindrical
/// lens focal length, camera sampling and the relay magnification applied to
/// path positions and widths at the camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpticalConfig {
    pub wavelength_nm: f64,
    pub oft_focal_mm: f64,
    pub pixel_pitch_um: f64,
    /// [columns (untransformed axis), rows (OFT axis)].
    pub resolution_px: [usize; 2],
    /// Imaging-system scale applied to positions and sigma at the camera.
    pub magnification: f64,
    pub lens_aperture_mm: f64,
    /// Expected total intensity of a noiseless frame (photon count scale).
    pub exposure: f64,
}

impl OpticalConfig {
    /// Full camera resolution with the experiment's optics: 808 nm, f = 250 mm,
    /// 2.40 um pixels on a 3088 x 2076 sensor, relay magnification 0.4.
    pub fn paper_full_resolution() -> Self {
        Self {
            wavelength_nm: 808.0,
            oft_focal_mm: 250.0,
            pixel_pitch_um: 2.40,
            resolution_px: [3088, 2076],
            magnification: 0.4,
            lens_aperture_mm: 50.0,
            exposure: 1.0,
        }
    }

    /// Quarter resolution with the pixel pitch scaled x4 so the physical
    /// sensor size is unchanged. Default for tests and the CLI.
    pub fn desk_default() -> Self {
        Self {
            pixel_pitch_um: 9.6,
            resolution_px: [772, 519],
            ..Self::paper_full_resolution()
        }
    }

    pub fn wavelength_mm(&self) -> f64 {
        self.wavelength_nm * 1e-6
    }

    pub fn pixel_pitch_mm(&self) -> f64 {
        self.pixel_pitch_um * 1e-3
    }

    /// Column index of u = 0 (and row index of k = 0 absent any offset).
    pub fn center(&self) -> (f64, f64) {
        (
            (self.resolution_px[0] as f64 - 1.0) / 2.0,
            (self.resolution_px[1] as f64 - 1.0) / 2.0,
        )
    }

    /// Momentum step between adjacent rows, rad/mm.
    pub fn k_per_px(&self) -> f64 {
        std::f64::consts::TAU * self.pixel_pitch_mm()
            / (self.oft_focal_mm * self.wavelength_mm())
    }

    /// Gaussian amplitude width at the camera, mm.
    pub fn camera_sigma_mm(&self, sigma_mm: f64) -> f64 {
        self.magnification * sigma_mm
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("wavelength_nm", self.wavelength_nm),
            ("oft_focal_mm", self.oft_focal_mm),
            ("pixel_pitch_um", self.pixel_pitch_um),
            ("magnification", self.magnification),
            ("lens_aperture_mm", self.lens_aperture_mm),
            ("exposure", self.exposure),
        ];
        for (name, v) in positive {
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::BadConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.resolution_px[0] < 8 || self.resolution_px[1] < 8 {
            return Err(Error::BadConfig(format!(
                "resolution {}x{} too small",
                self.resolution_px[0], self.resolution_px[1]
            )));
        }
        Ok(())
    }
}

/// Map a pixel index on the OFT axis to transverse momentum, rad/mm:
/// k = 2 pi gamma (p - origin) / (f lambda).
pub fn pixel_to_momentum(p: f64, axis_origin: f64, cfg: &OpticalConfig) -> f64 {
    cfg.k_per_px() * (p - axis_origin)
}

/// Shot noise, read noise and background applied to a synthesized frame,
/// in that order, then clamping and 16-bit quantization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub poisson: bool,
    /// Expected photons per frame when Poisson noise is on.
    pub photon_budget: f64,
    pub read_noise_sigma: f64,
    pub background: f64,
}

impl NoiseModel {
    pub fn none() -> Self {
        Self { poisson: false, photon_budget: 0.0, read_noise_sigma: 0.0, background: 0.0 }
    }

    pub fn poisson(photon_budget: f64) -> Self {
        Self { poisson: true, photon_budget, read_noise_sigma: 0.0, background: 0.0 }
    }

    pub fn is_enabled(&self) -> bool {
        self.poisson || self.read_noise_sigma > 0.0 || self.background > 0.0
    }

    fn apply(&self, data: &mut Array2<f64>, rng: &mut impl Rng) {
        if !self.is_enabled() {
            return;
        }
        if self.poisson {
            let total: f64 = data.iter().sum();
            let scale = if total > 0.0 { self.photon_budget / total } else { 0.0 };
            for v in data.iter_mut() {
                let lambda = *v * scale;
                *v = if lambda > 0.0 {
                    Poisson::new(lambda).map(|p| p.sample(rng)).unwrap_or(0.0)
                } else {
                    0.0
                };
            }
        }
        if self.read_noise_sigma > 0.0 {
            let normal = Normal::new(0.0, self.read_noise_sigma).expect("finite sigma");
            for v in data.iter_mut() {
                *v += normal.sample(rng);
            }
        }
        if self.background > 0.0 {
            for v in data.iter_mut() {
                *v += self.background;
            }
        }
        for v in data.iter_mut() {
            *v = v.max(0.0).round().min(65535.0);
        }
    }
}

/// A recorded (or synthesized) intensity frame plus the metadata needed to
/// analyze it.
#[derive(Debug, Clone)]
pub struct CameraImage {
    /// Non-negative intensities, shape (rows, columns).
    pub data: Array2<f64>,
    /// Lens angle for OFT frames, `None` for the direct image.
    pub theta_deg: Option<f64>,
    pub config: OpticalConfig,
    pub seed: u64,
    /// True when the frame is oriented as the camera saw it and must be
    /// rotated before slicing; synthesized frames are already rotated.
    pub lab_frame: bool,
    /// Hidden k-axis origin shift in pixels, used to exercise calibration.
    /// Not exposed through the default sidecar.
    pub origin_offset_px: f64,
}

impl CameraImage {
    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn total_intensity(&self) -> f64 {
        self.data.iter().sum()
    }
}

fn check_dims(rho: &DensityMatrix, g: &PathGeometry) -> Result<()> {
    if rho.dim() != g.dim() {
        return Err(Error::DimensionMismatch { expected: g.dim(), got: rho.dim() });
    }
    Ok(())
}

fn check_aperture(g: &PathGeometry, cfg: &OpticalConfig) -> Result<()> {
    let l_max = crate::geometry::segment_table(g)
        .iter()
        .map(|s| s.length_mm)
        .fold(0.0, f64::max);
    if l_max * cfg.magnification >= cfg.lens_aperture_mm {
        return Err(Error::BadConfig(format!(
            "camera-plane span {:.2} mm exceeds lens aperture {:.2} mm",
            l_max * cfg.magnification,
            cfg.lens_aperture_mm
        )));
    }
    Ok(())
}

/// Accumulate `weight * col[c] * row[r]` over the column support window.
fn add_outer(
    data: &mut Array2<f64>,
    row_profile: &[f64],
    col_profile: &[f64],
    col_start: usize,
    weight: f64,
) {
    for (r, mut row) in data.outer_iter_mut().enumerate() {
        let f = weight * row_profile[r];
        if f == 0.0 {
            continue;
        }
        for (offset, &cv) in col_profile.iter().enumerate() {
            row[col_start + offset] += f * cv;
        }
    }
}

/// Gaussian amplitude profile exp(-(u - center)^2 / w^2) tabulated over the
/// columns where it is non-negligible.
struct ColProfile {
    start: usize,
    values: Vec<f64>,
}

fn amplitude_profile(center_px: f64, w_px: f64, n_cols: usize) -> ColProfile {
    // exp(-45) ~ 3e-20 bounds the truncation error well below quantization.
    let reach = w_px * 45.0_f64.sqrt();
    let lo = ((center_px - reach).floor().max(0.0)) as usize;
    let hi = ((center_px + reach).ceil().min(n_cols as f64 - 1.0)) as usize;
    let values = (lo..=hi)
        .map(|c| {
            let t = (c as f64 - center_px) / w_px;
            (-t * t).exp()
        })
        .collect();
    ColProfile { start: lo, values }
}

/// Image of the bare path intensities: one isotropic Gaussian blob of width
/// M sigma per path, weighted by rho_ii, integrating to `exposure`.
pub fn direct_image(
    rho: &DensityMatrix,
    g: &PathGeometry,
    cfg: &OpticalConfig,
    noise: &NoiseModel,
    seed: u64,
) -> Result<CameraImage> {
    cfg.validate()?;
    check_dims(rho, g)?;
    check_aperture(g, cfg)?;
    let (n_cols, n_rows) = (cfg.resolution_px[0], cfg.resolution_px[1]);
    let (cx, cy) = cfg.center();
    let gamma = cfg.pixel_pitch_mm();
    let w_px = cfg.camera_sigma_mm(g.sigma) / gamma;
    let margin = 3.0 * w_px;

    let mut data: Array2<f64> = Array2::zeros((n_rows, n_cols));
    let norm_1d = (2.0 / std::f64::consts::PI).sqrt() / w_px;
    for (i, p) in g.points.iter().enumerate() {
        let col_c = cx + cfg.magnification * p[0] / gamma;
        let row_c = cy + cfg.magnification * p[1] / gamma;
        if col_c < margin
            || col_c > n_cols as f64 - 1.0 - margin
            || row_c < margin
            || row_c > n_rows as f64 - 1.0 - margin
        {
            return Err(Error::FieldOfView { x: p[0], y: p[1] });
        }
        let col = amplitude_profile(col_c, w_px / std::f64::consts::SQRT_2, n_cols);
        let row = amplitude_profile(row_c, w_px / std::f64::consts::SQRT_2, n_rows);
        // Each 1D factor sums to w_px sqrt(pi/2); norm_1d^2 makes the blob
        // integrate to one.
        let mut row_full = vec![0.0; n_rows];
        for (offset, &v) in row.values.iter().enumerate() {
            row_full[row.start + offset] = v * norm_1d;
        }
        let weight = cfg.exposure * rho.element(i, i).re * norm_1d;
        add_outer(&mut data, &row_full, &col.values, col.start, weight);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    noise.apply(&mut data, &mut rng);
    Ok(CameraImage {
        data,
        theta_deg: None,
        config: cfg.clone(),
        seed,
        lab_frame: false,
        origin_offset_px: 0.0,
    })
}

/// Rotate the path centers so the lens axis for `theta` lies along +y.
pub(crate) fn rotate_for_theta(points: &[[f64; 2]], theta_deg: f64) -> Vec<[f64; 2]> {
    let alpha = (90.0 - theta_deg).to_radians();
    let (s, c) = alpha.sin_cos();
    points
        .iter()
        .map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1]])
        .collect()
}

/// Frame recorded with the cylindrical lens at angle `theta`: along each
/// column u the envelope of the cluster of paths at that u, along the rows
/// the momentum distribution with one cosine per interfering pair.
///
/// `origin_offset_px` silently shifts where k = 0 falls on the sensor; the
/// reconstruction cannot see it and must calibrate it away.
pub fn oft_image(
    rho: &DensityMatrix,
    g: &PathGeometry,
    theta_deg: f64,
    cfg: &OpticalConfig,
    noise: &NoiseModel,
    origin_offset_px: f64,
    seed: u64,
) -> Result<CameraImage> {
    cfg.validate()?;
    check_dims(rho, g)?;
    check_aperture(g, cfg)?;
    let (n_cols, n_rows) = (cfg.resolution_px[0], cfg.resolution_px[1]);
    let (cx, cy) = cfg.center();
    let gamma = cfg.pixel_pitch_mm();
    let m = cfg.magnification;
    let w_mm = cfg.camera_sigma_mm(g.sigma);
    let w_px = w_mm / gamma;

    let rotated = rotate_for_theta(&g.points, theta_deg);

    // Row-axis momentum values and Gaussian momentum envelope |psi~(k)|^2.
    let k_origin = cy + origin_offset_px;
    let k_vals: Vec<f64> = (0..n_rows)
        .map(|r| pixel_to_momentum(r as f64, k_origin, cfg))
        .collect();
    let env: Vec<f64> = k_vals.iter().map(|k| (-0.5 * k * k * w_mm * w_mm).exp()).collect();
    let s_k: f64 = env.iter().sum();
    let s_u = w_px * (std::f64::consts::PI / 2.0).sqrt();
    let scale = cfg.exposure / (s_k * s_u);

    let margin_px = 3.0 * w_px;
    let mut cols_px = Vec::with_capacity(rotated.len());
    for (i, p) in rotated.iter().enumerate() {
        let col_c = cx + m * p[0] / gamma;
        if col_c < margin_px || col_c > n_cols as f64 - 1.0 - margin_px {
            return Err(Error::FieldOfView { x: g.points[i][0], y: g.points[i][1] });
        }
        cols_px.push(col_c);
    }

    let profiles: Vec<ColProfile> =
        cols_px.iter().map(|&c| amplitude_profile(c, w_px, n_cols)).collect();

    let mut data: Array2<f64> = Array2::zeros((n_rows, n_cols));
    let d = g.dim();

    // All diagonal terms share the envelope row profile.
    {
        let mut diag_col = vec![0.0; n_cols];
        for i in 0..d {
            let w = rho.element(i, i).re;
            for (offset, &v) in profiles[i].values.iter().enumerate() {
                diag_col[profiles[i].start + offset] += w * v * v;
            }
        }
        let lo = diag_col.iter().position(|&v| v != 0.0).unwrap_or(0);
        let hi = diag_col.iter().rposition(|&v| v != 0.0).unwrap_or(0);
        add_outer(&mut data, &env, &diag_col[lo..=hi], lo, scale);
    }

    // Pair terms: only clusters sharing u interfere visibly.
    let nyquist_limit = cfg.wavelength_mm() * cfg.oft_focal_mm
        / (std::f64::consts::PI * gamma);
    for i in 0..d {
        for j in (i + 1)..d {
            let du_px = (cols_px[i] - cols_px[j]).abs();
            if du_px > 6.0 * w_px {
                continue;
            }
            let dy_cam = m * (rotated[i][1] - rotated[j][1]);
            let period_px = cfg.wavelength_mm() * cfg.oft_focal_mm
                / (dy_cam.abs().max(1e-12) * gamma);
            if dy_cam.abs() > 1e-9 && period_px < 2.0 {
                return Err(Error::Aliasing {
                    period_px,
                    l_mm: dy_cam.abs(),
                    limit_mm: nyquist_limit,
                });
            }
            let rho_ij = rho.element(i, j);
            let row_profile: Vec<f64> = k_vals
                .iter()
                .zip(&env)
                .map(|(&k, &e)| {
                    let ph = dy_cam * k;
                    2.0 * e * (rho_ij.re * ph.cos() - rho_ij.im * ph.sin())
                })
                .collect();
            // Product of the two amplitude profiles over the union window.
            let lo = profiles[i].start.min(profiles[j].start);
            let hi = (profiles[i].start + profiles[i].values.len())
                .max(profiles[j].start + profiles[j].values.len())
                - 1;
            let col_profile: Vec<f64> = (lo..=hi)
                .map(|c| {
                    let ti = (c as f64 - cols_px[i]) / w_px;
                    let tj = (c as f64 - cols_px[j]) / w_px;
                    let e = -(ti * ti) - (tj * tj);
                    if e < -45.0 {
                        0.0
                    } else {
                        e.exp()
                    }
                })
                .collect();
            add_outer(&mut data, &row_profile, &col_profile, lo, scale);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    noise.apply(&mut data, &mut rng);
    Ok(CameraImage {
        data,
        theta_deg: Some(theta_deg),
        config: cfg.clone(),
        seed,
        lab_frame: false,
        origin_offset_px,
    })
}

//! Density-matrix reconstruction from camera frames.
//!
//! Per lens angle: pull a one-pixel slice through each interference pattern,
//! read its zero-frequency peak and project it onto the exact fringe
//! frequency of every pair expected there. The complex peak, normalized by
//! the frame's summed zero-frequency peaks, is the coherence rho_ij up to a
//! fixed phase that two reference states calibrate away. Diagonals come from
//! singleton (Case 2) zero-frequency peaks and from the direct image.

use std::collections::BTreeMap;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::density::DensityMatrix;
use crate::error::{Error, Result};
use crate::geometry::{MeasurementPlan, PathGeometry};
use crate::optics::{pixel_to_momentum, CameraImage, OpticalConfig};

const ANGLE_MATCH_DEG: f64 = 1e-6;
/// A reference coherence below this weight cannot pin a phase.
const MIN_REFERENCE_WEIGHT: f64 = 0.02;

#[derive(Debug, Clone, Default)]
pub struct ReconstructOptions {
    /// Columns averaged per slice; 1 is the paper's choice. Averaging wider
    /// can lower visibility if fringes are skewed.
    pub slice_width: usize,
    /// Weight diagonal estimates by shot-noise variance estimates instead of
    /// equally. Sensible when frames are photon counts.
    pub shot_noise_weights: bool,
}

impl ReconstructOptions {
    pub fn new() -> Self {
        Self { slice_width: 1, shot_noise_weights: false }
    }

    /// Settings for photon-counting frames: average nine columns per slice
    /// (simulated fringes are not skewed, so the averaging caveat does not
    /// bite) and weight diagonal sources by shot-noise variance.
    pub fn for_noise() -> Self {
        Self { slice_width: 9, shot_noise_weights: true }
    }
}

/// What one peak reading refers to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ReadingTarget {
    /// Off-diagonal pair i < j with signed rotated-frame separation dy.
    Pair { i: usize, j: usize, dy_mm: f64 },
    /// Case-2 diagonal: a path alone on its line.
    Diagonal { path: usize },
}

/// One complex peak extracted from one slice.
#[derive(Debug, Clone)]
pub struct PeakReading {
    pub target: ReadingTarget,
    /// Complex amplitude S_ij (for diagonals: the real zero-frequency peak).
    pub amplitude: Complex64,
    /// Zero-frequency amplitude of the slice this reading came from.
    pub slice_dc: f64,
    pub theta_deg: f64,
    /// Group coordinate (rotated-frame source mm).
    pub x_m_mm: f64,
    pub signal_to_background: f64,
    /// Set when the slice looks empty (DC under 5x the background estimate).
    pub flagged: bool,
}

/// All readings from one frame, plus the frame normalization S (the sum of
/// the zero-frequency peaks of every pattern in the frame).
#[derive(Debug, Clone)]
pub struct AngleMeasurement {
    pub theta_deg: f64,
    pub frame_norm: f64,
    pub readings: Vec<PeakReading>,
}

/// Frames for one reconstruction: one per plan angle, plus the direct image.
#[derive(Debug, Clone, Default)]
pub struct FrameSet {
    pub direct: Option<CameraImage>,
    pub oft: Vec<CameraImage>,
}

/// Rotate image content counterclockwise about the frame center by
/// `angle_deg`, resampling bilinearly; samples from outside the frame are 0.
pub fn rotate_image(img: &CameraImage, angle_deg: f64) -> CameraImage {
    let (rows, cols) = img.data.dim();
    let (cx, cy) = img.config.center();
    let (s, c) = angle_deg.to_radians().sin_cos();
    let mut out = Array2::zeros((rows, cols));
    for r in 0..rows {
        let dy = r as f64 - cy;
        for col in 0..cols {
            let dx = col as f64 - cx;
            // Inverse map: source = R(-angle) . (dx, dy).
            let sx = cx + c * dx + s * dy;
            let sy = cy - s * dx + c * dy;
            out[[r, col]] = bilinear(&img.data, sy, sx);
        }
    }
    CameraImage { data: out, ..img.clone() }
}

fn bilinear(data: &Array2<f64>, row: f64, col: f64) -> f64 {
    let (rows, cols) = data.dim();
    if row < 0.0 || col < 0.0 || row > (rows - 1) as f64 || col > (cols - 1) as f64 {
        return 0.0;
    }
    let r0 = row.floor() as usize;
    let c0 = col.floor() as usize;
    let r1 = (r0 + 1).min(rows - 1);
    let c1 = (c0 + 1).min(cols - 1);
    let fr = row - r0 as f64;
    let fc = col - c0 as f64;
    data[[r0, c0]] * (1.0 - fr) * (1.0 - fc)
        + data[[r0, c1]] * (1.0 - fr) * fc
        + data[[r1, c0]] * fr * (1.0 - fc)
        + data[[r1, c1]] * fr * fc
}

/// Column(s) of the frame nearest the camera image of source coordinate
/// `x_m_mm`; width > 1 averages adjacent columns.
pub fn extract_slice(img: &CameraImage, x_m_mm: f64, width: usize) -> Result<Vec<f64>> {
    let cfg = &img.config;
    let (cx, _) = cfg.center();
    let center = cx + cfg.magnification * x_m_mm / cfg.pixel_pitch_mm();
    let col = center.round();
    if col < 0.0 || col as usize >= img.cols() {
        return Err(Error::SliceOutOfFrame { x_mm: x_m_mm });
    }
    let width = width.max(1);
    let lo = (col as isize - (width as isize - 1) / 2).max(0) as usize;
    let hi = (lo + width - 1).min(img.cols() - 1);
    let n = (hi - lo + 1) as f64;
    Ok((0..img.rows())
        .map(|r| (lo..=hi).map(|c| img.data[[r, c]]).sum::<f64>() / n)
        .collect())
}

/// Exact-frequency projection of a slice at source-plane spacing `l_mm`:
/// sum_p slice[p] exp(-i k(p) l M), with k from [`pixel_to_momentum`].
/// No FFT bins are involved, so spacings between bins read out exactly.
/// l = 0 returns the real total intensity of the slice.
pub fn peak_at_frequency(
    slice: &[f64],
    l_mm: f64,
    axis_origin: f64,
    cfg: &OpticalConfig,
) -> Complex64 {
    if l_mm == 0.0 {
        return Complex64::new(slice.iter().sum(), 0.0);
    }
    let l_cam = l_mm.abs() * cfg.magnification;
    let mut acc = Complex64::new(0.0, 0.0);
    for (p, &v) in slice.iter().enumerate() {
        let k = pixel_to_momentum(p as f64, axis_origin, cfg);
        let ph = -k * l_cam;
        acc += Complex64::new(v * ph.cos(), v * ph.sin());
    }
    acc
}

/// Magnitude of the projection over a grid of spacings; a diagnostic
/// spectrum for plots, not used by the reconstruction itself.
pub fn amplitude_spectrum(
    slice: &[f64],
    axis_origin: f64,
    cfg: &OpticalConfig,
    max_l_mm: f64,
    steps: usize,
) -> Vec<(f64, f64)> {
    (0..=steps)
        .map(|s| {
            let l = max_l_mm * s as f64 / steps as f64;
            (l, peak_at_frequency(slice, l, axis_origin, cfg).norm())
        })
        .collect()
}

/// Median of the one-pixel border, as a per-pixel background estimate.
fn background_estimate(img: &CameraImage) -> f64 {
    let (rows, cols) = img.data.dim();
    let mut border = Vec::with_capacity(2 * (rows + cols));
    for c in 0..cols {
        border.push(img.data[[0, c]]);
        border.push(img.data[[rows - 1, c]]);
    }
    for r in 0..rows {
        border.push(img.data[[r, 0]]);
        border.push(img.data[[r, cols - 1]]);
    }
    border.sort_by(|a, b| a.partial_cmp(b).unwrap());
    border[border.len() / 2]
}

/// Read every planned peak out of one frame. Lab-oriented frames are rotated
/// back first so the fringes run along the row axis.
pub fn measure_angle(
    img: &CameraImage,
    theta_deg: f64,
    plan: &MeasurementPlan,
    opts: &ReconstructOptions,
) -> Result<AngleMeasurement> {
    if let Some(t) = img.theta_deg {
        if (t - theta_deg).abs() > ANGLE_MATCH_DEG {
            return Err(Error::ConfigMismatch {
                what: format!("frame angle {t} used for plan angle {theta_deg}"),
            });
        }
    }
    let angle_plan = plan
        .angles
        .iter()
        .find(|a| (a.theta_deg - theta_deg).abs() <= ANGLE_MATCH_DEG)
        .ok_or(Error::MissingAngle { theta_deg })?;

    let rotated;
    let frame = if img.lab_frame {
        rotated = CameraImage { lab_frame: false, ..rotate_image(img, 90.0 - theta_deg) };
        &rotated
    } else {
        img
    };

    let cfg = &frame.config;
    let (_, cy) = cfg.center();
    let width = opts.slice_width.max(1);
    let background = background_estimate(frame);

    let mut readings = Vec::new();
    let mut frame_norm = 0.0;
    for group in &angle_plan.groups {
        let slice = extract_slice(frame, group.x_m, width)?;
        let dc = slice.iter().sum::<f64>();
        frame_norm += dc;
        let bg_slice = background * slice.len() as f64;
        let flagged = dc < 5.0 * bg_slice;
        let snr = dc / bg_slice.max(f64::MIN_POSITIVE);
        if group.members.len() == 1 {
            readings.push(PeakReading {
                target: ReadingTarget::Diagonal { path: group.members[0] },
                amplitude: Complex64::new(dc, 0.0),
                slice_dc: dc,
                theta_deg,
                x_m_mm: group.x_m,
                signal_to_background: snr,
                flagged,
            });
        }
        for pair in &group.pairs {
            let amplitude = peak_at_frequency(&slice, pair.length_mm, cy, cfg);
            readings.push(PeakReading {
                target: ReadingTarget::Pair { i: pair.i, j: pair.j, dy_mm: pair.dy_mm },
                amplitude,
                slice_dc: dc,
                theta_deg,
                x_m_mm: group.x_m,
                signal_to_background: snr,
                flagged,
            });
        }
    }
    Ok(AngleMeasurement { theta_deg, frame_norm, readings })
}

/// Integrate disjoint disks of radius 3 M sigma around each path center of a
/// direct image and normalize to unit sum.
pub fn diagonals_from_direct(
    img: &CameraImage,
    g: &PathGeometry,
    cfg: &OpticalConfig,
) -> Result<Vec<f64>> {
    Ok(direct_disk_sums(img, g, cfg)?.0)
}

fn direct_disk_sums(
    img: &CameraImage,
    g: &PathGeometry,
    cfg: &OpticalConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let gamma = cfg.pixel_pitch_mm();
    let radius_px = 3.0 * cfg.camera_sigma_mm(g.sigma) / gamma;
    let (cx, cy) = cfg.center();
    let centers: Vec<[f64; 2]> = g
        .points
        .iter()
        .map(|p| {
            [
                cx + cfg.magnification * p[0] / gamma,
                cy + cfg.magnification * p[1] / gamma,
            ]
        })
        .collect();
    for i in 0..centers.len() {
        for j in (i + 1)..centers.len() {
            let d = ((centers[i][0] - centers[j][0]).powi(2)
                + (centers[i][1] - centers[j][1]).powi(2))
            .sqrt();
            if d < 2.0 * radius_px {
                return Err(Error::DisksOverlap { i, j });
            }
        }
    }
    let mut sums = vec![0.0; centers.len()];
    for (i, ctr) in centers.iter().enumerate() {
        let r_lo = ((ctr[1] - radius_px).floor().max(0.0)) as usize;
        let r_hi = ((ctr[1] + radius_px).ceil() as usize).min(img.rows() - 1);
        let c_lo = ((ctr[0] - radius_px).floor().max(0.0)) as usize;
        let c_hi = ((ctr[0] + radius_px).ceil() as usize).min(img.cols() - 1);
        for r in r_lo..=r_hi {
            for c in c_lo..=c_hi {
                let d2 = (r as f64 - ctr[1]).powi(2) + (c as f64 - ctr[0]).powi(2);
                if d2 <= radius_px * radius_px {
                    sums[i] += img.data[[r, c]];
                }
            }
        }
    }
    let total: f64 = sums.iter().sum();
    if total <= 0.0 {
        return Err(Error::ConfigMismatch { what: "direct image holds no signal".into() });
    }
    Ok((sums.iter().map(|s| s / total).collect(), sums))
}

/// Per-pair unit phase factors plus the global conjugation choice, learned
/// from two known reference states.
#[derive(Debug, Clone)]
pub struct Calibration {
    factors: BTreeMap<(usize, usize), Complex64>,
    pub conjugate: bool,
    pub reference_labels: [String; 2],
}

impl Calibration {
    pub fn identity() -> Self {
        Self {
            factors: BTreeMap::new(),
            conjugate: false,
            reference_labels: ["identity".into(), "identity".into()],
        }
    }

    pub fn factor(&self, a: usize, b: usize) -> Complex64 {
        self.factors.get(&(a, b)).copied().unwrap_or(Complex64::new(1.0, 0.0))
    }

    /// Apply the global orientation choice and the per-pair factor to a raw
    /// oriented reading destined for matrix slot (a, b).
    pub fn apply(&self, value: Complex64, a: usize, b: usize) -> Complex64 {
        let v = if self.conjugate { value.conj() } else { value };
        v * self.factor(a, b)
    }

    pub fn is_identity(&self) -> bool {
        !self.conjugate && self.factors.is_empty()
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Row {
            i: usize,
            j: usize,
            re: f64,
            im: f64,
        }
        #[derive(Serialize)]
        struct Doc {
            conjugate: bool,
            reference_labels: [String; 2],
            factors: Vec<Row>,
        }
        let doc = Doc {
            conjugate: self.conjugate,
            reference_labels: self.reference_labels.clone(),
            factors: self
                .factors
                .iter()
                .map(|(&(i, j), f)| Row { i, j, re: f.re, im: f.im })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("calibration serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            i: usize,
            j: usize,
            re: f64,
            im: f64,
        }
        #[derive(Deserialize)]
        struct Doc {
            conjugate: bool,
            #[serde(default)]
            reference_labels: Option<[String; 2]>,
            factors: Vec<Row>,
        }
        let doc: Doc = serde_json::from_str(text)?;
        let mut factors = BTreeMap::new();
        for row in doc.factors {
            let f = Complex64::new(row.re, row.im);
            if (f.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::ConfigMismatch {
                    what: format!("calibration factor ({}, {}) not unit magnitude", row.i, row.j),
                });
            }
            factors.insert((row.i, row.j), f);
        }
        Ok(Self {
            factors,
            conjugate: doc.conjugate,
            reference_labels: doc
                .reference_labels
                .unwrap_or(["unknown".into(), "unknown".into()]),
        })
    }
}

/// Oriented, calibrated pair estimates and diagonal estimates pulled from a
/// frame set. Pair values are keyed by the matrix slot (a, b) they estimate.
struct RawEstimates {
    pairs: BTreeMap<(usize, usize), Vec<Complex64>>,
    /// Case-2 diagonal estimates as (value, variance estimate).
    diagonals: Vec<Vec<(f64, f64)>>,
    readings: Vec<PeakReading>,
    flagged: usize,
}

fn collect_estimates(
    frames: &FrameSet,
    plan: &MeasurementPlan,
    cal: &Calibration,
    cfg: &OpticalConfig,
    opts: &ReconstructOptions,
) -> Result<RawEstimates> {
    let d = plan.dim();
    let mut pairs: BTreeMap<(usize, usize), Vec<Complex64>> = BTreeMap::new();
    let mut diagonals: Vec<Vec<(f64, f64)>> = vec![Vec::new(); d];
    let mut readings = Vec::new();
    let mut flagged = 0;

    for frame in &frames.oft {
        if frame.config != *cfg {
            return Err(Error::ConfigMismatch {
                what: "OFT frame config differs from the reconstruction config".into(),
            });
        }
        let theta = frame.theta_deg.ok_or(Error::ConfigMismatch {
            what: "OFT frame carries no lens angle".into(),
        })?;
        let plan_theta = plan
            .angles
            .iter()
            .map(|a| a.theta_deg)
            .find(|t| (t - theta).abs() <= ANGLE_MATCH_DEG);
        let Some(plan_theta) = plan_theta else {
            continue; // frame at an unplanned angle contributes nothing
        };
        let m = measure_angle(frame, plan_theta, plan, opts)?;
        if m.frame_norm <= 0.0 {
            return Err(Error::ConfigMismatch {
                what: format!("frame at {plan_theta} deg holds no signal"),
            });
        }
        for reading in &m.readings {
            if reading.flagged {
                flagged += 1;
            }
            match reading.target {
                ReadingTarget::Pair { i, j, dy_mm } => {
                    // The projection kernel picks out the element whose row
                    // path sits higher along the rotated y axis.
                    let (a, b) = if dy_mm >= 0.0 { (i, j) } else { (j, i) };
                    let value = cal.apply(reading.amplitude / m.frame_norm, a, b);
                    pairs.entry((a, b)).or_default().push(value);
                }
                ReadingTarget::Diagonal { path } => {
                    let value = reading.slice_dc / m.frame_norm;
                    let var = if opts.shot_noise_weights {
                        (reading.slice_dc.max(1.0)) / (m.frame_norm * m.frame_norm)
                    } else {
                        1.0
                    };
                    diagonals[path].push((value, var));
                }
            }
        }
        readings.extend(m.readings);
    }
    Ok(RawEstimates { pairs, diagonals, readings, flagged })
}

fn weighted_mean(values: &[(f64, f64)]) -> (f64, f64) {
    let mut num = 0.0;
    let mut den = 0.0;
    for &(v, var) in values {
        let w = 1.0 / var.max(1e-300);
        num += w * v;
        den += w;
    }
    (num / den, 1.0 / den)
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    /// max over pairs of (|rho_ij| - sqrt(rho_ii rho_jj))+ on the raw estimate.
    pub psd_violation: f64,
    pub min_eigenvalue: f64,
    /// Largest elementwise change the physicality projection made.
    pub projection_residual: f64,
    pub flagged_readings: usize,
    pub frames_used: usize,
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub rho_raw: DensityMatrix,
    pub rho_physical: DensityMatrix,
    pub readings: Vec<PeakReading>,
    pub diagnostics: Diagnostics,
}

impl ReconstructionResult {
    pub fn to_json(&self) -> String {
        let raw: serde_json::Value =
            serde_json::from_str(&self.rho_raw.to_json()).expect("density json");
        let phys: serde_json::Value =
            serde_json::from_str(&self.rho_physical.to_json()).expect("density json");
        let readings: Vec<serde_json::Value> = self
            .readings
            .iter()
            .map(|r| {
                let target = match r.target {
                    ReadingTarget::Pair { i, j, .. } => serde_json::json!({"pair": [i, j]}),
                    ReadingTarget::Diagonal { path } => serde_json::json!({"diagonal": path}),
                };
                serde_json::json!({
                    "target": target,
                    "theta_deg": r.theta_deg,
                    "x_m_mm": r.x_m_mm,
                    "amplitude_re": r.amplitude.re,
                    "amplitude_im": r.amplitude.im,
                    "slice_dc": r.slice_dc,
                    "signal_to_background": r.signal_to_background,
                    "flagged": r.flagged,
                })
            })
            .collect();
        serde_json::to_string_pretty(&serde_json::json!({
            "rho_raw": raw,
            "rho_physical": phys,
            "readings": readings,
            "diagnostics": self.diagnostics,
        }))
        .expect("result serializes")
    }

    /// Per-pair magnitudes and phases of the raw estimate as CSV.
    pub fn to_csv(&self) -> String {
        let d = self.rho_raw.dim();
        let mut out = String::from("i,j,magnitude,phase_deg\n");
        for i in 0..d {
            for j in (i + 1)..d {
                let z = self.rho_raw.element(i, j);
                out.push_str(&format!(
                    "{i},{j},{:.6e},{:.4}\n",
                    z.norm(),
                    z.arg().to_degrees()
                ));
            }
        }
        out
    }
}

/// Assemble the density matrix from a frame set.
///
/// Off-diagonals come from calibrated exact-frequency peaks normalized per
/// frame; diagonals merge Case-2 zero-frequency readings with direct-image
/// disk integrals; Hermitization and trace normalization finish rho_raw, and
/// the physicality projection yields rho_physical.
pub fn reconstruct_state(
    frames: &FrameSet,
    plan: &MeasurementPlan,
    cal: &Calibration,
    cfg: &OpticalConfig,
    opts: &ReconstructOptions,
) -> Result<ReconstructionResult> {
    let d = plan.dim();
    for ap in &plan.angles {
        let covered = frames.oft.iter().any(|f| {
            f.theta_deg
                .map(|t| (t - ap.theta_deg).abs() <= ANGLE_MATCH_DEG)
                .unwrap_or(false)
        });
        if !covered {
            return Err(Error::MissingAngle { theta_deg: ap.theta_deg });
        }
    }

    let est = collect_estimates(frames, plan, cal, cfg, opts)?;

    let mut missing = Vec::new();
    for i in 0..d {
        for j in (i + 1)..d {
            if !est.pairs.contains_key(&(i, j)) && !est.pairs.contains_key(&(j, i)) {
                missing.push((i, j));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::IncompletePlan { pairs: missing });
    }

    let direct = match &frames.direct {
        Some(img) => {
            if img.config != *cfg {
                return Err(Error::ConfigMismatch {
                    what: "direct frame config differs from the reconstruction config".into(),
                });
            }
            let (fractions, counts) = direct_disk_sums(img, &plan.geometry, cfg)?;
            let total: f64 = counts.iter().sum();
            Some((fractions, counts, total))
        }
        None => None,
    };

    let mut diag = vec![0.0; d];
    for (path, diag_slot) in diag.iter_mut().enumerate() {
        let mut candidates: Vec<(f64, f64)> = Vec::new();
        if !est.diagonals[path].is_empty() {
            candidates.push(weighted_mean(&est.diagonals[path]));
        }
        if let Some((fractions, counts, total)) = &direct {
            let var = if opts.shot_noise_weights {
                counts[path].max(1.0) / (total * total)
            } else {
                1.0
            };
            candidates.push((fractions[path], var));
        }
        if candidates.is_empty() {
            return Err(Error::IncompletePlan { pairs: vec![(path, path)] });
        }
        *diag_slot = weighted_mean(&candidates).0;
    }

    let mut raw: Array2<Complex64> = Array2::zeros((d, d));
    for (i, &v) in diag.iter().enumerate() {
        raw[[i, i]] = Complex64::new(v, 0.0);
    }
    for (&(a, b), values) in &est.pairs {
        let mean = values.iter().sum::<Complex64>() / values.len() as f64;
        raw[[a, b]] = mean;
        raw[[b, a]] = mean.conj();
    }

    let rho_raw = DensityMatrix::hermitize(&raw)?;
    let rho_physical = rho_raw.nearest_physical()?;
    let min_eigenvalue = rho_raw.eigenvalues()?[0];
    let projection_residual = (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .map(|(i, j)| (rho_raw.element(i, j) - rho_physical.element(i, j)).norm())
        .fold(0.0, f64::max);

    let diagnostics = Diagnostics {
        psd_violation: rho_raw.psd_violation(),
        min_eigenvalue,
        projection_residual,
        flagged_readings: est.flagged,
        frames_used: frames.oft.len() + frames.direct.is_some() as usize,
    };
    Ok(ReconstructionResult { rho_raw, rho_physical, diagnostics, readings: est.readings })
}

/// A reference acquisition: frames of a known state.
pub struct ReferenceRun<'a> {
    pub frames: &'a FrameSet,
    pub known: &'a DensityMatrix,
    pub label: String,
}

/// Learn per-pair phase factors from the first reference and resolve the
/// global conjugation ambiguity with the second.
///
/// Both references must show every planned coherence at usable weight; the
/// conjugation flag is whichever global choice reconstructs the second
/// reference with higher fidelity.
pub fn calibrate(
    ref1: &ReferenceRun,
    ref2: &ReferenceRun,
    plan: &MeasurementPlan,
    cfg: &OpticalConfig,
    opts: &ReconstructOptions,
) -> Result<Calibration> {
    let est = collect_estimates(ref1.frames, plan, &Calibration::identity(), cfg, opts)?;

    let mut factors_plain = BTreeMap::new();
    let mut factors_conj = BTreeMap::new();
    for (&(a, b), values) in &est.pairs {
        let raw = values.iter().sum::<Complex64>() / values.len() as f64;
        if raw.norm() < MIN_REFERENCE_WEIGHT {
            return Err(Error::UnusableReference {
                i: a.min(b),
                j: a.max(b),
                weight: raw.norm(),
            });
        }
        let known = ref1.known.element(a, b);
        if known.norm() < MIN_REFERENCE_WEIGHT {
            return Err(Error::UnusableReference {
                i: a.min(b),
                j: a.max(b),
                weight: known.norm(),
            });
        }
        let known_phase = known / known.norm();
        let raw_phase = raw / raw.norm();
        factors_plain.insert((a, b), raw_phase.conj() * known_phase);
        factors_conj.insert((a, b), raw_phase * known_phase);
    }

    let labels = [ref1.label.clone(), ref2.label.clone()];
    let plain = Calibration {
        factors: factors_plain,
        conjugate: false,
        reference_labels: labels.clone(),
    };
    let conj = Calibration { factors: factors_conj, conjugate: true, reference_labels: labels };

    let score = |cal: &Calibration| -> Result<f64> {
        let rec = reconstruct_state(ref2.frames, plan, cal, cfg, opts)?;
        rec.rho_physical.fidelity(ref2.known)
    };
    let f_plain = score(&plain)?;
    let f_conj = score(&conj)?;
    Ok(if f_conj > f_plain { conj } else { plain })
}

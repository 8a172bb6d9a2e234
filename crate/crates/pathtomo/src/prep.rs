//! State preparation optics.
//!
//! A single horizontally polarized beam runs through half/quarter waveplates
//! and calcite beam displacers; each displacer shifts one polarization
//! sideways, splitting the beam into spatially separated paths. Tracking the
//! joint (path x polarization) density matrix supports the spinning-waveplate
//! mixer, which turns polarization randomness into path-state mixedness.
//!
//! The camera is polarization blind, so before reading the path state off the
//! joint state the pipeline projects onto diagonal polarization (erasing
//! which-polarization information, as the experiment must) and then traces
//! polarization out.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::density::DensityMatrix;
use crate::error::{Error, Result};
use crate::geometry::PathGeometry;
use crate::linalg::{self, CMat};

/// Positions closer than this merge into one path (1 um).
const POSITION_TOL_MM: f64 = 1e-3;
/// Paths carrying less probability than this are dropped after a displacer.
const PRUNE_WEIGHT: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarization {
    H,
    V,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WaveplateKind {
    Half,
    Quarter,
}

/// Jones matrix of a half-wave plate with fast axis at `theta` degrees:
/// [[cos 2t, sin 2t], [sin 2t, -cos 2t]].
pub fn jones_half(theta_deg: f64) -> CMat {
    let t2 = 2.0 * theta_deg.to_radians();
    let (s, c) = t2.sin_cos();
    ndarray::array![
        [Complex64::new(c, 0.0), Complex64::new(s, 0.0)],
        [Complex64::new(s, 0.0), Complex64::new(-c, 0.0)]
    ]
}

/// Jones matrix of a quarter-wave plate with fast axis at `theta` degrees:
/// [[cos^2 t + i sin^2 t, (1-i) sin t cos t], [(1-i) sin t cos t, sin^2 t + i cos^2 t]].
pub fn jones_quarter(theta_deg: f64) -> CMat {
    let t = theta_deg.to_radians();
    let (s, c) = t.sin_cos();
    let sc = s * c;
    ndarray::array![
        [Complex64::new(c * c, s * s), Complex64::new(sc, -sc)],
        [Complex64::new(sc, -sc), Complex64::new(s * s, c * c)]
    ]
}

/// Joint state of the beam over (path, polarization) modes. Mode index is
/// `2 * path + pol` with H = 0, V = 1.
#[derive(Debug, Clone)]
pub struct PolPathState {
    positions: Vec<[f64; 2]>,
    rho: CMat,
    discarded: f64,
}

impl PolPathState {
    /// A single horizontally polarized path at the origin.
    pub fn single_path_h() -> Self {
        let mut rho: CMat = Array2::zeros((2, 2));
        rho[[0, 0]] = Complex64::new(1.0, 0.0);
        Self { positions: vec![[0.0, 0.0]], rho, discarded: 0.0 }
    }

    /// Build from explicit positions and a joint density matrix
    /// (dimension 2 * positions.len()).
    pub fn from_parts(positions: Vec<[f64; 2]>, rho: CMat) -> Result<Self> {
        let n = 2 * positions.len();
        if rho.nrows() != n || rho.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, got: rho.nrows() });
        }
        for i in 0..positions.len() {
            for j in (i + 1)..positions.len() {
                if dist(positions[i], positions[j]) < POSITION_TOL_MM {
                    return Err(Error::PathCollision {
                        x: positions[i][0],
                        y: positions[i][1],
                    });
                }
            }
        }
        let defect = linalg::hermiticity_defect(&rho);
        if defect > 1e-9 {
            return Err(Error::NotHermitian { i: 0, j: 0, delta: defect });
        }
        let tr = linalg::trace(&rho).re;
        if (tr - 1.0).abs() > 1e-9 {
            return Err(Error::BadTrace { trace: tr, tol: 1e-9 });
        }
        Ok(Self { positions, rho: linalg::hermitian_part(&rho), discarded: 0.0 })
    }

    pub fn num_paths(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    pub fn joint(&self) -> &CMat {
        &self.rho
    }

    /// Probability lost so far to blocking and polarization filtering.
    pub fn discarded_probability(&self) -> f64 {
        self.discarded
    }

    pub fn trace(&self) -> f64 {
        linalg::trace(&self.rho).re
    }

    pub fn purity(&self) -> f64 {
        self.rho.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn path_weight(&self, path: usize) -> f64 {
        self.rho[[2 * path, 2 * path]].re + self.rho[[2 * path + 1, 2 * path + 1]].re
    }

    fn mode(&self, path: usize, pol: Polarization) -> usize {
        2 * path + pol as usize
    }

    /// Apply one waveplate to every path (unitary on the polarization factor).
    pub fn apply_waveplate(&self, kind: WaveplateKind, angle_deg: f64) -> Self {
        let j = match kind {
            WaveplateKind::Half => jones_half(angle_deg),
            WaveplateKind::Quarter => jones_quarter(angle_deg),
        };
        self.apply_polarization_unitary(&j)
    }

    fn apply_polarization_unitary(&self, j: &CMat) -> Self {
        let d = self.num_paths();
        let mut u: CMat = Array2::zeros((2 * d, 2 * d));
        for p in 0..d {
            for a in 0..2 {
                for b in 0..2 {
                    u[[2 * p + a, 2 * p + b]] = j[[a, b]];
                }
            }
        }
        let rho = u.dot(&self.rho).dot(&linalg::dagger(&u));
        Self { positions: self.positions.clone(), rho, discarded: self.discarded }
    }

    /// Beam displacer: every mode carrying `shift_pol` moves by `shift_mm`,
    /// the other polarization stays put. Lossless; errors when a shifted
    /// mode lands on a position belonging to a different source path, since
    /// merging paths is not supported.
    pub fn apply_displacer(&self, shift_pol: Polarization, shift_mm: [f64; 2]) -> Result<Self> {
        let d = self.num_paths();
        let mut new_positions: Vec<[f64; 2]> = Vec::new();
        let mut slot_source: Vec<usize> = Vec::new();
        let mut mode_map = vec![0usize; 2 * d];

        for p in 0..d {
            for pol in [Polarization::H, Polarization::V] {
                let mut target = self.positions[p];
                if pol == shift_pol {
                    target[0] += shift_mm[0];
                    target[1] += shift_mm[1];
                }
                let slot = new_positions
                    .iter()
                    .position(|&q| dist(q, target) < POSITION_TOL_MM)
                    .unwrap_or_else(|| {
                        new_positions.push(target);
                        slot_source.push(p);
                        new_positions.len() - 1
                    });
                if slot_source[slot] != p {
                    return Err(Error::PathCollision { x: target[0], y: target[1] });
                }
                mode_map[self.mode(p, pol)] = 2 * slot + pol as usize;
            }
        }

        let n_new = new_positions.len();
        let mut rho: CMat = Array2::zeros((2 * n_new, 2 * n_new));
        for a in 0..2 * d {
            for b in 0..2 * d {
                rho[[mode_map[a], mode_map[b]]] = self.rho[[a, b]];
            }
        }
        let moved =
            Self { positions: new_positions, rho, discarded: self.discarded };
        Ok(moved.pruned())
    }

    /// Drop paths carrying no probability (slots emptied by a displacer).
    fn pruned(&self) -> Self {
        let keep: Vec<usize> = (0..self.num_paths())
            .filter(|&p| self.path_weight(p) > PRUNE_WEIGHT)
            .collect();
        if keep.len() == self.num_paths() {
            return self.clone();
        }
        self.retain_paths(&keep)
    }

    fn retain_paths(&self, keep: &[usize]) -> Self {
        let positions: Vec<[f64; 2]> = keep.iter().map(|&p| self.positions[p]).collect();
        let n = 2 * keep.len();
        let mut rho: CMat = Array2::zeros((n, n));
        for (a_new, &a_old) in keep.iter().enumerate() {
            for (b_new, &b_old) in keep.iter().enumerate() {
                for s in 0..2 {
                    for t in 0..2 {
                        rho[[2 * a_new + s, 2 * b_new + t]] =
                            self.rho[[2 * a_old + s, 2 * b_old + t]];
                    }
                }
            }
        }
        Self { positions, rho, discarded: self.discarded }
    }

    /// Remove the listed paths and renormalize, recording the discarded
    /// probability.
    pub fn block_paths(&self, indices: &[usize]) -> Result<Self> {
        let d = self.num_paths();
        let mut blocked = vec![false; d];
        for &i in indices {
            if i >= d {
                return Err(Error::BlockIndexOutOfRange { index: i, paths: d });
            }
            blocked[i] = true;
        }
        let keep: Vec<usize> = (0..d).filter(|&p| !blocked[p]).collect();
        if keep.is_empty() {
            return Err(Error::EmptyState);
        }
        let mut out = self.retain_paths(&keep);
        let remaining = out.trace();
        if remaining < PRUNE_WEIGHT {
            return Err(Error::EmptyState);
        }
        out.discarded += (1.0 - out.discarded) * (1.0 - remaining).max(0.0);
        out.rho.mapv_inplace(|z| z / remaining);
        Ok(out)
    }

    /// Average over a uniformly spinning half-wave plate, blockwise on each
    /// path pair's 2x2 polarization block:
    /// [[a, c], [e, b]] -> [[(a+b)/2, -(c-e)/2], [(c-e)/2, (a+b)/2]].
    pub fn spin_average(&self) -> Self {
        let d = self.num_paths();
        let mut rho: CMat = Array2::zeros((2 * d, 2 * d));
        for pi in 0..d {
            for pj in 0..d {
                let a = self.rho[[2 * pi, 2 * pj]];
                let c = self.rho[[2 * pi, 2 * pj + 1]];
                let e = self.rho[[2 * pi + 1, 2 * pj]];
                let b = self.rho[[2 * pi + 1, 2 * pj + 1]];
                let half = (a + b) * 0.5;
                let anti = (c - e) * 0.5;
                rho[[2 * pi, 2 * pj]] = half;
                rho[[2 * pi + 1, 2 * pj + 1]] = half;
                rho[[2 * pi, 2 * pj + 1]] = -anti;
                rho[[2 * pi + 1, 2 * pj]] = anti;
            }
        }
        Self { positions: self.positions.clone(), rho, discarded: self.discarded }
    }

    /// Full mixer: HWP(tau), QWP(45), spinning HWP, QWP(135). tau = 0 leaves
    /// the H/V balance intact; tau = 22.5 erases all polarization.
    pub fn mix_spinning_hwp(&self, tau_deg: f64) -> Self {
        self.apply_waveplate(WaveplateKind::Half, tau_deg)
            .apply_waveplate(WaveplateKind::Quarter, 45.0)
            .spin_average()
            .apply_waveplate(WaveplateKind::Quarter, 135.0)
    }

    /// Project every path onto diagonal polarization (H+V)/sqrt(2) and
    /// renormalize. This erases which-polarization path labels so paths of
    /// different polarization can interfere on a polarization-blind camera.
    pub fn project_polarizer_diagonal(&self) -> Result<Self> {
        let d = self.num_paths();
        let mut rho: CMat = Array2::zeros((2 * d, 2 * d));
        let quarter = Complex64::new(0.25, 0.0);
        for pi in 0..d {
            for pj in 0..d {
                // <D| block |D> spread back over the |D><D| projector.
                let mut inner = Complex64::new(0.0, 0.0);
                for s in 0..2 {
                    for t in 0..2 {
                        inner += self.rho[[2 * pi + s, 2 * pj + t]];
                    }
                }
                for s in 0..2 {
                    for t in 0..2 {
                        rho[[2 * pi + s, 2 * pj + t]] = inner * quarter;
                    }
                }
            }
        }
        let kept = linalg::trace(&rho).re;
        if kept < PRUNE_WEIGHT {
            return Err(Error::EmptyState);
        }
        rho.mapv_inplace(|z| z / kept);
        let mut out = Self { positions: self.positions.clone(), rho, discarded: self.discarded };
        out.discarded += (1.0 - self.discarded) * (1.0 - kept).max(0.0);
        Ok(out.pruned())
    }

    /// Reorder paths by (y, x), the row-major convention used everywhere else.
    pub fn sorted_canonical(&self) -> Self {
        let mut order: Vec<usize> = (0..self.num_paths()).collect();
        order.sort_by_key(|&p| {
            let q = self.positions[p];
            (micron(q[1]), micron(q[0]))
        });
        self.retain_paths(&order)
    }

    /// Sum out polarization: rho_path[i][j] = sum_pol rho[(i,pol),(j,pol)].
    /// Returns the path density matrix and the matching geometry.
    pub fn trace_out_polarization(
        &self,
        sigma_mm: f64,
        label: &str,
    ) -> Result<(DensityMatrix, PathGeometry)> {
        let sorted = self.sorted_canonical();
        let d = sorted.num_paths();
        let mut path_rho: CMat = Array2::zeros((d, d));
        for i in 0..d {
            for j in 0..d {
                path_rho[[i, j]] =
                    sorted.rho[[2 * i, 2 * j]] + sorted.rho[[2 * i + 1, 2 * j + 1]];
            }
        }
        let rho = DensityMatrix::new(path_rho)?;
        let geometry = PathGeometry::new(sorted.positions.clone(), sigma_mm, label)?;
        Ok((rho, geometry))
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn micron(v: f64) -> i64 {
    (v / POSITION_TOL_MM).round() as i64
}

/// Waveplate angles, displacer shifts and blocking for the preparation stage.
/// Angles in degrees, shifts in mm.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepSettings {
    /// First HWP, before the horizontal displacer.
    pub phi_deg: f64,
    /// Plate before the vertical displacer: a QWP unless `zeta_is_half`.
    pub zeta_deg: f64,
    pub zeta_is_half: bool,
    /// HWP before the second horizontal displacer.
    pub omega_deg: f64,
    /// Mixer angle; `None` leaves the spinning-waveplate stage out entirely.
    pub tau_deg: Option<f64>,
    /// Paths to block, as indices into the (y, x)-sorted eight-path layout.
    /// `None` blocks the column at x = `shift_x2_mm`.
    pub blocked: Option<Vec<usize>>,
    pub shift_x_mm: f64,
    pub shift_y_mm: f64,
    pub shift_x2_mm: f64,
    pub sigma_mm: f64,
    /// Uniform attenuation of every path coherence, modeling imperfect
    /// path-length compensation. 1 = no decoherence.
    pub decoherence_factor: f64,
    /// Per-pair overrides (i, j, factor), applied on top of the uniform one.
    pub pair_decoherence: Vec<(usize, usize, f64)>,
}

impl Default for PrepSettings {
    fn default() -> Self {
        Self {
            phi_deg: 22.5,
            zeta_deg: 45.0,
            zeta_is_half: false,
            omega_deg: 22.5,
            tau_deg: None,
            blocked: None,
            shift_x_mm: 2.7,
            shift_y_mm: 2.7,
            shift_x2_mm: 4.0,
            sigma_mm: 0.34,
            decoherence_factor: 1.0,
            pair_decoherence: Vec::new(),
        }
    }
}

impl PrepSettings {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("shift_x_mm", self.shift_x_mm),
            ("shift_y_mm", self.shift_y_mm),
            ("shift_x2_mm", self.shift_x2_mm),
            ("sigma_mm", self.sigma_mm),
        ] {
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::BadConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.decoherence_factor) {
            return Err(Error::BadConfig(format!(
                "decoherence_factor {} outside [0, 1]",
                self.decoherence_factor
            )));
        }
        for &(i, j, f) in &self.pair_decoherence {
            if i == j || !(0.0..=1.0).contains(&f) {
                return Err(Error::BadConfig(format!(
                    "bad pair decoherence ({i}, {j}, {f})"
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("settings serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }
}

fn apply_decoherence(rho: &DensityMatrix, settings: &PrepSettings) -> Result<DensityMatrix> {
    if settings.decoherence_factor == 1.0 && settings.pair_decoherence.is_empty() {
        return Ok(rho.clone());
    }
    let d = rho.dim();
    let mut m = rho.matrix().clone();
    for i in 0..d {
        for j in 0..d {
            if i != j {
                m[[i, j]] *= settings.decoherence_factor;
            }
        }
    }
    for &(i, j, f) in &settings.pair_decoherence {
        if i < d && j < d {
            m[[i, j]] *= f;
            m[[j, i]] *= f;
        }
    }
    DensityMatrix::new(m)
}

/// Run the full preparation chain and return the resulting path state with
/// its geometry:
/// mixer(tau) -> HWP(phi) -> displacer(H, x) -> QWP/HWP(zeta) ->
/// displacer(V, y) -> HWP(omega) -> displacer(H, X) -> block ->
/// diagonal polarizer -> trace out polarization.
pub fn prepare_paper_state(settings: &PrepSettings) -> Result<(DensityMatrix, PathGeometry)> {
    settings.validate()?;
    let mut state = PolPathState::single_path_h();
    if let Some(tau) = settings.tau_deg {
        state = state.mix_spinning_hwp(tau);
    }
    state = state.apply_waveplate(WaveplateKind::Half, settings.phi_deg);
    state = state.apply_displacer(Polarization::H, [settings.shift_x_mm, 0.0])?;
    let zeta_kind = if settings.zeta_is_half {
        WaveplateKind::Half
    } else {
        WaveplateKind::Quarter
    };
    state = state.apply_waveplate(zeta_kind, settings.zeta_deg);
    state = state.apply_displacer(Polarization::V, [0.0, settings.shift_y_mm])?;
    state = state.apply_waveplate(WaveplateKind::Half, settings.omega_deg);
    state = state.apply_displacer(Polarization::H, [settings.shift_x2_mm, 0.0])?;
    state = state.sorted_canonical();

    let blocked: Vec<usize> = match &settings.blocked {
        Some(list) => list.clone(),
        None => (0..state.num_paths())
            .filter(|&p| (state.positions()[p][0] - settings.shift_x2_mm).abs() < POSITION_TOL_MM)
            .collect(),
    };
    if !blocked.is_empty() {
        state = state.block_paths(&blocked)?;
    }
    state = state.project_polarizer_diagonal()?;
    let (rho, geometry) = state.trace_out_polarization(settings.sigma_mm, "prepared")?;
    Ok((apply_decoherence(&rho, settings)?, geometry))
}

/// Four paths on a square: two displacers with all half-wave plates at 22.5
/// degrees. At tau = 22.5 every element magnitude is 0.25 or 0.
pub fn prepare_square_state(side_mm: f64, tau_deg: f64) -> Result<(DensityMatrix, PathGeometry)> {
    if side_mm <= 0.0 || !side_mm.is_finite() {
        return Err(Error::BadConfig(format!("side must be positive, got {side_mm}")));
    }
    let sigma = 0.34_f64.min(side_mm / 8.0);
    let state = PolPathState::single_path_h()
        .mix_spinning_hwp(tau_deg)
        .apply_waveplate(WaveplateKind::Half, 22.5)
        .apply_displacer(Polarization::H, [side_mm, 0.0])?
        .apply_waveplate(WaveplateKind::Half, 22.5)
        .apply_displacer(Polarization::V, [0.0, side_mm])?
        .project_polarizer_diagonal()?;
    state.trace_out_polarization(sigma, "square")
}

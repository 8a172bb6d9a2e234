//! Path-geometry bookkeeping and measurement design.
//!
//! A geometry is the set of transverse path centers plus their common
//! Gaussian width. The tomography interferes one pair of paths per
//! cylindrical-lens angle, so everything here revolves around the pairwise
//! segment table: which angles are needed, whether two segments would land
//! their fringes on top of each other, and how many pixels and lens settings
//! a geometry costs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::OpticalConfig;

/// Two segment lengths or offsets within 1 um are indistinguishable.
pub const LENGTH_TOL_MM: f64 = 1e-3;
/// Two lens angles within this are merged into one setting.
pub const ANGLE_TOL_DEG: f64 = 1e-9;
/// A pair belongs to a lens angle when its own angle matches this closely.
const ANGLE_MATCH_DEG: f64 = 1e-7;

/// Positions of the d path centers in the transverse plane (mm) plus the
/// common Gaussian width sigma (mm).
///
/// Path order is part of the geometry: index i here is row/column i of the
/// density matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathGeometry {
    #[serde(rename = "points_mm")]
    pub points: Vec<[f64; 2]>,
    #[serde(rename = "sigma_mm")]
    pub sigma: f64,
    #[serde(default)]
    pub label: String,
}

impl PathGeometry {
    /// Checked constructor: positions must be distinct and separated by more
    /// than 4 sigma so the paths barely overlap.
    pub fn new(points: Vec<[f64; 2]>, sigma: f64, label: impl Into<String>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidGeometry("no paths".into()));
        }
        if sigma <= 0.0 || !sigma.is_finite() {
            return Err(Error::InvalidGeometry(format!("bad sigma {sigma}")));
        }
        for (i, p) in points.iter().enumerate() {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(Error::NonFinite { i, j: 0 });
            }
        }
        let min_sep = 4.0 * sigma;
        for i in 0..points.len() {
            for j in (i + 1)..points.len() {
                let d = dist(points[i], points[j]);
                if d <= min_sep {
                    return Err(Error::PathsOverlap { i, j, dist: d, min: min_sep });
                }
            }
        }
        Ok(Self { points, sigma, label: label.into() })
    }

    pub fn dim(&self) -> usize {
        self.points.len()
    }

    /// The paper's six-path layout: x in {0, 2.7, 6.7} mm, y in {0, 2.7} mm,
    /// ordered bottom row left to right, then top row.
    pub fn grid_2x3(sigma: f64) -> Self {
        let xs = [0.0, 2.7, 6.7];
        let mut points = Vec::new();
        for &y in &[0.0, 2.7] {
            for &x in &xs {
                points.push([x, y]);
            }
        }
        Self::new(points, sigma, "grid-2x3").unwrap()
    }

    /// All eight displacer outputs, x in {0, 2.7, 4, 6.7} mm: the canonical
    /// invalid geometry (collinear equal-length segments). Its tightest
    /// spacing is 1.3 mm, so sigma must stay below 0.325 mm.
    pub fn grid_2x4(sigma: f64) -> Self {
        let xs = [0.0, 2.7, 4.0, 6.7];
        let mut points = Vec::new();
        for &y in &[0.0, 2.7] {
            for &x in &xs {
                points.push([x, y]);
            }
        }
        Self::new(points, sigma, "grid-2x4").unwrap()
    }

    pub fn square(side: f64, sigma: f64) -> Self {
        let points = vec![[0.0, 0.0], [side, 0.0], [0.0, side], [side, side]];
        Self::new(points, sigma, "square").unwrap()
    }

    /// Positions along the y axis, e.g. a Golomb ruler stood upright.
    pub fn collinear_y(positions: &[f64], sigma: f64) -> Result<Self> {
        Self::new(positions.iter().map(|&y| [0.0, y]).collect(), sigma, "collinear-y")
    }

    /// Rigidly rotate every path center about the origin.
    pub fn rotated(&self, angle_deg: f64) -> Self {
        let (s, c) = angle_deg.to_radians().sin_cos();
        let points = self
            .points
            .iter()
            .map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1]])
            .collect();
        Self { points, sigma: self.sigma, label: self.label.clone() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("geometry serializes")
    }

    /// Parse and re-validate the {"points_mm", "sigma_mm", "label"} layout.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: PathGeometry = serde_json::from_str(text)?;
        Self::new(raw.points, raw.sigma, raw.label)
    }
}

/// The line segment joining paths i < j.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Segment {
    pub i: usize,
    pub j: usize,
    /// |P_i - P_j| in mm.
    pub length_mm: f64,
    /// Direction from +x, reduced to [0, 180) degrees.
    pub angle_deg: f64,
    /// Signed components (x_i - x_j, y_i - y_j) in mm.
    pub dx_mm: f64,
    pub dy_mm: f64,
    /// Canonical id of the infinite line through both centers:
    /// (angle quantized at 1e-9 deg, perpendicular offset quantized at 1 um).
    pub line_id: (i64, i64),
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn canonical_angle_deg(dx: f64, dy: f64) -> f64 {
    let mut a = dy.atan2(dx).to_degrees();
    if a < 0.0 {
        a += 180.0;
    }
    if a >= 180.0 - 0.5 * ANGLE_TOL_DEG {
        a = 0.0;
    }
    a
}

/// Perpendicular offset of the line through `p` at direction `angle_deg`.
fn line_offset(p: [f64; 2], angle_deg: f64) -> f64 {
    let (s, c) = angle_deg.to_radians().sin_cos();
    -s * p[0] + c * p[1]
}

fn angular_distance_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(180.0);
    d.min(180.0 - d)
}

/// All d(d-1)/2 pairwise segments, ordered by (i, j).
pub fn segment_table(g: &PathGeometry) -> Vec<Segment> {
    let d = g.dim();
    let mut out = Vec::with_capacity(d * (d - 1) / 2);
    for i in 0..d {
        for j in (i + 1)..d {
            let dx = g.points[i][0] - g.points[j][0];
            let dy = g.points[i][1] - g.points[j][1];
            let length = (dx * dx + dy * dy).sqrt();
            let angle = canonical_angle_deg(dx, dy);
            let offset = line_offset(g.points[i], angle);
            let line_id = (
                (angle / ANGLE_TOL_DEG).round() as i64,
                (offset / LENGTH_TOL_MM).round() as i64,
            );
            out.push(Segment {
                i,
                j,
                length_mm: length,
                angle_deg: angle,
                dx_mm: dx,
                dy_mm: dy,
                line_id,
            });
        }
    }
    out
}

/// Unique segment angles modulo 180 degrees, sorted, merged within 1e-9 deg.
pub fn angle_set(g: &PathGeometry) -> Vec<f64> {
    let mut angles: Vec<f64> = segment_table(g).iter().map(|s| s.angle_deg).collect();
    angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut out: Vec<f64> = Vec::new();
    for a in angles {
        match out.last() {
            Some(&last) if (a - last).abs() <= ANGLE_TOL_DEG => {}
            _ => out.push(a),
        }
    }
    // 180-degree wraparound: an angle just below 180 is the same direction as 0.
    if out.len() > 1 {
        let (&first, &last) = (out.first().unwrap(), out.last().unwrap());
        if (first + 180.0 - last).abs() <= ANGLE_TOL_DEG {
            out.pop();
        }
    }
    out
}

fn same_line(a: &Segment, b: &Segment, oa: f64, ob: f64) -> bool {
    if angular_distance_deg(a.angle_deg, b.angle_deg) > ANGLE_TOL_DEG {
        return false;
    }
    // Offsets are signed against each segment's own normal; near the 0/180
    // wraparound the normals point opposite ways.
    let wrapped = (a.angle_deg - b.angle_deg).abs() > 90.0;
    if wrapped {
        (oa + ob).abs() <= LENGTH_TOL_MM
    } else {
        (oa - ob).abs() <= LENGTH_TOL_MM
    }
}

/// A pair of segments that share a line and a length, so their fringe peaks
/// would be indistinguishable.
#[derive(Debug, Clone, Serialize)]
pub struct Collision {
    pub seg_a: (usize, usize),
    pub seg_b: (usize, usize),
    pub angle_deg: f64,
    pub length_mm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidityReport {
    pub pass: bool,
    pub collisions: Vec<Collision>,
    /// Per path: does some lens angle leave it alone on its line, so its
    /// diagonal can be read from a zero-frequency peak (Case 2)?
    pub diagonal_recoverable: Vec<bool>,
    /// True when some diagonal is never recoverable from a lens frame and a
    /// direct (no-lens) image is mandatory.
    pub direct_image_required: bool,
}

impl std::fmt::Display for ValidityReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.pass {
            writeln!(f, "PASS: no two segments share a line and a length")?;
        } else {
            writeln!(f, "FAIL: {} colliding segment pair(s)", self.collisions.len())?;
            for c in &self.collisions {
                writeln!(
                    f,
                    "  ({},{}) and ({},{}): same line at {:.4} deg, equal length {:.4} mm",
                    c.seg_a.0, c.seg_a.1, c.seg_b.0, c.seg_b.1, c.angle_deg, c.length_mm
                )?;
            }
        }
        if self.direct_image_required {
            let missing: Vec<usize> = self
                .diagonal_recoverable
                .iter()
                .enumerate()
                .filter(|(_, &ok)| !ok)
                .map(|(i, _)| i)
                .collect();
            writeln!(
                f,
                "direct image required: paths {missing:?} never sit alone on their line"
            )?;
        }
        Ok(())
    }
}

/// Check the cylindrical-lens condition: no two distinct segments may share
/// both their supporting line and their length.
pub fn validate_geometry(g: &PathGeometry) -> ValidityReport {
    let segs = segment_table(g);
    let offsets: Vec<f64> = segs
        .iter()
        .map(|s| line_offset(g.points[s.i], s.angle_deg))
        .collect();
    let mut collisions = Vec::new();
    for a in 0..segs.len() {
        for b in (a + 1)..segs.len() {
            let (sa, sb) = (&segs[a], &segs[b]);
            if (sa.length_mm - sb.length_mm).abs() <= LENGTH_TOL_MM
                && same_line(sa, sb, offsets[a], offsets[b])
            {
                collisions.push(Collision {
                    seg_a: (sa.i, sa.j),
                    seg_b: (sb.i, sb.j),
                    angle_deg: sa.angle_deg,
                    length_mm: sa.length_mm,
                });
            }
        }
    }

    let d = g.dim();
    let mut diagonal_recoverable = vec![false; d];
    for &theta in &angle_set(g) {
        let groups = group_by_rotated_x(g, theta);
        for grp in &groups {
            if grp.len() == 1 {
                diagonal_recoverable[grp[0]] = true;
            }
        }
    }
    let direct_image_required = !diagonal_recoverable.iter().all(|&b| b);

    ValidityReport {
        pass: collisions.is_empty(),
        collisions,
        diagonal_recoverable,
        direct_image_required,
    }
}

/// Rotate points so the lens axis for `theta` lies along +y, then cluster by
/// the untransformed coordinate x'. Returns clusters of path indices.
fn group_by_rotated_x(g: &PathGeometry, theta_deg: f64) -> Vec<Vec<usize>> {
    let alpha = (90.0 - theta_deg).to_radians();
    let (s, c) = alpha.sin_cos();
    let mut xs: Vec<(f64, usize)> = g
        .points
        .iter()
        .enumerate()
        .map(|(idx, p)| (c * p[0] - s * p[1], idx))
        .collect();
    xs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut last_x = f64::NEG_INFINITY;
    for (x, idx) in xs {
        if (x - last_x).abs() <= LENGTH_TOL_MM {
            groups.last_mut().unwrap().push(idx);
        } else {
            groups.push(vec![idx]);
        }
        last_x = x;
    }
    groups
}

/// One pair to read out at a given lens angle: paths i < j interfere with
/// fringe spacing parameter `length_mm`; `dy_mm` is the signed separation
/// y'_i - y'_j along the lens axis in the rotated frame.
#[derive(Debug, Clone, Serialize)]
pub struct PlannedPair {
    pub i: usize,
    pub j: usize,
    pub length_mm: f64,
    pub dy_mm: f64,
}

/// Paths sharing one untransformed coordinate x_m at a lens angle.
#[derive(Debug, Clone, Serialize)]
pub struct PlanGroup {
    /// Rotated-frame transverse coordinate of the cluster (source-plane mm).
    pub x_m: f64,
    pub members: Vec<usize>,
    /// Case 1 entries: interfering pairs with their expected spacings.
    pub pairs: Vec<PlannedPair>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnglePlan {
    pub theta_deg: f64,
    pub groups: Vec<PlanGroup>,
}

/// Per-lens-angle extraction schedule plus the direct-image diagonal plan
/// (the geometry itself).
#[derive(Debug, Clone, Serialize)]
pub struct MeasurementPlan {
    pub geometry: PathGeometry,
    pub angles: Vec<AnglePlan>,
}

impl MeasurementPlan {
    pub fn dim(&self) -> usize {
        self.geometry.dim()
    }

    /// Indices of every planned Case-1 pair, for coverage checks.
    pub fn covered_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for ap in &self.angles {
            for grp in &ap.groups {
                for p in &grp.pairs {
                    out.push((p.i, p.j));
                }
            }
        }
        out
    }
}

/// Build the extraction schedule for a valid geometry: for every lens angle,
/// rotate the paths so that angle lies along +y, cluster by x', and record
/// Case-1 pairs (clusters of 2+) and Case-2 singleton diagonals.
pub fn plan_measurements(g: &PathGeometry) -> Result<MeasurementPlan> {
    let report = validate_geometry(g);
    if !report.pass {
        return Err(Error::InvalidGeometry(report.to_string()));
    }
    let d = g.dim();
    let mut seen = vec![false; d * d];
    let mut angles = Vec::new();
    for &theta in &angle_set(g) {
        let alpha = (90.0 - theta).to_radians();
        let (s, c) = alpha.sin_cos();
        let rot = |p: [f64; 2]| [c * p[0] - s * p[1], s * p[0] + c * p[1]];
        let mut groups = Vec::new();
        for member_idxs in group_by_rotated_x(g, theta) {
            let pts: Vec<[f64; 2]> = member_idxs.iter().map(|&i| rot(g.points[i])).collect();
            let x_m = pts.iter().map(|p| p[0]).sum::<f64>() / pts.len() as f64;
            let mut pairs = Vec::new();
            for a in 0..member_idxs.len() {
                for b in (a + 1)..member_idxs.len() {
                    let (mut i, mut j) = (member_idxs[a], member_idxs[b]);
                    let (mut pi, mut pj) = (pts[a], pts[b]);
                    if i > j {
                        std::mem::swap(&mut i, &mut j);
                        std::mem::swap(&mut pi, &mut pj);
                    }
                    let seg_angle = canonical_angle_deg(
                        g.points[i][0] - g.points[j][0],
                        g.points[i][1] - g.points[j][1],
                    );
                    if angular_distance_deg(seg_angle, theta) > ANGLE_MATCH_DEG {
                        // Clustered by coincidence; this pair reads out at its
                        // own angle instead.
                        continue;
                    }
                    let dy = pi[1] - pj[1];
                    if seen[i * d + j] {
                        continue;
                    }
                    seen[i * d + j] = true;
                    pairs.push(PlannedPair { i, j, length_mm: dy.abs(), dy_mm: dy });
                }
            }
            groups.push(PlanGroup { x_m, members: member_idxs, pairs });
        }
        angles.push(AnglePlan { theta_deg: theta, groups });
    }

    let mut missing = Vec::new();
    for i in 0..d {
        for j in (i + 1)..d {
            if !seen[i * d + j] {
                missing.push((i, j));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::IncompletePlan { pairs: missing });
    }
    Ok(MeasurementPlan { geometry: g.clone(), angles })
}

/// Erdos-Turan Golomb ruler: d positions with all pairwise differences
/// distinct, x_{i+1} = L_min (2 d i + (i^2 mod d)) for i = 0..d-1.
/// Defined for odd prime d.
pub fn golomb_ruler(d: usize, l_min: f64) -> Result<Vec<f64>> {
    if !is_odd_prime(d) {
        return Err(Error::NotOddPrime { d });
    }
    Ok((0..d)
        .map(|i| (2 * d * i + (i * i) % d) as f64 * l_min)
        .collect())
}

fn is_odd_prime(d: usize) -> bool {
    if d < 3 || d.is_multiple_of(2) {
        return false;
    }
    let mut k = 3;
    while k * k <= d {
        if d.is_multiple_of(k) {
            return false;
        }
        k += 2;
    }
    true
}

/// True iff every segment vector is unique (orientation and length, with
/// +/-v identified), i.e. the geometry is a non-redundant configuration and
/// a spherical lens would already separate all pairs.
pub fn is_nonredundant_rectangle(g: &PathGeometry) -> bool {
    let mut vecs: Vec<[f64; 2]> = segment_table(g)
        .iter()
        .map(|s| {
            let (dx, dy) = (s.dx_mm, s.dy_mm);
            if dx < 0.0 || (dx == 0.0 && dy < 0.0) {
                [-dx, -dy]
            } else {
                [dx, dy]
            }
        })
        .collect();
    vecs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for a in 0..vecs.len() {
        for b in (a + 1)..vecs.len() {
            if (vecs[a][0] - vecs[b][0]).abs() <= LENGTH_TOL_MM
                && (vecs[a][1] - vecs[b][1]).abs() <= LENGTH_TOL_MM
            {
                return false;
            }
        }
    }
    true
}

/// Lens settings, spacing extremes and sampling limits for running the
/// tomography of `g` through the optics in `cfg`.
#[derive(Debug, Clone, Serialize)]
pub struct ResourceReport {
    /// Number of lens settings (unique segment angles).
    pub eta: usize,
    /// Upper bound d(d-1)/2: one setting per off-diagonal element.
    pub eta_bound: usize,
    /// Source-plane spacing extremes (mm).
    pub l_min_mm: f64,
    pub l_max_mm: f64,
    /// Spacing extremes at the camera after magnification (mm).
    pub l_min_camera_mm: f64,
    pub l_max_camera_mm: f64,
    /// Largest camera-plane spacing whose fringes the pixel pitch still
    /// samples cleanly: lambda f / (pi gamma), in mm.
    pub nyquist_limit_mm: f64,
    pub nyquist_ok: bool,
    /// Pixels per axis needed to hold the coarsest and finest fringes,
    /// N > L_max / L_min.
    pub required_pixels: usize,
    /// How many closely packed paths the same span could hold.
    pub d_max_estimate: f64,
}

impl std::fmt::Display for ResourceReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "lens settings eta: {} (bound {})", self.eta, self.eta_bound)?;
        writeln!(
            f,
            "spacings: {:.4}..{:.4} mm source, {:.4}..{:.4} mm camera",
            self.l_min_mm, self.l_max_mm, self.l_min_camera_mm, self.l_max_camera_mm
        )?;
        writeln!(
            f,
            "Nyquist limit: {:.4} mm ({})",
            self.nyquist_limit_mm,
            if self.nyquist_ok { "ok" } else { "VIOLATED" }
        )?;
        writeln!(f, "required pixels per axis: > {}", self.required_pixels)?;
        write!(f, "d_max estimate: {:.1}", self.d_max_estimate)
    }
}

pub fn resource_report(g: &PathGeometry, cfg: &OpticalConfig) -> ResourceReport {
    let segs = segment_table(g);
    let l_min = segs.iter().map(|s| s.length_mm).fold(f64::INFINITY, f64::min);
    let l_max = segs.iter().map(|s| s.length_mm).fold(0.0, f64::max);
    let d = g.dim();
    let eta = angle_set(g).len();
    let nyquist_limit = cfg.wavelength_mm() * cfg.oft_focal_mm
        / (std::f64::consts::PI * cfg.pixel_pitch_mm());
    ResourceReport {
        eta,
        eta_bound: d * (d - 1) / 2,
        l_min_mm: l_min,
        l_max_mm: l_max,
        l_min_camera_mm: l_min * cfg.magnification,
        l_max_camera_mm: l_max * cfg.magnification,
        nyquist_limit_mm: nyquist_limit,
        nyquist_ok: l_max * cfg.magnification < nyquist_limit,
        required_pixels: (l_max / l_min).ceil() as usize,
        d_max_estimate: l_max / l_min,
    }
}

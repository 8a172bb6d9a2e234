//! Density matrices over the d-path space: purity, fidelity, physicality
//! projection, random test states and JSON persistence.

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};

const HERMITICITY_TOL: f64 = 1e-9;
const TRACE_TOL: f64 = 1e-12;
/// Inputs with eigenvalues above this floor count as physical up to noise.
const PHYSICAL_EIG_TOL: f64 = -1e-9;

/// A d x d Hermitian unit-trace matrix.
///
/// Hermiticity and unit trace are enforced on construction; positive
/// semi-definiteness is deliberately not, since linear reconstructions can
/// produce slightly unphysical estimates. Use [`DensityMatrix::nearest_physical`]
/// to project onto the physical set.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    mat: CMat,
}

impl DensityMatrix {
    /// Strict constructor: rejects non-Hermitian or badly normalized input.
    pub fn new(mat: CMat) -> Result<Self> {
        let n = mat.nrows();
        if n == 0 || n != mat.ncols() {
            return Err(Error::NotSquare { rows: n, cols: mat.ncols() });
        }
        check_finite(&mat)?;
        for i in 0..n {
            for j in i..n {
                let d = (mat[[i, j]] - mat[[j, i]].conj()).norm();
                if d > HERMITICITY_TOL {
                    return Err(Error::NotHermitian { i, j, delta: d });
                }
            }
        }
        let mat = linalg::hermitian_part(&mat);
        let tr = linalg::trace(&mat).re;
        if (tr - 1.0).abs() > 1e-9 {
            return Err(Error::BadTrace { trace: tr, tol: 1e-9 });
        }
        // Snap the trace exactly onto 1 so downstream invariants hold at 1e-12.
        Ok(Self { mat: mat.mapv(|z| z / tr) })
    }

    /// Symmetrize an arbitrary complex matrix as (raw + raw^dagger)/2 and
    /// normalize its trace to one.
    pub fn hermitize(raw: &CMat) -> Result<Self> {
        let n = raw.nrows();
        if n == 0 || n != raw.ncols() {
            return Err(Error::NotSquare { rows: n, cols: raw.ncols() });
        }
        check_finite(raw)?;
        let h = linalg::hermitian_part(raw);
        let tr = linalg::trace(&h).re;
        if tr.abs() < TRACE_TOL {
            return Err(Error::Unnormalizable { trace: tr });
        }
        Ok(Self { mat: h.mapv(|z| z / tr) })
    }

    /// Rank-1 projector onto the given (not necessarily normalized) amplitudes.
    pub fn pure(amplitudes: &[Complex64]) -> Result<Self> {
        let d = amplitudes.len();
        let norm_sq: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if d == 0 || norm_sq < TRACE_TOL {
            return Err(Error::Unnormalizable { trace: norm_sq });
        }
        let mut mat: CMat = Array2::zeros((d, d));
        for i in 0..d {
            for j in 0..d {
                mat[[i, j]] = amplitudes[i] * amplitudes[j].conj() / norm_sq;
            }
        }
        Ok(Self { mat })
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        let mut mat: CMat = Array2::zeros((dim, dim));
        for i in 0..dim {
            mat[[i, i]] = Complex64::new(1.0 / dim as f64, 0.0);
        }
        Self { mat }
    }

    /// Reproducible random physical state of the requested rank, built from a
    /// seeded complex Gaussian factor G as G G^dagger / Tr.
    pub fn random(dim: usize, rank: usize, seed: u64) -> Result<Self> {
        if rank == 0 || rank > dim {
            return Err(Error::RankOutOfRange { rank, dim });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g: CMat = Array2::zeros((dim, rank));
        for i in 0..dim {
            for k in 0..rank {
                g[[i, k]] = Complex64::new(gauss(&mut rng), gauss(&mut rng));
            }
        }
        let gg = g.dot(&linalg::dagger(&g));
        let tr = linalg::trace(&gg).re;
        Ok(Self { mat: gg.mapv(|z| z / tr) })
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.mat
    }

    pub fn element(&self, i: usize, j: usize) -> Complex64 {
        self.mat[[i, j]]
    }

    /// Tr(rho^2) = sum |rho_ij|^2. One for pure states, 1/d for the
    /// maximally mixed state.
    pub fn purity(&self) -> f64 {
        self.mat.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        Ok(linalg::eigh(&self.mat)?.0)
    }

    /// Uhlmann fidelity Tr sqrt(sqrt(rho) sigma sqrt(rho)), via Hermitian
    /// spectral square roots. Symmetric in its arguments; one iff equal.
    pub fn fidelity(&self, other: &Self) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: other.dim() });
        }
        let sqrt_self = sqrt_psd(&self.mat)?;
        let inner = sqrt_self.dot(other.matrix()).dot(&sqrt_self);
        let (vals, _) = linalg::eigh(&inner)?;
        // Eigenvalues at the noise floor are true zeros of rank-deficient
        // states; sqrt would amplify their noise to ~1e-8.
        let floor = 1e-14 * vals.last().copied().unwrap_or(0.0).max(0.0);
        let f: f64 = vals.iter().map(|&l| if l > floor { l.sqrt() } else { 0.0 }).sum();
        Ok(f.min(1.0))
    }

    /// Project onto the physical set: clip negative eigenvalues at zero and
    /// renormalize the trace. Idempotent; the identity on physical input.
    pub fn nearest_physical(&self) -> Result<Self> {
        let (vals, vecs) = linalg::eigh(&self.mat)?;
        let clipped: Vec<f64> = vals.iter().map(|&l| l.max(0.0)).collect();
        let total: f64 = clipped.iter().sum();
        if total < TRACE_TOL {
            return Err(Error::DegenerateInput);
        }
        let mat = linalg::assemble(&clipped, &vecs, |l| l / total);
        Ok(Self { mat: linalg::hermitian_part(&mat) })
    }

    /// Smallest eigenvalue at or above -1e-12, up to numerical noise.
    pub fn is_physical(&self) -> Result<bool> {
        Ok(self.eigenvalues()?[0] >= -1e-12)
    }

    /// Largest elementwise violation of |rho_ij| <= sqrt(rho_ii rho_jj),
    /// clamped at zero. Zero for every positive semi-definite matrix.
    pub fn psd_violation(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0_f64;
        for i in 0..d {
            for j in (i + 1)..d {
                let bound = (self.mat[[i, i]].re.max(0.0) * self.mat[[j, j]].re.max(0.0)).sqrt();
                let v = self.mat[[i, j]].norm() - bound;
                if v > worst {
                    worst = v;
                }
            }
        }
        worst
    }

    /// Serialize as {"dim", "re", "im"} with 17 significant digits.
    pub fn to_json(&self) -> String {
        let d = self.dim();
        let fmt_rows = |imag: bool| -> String {
            (0..d)
                .map(|i| {
                    let row = (0..d)
                        .map(|j| {
                            let z = self.mat[[i, j]];
                            format!("{:.16e}", if imag { z.im } else { z.re })
                        })
                        .collect::<Vec<_>>()
                        .join(", ");
                    format!("    [{row}]")
                })
                .collect::<Vec<_>>()
                .join(",\n")
        };
        format!(
            "{{\n  \"dim\": {d},\n  \"re\": [\n{}\n  ],\n  \"im\": [\n{}\n  ]\n}}\n",
            fmt_rows(false),
            fmt_rows(true)
        )
    }

    /// Parse and validate the {"dim", "re", "im"} layout, reporting the first
    /// offending index on Hermiticity or trace violations.
    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(serde::Deserialize)]
        struct Raw {
            dim: usize,
            re: Vec<Vec<f64>>,
            im: Vec<Vec<f64>>,
        }
        let raw: Raw = serde_json::from_str(text)?;
        let d = raw.dim;
        if d == 0 || raw.re.len() != d || raw.im.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: raw.re.len() });
        }
        let mut mat: CMat = Array2::zeros((d, d));
        for i in 0..d {
            if raw.re[i].len() != d || raw.im[i].len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: raw.re[i].len() });
            }
            for j in 0..d {
                mat[[i, j]] = Complex64::new(raw.re[i][j], raw.im[i][j]);
            }
        }
        Self::new(mat)
    }
}

/// sqrt of a Hermitian PSD matrix; eigenvalues in [-1e-9, 0) are treated as
/// zero, anything lower is rejected as unphysical.
fn sqrt_psd(m: &CMat) -> Result<CMat> {
    let (vals, vecs) = linalg::eigh(m)?;
    if vals[0] < PHYSICAL_EIG_TOL {
        return Err(Error::UnphysicalInput { min_eig: vals[0] });
    }
    let floor = 1e-14 * vals.last().copied().unwrap_or(0.0).max(0.0);
    Ok(linalg::assemble(&vals, &vecs, |l| if l > floor { l.sqrt() } else { 0.0 }))
}

fn check_finite(m: &CMat) -> Result<()> {
    for ((i, j), z) in m.indexed_iter() {
        if !z.re.is_finite() || !z.im.is_finite() {
            return Err(Error::NonFinite { i, j });
        }
    }
    Ok(())
}

fn gauss(rng: &mut impl Rng) -> f64 {
    // Box-Muller; a dedicated sampler is not worth a dependency here.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    (-2.0 * u1.ln()).sqrt() * u2.cos()
}

//! Dense complex-matrix helpers and a Hermitian eigensolver.
//!
//! Path-state dimensions are tiny (d <= 16), so a cyclic Jacobi sweep is
//! accurate to machine precision and avoids any external LAPACK dependency.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = Array2<Complex64>;

pub fn dagger(m: &CMat) -> CMat {
    m.t().mapv(|z| z.conj())
}

pub fn trace(m: &CMat) -> Complex64 {
    m.diag().sum()
}

/// Largest |m_ij - conj(m_ji)| over all element pairs.
pub fn hermiticity_defect(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            let d = (m[[i, j]] - m[[j, i]].conj()).norm();
            if d > worst {
                worst = d;
            }
        }
    }
    worst
}

/// (m + m^dagger) / 2
pub fn hermitian_part(m: &CMat) -> CMat {
    let mut out = m.clone();
    let n = m.nrows();
    for i in 0..n {
        for j in 0..n {
            out[[i, j]] = (m[[i, j]] + m[[j, i]].conj()) * 0.5;
        }
    }
    out
}

/// Eigendecomposition of a Hermitian matrix by cyclic complex Jacobi rotations.
///
/// Returns eigenvalues in ascending order with matching orthonormal
/// eigenvector columns, so that `a = v diag(vals) v^dagger`.
pub fn eigh(a: &CMat) -> Result<(Vec<f64>, CMat)> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::NotSquare { rows: n, cols: a.ncols() });
    }
    let mut m = hermitian_part(a);
    let mut v: CMat = Array2::eye(n);
    if n == 1 {
        return Ok((vec![m[[0, 0]].re], v));
    }

    let scale: f64 = m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt().max(1e-300);
    const MAX_SWEEPS: usize = 128;
    for sweep in 0..=MAX_SWEEPS {
        let off: f64 = {
            let mut s = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    s += m[[i, j]].norm_sqr();
                }
            }
            s.sqrt()
        };
        if off <= 1e-15 * scale {
            break;
        }
        if sweep == MAX_SWEEPS {
            return Err(Error::EigenNonConvergence { sweeps: MAX_SWEEPS });
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.norm() <= 1e-300 {
                    continue;
                }
                // Writing m[p][q] = r * phase, the unitary
                //   G = [[c, s], [-s*conj(phase), c*conj(phase)]]
                // (columns indexed p, q) annihilates the (p,q) entry when
                // tan(2 theta) = 2r / (m_qq - m_pp), the classic Jacobi angle.
                let app = m[[p, p]].re;
                let aqq = m[[q, q]].re;
                let r = apq.norm();
                let phase = apq / r;
                let tau = (aqq - app) / (2.0 * r);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let sp = phase * s;
                let cp = phase * c;

                // M <- M G, V <- V G.
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = mkp * c - mkq * sp.conj();
                    m[[k, q]] = mkp * s + mkq * cp.conj();
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = vkp * c - vkq * sp.conj();
                    v[[k, q]] = vkp * s + vkq * cp.conj();
                }
                // M <- G^dagger M.
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = mpk * c - mqk * sp;
                    m[[q, k]] = mpk * s + mqk * cp;
                }
                m[[p, q]] = Complex64::new(0.0, 0.0);
                m[[q, p]] = Complex64::new(0.0, 0.0);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let vals: Vec<f64> = (0..n).map(|i| m[[i, i]].re).collect();
    order.sort_by(|&i, &j| vals[i].partial_cmp(&vals[j]).unwrap());
    let sorted_vals: Vec<f64> = order.iter().map(|&i| vals[i]).collect();
    let mut sorted_vecs: CMat = Array2::zeros((n, n));
    for (new, &old) in order.iter().enumerate() {
        for k in 0..n {
            sorted_vecs[[k, new]] = v[[k, old]];
        }
    }
    Ok((sorted_vals, sorted_vecs))
}

/// v diag(f(vals)) v^dagger
pub fn assemble(vals: &[f64], vecs: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let n = vals.len();
    let mut out: CMat = Array2::zeros((n, n));
    for (k, &lam) in vals.iter().enumerate() {
        let w = f(lam);
        if w == 0.0 {
            continue;
        }
        for i in 0..n {
            for j in 0..n {
                out[[i, j]] += vecs[[i, k]] * vecs[[j, k]].conj() * w;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(n: usize, seed: u64) -> CMat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m: CMat = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                m[[i, j]] = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
        hermitian_part(&m)
    }

    #[test]
    fn eigh_diagonal_passthrough() {
        let m = array![
            [Complex64::new(3.0, 0.0), Complex64::new(0.0, 0.0)],
            [Complex64::new(0.0, 0.0), Complex64::new(-1.0, 0.0)]
        ];
        let (vals, _) = eigh(&m).unwrap();
        assert!((vals[0] + 1.0).abs() < 1e-14);
        assert!((vals[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn eigh_known_pauli_y() {
        // sigma_y has eigenvalues -1, +1.
        let m = array![
            [Complex64::new(0.0, 0.0), Complex64::new(0.0, -1.0)],
            [Complex64::new(0.0, 1.0), Complex64::new(0.0, 0.0)]
        ];
        let (vals, vecs) = eigh(&m).unwrap();
        assert!((vals[0] + 1.0).abs() < 1e-14);
        assert!((vals[1] - 1.0).abs() < 1e-14);
        // Residual ||A v - lambda v||
        for k in 0..2 {
            for i in 0..2 {
                let mut av = Complex64::new(0.0, 0.0);
                for j in 0..2 {
                    av += m[[i, j]] * vecs[[j, k]];
                }
                assert!((av - vecs[[i, k]] * vals[k]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn eigh_reconstructs_random_matrices() {
        for seed in 0..8 {
            let n = 2 + (seed as usize % 7);
            let m = random_hermitian(n, seed);
            let (vals, vecs) = eigh(&m).unwrap();
            let rebuilt = assemble(&vals, &vecs, |x| x);
            for i in 0..n {
                for j in 0..n {
                    assert!(
                        (rebuilt[[i, j]] - m[[i, j]]).norm() < 1e-12,
                        "seed {seed} entry ({i},{j})"
                    );
                }
            }
            // Orthonormality.
            let gram = dagger(&vecs).dot(&vecs);
            for i in 0..n {
                for j in 0..n {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((gram[[i, j]] - expect).norm() < 1e-12);
                }
            }
            // Ascending order.
            for w in vals.windows(2) {
                assert!(w[0] <= w[1] + 1e-14);
            }
        }
    }
}

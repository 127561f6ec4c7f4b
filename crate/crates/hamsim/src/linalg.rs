//! Dense linear-algebra helpers shared across the engine.
//!
//! Everything here is deterministic: power iterations start from fixed ramp
//! vectors rather than random probes, so repeated runs produce identical
//! diagnostics.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub fn to_complex(a: &DMatrix<f64>) -> CMatrix {
    a.map(|v| C64::new(v, 0.0))
}

/// Induced 1-norm (max absolute column sum).
pub fn one_norm(a: &DMatrix<f64>) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn one_norm_c(a: &CMatrix) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn ramp_vector(n: usize) -> DVector<f64> {
    DVector::from_fn(n, |i, _| 1.0 + ((i as f64) * 0.7391).sin() * 0.5)
}

fn ramp_vector_c(n: usize) -> CVector {
    CVector::from_fn(n, |i, _| {
        C64::new(
            1.0 + ((i as f64) * 0.7391).sin() * 0.5,
            ((i as f64) * 0.3321).cos() * 0.5,
        )
    })
}

/// Spectral norm estimate by power iteration on AᵀA.
///
/// Deterministic start vector; 120 iterations with an early exit once the
/// Rayleigh quotient settles to 1e-13 relative.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    let mut v = ramp_vector(a.ncols());
    v /= v.norm();
    let mut sigma = 0.0;
    for _ in 0..120 {
        let w = a * &v;
        let u = a.transpose() * w;
        let nu = u.norm();
        if nu == 0.0 {
            return 0.0;
        }
        let new_sigma = nu.sqrt();
        v = u / nu;
        if (new_sigma - sigma).abs() <= 1e-13 * new_sigma.max(1.0) {
            return new_sigma;
        }
        sigma = new_sigma;
    }
    sigma
}

pub fn spectral_norm_c(a: &CMatrix) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    let mut v = ramp_vector_c(a.ncols());
    v /= C64::new(v.norm(), 0.0);
    let mut sigma = 0.0;
    for _ in 0..120 {
        let w = a * &v;
        let u = a.adjoint() * w;
        let nu = u.norm();
        if nu == 0.0 {
            return 0.0;
        }
        let new_sigma = nu.sqrt();
        v = u / C64::new(nu, 0.0);
        if (new_sigma - sigma).abs() <= 1e-13 * new_sigma.max(1.0) {
            return new_sigma;
        }
        sigma = new_sigma;
    }
    sigma
}

/// Exact 2-norm condition number via SVD. Errors above `max_dim`.
pub fn cond2_exact(a: &DMatrix<f64>, max_dim: usize) -> Result<f64> {
    let n = a.nrows().max(a.ncols());
    if n > max_dim {
        return Err(Error::Capability(format!(
            "exact condition number limited to dimension {max_dim}, got {n}; use the estimate"
        )));
    }
    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(smax / smin)
}

/// Exact spectral norm via SVD for small matrices, power iteration otherwise.
pub fn spectral_norm_auto(a: &DMatrix<f64>) -> f64 {
    if a.nrows().max(a.ncols()) <= 400 {
        let sv = a.clone().svd(false, false).singular_values;
        sv.iter().cloned().fold(0.0, f64::max)
    } else {
        spectral_norm(a)
    }
}

/// Matrix exponential (Padé scaling-and-squaring).
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.exp()
}

/// Dense inverse through LU. Errors on singular input.
pub fn inv_c(a: &CMatrix) -> Result<CMatrix> {
    let n = a.nrows();
    let lu = a.clone().lu();
    let id = CMatrix::identity(n, n);
    lu.solve(&id)
        .ok_or_else(|| Error::Singular("complex matrix inverse".into()))
}

/// Eigendecomposition A = V Λ V⁻¹ of a real square matrix with complex
/// spectrum.
#[derive(Debug, Clone)]
pub struct EigDecomp {
    pub values: Vec<C64>,
    /// Eigenvectors as columns, unit 2-norm.
    pub vectors: CMatrix,
    pub vectors_inv: CMatrix,
    /// ‖V‖₂‖V⁻¹‖₂.
    pub kappa2: f64,
    /// ‖V‖₁‖V⁻¹‖₁.
    pub kappa1: f64,
    /// max_i ‖A v_i − λ_i v_i‖ relative to ‖A‖.
    pub max_residual: f64,
}

/// Computes eigenvalues through the real Schur form, then eigenvectors by
/// shifted inverse iteration with in-cluster orthogonalization.
///
/// Repeated (semisimple) eigenvalues are handled by orthogonalizing each new
/// vector against previous members of the same eigenvalue cluster; truly
/// defective inputs surface as an `Err(Diagonalizability)` when the
/// eigenvector matrix cannot be inverted or the residual stays large.
pub fn complex_eig(a: &DMatrix<f64>) -> Result<EigDecomp> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Shape(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if n == 0 {
        return Err(Error::Shape("empty matrix".into()));
    }
    let mut values: Vec<C64> = a.complex_eigenvalues().iter().cloned().collect();
    values.sort_by(|x, y| {
        (x.re, x.im)
            .partial_cmp(&(y.re, y.im))
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let raw_scale = spectral_norm(a);
    if raw_scale == 0.0 {
        // the zero matrix: any orthonormal basis diagonalizes it
        return Ok(EigDecomp {
            values: vec![C64::new(0.0, 0.0); n],
            vectors: CMatrix::identity(n, n),
            vectors_inv: CMatrix::identity(n, n),
            kappa2: 1.0,
            kappa1: 1.0,
            max_residual: 0.0,
        });
    }

    let ac = to_complex(a);
    let scale = raw_scale;
    let cluster_tol = 1e-8 * scale;

    let mut vectors = CMatrix::zeros(n, n);
    let mut max_residual = 0.0f64;

    for (idx, &lambda) in values.iter().enumerate() {
        // indices of already-computed vectors in the same eigenvalue cluster
        let cluster: Vec<usize> = (0..idx)
            .filter(|&j| (values[j] - lambda).norm() <= cluster_tol)
            .collect();

        let mut best: Option<(f64, CVector)> = None;
        // A couple of shift jitters in case the first factorization hits an
        // exact zero pivot or the start vector is deficient.
        for attempt in 0..4 {
            let jitter = 1e-12 * scale * (1.0 + attempt as f64 * 10.0);
            let shifted = &ac
                - CMatrix::from_diagonal(&CVector::from_element(
                    n,
                    lambda + C64::new(jitter, jitter),
                ));
            let lu = shifted.lu();
            let mut v = ramp_vector_c(n);
            if attempt > 0 {
                // rotate the start so retries explore a different direction
                for (i, x) in v.iter_mut().enumerate() {
                    *x *= C64::new(0.0, 1.0).powf((attempt * (i + 1)) as f64 * 0.37);
                }
            }
            orthogonalize(&mut v, &vectors, &cluster);
            let nv = v.norm();
            if nv == 0.0 {
                continue;
            }
            v /= C64::new(nv, 0.0);
            let mut ok = true;
            for _ in 0..4 {
                match lu.solve(&v) {
                    Some(mut w) => {
                        orthogonalize(&mut w, &vectors, &cluster);
                        let nw = w.norm();
                        if !nw.is_finite() || nw == 0.0 {
                            ok = false;
                            break;
                        }
                        v = w / C64::new(nw, 0.0);
                    }
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                continue;
            }
            let residual = (&ac * &v - v.map(|x| x * lambda)).norm() / scale;
            if best.as_ref().map_or(true, |(r, _)| residual < *r) {
                best = Some((residual, v.clone()));
            }
            if residual <= 1e-10 {
                break;
            }
        }
        let (residual, v) = best.ok_or_else(|| {
            Error::Diagonalizability(format!("inverse iteration failed at eigenvalue {lambda}"))
        })?;
        if residual > 1e-6 {
            // no vector in the orthogonal complement of the cluster: a
            // nontrivial Jordan block
            return Err(Error::Diagonalizability(format!(
                "eigenvalue {lambda} admits no independent eigenvector \
                 (residual {residual:.3e})"
            )));
        }
        max_residual = max_residual.max(residual);
        vectors.set_column(idx, &v);
    }

    let lu = vectors.clone().lu();
    let vectors_inv = lu.solve(&CMatrix::identity(n, n)).ok_or_else(|| {
        Error::Diagonalizability("eigenvector matrix is numerically singular".into())
    })?;

    let kappa2 = spectral_norm_c(&vectors) * spectral_norm_c(&vectors_inv);
    let kappa1 = one_norm_c(&vectors) * one_norm_c(&vectors_inv);

    Ok(EigDecomp {
        values,
        vectors,
        vectors_inv,
        kappa2,
        kappa1,
        max_residual,
    })
}

fn orthogonalize(v: &mut CVector, vectors: &CMatrix, cluster: &[usize]) {
    for &j in cluster {
        let col = vectors.column(j);
        let proj: C64 = col.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum();
        for (i, x) in v.iter_mut().enumerate() {
            *x -= proj * col[i];
        }
    }
}

/// ‖R^j‖₂ for j = 1..=jmax by repeated multiplication.
pub fn power_norms(r: &DMatrix<f64>, jmax: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(jmax);
    let mut acc = r.clone();
    out.push(spectral_norm_auto(&acc));
    for _ in 1..jmax {
        acc = &acc * r;
        out.push(spectral_norm_auto(&acc));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_norm_matches_hand_value() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, -3.0, 2.0, 0.5]);
        assert_eq!(one_norm(&a), 3.5);
    }

    #[test]
    fn spectral_norm_of_rotation_is_one() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!((spectral_norm(&a) - 1.0).abs() < 1e-12);
        assert!((spectral_norm_auto(&a) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn eig_of_rotation_generator() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let e = complex_eig(&a).unwrap();
        let mut ims: Vec<f64> = e.values.iter().map(|l| l.im).collect();
        ims.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((ims[0] + 1.0).abs() < 1e-12);
        assert!((ims[1] - 1.0).abs() < 1e-12);
        assert!(e.max_residual < 1e-10);
        // rotation generator is normal: κ(V) = 1
        assert!(e.kappa2 < 1.0 + 1e-8);
    }

    #[test]
    fn eig_reconstructs_matrix() {
        let a = DMatrix::from_row_slice(
            3,
            3,
            &[0.2, 1.0, -0.3, -1.1, 0.1, 0.4, 0.2, -0.5, -0.3],
        );
        let e = complex_eig(&a).unwrap();
        let lam = CMatrix::from_diagonal(&CVector::from_vec(e.values.clone()));
        let rec = &e.vectors * lam * &e.vectors_inv;
        let diff = (&rec - to_complex(&a)).map(|v| v.norm()).max();
        assert!(diff < 1e-9, "reconstruction error {diff}");
    }

    #[test]
    fn eig_detects_defective_shear() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        match complex_eig(&a) {
            Err(Error::Diagonalizability(_)) => {}
            Ok(e) => assert!(e.kappa2 > 1e10, "shear must be flagged, κ={}", e.kappa2),
            Err(other) => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn repeated_semisimple_eigenvalues_get_independent_vectors() {
        // diag(2, 2, -1) is semisimple with a repeated eigenvalue
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, -1.0]);
        let e = complex_eig(&a).unwrap();
        assert!(e.kappa2 < 10.0);
    }

    #[test]
    fn expm_of_rotation() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let e = expm(&a);
        assert!((e[(0, 0)] - 1.0f64.cos()).abs() < 1e-14);
        assert!((e[(0, 1)] - 1.0f64.sin()).abs() < 1e-14);
    }
}

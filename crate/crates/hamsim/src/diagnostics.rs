//! Cross-cutting measurement tools: spectral structure, symplecticity
//! residuals, energy-drift series and convergence-order fits.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, C64};
use crate::models::j_matrix;

/// Threshold above which an eigenvector basis is treated as numerically
/// defective.
pub const DEFECTIVE_KAPPA: f64 = 1e12;

/// Eigenstructure summary of a flow matrix K.
#[derive(Debug, Clone)]
pub struct SpectralReport {
    pub eigenvalues: Vec<C64>,
    /// ‖V‖₂‖V⁻¹‖₂ of the eigenvector matrix; ∞ when defective.
    pub kappa_v: f64,
    /// ‖V‖₁‖V⁻¹‖₁.
    pub kappa1_v: f64,
    /// max_i |Re λ_i|.
    pub max_real_part: f64,
    pub stable: bool,
}

/// Eigen-decomposes K and applies the stability criterion: diagonalizable
/// with purely imaginary spectrum.
///
/// Defective inputs are reported with a κ(V) = ∞ sentinel rather than an
/// error, since near-Jordan structure is exactly what the flag is for.
pub fn spectral_report(k: &DMatrix<f64>) -> Result<SpectralReport> {
    if k.nrows() != k.ncols() {
        return Err(Error::Shape(format!(
            "flow matrix must be square, got {}x{}",
            k.nrows(),
            k.ncols()
        )));
    }
    if k.nrows() > 4000 {
        return Err(Error::Capability(format!(
            "spectral report limited to dimension 4000, got {}",
            k.nrows()
        )));
    }
    let scale = linalg::spectral_norm(k).max(f64::MIN_POSITIVE);
    match linalg::complex_eig(k) {
        Ok(eig) => {
            let max_real_part = eig
                .values
                .iter()
                .map(|l| l.re.abs())
                .fold(0.0, f64::max);
            let defective = eig.kappa2 > DEFECTIVE_KAPPA || eig.max_residual > 1e-6;
            let kappa_v = if defective { f64::INFINITY } else { eig.kappa2 };
            let stable = !defective && max_real_part <= 1e-8 * scale.max(1.0);
            Ok(SpectralReport {
                eigenvalues: eig.values,
                kappa_v,
                kappa1_v: eig.kappa1,
                max_real_part,
                stable,
            })
        }
        Err(Error::Diagonalizability(_)) => {
            let values: Vec<C64> = k.complex_eigenvalues().iter().cloned().collect();
            let max_real_part = values.iter().map(|l| l.re.abs()).fold(0.0, f64::max);
            Ok(SpectralReport {
                eigenvalues: values,
                kappa_v: f64::INFINITY,
                kappa1_v: f64::INFINITY,
                max_real_part,
                stable: false,
            })
        }
        Err(e) => Err(e),
    }
}

/// ‖SᵀJS − J‖₂ for a 2d×2d map S.
pub fn symplectic_defect(s: &DMatrix<f64>) -> Result<f64> {
    let n = s.nrows();
    if n != s.ncols() || n % 2 != 0 || n == 0 {
        return Err(Error::Shape(format!(
            "symplectic defect needs an even square matrix, got {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    let j = j_matrix(n / 2);
    let defect = s.transpose() * &j * s - &j;
    Ok(linalg::spectral_norm_auto(&defect))
}

/// Energy samples along a trajectory.
#[derive(Debug, Clone)]
pub struct DriftSeries {
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    /// |H(t) − H(0)| / |H(0)| (absolute error when H(0) = 0).
    pub relative_drift: Vec<f64>,
}

impl DriftSeries {
    /// Builds the series from energy samples at uniform spacing `tau`.
    pub fn from_energy_samples(tau: f64, energy: Vec<f64>) -> Result<Self> {
        if energy.is_empty() {
            return Err(Error::ParameterDomain("empty energy series".into()));
        }
        let h0 = energy[0];
        let denom = if h0.abs() > 0.0 { h0.abs() } else { 1.0 };
        let times = (0..energy.len()).map(|i| i as f64 * tau).collect();
        let relative_drift = energy.iter().map(|h| (h - h0).abs() / denom).collect();
        Ok(Self {
            times,
            energy,
            relative_drift,
        })
    }

    pub fn max_relative_drift(&self) -> f64 {
        self.relative_drift.iter().cloned().fold(0.0, f64::max)
    }

    /// Ordinary least-squares trend of relative drift against time:
    /// (slope, standard error of the slope).
    pub fn trend(&self) -> (f64, f64) {
        ols_slope(&self.times, &self.relative_drift)
    }
}

fn ols_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.len() < 3 {
        return (0.0, f64::INFINITY);
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|&v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return (0.0, f64::INFINITY);
    }
    let sxy: f64 = x.iter().zip(y).map(|(&a, &b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| {
            let r = b - (intercept + slope * a);
            r * r
        })
        .sum();
    let se = (ss_res / (n - 2.0) / sxx).sqrt();
    (slope, se)
}

/// Evaluates H along a trajectory and returns the drift series.
pub fn energy_drift<F>(energy: F, trajectory: &[DVector<f64>], tau: f64) -> Result<DriftSeries>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    if trajectory.is_empty() {
        return Err(Error::ParameterDomain("empty trajectory".into()));
    }
    let h0 = energy(&trajectory[0])?;
    let denom = if h0.abs() > 0.0 { h0.abs() } else { 1.0 };
    let mut times = Vec::with_capacity(trajectory.len());
    let mut energies = Vec::with_capacity(trajectory.len());
    let mut rel = Vec::with_capacity(trajectory.len());
    for (i, x) in trajectory.iter().enumerate() {
        let h = energy(x)?;
        times.push(i as f64 * tau);
        energies.push(h);
        rel.push((h - h0).abs() / denom);
    }
    Ok(DriftSeries {
        times,
        energy: energies,
        relative_drift: rel,
    })
}

/// Least-squares slope of log(error) against log(τ).
pub fn order_fit(errors: &[f64], taus: &[f64]) -> Result<f64> {
    if errors.len() != taus.len() {
        return Err(Error::Shape(format!(
            "{} errors vs {} step sizes",
            errors.len(),
            taus.len()
        )));
    }
    if errors.len() < 3 {
        return Err(Error::ParameterDomain(
            "order fit needs at least 3 (tau, error) pairs".into(),
        ));
    }
    if errors.iter().any(|&e| !(e > 0.0)) || taus.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::DegenerateFit(
            "errors and step sizes must be strictly positive".into(),
        ));
    }
    let lx: Vec<f64> = taus.iter().map(|t| t.ln()).collect();
    let ly: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    Ok(ols_slope(&lx, &ly).0)
}

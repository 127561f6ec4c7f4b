//! Runge-Kutta Gauss collocation methods.
//!
//! A p-stage Gauss method collocates at the Gauss-Legendre nodes on (0,1).
//! Applied to a linear field ẋ = Kx it reduces to the rational one-step map
//!
//!   R(τK) = I + (bᵀ ⊗ I) G⁻¹ (𝟏 ⊗ τK),    G = I ⊗ I − 𝒜 ⊗ (τK),
//!
//! which is the (p,p) Padé approximant of e^{τK}, has unit-modulus spectrum
//! on stable Hamiltonian fields and satisfies RᵀJR = J. Nonlinear systems are
//! stepped by solving the stage equations with fixed-point or (simplified)
//! Newton iteration. Explicit RK4 and Störmer-Verlet are provided as
//! non-collocation baselines.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, C64, CMatrix, CVector};
use crate::models::{SeparableForceSystem, VectorField};

/// Butcher data (𝒜, b, c) of a p-stage Gauss method.
#[derive(Debug, Clone)]
pub struct ButcherTableau {
    pub stages: usize,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
}

/// Legendre polynomial P_p and its derivative at x (recurrence).
fn legendre(p: usize, x: f64) -> (f64, f64) {
    if p == 0 {
        return (1.0, 0.0);
    }
    let (mut pm, mut pc) = (1.0, x);
    for k in 1..p {
        let kf = k as f64;
        let pn = ((2.0 * kf + 1.0) * x * pc - kf * pm) / (kf + 1.0);
        pm = pc;
        pc = pn;
    }
    let dp = (p as f64) * (x * pc - pm) / (x * x - 1.0);
    (pc, dp)
}

/// Gauss-Legendre nodes and weights on (0, 1).
fn gauss_nodes_unit(p: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(p);
    let mut weights = Vec::with_capacity(p);
    for i in 0..p {
        // Chebyshev-type initial guess, then Newton to 1e-15
        let mut x = (std::f64::consts::PI * (4.0 * i as f64 + 3.0) / (4.0 * p as f64 + 2.0)).cos();
        for _ in 0..100 {
            let (v, dv) = legendre(p, x);
            let dx = v / dv;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dv) = legendre(p, x);
        let w = 2.0 / ((1.0 - x * x) * dv * dv);
        nodes.push(0.5 * (x + 1.0));
        weights.push(0.5 * w);
    }
    // Newton guesses come out descending
    let mut idx: Vec<usize> = (0..p).collect();
    idx.sort_by(|&a, &b| nodes[a].partial_cmp(&nodes[b]).unwrap());
    (
        idx.iter().map(|&i| nodes[i]).collect(),
        idx.iter().map(|&i| weights[i]).collect(),
    )
}

/// Builds the p-stage Gauss tableau. 1 ≤ p ≤ 16.
///
/// Nodes are the roots of the shifted Legendre polynomial P_p(2t−1), weights
/// the Gauss weights on (0,1), and A_ij = ∫₀^{c_i} ℓ_j(s) ds with ℓ_j the
/// Lagrange basis at the nodes (evaluated by exact Gauss quadrature of the
/// integrand, which is a polynomial of degree p−1).
pub fn gauss_tableau(p: usize) -> Result<ButcherTableau> {
    if p < 1 || p > 16 {
        return Err(Error::ParameterDomain(format!(
            "stage count p = {p} outside [1, 16]"
        )));
    }
    let (c, w) = gauss_nodes_unit(p);

    let lagrange = |j: usize, s: f64| -> f64 {
        let mut v = 1.0;
        for m in 0..p {
            if m != j {
                v *= (s - c[m]) / (c[j] - c[m]);
            }
        }
        v
    };

    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            // ∫₀^{c_i} ℓ_j, exact with the p-point rule scaled to [0, c_i]
            let mut acc = 0.0;
            for k in 0..p {
                acc += c[i] * w[k] * lagrange(j, c[i] * c[k]);
            }
            a[(i, j)] = acc;
        }
    }

    Ok(ButcherTableau {
        stages: p,
        a,
        b: DVector::from_vec(w),
        c: DVector::from_vec(c),
    })
}

impl ButcherTableau {
    /// Row-sum defect max_i |Σ_j A_ij − c_i| (collocation consistency).
    pub fn row_sum_defect(&self) -> f64 {
        (0..self.stages)
            .map(|i| (self.a.row(i).sum() - self.c[i]).abs())
            .fold(0.0, f64::max)
    }

    /// Residual of the shifted Legendre polynomial at each node.
    pub fn node_defect(&self) -> f64 {
        self.c
            .iter()
            .map(|&ci| legendre(self.stages, 2.0 * ci - 1.0).0.abs())
            .fold(0.0, f64::max)
    }

    pub fn spectral_radius(&self) -> f64 {
        self.a
            .complex_eigenvalues()
            .iter()
            .map(|l| l.norm())
            .fold(0.0, f64::max)
    }
}

/// Scalar stability function R(z) = 1 + z bᵀ(I − z𝒜)⁻¹𝟏.
pub fn stability_scalar(tab: &ButcherTableau, z: C64) -> Result<C64> {
    let p = tab.stages;
    let mut m = CMatrix::identity(p, p);
    for i in 0..p {
        for j in 0..p {
            m[(i, j)] -= z * C64::new(tab.a[(i, j)], 0.0);
        }
    }
    let ones = CVector::from_element(p, C64::new(1.0, 0.0));
    let y = m
        .lu()
        .solve(&ones)
        .ok_or_else(|| Error::Singular(format!("stage system I - z*A singular at z = {z}")))?;
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..p {
        acc += C64::new(tab.b[i], 0.0) * y[i];
    }
    Ok(C64::new(1.0, 0.0) + z * acc)
}

/// Matrix one-step map R(τK) with construction metadata.
#[derive(Debug, Clone)]
pub struct StepOperator {
    pub matrix: DMatrix<f64>,
    pub tau: f64,
    pub stages: usize,
    /// 2-norm condition number of the stage system G (exact below dimension
    /// 800, power-iteration estimate above).
    pub kappa_g: f64,
    /// ‖K‖₂ estimate used for the stability-domain guard.
    pub field_norm: f64,
}

impl StepOperator {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }
}

/// Builds R(τK) = I + (bᵀ⊗I) G⁻¹ (𝟏⊗τK), recording κ(G).
///
/// Requires τ‖K‖ < 1 (the invertibility regime of G).
pub fn build_step_operator(
    tab: &ButcherTableau,
    k: &DMatrix<f64>,
    tau: f64,
) -> Result<StepOperator> {
    let n = k.nrows();
    if n != k.ncols() {
        return Err(Error::Shape(format!(
            "flow matrix must be square, got {}x{}",
            k.nrows(),
            k.ncols()
        )));
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::ParameterDomain(format!("step size tau = {tau}")));
    }
    let norm_k = linalg::spectral_norm(k);
    if tau * norm_k >= 1.0 {
        return Err(Error::StabilityDomain(format!(
            "tau*|K| = {:.3} >= 1; reduce the step size",
            tau * norm_k
        )));
    }
    let p = tab.stages;
    let tk = tau * k;
    let g = DMatrix::identity(p * n, p * n) - tab.a.kronecker(&tk);
    let lu = g.clone().lu();

    let kappa_g = if p * n <= 800 {
        linalg::cond2_exact(&g, 800)?
    } else {
        estimate_cond_lu(&g, &lu)?
    };
    // right-hand side 𝟏 ⊗ τK, all p block rows identical
    let mut rhs = DMatrix::zeros(p * n, n);
    for blk in 0..p {
        rhs.view_mut((blk * n, 0), (n, n)).copy_from(&tk);
    }
    let x = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("stage system G".into()))?;

    let mut r = DMatrix::identity(n, n);
    for blk in 0..p {
        r += tab.b[blk] * x.view((blk * n, 0), (n, n));
    }

    Ok(StepOperator {
        matrix: r,
        tau,
        stages: p,
        kappa_g,
        field_norm: norm_k,
    })
}

// One-sided power estimate of κ(G) for dimensions past the exact-SVD cutoff:
// ‖G‖₂ by power iteration, ‖G⁻¹‖ by iterated solves with the same
// factorization (converges to the spectral radius of G⁻¹, a lower bound on
// the norm, which is adequate for a recorded diagnostic).
fn estimate_cond_lu(g: &DMatrix<f64>, lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>) -> Result<f64> {
    let smax = linalg::spectral_norm(g);
    let n = g.nrows();
    let mut v = DVector::from_fn(n, |i, _| 1.0 + ((i as f64) * 0.417).cos() * 0.3);
    v /= v.norm();
    let mut inv_norm = 0.0;
    for _ in 0..30 {
        let w = lu
            .solve(&v)
            .ok_or_else(|| Error::Singular("stage system G".into()))?;
        let nw = w.norm();
        if nw == 0.0 {
            break;
        }
        inv_norm = nw;
        v = w / nw;
    }
    Ok(smax * inv_norm)
}

/// Sequential linear stepping x_{n+1} = R(τK) x_n with an observer called at
/// every state (including the initial one); returns the final state.
pub fn integrate_linear_with<F>(
    tab: &ButcherTableau,
    k: &DMatrix<f64>,
    x0: &DVector<f64>,
    tau: f64,
    steps: usize,
    mut on_state: F,
) -> Result<DVector<f64>>
where
    F: FnMut(usize, &DVector<f64>),
{
    let op = build_step_operator(tab, k, tau)?;
    if x0.len() != op.dim() {
        return Err(Error::Shape(format!(
            "initial state length {} vs operator dimension {}",
            x0.len(),
            op.dim()
        )));
    }
    let mut x = x0.clone();
    on_state(0, &x);
    for step in 1..=steps {
        x = op.apply(&x);
        on_state(step, &x);
    }
    Ok(x)
}

/// Sequential linear stepping; returns all M+1 states.
pub fn integrate_linear(
    tab: &ButcherTableau,
    k: &DMatrix<f64>,
    x0: &DVector<f64>,
    tau: f64,
    steps: usize,
) -> Result<Vec<DVector<f64>>> {
    let mut out = Vec::with_capacity(steps + 1);
    integrate_linear_with(tab, k, x0, tau, steps, |_, x| out.push(x.clone()))?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageSolver {
    FixedPoint,
    Newton,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub solver: StageSolver,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            solver: StageSolver::FixedPoint,
            tol: 1e-12,
            max_iter: 50,
        }
    }
}

impl SolverOptions {
    pub fn newton() -> Self {
        Self {
            solver: StageSolver::Newton,
            ..Self::default()
        }
    }
}

/// Implicit collocation stepping for a nonlinear field.
///
/// Stage equations k_i = f(x + τ Σ_j a_ij k_j) are solved per step to the
/// requested residual; the update is x⁺ = x + τ Σ b_i k_i. Newton mode uses
/// the simplified Newton matrix I − τ𝒜⊗J_f(x_n) factored once per step and
/// needs an analytic Jacobian from the field.
pub fn integrate_nonlinear_with<F>(
    tab: &ButcherTableau,
    field: &dyn VectorField,
    x0: &DVector<f64>,
    tau: f64,
    steps: usize,
    opts: SolverOptions,
    mut on_state: F,
) -> Result<DVector<f64>>
where
    F: FnMut(usize, &DVector<f64>),
{
    let n = field.dim();
    if x0.len() != n {
        return Err(Error::Shape(format!(
            "initial state length {} vs field dimension {n}",
            x0.len()
        )));
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::ParameterDomain(format!("step size tau = {tau}")));
    }
    let p = tab.stages;
    let mut x = x0.clone();
    on_state(0, &x);

    // stage slopes, warm-started across steps
    let mut stages: Vec<DVector<f64>> = vec![field.eval(&x); p];
    let mut u = vec![DVector::zeros(n); p];

    for step in 1..=steps {
        match opts.solver {
            StageSolver::FixedPoint => {
                solve_stages_fixed_point(tab, field, &x, tau, &mut stages, &mut u, &opts)?;
            }
            StageSolver::Newton => {
                solve_stages_newton(tab, field, &x, tau, &mut stages, &mut u, &opts)?;
            }
        }
        for (i, ki) in stages.iter().enumerate() {
            x += tau * tab.b[i] * ki;
        }
        on_state(step, &x);
    }
    Ok(x)
}

pub fn integrate_nonlinear(
    tab: &ButcherTableau,
    field: &dyn VectorField,
    x0: &DVector<f64>,
    tau: f64,
    steps: usize,
    opts: SolverOptions,
) -> Result<Vec<DVector<f64>>> {
    let mut out = Vec::with_capacity(steps + 1);
    integrate_nonlinear_with(tab, field, x0, tau, steps, opts, |_, x| out.push(x.clone()))?;
    Ok(out)
}

fn stage_points(
    tab: &ButcherTableau,
    x: &DVector<f64>,
    tau: f64,
    stages: &[DVector<f64>],
    u: &mut [DVector<f64>],
) {
    let p = tab.stages;
    for i in 0..p {
        u[i].copy_from(x);
        for j in 0..p {
            let aij = tab.a[(i, j)];
            if aij != 0.0 {
                u[i].axpy(tau * aij, &stages[j], 1.0);
            }
        }
    }
}

fn solve_stages_fixed_point(
    tab: &ButcherTableau,
    field: &dyn VectorField,
    x: &DVector<f64>,
    tau: f64,
    stages: &mut Vec<DVector<f64>>,
    u: &mut [DVector<f64>],
    opts: &SolverOptions,
) -> Result<()> {
    let p = tab.stages;
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iter {
        stage_points(tab, x, tau, stages, u);
        let mut delta = 0.0f64;
        for i in 0..p {
            let fresh = field.eval(&u[i]);
            delta = delta.max((&fresh - &stages[i]).amax());
            stages[i] = fresh;
        }
        if delta <= opts.tol {
            return Ok(());
        }
        if !delta.is_finite() || delta > 1e12 {
            return Err(Error::Convergence {
                iterations: opts.max_iter,
                residual: delta,
            });
        }
        residual = delta;
    }
    Err(Error::Convergence {
        iterations: opts.max_iter,
        residual,
    })
}

fn solve_stages_newton(
    tab: &ButcherTableau,
    field: &dyn VectorField,
    x: &DVector<f64>,
    tau: f64,
    stages: &mut Vec<DVector<f64>>,
    u: &mut [DVector<f64>],
    opts: &SolverOptions,
) -> Result<()> {
    let n = field.dim();
    let p = tab.stages;
    let jac = field.jacobian(x).ok_or_else(|| {
        Error::Unsupported("Newton stage solver needs an analytic Jacobian".into())
    })?;
    let newton_matrix = DMatrix::identity(p * n, p * n) - tab.a.kronecker(&(tau * &jac));
    let lu = newton_matrix.lu();

    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iter {
        stage_points(tab, x, tau, stages, u);
        let mut rhs = DVector::zeros(p * n);
        let mut delta = 0.0f64;
        for i in 0..p {
            let fresh = field.eval(&u[i]);
            let r = &fresh - &stages[i];
            delta = delta.max(r.amax());
            rhs.rows_mut(i * n, n).copy_from(&r);
        }
        if delta <= opts.tol {
            return Ok(());
        }
        if !delta.is_finite() || delta > 1e12 {
            return Err(Error::Convergence {
                iterations: opts.max_iter,
                residual: delta,
            });
        }
        let step = lu
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("simplified Newton matrix".into()))?;
        for i in 0..p {
            for r in 0..n {
                stages[i][r] += step[i * n + r];
            }
        }
        residual = delta;
    }
    Err(Error::Convergence {
        iterations: opts.max_iter,
        residual,
    })
}

/// Classical fixed-step RK4 baseline.
pub fn integrate_rk4_with<F>(
    field: &dyn VectorField,
    x0: &DVector<f64>,
    tau: f64,
    steps: usize,
    mut on_state: F,
) -> Result<DVector<f64>>
where
    F: FnMut(usize, &DVector<f64>),
{
    if x0.len() != field.dim() {
        return Err(Error::Shape(format!(
            "initial state length {} vs field dimension {}",
            x0.len(),
            field.dim()
        )));
    }
    let mut x = x0.clone();
    on_state(0, &x);
    for step in 1..=steps {
        let k1 = field.eval(&x);
        let k2 = field.eval(&(&x + 0.5 * tau * &k1));
        let k3 = field.eval(&(&x + 0.5 * tau * &k2));
        let k4 = field.eval(&(&x + tau * &k3));
        x += tau / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        on_state(step, &x);
    }
    Ok(x)
}

pub fn integrate_rk4(
    field: &dyn VectorField,
    x0: &DVector<f64>,
    tau: f64,
    steps: usize,
) -> Result<Vec<DVector<f64>>> {
    let mut out = Vec::with_capacity(steps + 1);
    integrate_rk4_with(field, x0, tau, steps, |_, x| out.push(x.clone()))?;
    Ok(out)
}

/// Störmer-Verlet (kick-drift-kick) for separable systems.
pub fn integrate_verlet_with<F>(
    sys: &SeparableForceSystem,
    x0: &DVector<f64>,
    tau: f64,
    steps: usize,
    mut on_state: F,
) -> Result<DVector<f64>>
where
    F: FnMut(usize, &DVector<f64>),
{
    let mut x = x0.clone();
    sys.validate_state(&x)?;
    on_state(0, &x);
    let d = sys.d;
    let mut f = vec![0.0; d];
    sys.force_into(&x.as_slice()[..d], &mut f);
    for step in 1..=steps {
        for i in 0..d {
            x[d + i] += 0.5 * tau * f[i];
        }
        for i in 0..d {
            x[i] += tau * x[d + i] / sys.mass[i];
        }
        sys.force_into(&x.as_slice()[..d], &mut f);
        for i in 0..d {
            x[d + i] += 0.5 * tau * f[i];
        }
        on_state(step, &x);
    }
    Ok(x)
}

pub fn integrate_verlet(
    sys: &SeparableForceSystem,
    x0: &DVector<f64>,
    tau: f64,
    steps: usize,
) -> Result<Vec<DVector<f64>>> {
    let mut out = Vec::with_capacity(steps + 1);
    integrate_verlet_with(sys, x0, tau, steps, |_, x| out.push(x.clone()))?;
    Ok(out)
}

/// Stage count p = ⌈½ ln(TκV/ε) / ln ln(TκV/ε)⌉ clamped to [1, 16]; returns
/// 1 outright when ln ln(TκV/ε) ≤ 1.
pub fn choose_stage_count(t: f64, kappa_v: f64, eps: f64) -> Result<usize> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::ParameterDomain(format!("horizon T = {t}")));
    }
    if !(kappa_v >= 1.0) || !kappa_v.is_finite() {
        return Err(Error::ParameterDomain(format!("kappa_V = {kappa_v} must be >= 1")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::ParameterDomain(format!("eps = {eps} must be in (0, 1)")));
    }
    let x = t * kappa_v / eps;
    let l = x.ln();
    if l <= std::f64::consts::E {
        // ln ln x <= 1: the asymptotic formula degenerates
        return Ok(1);
    }
    let p = (0.5 * l / l.ln()).ceil() as usize;
    Ok(p.clamp(1, 16))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{j_matrix, make_harmonic_chain};

    const SQRT3: f64 = 1.732_050_807_568_877_2;

    #[test]
    fn one_stage_tableau_is_midpoint() {
        let tab = gauss_tableau(1).unwrap();
        assert!((tab.c[0] - 0.5).abs() < 1e-15);
        assert!((tab.b[0] - 1.0).abs() < 1e-15);
        assert!((tab.a[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn two_stage_tableau_matches_closed_form() {
        let tab = gauss_tableau(2).unwrap();
        assert!((tab.c[0] - (0.5 - SQRT3 / 6.0)).abs() < 1e-14);
        assert!((tab.c[1] - (0.5 + SQRT3 / 6.0)).abs() < 1e-14);
        assert!((tab.b[0] - 0.5).abs() < 1e-14);
        assert!((tab.a[(0, 0)] - 0.25).abs() < 1e-14);
        assert!((tab.a[(0, 1)] - (0.25 - SQRT3 / 6.0)).abs() < 1e-14);
        assert!((tab.a[(1, 0)] - (0.25 + SQRT3 / 6.0)).abs() < 1e-14);
    }

    #[test]
    fn tableau_invariants_all_p() {
        for p in 1..=16 {
            let tab = gauss_tableau(p).unwrap();
            assert!(tab.node_defect() < 1e-12, "p = {p} node defect");
            assert!((tab.b.sum() - 1.0).abs() < 1e-13, "p = {p} weights");
            assert!(tab.row_sum_defect() < 1e-12, "p = {p} row sums");
            assert!(tab.spectral_radius() < 1.0, "p = {p} spectral radius");
        }
        assert!(gauss_tableau(0).is_err());
        assert!(gauss_tableau(17).is_err());
    }

    #[test]
    fn a_matrix_integral_oracle() {
        // independent quadrature: Simpson on a fine grid
        for p in [1usize, 2, 3] {
            let tab = gauss_tableau(p).unwrap();
            let lagrange = |j: usize, s: f64| -> f64 {
                let mut v = 1.0;
                for m in 0..p {
                    if m != j {
                        v *= (s - tab.c[m]) / (tab.c[j] - tab.c[m]);
                    }
                }
                v
            };
            for i in 0..p {
                for j in 0..p {
                    let n = 2000;
                    let h = tab.c[i] / n as f64;
                    let mut acc = lagrange(j, 0.0) + lagrange(j, tab.c[i]);
                    for m in 1..n {
                        let w = if m % 2 == 1 { 4.0 } else { 2.0 };
                        acc += w * lagrange(j, m as f64 * h);
                    }
                    acc *= h / 3.0;
                    assert!(
                        (acc - tab.a[(i, j)]).abs() < 1e-10,
                        "A[{i}][{j}] for p = {p}"
                    );
                }
            }
        }
    }

    #[test]
    fn stability_scalar_values() {
        let t1 = gauss_tableau(1).unwrap();
        let r0 = stability_scalar(&t1, C64::new(0.0, 0.0)).unwrap();
        assert!((r0 - C64::new(1.0, 0.0)).norm() < 1e-15);
        // midpoint: R(z) = (2+z)/(2−z), R(1) = 3
        let r1 = stability_scalar(&t1, C64::new(1.0, 0.0)).unwrap();
        assert!((r1 - C64::new(3.0, 0.0)).norm() < 1e-14);

        // p = 2: R(z) = (z²+6z+12)/(z²−6z+12); at z = 2i this is (−5+12i)/13
        let t2 = gauss_tableau(2).unwrap();
        let r2 = stability_scalar(&t2, C64::new(0.0, 2.0)).unwrap();
        assert!((r2 - C64::new(-5.0 / 13.0, 12.0 / 13.0)).norm() < 1e-13);
        assert!((r2.norm() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn stability_scalar_singular_stage_system() {
        let t1 = gauss_tableau(1).unwrap();
        // I − z𝒜 = 1 − z/2 vanishes at z = 2
        assert!(matches!(
            stability_scalar(&t1, C64::new(2.0, 0.0)),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn pade_identity_p2_sampled() {
        let t2 = gauss_tableau(2).unwrap();
        for k in 0..20 {
            let theta = 0.3 * k as f64;
            let z = C64::new(0.2 * theta.cos(), 0.25 * theta.sin());
            let pade = (z * z + C64::new(6.0, 0.0) * z + C64::new(12.0, 0.0))
                / (z * z - C64::new(6.0, 0.0) * z + C64::new(12.0, 0.0));
            let r = stability_scalar(&t2, z).unwrap();
            assert!((r - pade).norm() < 1e-12, "z = {z}");
        }
    }

    #[test]
    fn step_operator_zero_field_is_identity() {
        let tab = gauss_tableau(2).unwrap();
        let k = DMatrix::zeros(4, 4);
        let op = build_step_operator(&tab, &k, 0.3).unwrap();
        assert_eq!(op.matrix, DMatrix::identity(4, 4));
    }

    #[test]
    fn step_operator_midpoint_is_cayley() {
        let tab = gauss_tableau(1).unwrap();
        let k = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let tau = 0.1;
        let op = build_step_operator(&tab, &k, tau).unwrap();
        let half = 0.5 * tau * &k;
        let cayley = (DMatrix::identity(2, 2) + &half)
            * (DMatrix::identity(2, 2) - &half).try_inverse().unwrap();
        assert!((&op.matrix - cayley).amax() < 1e-14);
        // symplecticity of the same map
        let j = j_matrix(1);
        let defect = op.matrix.transpose() * &j * &op.matrix - &j;
        assert!(defect.amax() < 1e-14);
    }

    #[test]
    fn step_operator_rejects_large_steps() {
        let tab = gauss_tableau(1).unwrap();
        let k = DMatrix::from_row_slice(2, 2, &[0.0, 3.0, -3.0, 0.0]);
        assert!(matches!(
            build_step_operator(&tab, &k, 0.5),
            Err(Error::StabilityDomain(_))
        ));
    }

    #[test]
    fn linear_energy_conservation_long_run() {
        let chain = make_harmonic_chain(1, 1.0, 1.0).unwrap();
        let tab = gauss_tableau(2).unwrap();
        let x0 = DVector::from_row_slice(&[1.0, 0.0]);
        let traj = integrate_linear(&tab, chain.flow_matrix(), &x0, 0.1, 20_000).unwrap();
        let h0 = chain.energy(&traj[0]).unwrap();
        let max_drift = traj
            .iter()
            .map(|x| (chain.energy(x).unwrap() - h0).abs() / h0.abs())
            .fold(0.0, f64::max);
        assert!(max_drift < 1e-11, "drift {max_drift}");
    }

    #[test]
    fn linear_zero_field_constant_trajectory() {
        let tab = gauss_tableau(1).unwrap();
        let k = DMatrix::zeros(2, 2);
        let x0 = DVector::from_row_slice(&[0.3, -0.4]);
        let traj = integrate_linear(&tab, &k, &x0, 0.2, 5).unwrap();
        for x in &traj {
            assert_eq!(x, &x0);
        }
    }

    #[test]
    fn linear_order_is_2p() {
        // global error on the oscillator over T = 1 vs exact rotation
        let chain = make_harmonic_chain(1, 1.0, 1.0).unwrap();
        let x0 = DVector::from_row_slice(&[1.0, 0.0]);
        for p in [1usize, 2] {
            let tab = gauss_tableau(p).unwrap();
            let mut errs = Vec::new();
            let mut taus = Vec::new();
            for m in [10usize, 20, 40] {
                let tau = 1.0 / m as f64;
                let traj =
                    integrate_linear(&tab, chain.flow_matrix(), &x0, tau, m).unwrap();
                let t = 1.0f64;
                let exact = DVector::from_row_slice(&[t.cos(), -t.sin()]);
                errs.push((traj[m].clone() - exact).norm());
                taus.push(tau);
            }
            let slope = crate::diagnostics::order_fit(&errs, &taus).unwrap();
            let target = 2.0 * p as f64;
            assert!(
                (slope - target).abs() < 0.1 * target,
                "p = {p}: slope {slope}"
            );
        }
    }

    #[test]
    fn nonlinear_with_zero_cubic_matches_linear() {
        let fpu = crate::models::make_fpu_chain(2, 1.0, 0.0, 1.0).unwrap();
        let tab = gauss_tableau(2).unwrap();
        let x0 = DVector::from_row_slice(&[0.3, -0.1, 0.2, 0.1]);
        let lin = integrate_linear(&tab, fpu.f1_matrix(), &x0, 0.05, 40).unwrap();
        let non = integrate_nonlinear(
            &tab,
            &fpu,
            &x0,
            0.05,
            40,
            SolverOptions {
                solver: StageSolver::Newton,
                tol: 1e-14,
                max_iter: 50,
            },
        )
        .unwrap();
        assert!((lin[40].clone() - non[40].clone()).norm() < 1e-12);
    }

    #[test]
    fn nonlinear_solvers_agree() {
        let fpu = crate::models::make_fpu_chain(2, 1.0, 0.25, 1.0).unwrap();
        let tab = gauss_tableau(2).unwrap();
        let x0 = DVector::from_row_slice(&[0.2, -0.3, 0.1, 0.15]);
        let a = integrate_nonlinear(&tab, &fpu, &x0, 0.02, 50, SolverOptions::default()).unwrap();
        let b = integrate_nonlinear(&tab, &fpu, &x0, 0.02, 50, SolverOptions::newton()).unwrap();
        assert!((a[50].clone() - b[50].clone()).norm() < 1e-11);
    }

    #[test]
    fn nonlinear_convergence_failure_reports_residual() {
        let fpu = crate::models::make_fpu_chain(2, 1.0, 0.5, 1.0).unwrap();
        let tab = gauss_tableau(2).unwrap();
        let x0 = DVector::from_row_slice(&[0.5, -0.5, 0.4, 0.2]);
        let result = integrate_nonlinear(
            &tab,
            &fpu,
            &x0,
            0.05,
            5,
            SolverOptions {
                solver: StageSolver::FixedPoint,
                tol: 1e-16,
                max_iter: 2,
            },
        );
        match result {
            Err(Error::Convergence { residual, .. }) => assert!(residual.is_finite()),
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    #[test]
    fn nonlinear_order_fpu_short_horizon() {
        let fpu = crate::models::make_fpu_chain(2, 1.0, 0.25, 1.0).unwrap();
        let x0 = DVector::from_row_slice(&[0.3, -0.2, 0.25, 0.1]);
        // tight reference
        let tab_ref = gauss_tableau(4).unwrap();
        let reference = integrate_nonlinear(
            &tab_ref,
            &fpu,
            &x0,
            1.0 / 512.0,
            512,
            SolverOptions {
                solver: StageSolver::Newton,
                tol: 1e-14,
                max_iter: 60,
            },
        )
        .unwrap()[512]
            .clone();
        for p in [1usize, 2] {
            let tab = gauss_tableau(p).unwrap();
            let mut errs = Vec::new();
            let mut taus = Vec::new();
            for m in [8usize, 16, 32] {
                let tau = 1.0 / m as f64;
                let traj = integrate_nonlinear(
                    &tab,
                    &fpu,
                    &x0,
                    tau,
                    m,
                    SolverOptions {
                        solver: StageSolver::Newton,
                        tol: 1e-14,
                        max_iter: 60,
                    },
                )
                .unwrap();
                errs.push((traj[m].clone() - &reference).norm());
                taus.push(tau);
            }
            let slope = crate::diagnostics::order_fit(&errs, &taus).unwrap();
            let target = 2.0 * p as f64;
            assert!(
                (slope - target).abs() < 0.15 * target,
                "p = {p}: slope {slope}, errors {errs:?}"
            );
        }
    }

    #[test]
    fn verlet_and_rk4_baselines() {
        let sys = crate::models::harmonic_force_system(1, 1.0, 1.0, crate::models::Boundary::Anchored)
            .unwrap();
        let x0 = DVector::from_row_slice(&[1.0, 0.0]);
        let tau = 0.2;
        let steps = 200_000;
        let verlet = integrate_verlet(&sys, &x0, tau, steps).unwrap();
        let rk4 = integrate_rk4(&sys, &x0, tau, steps).unwrap();
        let h0 = sys.energy(&x0).unwrap();
        let verlet_drift = verlet
            .iter()
            .map(|x| (sys.energy(x).unwrap() - h0).abs() / h0)
            .fold(0.0, f64::max);
        let rk4_final = (sys.energy(&rk4[steps]).unwrap() - h0).abs() / h0;
        // Verlet stays bounded, RK4 drifts steadily at this step size
        assert!(verlet_drift < 5e-2, "verlet drift {verlet_drift}");
        assert!(rk4_final > 10.0 * verlet_drift, "rk4 drift {rk4_final}");
    }

    #[test]
    fn verlet_shadow_energy_order_two() {
        let sys = crate::models::harmonic_force_system(1, 1.0, 1.0, crate::models::Boundary::Anchored)
            .unwrap();
        let x0 = DVector::from_row_slice(&[1.0, 0.0]);
        let mut errs = Vec::new();
        let mut taus = Vec::new();
        for m in [100usize, 200, 400] {
            let tau = 10.0 / m as f64;
            let traj = integrate_verlet(&sys, &x0, tau, m).unwrap();
            let h0 = sys.energy(&x0).unwrap();
            let max_drift = traj
                .iter()
                .map(|x| (sys.energy(x).unwrap() - h0).abs())
                .fold(0.0, f64::max);
            errs.push(max_drift);
            taus.push(tau);
        }
        let slope = crate::diagnostics::order_fit(&errs, &taus).unwrap();
        assert!((slope - 2.0).abs() < 0.3, "slope {slope}");
    }

    #[test]
    fn stage_count_formula() {
        // ln ln(TκV/ε) ≤ 1 degenerates to p = 1 (here TκV/ε ≈ 15 < e^e)
        let p = choose_stage_count(15.0, 1.0, 0.999).unwrap();
        assert_eq!(p, 1);
        // TκV/ε = 10⁶: ⌈½·13.8/2.63⌉ = 3
        assert_eq!(choose_stage_count(1.0, 1.0, 1e-6).unwrap(), 3);
        assert!(matches!(
            choose_stage_count(1.0, 1.0, 1.0),
            Err(Error::ParameterDomain(_))
        ));
        assert!(matches!(
            choose_stage_count(1.0, 0.5, 0.1),
            Err(Error::ParameterDomain(_))
        ));
    }
}

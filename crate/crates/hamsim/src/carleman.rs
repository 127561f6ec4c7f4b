//! Carleman embedding of cubic Hamiltonian dynamics.
//!
//! The quadratic field ẋ = F₁x + F₂(x⊗x) lifts to a linear system on the
//! tensor-power variables y_j = x^{⊗j}. Truncating at level N gives the block
//! upper-bidiagonal matrix A^(N) with
//!
//!   A_{j,j}   = Σ_{i=0}^{j−1} I^{⊗i} ⊗ F₁ ⊗ I^{⊗(j−1−i)}   (Kronecker sum)
//!   A_{j,j+1} = Σ_{i=0}^{j−1} I^{⊗i} ⊗ F₂ ⊗ I^{⊗(j−1−i)}
//!
//! both with j terms, which is the form consistent with the product rule
//! d/dt x^{⊗j} = Σ_i x^{⊗i} ⊗ ẋ ⊗ x^{⊗(j−1−i)}.
//!
//! The embedding quality is governed by the eigenvalue-sum resonance margin Δ
//! of F₁ and the dimensionless radius R_r = 4eμκ₁(V)‖F₂‖₁/Δ; truncation error
//! decays like N·T·R_r^{N−1} while R_r < 1.
//!
//! A note on the margin: any real Hamiltonian spectrum comes in ± pairs, so
//! the unrestricted enumeration λ_i = Σ m_j λ_j (Σ m_j ≥ 2) always admits the
//! telescoping identity λ = 2λ + (−λ) and returns a zero margin. The
//! `Effective` mode therefore excludes multisets that reduce to the bare
//! target after cancelling ± pairs — these carry no coupling information —
//! while `Literal` keeps the unrestricted definition for reporting.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::history;
use crate::linalg::{self, C64, CMatrix, CVector};
use crate::models::CubicHamiltonian;
use crate::rkg::{self, ButcherTableau, SolverOptions, StageSolver};

/// Hard guard on the assembled block structure.
pub const NNZ_BUDGET: usize = 10_000_000;

/// Truncation-level floor and ceiling used by the automatic selector.
pub const LEVEL_FLOOR: usize = 2;
pub const LEVEL_CEILING: usize = 12;

#[derive(Debug, Clone)]
pub struct CarlemanSystem {
    /// Base dimension n = 2d.
    pub n: usize,
    /// Truncation level N.
    pub level: usize,
    pub f1: DMatrix<f64>,
    /// n×n² bilinear coefficient block.
    pub f2: DMatrix<f64>,
    /// A_{j,j} for j = 1..N.
    pub diag_blocks: Vec<DMatrix<f64>>,
    /// A_{j,j+1} for j = 1..N−1.
    pub super_blocks: Vec<DMatrix<f64>>,
    /// Dense assembled A^(N).
    pub matrix: DMatrix<f64>,
    /// Block start offsets, last entry = total dimension.
    pub offsets: Vec<usize>,
    /// Solution-norm bound μ (ℓ₁), when estimated.
    pub mu: Option<f64>,
    /// Resonance margin Δ used by the pipeline.
    pub delta: Option<f64>,
    /// Convergence radius R_r.
    pub rr: Option<f64>,
    /// κ₁(V) of the F₁ eigenbasis.
    pub kappa1_v: Option<f64>,
}

/// Builds the truncated Carleman matrix for a cubic Hamiltonian.
pub fn build_carleman(sys: &CubicHamiltonian, level: usize) -> Result<CarlemanSystem> {
    if level < 1 {
        return Err(Error::ParameterDomain("truncation level must be >= 1".into()));
    }
    let n = sys.dim();
    let f1 = sys.f1_matrix().clone();
    let f2 = sys.f2_matrix();

    // nonzero budget estimate before any allocation
    let nnz_f1 = f1.iter().filter(|&&v| v != 0.0).count().max(1);
    let nnz_f2 = f2.iter().filter(|&&v| v != 0.0).count().max(1);
    let mut nnz_estimate: usize = 0;
    let mut dim_pow = 1usize;
    for j in 1..=level {
        dim_pow = dim_pow.saturating_mul(n);
        let shells = dim_pow / n; // n^{j-1}
        nnz_estimate = nnz_estimate
            .saturating_add(j.saturating_mul(shells).saturating_mul(nnz_f1))
            .saturating_add(if j < level {
                j.saturating_mul(shells).saturating_mul(nnz_f2)
            } else {
                0
            });
        if nnz_estimate > NNZ_BUDGET {
            return Err(Error::Capability(format!(
                "Carleman assembly needs about {nnz_estimate} nonzeros at level {j}, \
                 budget is {NNZ_BUDGET}"
            )));
        }
    }

    let mut offsets = vec![0usize];
    let mut p = 1usize;
    for _ in 0..level {
        p *= n;
        offsets.push(offsets.last().unwrap() + p);
    }
    let total = *offsets.last().unwrap();

    let eye = |m: usize| DMatrix::<f64>::identity(m, m);

    // Kronecker sums KS_j = KS_{j−1} ⊗ I + I^{⊗(j−1)} ⊗ F₁, same for the
    // transfer blocks with F₂ in the last slot
    let mut diag_blocks = Vec::with_capacity(level);
    diag_blocks.push(f1.clone());
    for j in 2..=level {
        let prev: &DMatrix<f64> = &diag_blocks[j - 2];
        let dim_prev = prev.nrows();
        let block = prev.kronecker(&eye(n)) + eye(dim_prev).kronecker(&f1);
        diag_blocks.push(block);
    }

    let mut super_blocks = Vec::new();
    if level >= 2 {
        super_blocks.push(f2.clone());
        for j in 2..level {
            let prev: &DMatrix<f64> = &super_blocks[j - 2];
            let dim_prev = prev.nrows();
            let block = prev.kronecker(&eye(n)) + eye(dim_prev).kronecker(&f2);
            super_blocks.push(block);
        }
    }

    let mut matrix = DMatrix::zeros(total, total);
    for j in 0..level {
        let (r0, rows) = (offsets[j], offsets[j + 1] - offsets[j]);
        matrix
            .view_mut((r0, r0), (rows, rows))
            .copy_from(&diag_blocks[j]);
        if j + 1 < level {
            let (c0, cols) = (offsets[j + 1], offsets[j + 2] - offsets[j + 1]);
            matrix
                .view_mut((r0, c0), (rows, cols))
                .copy_from(&super_blocks[j]);
        }
    }

    Ok(CarlemanSystem {
        n,
        level,
        f1,
        f2,
        diag_blocks,
        super_blocks,
        matrix,
        offsets,
        mu: None,
        delta: None,
        rr: None,
        kappa1_v: None,
    })
}

impl CarlemanSystem {
    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// y₀ = (x₀, x₀⊗x₀, …, x₀^{⊗N}).
    pub fn initial_vector(&self, x0: &DVector<f64>) -> Result<DVector<f64>> {
        if x0.len() != self.n {
            return Err(Error::Shape(format!(
                "initial state length {} vs base dimension {}",
                x0.len(),
                self.n
            )));
        }
        let mut y = DVector::zeros(self.dim());
        let mut power = x0.clone();
        y.rows_mut(0, self.n).copy_from(&power);
        for j in 2..=self.level {
            power = kron_vec(&power, x0);
            y.rows_mut(self.offsets[j - 1], power.len()).copy_from(&power);
        }
        Ok(y)
    }

    /// ∂y₀/∂x₀, the (total dim)×n derivative of the initialization map:
    /// block j is Σ_a x^{⊗a} ⊗ I ⊗ x^{⊗(j−1−a)}.
    pub fn init_derivative(&self, x0: &DVector<f64>) -> Result<DMatrix<f64>> {
        if x0.len() != self.n {
            return Err(Error::Shape("state length vs base dimension".into()));
        }
        let n = self.n;
        let mut out = DMatrix::zeros(self.dim(), n);
        let xm = DMatrix::from_column_slice(n, 1, x0.as_slice());
        let mut d = DMatrix::<f64>::identity(n, n);
        let mut power = DMatrix::<f64>::from_element(1, 1, 1.0); // x^{⊗(j−1)}
        out.view_mut((0, 0), (n, n)).copy_from(&d);
        for j in 2..=self.level {
            power = power.kronecker(&xm); // now x^{⊗(j−1)} as a column
            d = d.kronecker(&xm) + power.kronecker(&DMatrix::identity(n, n));
            out.view_mut((self.offsets[j - 1], 0), (d.nrows(), n))
                .copy_from(&d);
        }
        Ok(out)
    }

    /// Strictly upper block part A₁ (the transfer blocks alone).
    pub fn upper_part(&self) -> DMatrix<f64> {
        let mut a1 = DMatrix::zeros(self.dim(), self.dim());
        for j in 0..self.level.saturating_sub(1) {
            let (r0, rows) = (self.offsets[j], self.offsets[j + 1] - self.offsets[j]);
            let (c0, cols) = (self.offsets[j + 1], self.offsets[j + 2] - self.offsets[j + 1]);
            a1.view_mut((r0, c0), (rows, cols))
                .copy_from(&self.super_blocks[j]);
        }
        a1
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                let v = self.matrix[(i, j)];
                if v != 0.0 {
                    out.push((i, j, v));
                }
            }
        }
        out
    }
}

pub fn kron_vec(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.len() * b.len());
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i * b.len() + j] = ai * bj;
        }
    }
    out
}

/// Enumeration mode for the resonance margin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResonanceMode {
    /// Unrestricted multisets (the bare definition); zero for every spectrum
    /// with a ± eigenvalue pair.
    Literal,
    /// Excludes multisets that cancel down to the bare target eigenvalue.
    #[default]
    Effective,
}

/// Both margins from one enumeration pass, with the minimizing (sum, target)
/// pairs for error reporting.
#[derive(Debug, Clone)]
pub struct ResonanceMargins {
    pub literal: f64,
    pub effective: f64,
    pub literal_witness: Option<(C64, C64)>,
    pub effective_witness: Option<(C64, C64)>,
}

/// Minimum distance |Σ λ_m − λ_i| over eigenvalue multisets of size
/// 2..=`max_total`; exact hits (below 1e-9 of the spectral scale) collapse
/// to zero.
pub fn resonance_margin(f1: &DMatrix<f64>, max_total: usize, mode: ResonanceMode) -> Result<f64> {
    let m = resonance_margins(f1, max_total)?;
    Ok(match mode {
        ResonanceMode::Literal => m.literal,
        ResonanceMode::Effective => m.effective,
    })
}

pub fn resonance_margins(f1: &DMatrix<f64>, max_total: usize) -> Result<ResonanceMargins> {
    if max_total < 2 {
        return Err(Error::ParameterDomain(
            "resonance enumeration needs max_total >= 2".into(),
        ));
    }
    let eig = linalg::complex_eig(f1)?;
    if eig.kappa2 >= 1e8 {
        return Err(Error::Diagonalizability(format!(
            "eigenvector condition {:.3e} too large for a trustworthy margin",
            eig.kappa2
        )));
    }
    let scale = eig
        .values
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let tol = 1e-9 * scale;

    // distinct eigenvalues (multiplicity does not enlarge the sum set)
    let mut distinct: Vec<C64> = Vec::new();
    for &v in &eig.values {
        if !distinct.iter().any(|&u| (u - v).norm() <= tol) {
            distinct.push(v);
        }
    }
    let m = distinct.len();
    // negation partner of each distinct eigenvalue, if present
    let neg: Vec<Option<usize>> = distinct
        .iter()
        .map(|&v| distinct.iter().position(|&u| (u + v).norm() <= tol))
        .collect();

    // enumeration budget: multisets of size ≤ max_total from m symbols
    let mut count_estimate: f64 = 0.0;
    for k in 2..=max_total {
        count_estimate += binomial(m + k - 1, k);
    }
    if count_estimate > 5e6 {
        return Err(Error::Capability(format!(
            "resonance enumeration would visit ~{count_estimate:.2e} multisets; \
             reduce the spectrum size or the cap"
        )));
    }

    let mut literal = f64::INFINITY;
    let mut effective = f64::INFINITY;
    let mut literal_witness = None;
    let mut effective_witness = None;
    let mut counts = vec![0u32; m];
    enumerate_multisets(&mut counts, 0, max_total, &mut |counts, size| {
        if size < 2 {
            return;
        }
        let sum: C64 = counts
            .iter()
            .enumerate()
            .map(|(j, &c)| distinct[j] * C64::new(c as f64, 0.0))
            .sum();
        for (i, &target) in distinct.iter().enumerate() {
            let dist = (sum - target).norm();
            if dist < literal {
                literal = dist;
                literal_witness = Some((sum, target));
            }
            if dist < effective && !is_trivial_multiset(counts, i, &neg) {
                effective = dist;
                effective_witness = Some((sum, target));
            }
        }
    });

    let snap = |v: f64| if v <= tol { 0.0 } else { v };
    Ok(ResonanceMargins {
        literal: snap(literal),
        effective: snap(effective),
        literal_witness,
        effective_witness,
    })
}

fn binomial(n: usize, k: usize) -> f64 {
    let mut v = 1.0f64;
    for i in 0..k {
        v *= (n - i) as f64 / (k - i) as f64;
    }
    v
}

fn enumerate_multisets<F: FnMut(&[u32], u32)>(
    counts: &mut Vec<u32>,
    idx: usize,
    remaining: usize,
    visit: &mut F,
) {
    if idx == counts.len() {
        let size: u32 = counts.iter().sum();
        visit(counts, size);
        return;
    }
    for c in 0..=(remaining as u32) {
        counts[idx] = c;
        enumerate_multisets(counts, idx + 1, remaining - c as usize, visit);
    }
    counts[idx] = 0;
}

/// A multiset is trivial for target i when removing one copy of λ_i leaves
/// only exactly-cancelling ± pairs, i.e. the sum telescopes to λ_i without
/// any coupling content.
fn is_trivial_multiset(counts: &[u32], target: usize, neg: &[Option<usize>]) -> bool {
    if counts[target] == 0 {
        return false;
    }
    let mut rest: Vec<u32> = counts.to_vec();
    rest[target] -= 1;
    for j in 0..rest.len() {
        match neg[j] {
            Some(k) if k == j => {
                if rest[j] % 2 != 0 {
                    return false;
                }
            }
            Some(k) => {
                if rest[j] != rest[k] {
                    return false;
                }
            }
            None => {
                if rest[j] != 0 {
                    return false;
                }
            }
        }
    }
    true
}

/// All j-fold eigenvalue sums (as a deduplicated set) for j = 1..=level.
pub fn fold_sums(values: &[C64], level: usize) -> Vec<C64> {
    let mut sums: Vec<C64> = Vec::new();
    let mut current: Vec<C64> = vec![C64::new(0.0, 0.0)];
    let tol = 1e-10
        * values
            .iter()
            .map(|v| v.norm())
            .fold(1.0, f64::max);
    for _ in 0..level {
        let mut next = Vec::new();
        for &s in &current {
            for &v in values {
                let cand = s + v;
                if !next.iter().any(|&u: &C64| (u - cand).norm() <= tol) {
                    next.push(cand);
                }
            }
        }
        for &s in &next {
            if !sums.iter().any(|&u| (u - s).norm() <= tol) {
                sums.push(s);
            }
        }
        current = next;
    }
    sums
}

/// R_r = 4eμκ₁(V)‖F₂‖₁ / Δ.
pub fn convergence_radius(
    f1: &DMatrix<f64>,
    f2: &DMatrix<f64>,
    mu: f64,
    delta: f64,
) -> Result<f64> {
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::ParameterDomain(format!("solution bound mu = {mu}")));
    }
    let f2_norm = linalg::one_norm(f2);
    if f2_norm == 0.0 {
        return Ok(0.0);
    }
    if delta <= 0.0 {
        return Err(Error::Resonance(
            "zero resonance margin: convergence radius undefined".into(),
        ));
    }
    let eig = linalg::complex_eig(f1)?;
    Ok(4.0 * std::f64::consts::E * mu * eig.kappa1 * f2_norm / delta)
}

/// Smallest N in [2, 12] with N·T·R_r^{N−1} ≤ eps (direct scan, unit
/// constant recorded by convention).
pub fn choose_truncation(horizon: f64, eps: f64, rr: f64) -> Result<usize> {
    if !(horizon > 0.0) || !(eps > 0.0) {
        return Err(Error::ParameterDomain(
            "truncation choice needs positive T and eps".into(),
        ));
    }
    if !(rr >= 0.0) || rr >= 1.0 {
        return Err(Error::ParameterDomain(format!(
            "convergence radius {rr} must lie in [0, 1) to certify a truncation"
        )));
    }
    let mut achievable = f64::INFINITY;
    for level in LEVEL_FLOOR..=LEVEL_CEILING {
        let bound = level as f64 * horizon * rr.powi(level as i32 - 1);
        achievable = achievable.min(bound);
        if bound <= eps {
            return Ok(level);
        }
    }
    Err(Error::TruncationInfeasible {
        achievable,
        requested: eps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CarlemanRoute {
    #[default]
    Sequential,
    History,
}

/// Steps the truncated system with the collocation map R(τA^(N)) and returns
/// the first-block trajectory y₁(t_m).
pub fn integrate_carleman(
    csys: &CarlemanSystem,
    x0: &DVector<f64>,
    tab: &ButcherTableau,
    tau: f64,
    steps: usize,
    route: CarlemanRoute,
) -> Result<Vec<DVector<f64>>> {
    let y0 = csys.initial_vector(x0)?;
    let op = rkg::build_step_operator(tab, &csys.matrix, tau)?;
    let n = csys.n;
    match route {
        CarlemanRoute::Sequential => {
            let mut out = Vec::with_capacity(steps + 1);
            out.push(y0.rows(0, n).clone_owned());
            let mut y = y0;
            for _ in 0..steps {
                y = op.apply(&y);
                out.push(y.rows(0, n).clone_owned());
            }
            Ok(out)
        }
        CarlemanRoute::History => {
            let sys = history::assemble(&op, &y0, steps, 0)?;
            let sol = sys.solve()?;
            Ok(sol
                .blocks
                .iter()
                .map(|blk| blk.rows(0, n).clone_owned())
                .collect())
        }
    }
}

/// Propagator norm check against the nilpotent-expansion envelope
/// κ(V)^N Σ_{k<N} (t^k/k!)(κ(V)^N N‖F₂‖)^k, plus exact N-step nilpotency of
/// the transfer part.
#[derive(Debug, Clone)]
pub struct NormBoundReport {
    /// (t, measured ‖e^{tA}‖₂, envelope).
    pub rows: Vec<(f64, f64, f64)>,
    pub a1_nilpotent: bool,
    pub kappa_v: f64,
    /// max measured/envelope over the samples.
    pub max_ratio: f64,
}

pub fn verify_norm_bound(csys: &CarlemanSystem, t_samples: &[f64]) -> Result<NormBoundReport> {
    if csys.dim() > 4000 {
        return Err(Error::Capability(format!(
            "dense exponential limited to dimension 4000, got {}",
            csys.dim()
        )));
    }
    let eig = linalg::complex_eig(&csys.f1)?;
    let kappa_v = eig.kappa2;
    let f2_norm = linalg::spectral_norm_auto(&csys.f2);
    let level = csys.level as f64;
    let kn = kappa_v.powf(level);

    let mut rows = Vec::with_capacity(t_samples.len());
    let mut max_ratio = 0.0f64;
    for &t in t_samples {
        let measured = linalg::spectral_norm_auto(&linalg::expm(&(t * &csys.matrix)));
        let mut envelope = 0.0;
        let mut factorial = 1.0;
        for k in 0..csys.level {
            if k > 0 {
                factorial *= k as f64;
            }
            envelope += t.powi(k as i32) / factorial * (kn * level * f2_norm).powi(k as i32);
        }
        envelope *= kn;
        max_ratio = max_ratio.max(measured / envelope);
        rows.push((t, measured, envelope));
    }

    // A₁ is strictly block upper with one superdiagonal: its N-th power
    // vanishes identically
    let a1 = csys.upper_part();
    let mut power = a1.clone();
    for _ in 1..csys.level {
        power = &power * &a1;
    }
    let a1_nilpotent = power.iter().all(|&v| v == 0.0);

    Ok(NormBoundReport {
        rows,
        a1_nilpotent,
        kappa_v,
        max_ratio,
    })
}

/// ‖W₁₁ᵀJW₁₁ − J‖₂ where W₁₁ = ∂y₁(T)/∂x₀ is propagated exactly through the
/// linear Carleman flow: W₁₁ = E₁ R^M (∂y₀/∂x₀).
pub fn symplectic_residual(
    csys: &CarlemanSystem,
    x0: &DVector<f64>,
    tab: &ButcherTableau,
    tau: f64,
    steps: usize,
) -> Result<f64> {
    let w11 = first_block_jacobian(csys, x0, tab, tau, steps)?;
    crate::diagnostics::symplectic_defect(&w11)
}

/// E₁ R(τA)^M ∂y₀/∂x₀.
pub fn first_block_jacobian(
    csys: &CarlemanSystem,
    x0: &DVector<f64>,
    tab: &ButcherTableau,
    tau: f64,
    steps: usize,
) -> Result<DMatrix<f64>> {
    let op = rkg::build_step_operator(tab, &csys.matrix, tau)?;
    let mut w = csys.init_derivative(x0)?;
    for _ in 0..steps {
        w = &op.matrix * w;
    }
    Ok(w.view((0, 0), (csys.n, csys.n)).clone_owned())
}

/// Finite-difference cross-check of the first-block Jacobian (central
/// differences on the integrated first block).
pub fn first_block_jacobian_fd(
    csys: &CarlemanSystem,
    x0: &DVector<f64>,
    tab: &ButcherTableau,
    tau: f64,
    steps: usize,
) -> Result<DMatrix<f64>> {
    let n = csys.n;
    let h = 1e-6 * x0.norm().max(1e-3);
    let mut out = DMatrix::zeros(n, n);
    for col in 0..n {
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[col] += h;
        xm[col] -= h;
        let yp = integrate_carleman(csys, &xp, tab, tau, steps, CarlemanRoute::Sequential)?;
        let ym = integrate_carleman(csys, &xm, tab, tau, steps, CarlemanRoute::Sequential)?;
        let diff = (&yp[steps] - &ym[steps]) / (2.0 * h);
        out.set_column(col, &diff);
    }
    Ok(out)
}

/// Normal-form verification: the first block row Z₁ of W⁻¹ (left eigenrows
/// of A^(N) for the F₁ eigenvalues) should evolve z₁ = Z₁y linearly under
/// Λ = diag(λ_i).
#[derive(Debug, Clone)]
pub struct NormalFormReport {
    pub lambda: Vec<C64>,
    /// max_t ‖z₁(t) − e^{Λt}z₁(0)‖ / ‖z₁(0)‖.
    pub deviation: f64,
    /// Worst relative residual of the shifted shell solves; nonzero when a
    /// shell is resonant and the row had to be regularized.
    pub max_incompatibility: f64,
    /// Hausdorff-style defect of spec(A^(N)) against all ≤N-fold sums.
    pub spectrum_defect: f64,
}

pub fn normal_form_check(
    csys: &CarlemanSystem,
    x0: &DVector<f64>,
    tab: &ButcherTableau,
    tau: f64,
    steps: usize,
) -> Result<NormalFormReport> {
    if csys.dim() > 200 {
        return Err(Error::Capability(format!(
            "normal-form check limited to total dimension 200, got {}",
            csys.dim()
        )));
    }
    let eig = linalg::complex_eig(&csys.f1)?;
    if eig.kappa2 > 1e8 {
        return Err(Error::Diagonalizability(format!(
            "F1 eigenbasis condition {:.3e}",
            eig.kappa2
        )));
    }
    let n = csys.n;
    let scale = eig
        .values
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);

    // exact nontrivial resonance rules the construction out entirely
    let margins = resonance_margins(&csys.f1, csys.level.max(2))?;
    if margins.effective == 0.0 {
        return Err(Error::Diagonalizability(
            "exact eigenvalue-sum resonance: A^(N) is defective".into(),
        ));
    }

    // left rows per eigenvalue, extended shell by shell
    let mut rows: Vec<CVector> = Vec::with_capacity(n); // full-length rows (conjugated storage: plain coefficients)
    let mut max_incompatibility = 0.0f64;
    for (i, &lambda) in eig.values.iter().enumerate() {
        let mut full = CVector::zeros(csys.dim());
        // shell 1: row i of V⁻¹
        let mut shell: CVector = eig.vectors_inv.row(i).transpose();
        full.rows_mut(0, n).copy_from(&shell);
        for j in 2..=csys.level {
            let transfer = &csys.super_blocks[j - 2]; // A_{j−1,j}
            let rhs: CVector = -to_c(transfer).transpose() * &shell;
            let a_jj = to_c(&csys.diag_blocks[j - 1]);
            let dim_j = a_jj.nrows();
            let shifted_t = a_jj.transpose()
                - CMatrix::from_diagonal(&CVector::from_element(dim_j, lambda));
            let rhs_norm = rhs.norm().max(f64::MIN_POSITIVE);
            let direct = shifted_t.clone().lu().solve(&rhs);
            let mut solved = None;
            if let Some(v) = direct {
                let resid = (&shifted_t * &v - &rhs).norm() / rhs_norm;
                if resid <= 1e-8 && v.iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
                    solved = Some((v, resid));
                }
            }
            let (v, resid) = match solved {
                Some(pair) => pair,
                None => {
                    // resonant shell: Tikhonov-regularized least squares keeps
                    // the solvable component and drops the defective direction
                    let delta = 1e-8 * linalg::spectral_norm_auto(&csys.diag_blocks[j - 1]).max(scale);
                    let m_h = shifted_t.adjoint();
                    let normal = &m_h * &shifted_t
                        + CMatrix::from_diagonal(&CVector::from_element(
                            dim_j,
                            C64::new(delta * delta, 0.0),
                        ));
                    let v = normal
                        .lu()
                        .solve(&(&m_h * &rhs))
                        .ok_or_else(|| Error::Singular("regularized shell solve".into()))?;
                    let resid = (&shifted_t * &v - &rhs).norm() / rhs_norm;
                    (v, resid)
                }
            };
            max_incompatibility = max_incompatibility.max(resid);
            full.rows_mut(csys.offsets[j - 1], dim_j).copy_from(&v);
            shell = v;
        }
        rows.push(full);
    }

    // trajectory of the truncated system
    let op = rkg::build_step_operator(tab, &csys.matrix, tau)?;
    let mut y = csys.initial_vector(x0)?;
    let z0: Vec<C64> = rows.iter().map(|r| r.dot_product(&y)).collect();
    let z0_norm = z0.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let mut deviation = 0.0f64;
    for step in 1..=steps {
        y = op.apply(&y);
        let t = step as f64 * tau;
        let mut err2 = 0.0;
        for (i, row) in rows.iter().enumerate() {
            let z = row.dot_product(&y);
            let expected = z0[i] * (eig.values[i] * C64::new(t, 0.0)).exp();
            err2 += (z - expected).norm_sqr();
        }
        deviation = deviation.max(err2.sqrt() / z0_norm.max(f64::MIN_POSITIVE));
    }

    // spectrum structure: every eigenvalue of A^(N) sits near a ≤N-fold sum
    let sums = fold_sums(&eig.values, csys.level);
    let a_eigs = csys.matrix.complex_eigenvalues();
    let mut spectrum_defect = 0.0f64;
    for l in a_eigs.iter() {
        let d = sums
            .iter()
            .map(|s| (l - s).norm())
            .fold(f64::INFINITY, f64::min);
        spectrum_defect = spectrum_defect.max(d);
    }

    Ok(NormalFormReport {
        lambda: eig.values,
        deviation,
        max_incompatibility,
        spectrum_defect,
    })
}

fn to_c(a: &DMatrix<f64>) -> CMatrix {
    linalg::to_complex(a)
}

trait DotProduct {
    fn dot_product(&self, other: &DVector<f64>) -> C64;
}

impl DotProduct for CVector {
    fn dot_product(&self, other: &DVector<f64>) -> C64 {
        self.iter()
            .zip(other.iter())
            .map(|(&a, &b)| a * C64::new(b, 0.0))
            .sum()
    }
}

/// Embedding parameters and bound bookkeeping for one planned run.
#[derive(Debug, Clone)]
pub struct EmbeddingDiagnostics {
    pub delta: f64,
    pub delta_literal: f64,
    pub rr: f64,
    pub n_selected: usize,
    /// N·T·R_r^{N−1} with unit constant.
    pub truncation_bound: f64,
    pub mu: f64,
    pub kappa1_v: f64,
    /// R_r < 1 held, so the bound is meaningful.
    pub certified: bool,
    pub measured_error: Option<f64>,
    pub symplectic_residual: Option<f64>,
}

impl EmbeddingDiagnostics {
    pub fn to_kv_lines(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("delta = {:.17e}\n", self.delta));
        s.push_str(&format!("delta_literal = {:.17e}\n", self.delta_literal));
        s.push_str(&format!("rr = {:.17e}\n", self.rr));
        s.push_str(&format!("n_selected = {}\n", self.n_selected));
        s.push_str(&format!("truncation_bound = {:.17e}\n", self.truncation_bound));
        s.push_str(&format!("mu = {:.17e}\n", self.mu));
        s.push_str(&format!("kappa1_v = {:.17e}\n", self.kappa1_v));
        s.push_str(&format!("certified = {}\n", self.certified));
        if let Some(e) = self.measured_error {
            s.push_str(&format!("measured_error = {e:.17e}\n"));
        }
        if let Some(r) = self.symplectic_residual {
            s.push_str(&format!("symplectic_residual = {r:.17e}\n"));
        }
        s
    }
}

/// μ: max_t ‖x(t)‖₁ over a cheap reference integration, inflated by 1.25.
pub fn estimate_solution_bound(
    sys: &CubicHamiltonian,
    x0: &DVector<f64>,
    horizon: f64,
) -> Result<f64> {
    if !(horizon > 0.0) {
        return Err(Error::ParameterDomain("horizon must be positive".into()));
    }
    let steps = 64;
    let tau = horizon / steps as f64;
    let tab = rkg::gauss_tableau(2)?;
    let traj = rkg::integrate_nonlinear(
        &tab,
        sys,
        x0,
        tau,
        steps,
        SolverOptions {
            solver: StageSolver::Newton,
            tol: 1e-10,
            max_iter: 50,
        },
    )?;
    let peak = traj
        .iter()
        .map(|x| x.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    Ok(1.25 * peak)
}

pub struct EmbeddingPlan {
    pub system: CarlemanSystem,
    pub diagnostics: EmbeddingDiagnostics,
}

/// Full planning pipeline: μ estimate → margin → R_r → level selection →
/// assembly. `level` fixes N explicitly; otherwise N comes from the direct
/// scan at the requested `eps`.
pub fn plan_embedding(
    sys: &CubicHamiltonian,
    x0: &DVector<f64>,
    horizon: f64,
    eps: f64,
    level: Option<usize>,
    mode: ResonanceMode,
) -> Result<EmbeddingPlan> {
    let f1 = sys.f1_matrix();
    let f2 = sys.f2_matrix();
    let f2_zero = linalg::one_norm(&f2) == 0.0;
    let mu = estimate_solution_bound(sys, x0, horizon)?;

    let provisional_cap = level.unwrap_or(6) + 2;
    let margins = resonance_margins(f1, provisional_cap)?;
    let (delta, witness) = match mode {
        ResonanceMode::Literal => (margins.literal, margins.literal_witness.clone()),
        ResonanceMode::Effective => (margins.effective, margins.effective_witness.clone()),
    };
    if delta == 0.0 && !f2_zero {
        let detail = witness
            .map(|(s, t)| format!("eigenvalue sum {s} hits eigenvalue {t}"))
            .unwrap_or_default();
        return Err(Error::Resonance(format!(
            "resonance margin is zero ({mode:?} enumeration, cap {provisional_cap}): {detail}"
        )));
    }
    let rr = if f2_zero {
        0.0
    } else {
        convergence_radius(f1, &f2, mu, delta)?
    };

    let n_selected = match level {
        Some(l) => {
            if l < 1 || l > LEVEL_CEILING {
                return Err(Error::ParameterDomain(format!(
                    "truncation level {l} outside [1, {LEVEL_CEILING}]"
                )));
            }
            l
        }
        None => {
            if rr >= 1.0 {
                return Err(Error::TruncationInfeasible {
                    achievable: f64::INFINITY,
                    requested: eps,
                });
            }
            choose_truncation(horizon, eps, rr)?
        }
    };

    // refine the margin with the cap implied by the selected level
    let margins = resonance_margins(f1, n_selected + 2)?;
    let delta = match mode {
        ResonanceMode::Literal => margins.literal,
        ResonanceMode::Effective => margins.effective,
    };
    if delta == 0.0 && !f2_zero {
        return Err(Error::Resonance(format!(
            "resonance margin vanished at cap {}",
            n_selected + 2
        )));
    }
    let rr = if f2_zero {
        0.0
    } else {
        convergence_radius(f1, &f2, mu, delta)?
    };

    let mut system = build_carleman(sys, n_selected)?;
    let eig = linalg::complex_eig(f1)?;
    system.mu = Some(mu);
    system.delta = Some(delta);
    system.rr = Some(rr);
    system.kappa1_v = Some(eig.kappa1);

    let truncation_bound = n_selected as f64 * horizon * rr.powi(n_selected as i32 - 1);
    let diagnostics = EmbeddingDiagnostics {
        delta,
        delta_literal: margins.literal,
        rr,
        n_selected,
        truncation_bound,
        mu,
        kappa1_v: eig.kappa1,
        certified: rr < 1.0,
        measured_error: None,
        symplectic_residual: None,
    };
    Ok(EmbeddingPlan {
        system,
        diagnostics,
    })
}

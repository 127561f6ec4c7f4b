//! Hamiltonian system definitions.
//!
//! State ordering is x = (q₁..q_d, p₁..p_d) throughout, with the canonical
//! structure matrix
//!
//! ```text
//!     J = [ 0   I_d ]
//!         [ -I_d  0 ]
//! ```
//!
//! so that Hamilton's equations read ẋ = J ∇H(x). Quadratic energies are
//! stored as H(x) = xᵀQx (gradient 2Qx), cubic ones add the fully symmetric
//! contraction Σ C_ijk x_i x_j x_k (gradient contribution 3 C : x⊗x). The
//! induced linear/bilinear flow coefficients are therefore F₁ = 2JQ and
//! F₂ = 3JC.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Canonical phase-space structure for d degrees of freedom.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymplecticStructure {
    pub d: usize,
}

impl SymplecticStructure {
    pub fn new(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::ParameterDomain("d must be positive".into()));
        }
        Ok(Self { d })
    }

    pub fn dim(&self) -> usize {
        2 * self.d
    }

    /// The 2d×2d block matrix [[0, I],[−I, 0]].
    pub fn matrix(&self) -> DMatrix<f64> {
        j_matrix(self.d)
    }

    /// J·v without materializing J: (q, p) ↦ (p, −q).
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let d = self.d;
        DVector::from_fn(2 * d, |i, _| if i < d { v[i + d] } else { -v[i - d] })
    }
}

pub fn j_matrix(d: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        j[(i, d + i)] = 1.0;
        j[(d + i, i)] = -1.0;
    }
    j
}

/// J·M with exact sign arithmetic (row-block swap).
pub fn j_times(d: usize, m: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(m.nrows(), 2 * d);
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for col in 0..m.ncols() {
        for i in 0..d {
            out[(i, col)] = m[(d + i, col)];
            out[(d + i, col)] = -m[(i, col)];
        }
    }
    out
}

/// Right-hand side of an autonomous first-order ODE ẋ = f(x).
pub trait VectorField: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &DVector<f64>) -> DVector<f64>;
    /// Analytic Jacobian ∂f/∂x when available (used by the Newton stage solver).
    fn jacobian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let _ = x;
        None
    }
}

/// H(x) = xᵀQx with symmetric Q.
#[derive(Debug, Clone)]
pub struct QuadraticHamiltonian {
    pub d: usize,
    q: DMatrix<f64>,
    k: DMatrix<f64>,
}

impl QuadraticHamiltonian {
    /// The coefficient matrix is symmetrized on entry, so Q = Qᵀ holds
    /// exactly afterwards.
    pub fn new(d: usize, q: DMatrix<f64>) -> Result<Self> {
        let n = 2 * d;
        if q.nrows() != n || q.ncols() != n {
            return Err(Error::Shape(format!(
                "Q must be {n}x{n}, got {}x{}",
                q.nrows(),
                q.ncols()
            )));
        }
        let q = symmetrize(&q);
        let k = j_times(d, &(2.0 * &q));
        Ok(Self { d, q, k })
    }

    pub fn dim(&self) -> usize {
        2 * self.d
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Flow matrix K with ẋ = Kx, i.e. K = 2JQ.
    pub fn flow_matrix(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn energy(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_state(x)?;
        Ok((x.transpose() * &self.q * x)[(0, 0)])
    }

    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_state(x)?;
        Ok(2.0 * &self.q * x)
    }

    fn check_state(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "state length {} does not match 2d = {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

impl VectorField for QuadraticHamiltonian {
    fn dim(&self) -> usize {
        2 * self.d
    }
    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.k * x
    }
    fn jacobian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.k.clone())
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        for j in 0..=i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    s
}

/// Fully symmetric 3-way coefficient array.
///
/// Entries are stored expanded (one value per nonzero index triple) so the
/// contractions are plain loops; symmetry is enforced at construction by
/// averaging each value over all six index permutations.
#[derive(Debug, Clone)]
pub struct CubicTensor {
    n: usize,
    entries: Vec<(u32, u32, u32, f64)>,
}

impl CubicTensor {
    pub fn zero(n: usize) -> Self {
        Self {
            n,
            entries: Vec::new(),
        }
    }

    /// Accumulates raw (i, j, k, value) contributions and symmetrizes.
    pub fn from_triplets(n: usize, raw: &[(usize, usize, usize, f64)]) -> Result<Self> {
        use std::collections::BTreeMap;
        let mut acc: BTreeMap<(u32, u32, u32), f64> = BTreeMap::new();
        for &(i, j, k, v) in raw {
            if i >= n || j >= n || k >= n {
                return Err(Error::Shape(format!(
                    "cubic index ({i},{j},{k}) out of range for n = {n}"
                )));
            }
            if !v.is_finite() {
                return Err(Error::ParameterDomain("non-finite cubic coefficient".into()));
            }
            let share = v / 6.0;
            let (i, j, k) = (i as u32, j as u32, k as u32);
            for (a, b, c) in [
                (i, j, k),
                (i, k, j),
                (j, i, k),
                (j, k, i),
                (k, i, j),
                (k, j, i),
            ] {
                *acc.entry((a, b, c)).or_insert(0.0) += share;
            }
        }
        let entries = acc
            .into_iter()
            .filter(|&(_, v)| v != 0.0)
            .map(|((a, b, c), v)| (a, b, c, v))
            .collect();
        Ok(Self { n, entries })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(u32, u32, u32, f64)] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        let key = (i as u32, j as u32, k as u32);
        self.entries
            .iter()
            .find(|&&(a, b, c, _)| (a, b, c) == key)
            .map(|&(_, _, _, v)| v)
            .unwrap_or(0.0)
    }

    /// Σ C_ijk x_i x_j x_k.
    pub fn contract3(&self, x: &DVector<f64>) -> f64 {
        self.entries
            .iter()
            .map(|&(i, j, k, v)| v * x[i as usize] * x[j as usize] * x[k as usize])
            .sum()
    }

    /// (Σ_jk C_ijk x_j x_k)_i.
    pub fn contract2(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        for &(i, j, k, v) in &self.entries {
            out[i as usize] += v * x[j as usize] * x[k as usize];
        }
        out
    }

    /// M_il = Σ_j C_ijl x_j (Jacobian building block).
    pub fn contract1(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, self.n);
        for &(i, j, k, v) in &self.entries {
            out[(i as usize, k as usize)] += v * x[j as usize];
        }
        out
    }

    /// Flattened n×n² matrix with columns indexed by (j, k) → j·n + k.
    pub fn flatten(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, self.n * self.n);
        for &(i, j, k, v) in &self.entries {
            out[(i as usize, (j as usize) * self.n + (k as usize))] += v;
        }
        out
    }
}

/// H(x) = xᵀQx + C : x⊗x⊗x.
#[derive(Debug, Clone)]
pub struct CubicHamiltonian {
    pub d: usize,
    q: DMatrix<f64>,
    c: CubicTensor,
    f1: DMatrix<f64>,
}

impl CubicHamiltonian {
    pub fn new(d: usize, q: DMatrix<f64>, c: CubicTensor) -> Result<Self> {
        let n = 2 * d;
        if q.nrows() != n || q.ncols() != n {
            return Err(Error::Shape(format!(
                "Q must be {n}x{n}, got {}x{}",
                q.nrows(),
                q.ncols()
            )));
        }
        if c.n() != n {
            return Err(Error::Shape(format!(
                "cubic tensor dimension {} does not match 2d = {n}",
                c.n()
            )));
        }
        let q = symmetrize(&q);
        let f1 = j_times(d, &(2.0 * &q));
        Ok(Self { d, q, c, f1 })
    }

    pub fn dim(&self) -> usize {
        2 * self.d
    }

    pub fn quadratic_part(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn cubic_part(&self) -> &CubicTensor {
        &self.c
    }

    pub fn energy(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_state(x)?;
        Ok((x.transpose() * &self.q * x)[(0, 0)] + self.c.contract3(x))
    }

    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_state(x)?;
        Ok(2.0 * &self.q * x + 3.0 * self.c.contract2(x))
    }

    /// F₁ = 2JQ.
    pub fn f1_matrix(&self) -> &DMatrix<f64> {
        &self.f1
    }

    /// F₂ = 3JC as an n×n² matrix acting on x⊗x.
    pub fn f2_matrix(&self) -> DMatrix<f64> {
        j_times(self.d, &(3.0 * self.c.flatten()))
    }

    /// Degenerate copy of the quadratic part.
    pub fn quadratic(&self) -> QuadraticHamiltonian {
        QuadraticHamiltonian::new(self.d, self.q.clone()).expect("validated at construction")
    }

    fn check_state(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "state length {} does not match 2d = {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

impl VectorField for CubicHamiltonian {
    fn dim(&self) -> usize {
        2 * self.d
    }
    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        // f = F₁x + 3J(C : x⊗x), evaluated without the n×n² matrix
        let grad_cubic = self.c.contract2(x);
        let d = self.d;
        let mut out = &self.f1 * x;
        for i in 0..d {
            out[i] += 3.0 * grad_cubic[d + i];
            out[d + i] -= 3.0 * grad_cubic[i];
        }
        out
    }
    fn jacobian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let m = self.c.contract1(x);
        Some(&self.f1 + j_times(self.d, &(6.0 * m)))
    }
}

/// Separable H = Σ pᵢ²/(2mᵢ) + U(q) given through potential/force callables.
#[derive(Clone)]
pub struct SeparableForceSystem {
    pub d: usize,
    pub mass: DVector<f64>,
    potential: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    force: Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>,
    state_guard: Option<Arc<dyn Fn(&[f64]) -> Result<()> + Send + Sync>>,
}

impl fmt::Debug for SeparableForceSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SeparableForceSystem")
            .field("d", &self.d)
            .finish()
    }
}

impl SeparableForceSystem {
    pub fn new(
        d: usize,
        mass: DVector<f64>,
        potential: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
        force: Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::ParameterDomain("d must be positive".into()));
        }
        if mass.len() != d {
            return Err(Error::Shape(format!(
                "mass vector length {} does not match d = {d}",
                mass.len()
            )));
        }
        if mass.iter().any(|&m| m <= 0.0 || !m.is_finite()) {
            return Err(Error::ParameterDomain("masses must be positive".into()));
        }
        Ok(Self {
            d,
            mass,
            potential,
            force,
            state_guard: None,
        })
    }

    pub fn with_state_guard(
        mut self,
        guard: Arc<dyn Fn(&[f64]) -> Result<()> + Send + Sync>,
    ) -> Self {
        self.state_guard = Some(guard);
        self
    }

    pub fn dim(&self) -> usize {
        2 * self.d
    }

    pub fn potential_energy(&self, q: &[f64]) -> f64 {
        (self.potential)(q)
    }

    pub fn force_into(&self, q: &[f64], out: &mut [f64]) {
        (self.force)(q, out)
    }

    pub fn energy(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "state length {} does not match 2d = {}",
                x.len(),
                self.dim()
            )));
        }
        let (q, p) = x.as_slice().split_at(self.d);
        let kinetic: f64 = p
            .iter()
            .zip(self.mass.iter())
            .map(|(&pi, &mi)| pi * pi / (2.0 * mi))
            .sum();
        Ok(kinetic + (self.potential)(q))
    }

    /// Validates a start state against the model's configuration guard
    /// (e.g. Lennard-Jones overlap detection).
    pub fn validate_state(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "state length {} does not match 2d = {}",
                x.len(),
                self.dim()
            )));
        }
        if let Some(guard) = &self.state_guard {
            guard(&x.as_slice()[..self.d])?;
        }
        Ok(())
    }
}

impl VectorField for SeparableForceSystem {
    fn dim(&self) -> usize {
        2 * self.d
    }
    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        let d = self.d;
        let (q, p) = x.as_slice().split_at(d);
        let mut out = DVector::zeros(2 * d);
        for i in 0..d {
            out[i] = p[i] / self.mass[i];
        }
        let mut f = vec![0.0; d];
        (self.force)(q, &mut f);
        for i in 0..d {
            out[d + i] = f[i];
        }
        out
    }
}

/// Chain boundary handling for the spring models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    /// Walls on both sides: q₀ = q_{L+1} = 0, L+1 bonds.
    #[default]
    Fixed,
    /// Wall on the left only: q₀ = 0, L bonds.
    Anchored,
    /// No walls, interior bonds only (L−1 bonds).
    Free,
}

impl Boundary {
    /// Bond list as (left site, right site), sites 0 and L+1 being walls.
    fn bonds(self, l: usize) -> Vec<(usize, usize)> {
        match self {
            Boundary::Fixed => (0..=l).map(|i| (i, i + 1)).collect(),
            Boundary::Anchored => (0..l).map(|i| (i, i + 1)).collect(),
            Boundary::Free => (1..l).map(|i| (i, i + 1)).collect(),
        }
    }
}

/// Uniform harmonic chain; the default boundary keeps the L = 1 case a plain
/// oscillator with frequency √(k/m).
pub fn make_harmonic_chain(l: usize, k: f64, m: f64) -> Result<QuadraticHamiltonian> {
    make_harmonic_chain_bc(l, k, m, Boundary::Anchored)
}

pub fn make_harmonic_chain_bc(
    l: usize,
    k: f64,
    m: f64,
    bc: Boundary,
) -> Result<QuadraticHamiltonian> {
    if l < 1 {
        return Err(Error::ParameterDomain("L must be at least 1".into()));
    }
    check_chain_params(k, m)?;
    let mut q = DMatrix::zeros(2 * l, 2 * l);
    add_chain_quadratic(&mut q, l, k, bc);
    for i in 0..l {
        q[(l + i, l + i)] = 1.0 / (2.0 * m);
    }
    QuadraticHamiltonian::new(l, q)
}

/// FPU-type chain with per-bond potential U(z) = (k/2)z² + (α/3)z³.
pub fn make_fpu_chain(l: usize, k: f64, alpha: f64, m: f64) -> Result<CubicHamiltonian> {
    make_fpu_chain_bc(l, k, alpha, m, Boundary::Fixed)
}

pub fn make_fpu_chain_bc(
    l: usize,
    k: f64,
    alpha: f64,
    m: f64,
    bc: Boundary,
) -> Result<CubicHamiltonian> {
    if l < 2 {
        return Err(Error::ParameterDomain("FPU chain needs L >= 2".into()));
    }
    check_chain_params(k, m)?;
    let n = 2 * l;
    let mut q = DMatrix::zeros(n, n);
    add_chain_quadratic(&mut q, l, k, bc);
    for i in 0..l {
        q[(l + i, l + i)] = 1.0 / (2.0 * m);
    }

    // cubic bond terms (α/3)(q_b − q_a)³ expanded into monomials; wall sites
    // contribute nothing
    let mut raw = Vec::new();
    let a3 = alpha / 3.0;
    if alpha != 0.0 {
        for (a, b) in bc.bonds(l) {
            let left = site_index(a, l);
            let right = site_index(b, l);
            // (r − l)³ = r³ − 3r²l + 3rl² − l³
            match (left, right) {
                (Some(li), Some(ri)) => {
                    raw.push((ri, ri, ri, a3));
                    raw.push((ri, ri, li, -3.0 * a3));
                    raw.push((ri, li, li, 3.0 * a3));
                    raw.push((li, li, li, -a3));
                }
                (None, Some(ri)) => raw.push((ri, ri, ri, a3)),
                (Some(li), None) => raw.push((li, li, li, -a3)),
                (None, None) => {}
            }
        }
    }
    let c = CubicTensor::from_triplets(n, &raw)?;
    CubicHamiltonian::new(l, q, c)
}

fn site_index(site: usize, l: usize) -> Option<usize> {
    if site >= 1 && site <= l {
        Some(site - 1)
    } else {
        None
    }
}

fn check_chain_params(k: f64, m: f64) -> Result<()> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::ParameterDomain(format!("stiffness k = {k} must be positive")));
    }
    if !(m > 0.0) || !m.is_finite() {
        return Err(Error::ParameterDomain(format!("mass m = {m} must be positive")));
    }
    Ok(())
}

fn add_chain_quadratic(q: &mut DMatrix<f64>, l: usize, k: f64, bc: Boundary) {
    for (a, b) in bc.bonds(l) {
        let left = site_index(a, l);
        let right = site_index(b, l);
        // (k/2)(q_b − q_a)² contributes k/2 on each diagonal, −k/2 off-diagonal
        if let Some(ri) = right {
            q[(ri, ri)] += k / 2.0;
        }
        if let Some(li) = left {
            q[(li, li)] += k / 2.0;
        }
        if let (Some(li), Some(ri)) = (left, right) {
            q[(li, ri)] -= k / 2.0;
            q[(ri, li)] -= k / 2.0;
        }
    }
}

/// Force system view of the FPU chain, used by the Verlet integrator.
pub fn fpu_force_system(
    l: usize,
    k: f64,
    alpha: f64,
    m: f64,
    bc: Boundary,
) -> Result<SeparableForceSystem> {
    if l < 2 {
        return Err(Error::ParameterDomain("FPU chain needs L >= 2".into()));
    }
    check_chain_params(k, m)?;
    let bonds = bc.bonds(l);
    let bonds2 = bonds.clone();
    let potential = Arc::new(move |q: &[f64]| -> f64 {
        let mut u = 0.0;
        for &(a, b) in &bonds {
            let z = chain_coord(q, b, l) - chain_coord(q, a, l);
            u += 0.5 * k * z * z + alpha / 3.0 * z * z * z;
        }
        u
    });
    let force = Arc::new(move |q: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|v| *v = 0.0);
        for &(a, b) in &bonds2 {
            let z = chain_coord(q, b, l) - chain_coord(q, a, l);
            let du = k * z + alpha * z * z;
            if let Some(ri) = site_index(b, l) {
                out[ri] -= du;
            }
            if let Some(li) = site_index(a, l) {
                out[li] += du;
            }
        }
    });
    SeparableForceSystem::new(l, DVector::from_element(l, m), potential, force)
}

fn chain_coord(q: &[f64], site: usize, l: usize) -> f64 {
    match site_index(site, l) {
        Some(i) => q[i],
        None => 0.0,
    }
}

/// Harmonic chain as a separable force system (same bonds as
/// [`make_harmonic_chain_bc`]).
pub fn harmonic_force_system(
    l: usize,
    k: f64,
    m: f64,
    bc: Boundary,
) -> Result<SeparableForceSystem> {
    if l < 1 {
        return Err(Error::ParameterDomain("L must be at least 1".into()));
    }
    check_chain_params(k, m)?;
    let bonds = bc.bonds(l);
    let bonds2 = bonds.clone();
    let potential = Arc::new(move |q: &[f64]| -> f64 {
        bonds
            .iter()
            .map(|&(a, b)| {
                let z = chain_coord(q, b, l) - chain_coord(q, a, l);
                0.5 * k * z * z
            })
            .sum()
    });
    let force = Arc::new(move |q: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|v| *v = 0.0);
        for &(a, b) in &bonds2 {
            let z = chain_coord(q, b, l) - chain_coord(q, a, l);
            if let Some(ri) = site_index(b, l) {
                out[ri] -= k * z;
            }
            if let Some(li) = site_index(a, l) {
                out[li] += k * z;
            }
        }
    });
    SeparableForceSystem::new(l, DVector::from_element(l, m), potential, force)
}

/// Truncated and shifted 12-6 pair potential, cutoff 2.5σ, minimum-image
/// convention in a cubic periodic box.
pub struct LennardJones {
    pub particles: usize,
    pub epsilon: f64,
    pub sigma: f64,
    pub box_len: f64,
}

pub const LJ_CUTOFF_FACTOR: f64 = 2.5;

/// Unshifted 12-6 potential, exposed for tests and diagnostics.
pub fn lj_pair_potential(epsilon: f64, sigma: f64, r: f64) -> f64 {
    let s6 = (sigma / r).powi(6);
    4.0 * epsilon * (s6 * s6 - s6)
}

pub fn make_lennard_jones(
    l: usize,
    epsilon: f64,
    sigma: f64,
    box_len: f64,
) -> Result<SeparableForceSystem> {
    if l < 2 {
        return Err(Error::ParameterDomain("LJ gas needs at least 2 particles".into()));
    }
    if !(epsilon > 0.0 && sigma > 0.0 && box_len > 0.0) {
        return Err(Error::ParameterDomain(
            "epsilon, sigma and box must be positive".into(),
        ));
    }
    let cutoff = LJ_CUTOFF_FACTOR * sigma;
    if box_len <= 2.0 * cutoff {
        return Err(Error::ParameterDomain(format!(
            "box = {box_len} must exceed twice the cutoff {cutoff}"
        )));
    }
    let d = 3 * l;
    let shift = lj_pair_potential(epsilon, sigma, cutoff);
    let cutoff2 = cutoff * cutoff;

    let params = (l, epsilon, sigma, box_len);
    let potential = Arc::new(move |q: &[f64]| -> f64 {
        let (l, eps, sig, bx) = params;
        let mut u = 0.0;
        for i in 0..l {
            for j in (i + 1)..l {
                let r2 = min_image_dist2(q, i, j, bx);
                if r2 < cutoff2 {
                    u += lj_pair_potential(eps, sig, r2.sqrt()) - shift;
                }
            }
        }
        u
    });
    let params_f = (l, epsilon, sigma, box_len);
    let force = Arc::new(move |q: &[f64], out: &mut [f64]| {
        let (l, eps, sig, bx) = params_f;
        out.iter_mut().for_each(|v| *v = 0.0);
        let sig2 = sig * sig;
        for i in 0..l {
            for j in (i + 1)..l {
                let (dx, dy, dz) = min_image_delta(q, i, j, bx);
                let r2 = dx * dx + dy * dy + dz * dz;
                if r2 >= cutoff2 || r2 == 0.0 {
                    continue;
                }
                let s2 = sig2 / r2;
                let s6 = s2 * s2 * s2;
                // F = 24ε(2s¹² − s⁶)/r² · Δr pointing from j to i
                let coef = 24.0 * eps * (2.0 * s6 * s6 - s6) / r2;
                out[3 * i] += coef * dx;
                out[3 * i + 1] += coef * dy;
                out[3 * i + 2] += coef * dz;
                out[3 * j] -= coef * dx;
                out[3 * j + 1] -= coef * dy;
                out[3 * j + 2] -= coef * dz;
            }
        }
    });

    let guard_params = (l, 0.5 * sigma, box_len);
    let guard = Arc::new(move |q: &[f64]| -> Result<()> {
        let (l, rmin, bx) = guard_params;
        for i in 0..l {
            for j in (i + 1)..l {
                let r2 = min_image_dist2(q, i, j, bx);
                if r2 < rmin * rmin {
                    return Err(Error::IllConditioned(format!(
                        "particles {i} and {j} overlap: r = {:.3e} < {rmin:.3e}",
                        r2.sqrt()
                    )));
                }
            }
        }
        Ok(())
    });

    Ok(
        SeparableForceSystem::new(d, DVector::from_element(d, 1.0), potential, force)?
            .with_state_guard(guard),
    )
}

fn min_image_delta(q: &[f64], i: usize, j: usize, box_len: f64) -> (f64, f64, f64) {
    let mut d = [0.0; 3];
    for a in 0..3 {
        let mut dd = q[3 * i + a] - q[3 * j + a];
        dd -= box_len * (dd / box_len).round();
        d[a] = dd;
    }
    (d[0], d[1], d[2])
}

fn min_image_dist2(q: &[f64], i: usize, j: usize, box_len: f64) -> f64 {
    let (dx, dy, dz) = min_image_delta(q, i, j, box_len);
    dx * dx + dy * dy + dz * dz
}

/// Runtime-dispatched model for the CLI.
#[derive(Debug, Clone)]
pub enum Model {
    Quadratic(QuadraticHamiltonian),
    Cubic(CubicHamiltonian),
    Separable(SeparableForceSystem),
}

impl Model {
    pub fn dim(&self) -> usize {
        match self {
            Model::Quadratic(m) => m.dim(),
            Model::Cubic(m) => m.dim(),
            Model::Separable(m) => m.dim(),
        }
    }

    pub fn energy(&self, x: &DVector<f64>) -> Result<f64> {
        match self {
            Model::Quadratic(m) => m.energy(x),
            Model::Cubic(m) => m.energy(x),
            Model::Separable(m) => m.energy(x),
        }
    }
}

/// Dispatching energy evaluator; the spec-level entry point.
pub fn evaluate_energy(model: &Model, x: &DVector<f64>) -> Result<f64> {
    model.energy(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vecd(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    #[test]
    fn j_invariants() {
        for d in 1..5 {
            let s = SymplecticStructure::new(d).unwrap();
            let j = s.matrix();
            assert_eq!(j.transpose(), -&j);
            let j2 = &j * &j;
            assert_eq!(j2, -DMatrix::<f64>::identity(2 * d, 2 * d));
            // J⁻¹ = Jᵀ
            let ji = j.clone().try_inverse().unwrap();
            assert_eq!(ji, j.transpose());
        }
    }

    #[test]
    fn single_oscillator_matches_closed_form() {
        let h = make_harmonic_chain(1, 1.0, 1.0).unwrap();
        // Q = ½ diag(1,1)
        assert_eq!(h.coefficients(), &DMatrix::from_diagonal(&vecd(&[0.5, 0.5])));
        // K = [[0,1],[-1,0]]
        assert_eq!(
            h.flow_matrix(),
            &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])
        );
    }

    #[test]
    fn oscillator_frequency_scales_with_sqrt_k() {
        // ω = √k = 2 for k = 4: K eigenvalues ±2i
        let h = make_harmonic_chain(1, 4.0, 1.0).unwrap();
        let eigs = h.flow_matrix().complex_eigenvalues();
        let mut ims: Vec<f64> = eigs.iter().map(|l| l.im).collect();
        ims.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((ims[1] - 2.0).abs() < 1e-12);
        assert!(eigs.iter().all(|l| l.re.abs() < 1e-12));
    }

    #[test]
    fn chain_spectrum_is_purely_imaginary() {
        let h = make_harmonic_chain(2, 1.0, 1.0).unwrap();
        let eigs = h.flow_matrix().complex_eigenvalues();
        for l in eigs.iter() {
            assert!(l.re.abs() < 1e-10, "eigenvalue {l} not imaginary");
            assert!(l.im.abs() > 1e-10);
        }
    }

    #[test]
    fn jk_is_symmetric_exactly() {
        for l in [1, 3, 5] {
            let h = make_harmonic_chain(l, 1.3, 0.7).unwrap();
            let j = j_matrix(l);
            let jk = &j * h.flow_matrix();
            assert_eq!(jk, jk.transpose());
        }
    }

    #[test]
    fn bad_chain_parameters_rejected() {
        assert!(matches!(
            make_harmonic_chain(1, -1.0, 1.0),
            Err(Error::ParameterDomain(_))
        ));
        assert!(matches!(
            make_harmonic_chain(1, 1.0, 0.0),
            Err(Error::ParameterDomain(_))
        ));
        assert!(matches!(
            make_fpu_chain(1, 1.0, 0.1, 1.0),
            Err(Error::ParameterDomain(_))
        ));
    }

    #[test]
    fn fpu_alpha_zero_reduces_to_harmonic() {
        for bc in [Boundary::Fixed, Boundary::Anchored, Boundary::Free] {
            let fpu = make_fpu_chain_bc(3, 1.7, 0.0, 1.1, bc).unwrap();
            let harm = make_harmonic_chain_bc(3, 1.7, 1.1, bc).unwrap();
            assert!(fpu.cubic_part().is_zero());
            assert_eq!(fpu.quadratic_part(), harm.coefficients());
        }
    }

    #[test]
    fn fpu_energy_spot_value_free_ends() {
        // single interior bond, z = q₂ − q₁ = 0.1
        let fpu = make_fpu_chain_bc(2, 1.0, 0.1, 1.0, Boundary::Free).unwrap();
        let x = vecd(&[0.1, 0.2, 0.0, 0.0]);
        let h = fpu.energy(&x).unwrap();
        let expected = 0.5 * 0.1f64.powi(2) + (0.1 / 3.0) * 0.1f64.powi(3);
        assert!((h - expected).abs() < 1e-15, "H = {h}, expected {expected}");
    }

    #[test]
    fn cubic_tensor_fully_symmetric() {
        let fpu = make_fpu_chain(2, 1.0, 0.3, 1.0).unwrap();
        let c = fpu.cubic_part();
        let n = c.n();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let v = c.get(i, j, k);
                    assert_eq!(v, c.get(k, j, i));
                    assert_eq!(v, c.get(j, i, k));
                    assert_eq!(v, c.get(i, k, j));
                }
            }
        }
    }

    #[test]
    fn cubic_gradient_matches_central_differences() {
        let fpu = make_fpu_chain(2, 1.0, 0.25, 1.3).unwrap();
        let x = vecd(&[0.13, -0.28, 0.05, 0.17]);
        let grad = fpu.gradient(&x).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (fpu.energy(&xp).unwrap() - fpu.energy(&xm).unwrap()) / (2.0 * h);
            assert!((grad[i] - fd).abs() < 1e-8, "component {i}");
        }
    }

    #[test]
    fn vector_field_consistent_with_gradient() {
        // Jᵀ f(x) = ∇H(x)
        let fpu = make_fpu_chain(3, 0.8, 0.2, 1.0).unwrap();
        let j = j_matrix(3);
        let x = vecd(&[0.1, -0.2, 0.3, 0.05, 0.0, -0.1]);
        let f = fpu.eval(&x);
        let lhs = j.transpose() * &f;
        let grad = fpu.gradient(&x).unwrap();
        assert!((lhs - grad).norm() < 1e-12);
    }

    #[test]
    fn cubic_jacobian_matches_differences() {
        let fpu = make_fpu_chain(2, 1.0, 0.4, 1.0).unwrap();
        let x = vecd(&[0.2, -0.1, 0.15, 0.3]);
        let jac = fpu.jacobian(&x).unwrap();
        let h = 1e-6;
        for col in 0..4 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[col] += h;
            xm[col] -= h;
            let fd = (fpu.eval(&xp) - fpu.eval(&xm)) / (2.0 * h);
            for row in 0..4 {
                assert!((jac[(row, col)] - fd[row]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn fpu_separable_view_agrees_with_cubic() {
        let bc = Boundary::Fixed;
        let cubic = make_fpu_chain_bc(3, 1.0, 0.2, 1.4, bc).unwrap();
        let sep = fpu_force_system(3, 1.0, 0.2, 1.4, bc).unwrap();
        let x = vecd(&[0.1, -0.2, 0.25, 0.3, -0.05, 0.12]);
        assert!((cubic.energy(&x).unwrap() - sep.energy(&x).unwrap()).abs() < 1e-14);
        assert!((cubic.eval(&x) - sep.eval(&x)).norm() < 1e-14);
    }

    #[test]
    fn lj_minimum_at_expected_radius() {
        let sys = make_lennard_jones(2, 1.0, 1.0, 20.0).unwrap();
        let r0 = 2.0f64.powf(1.0 / 6.0);
        let q = [0.0, 0.0, 0.0, r0, 0.0, 0.0];
        let mut f = vec![0.0; 6];
        sys.force_into(&q, &mut f);
        for v in &f {
            assert!(v.abs() < 1e-12, "force {v} at the minimum");
        }
    }

    #[test]
    fn lj_zero_crossing_at_sigma() {
        assert!(lj_pair_potential(1.0, 1.0, 1.0).abs() < 1e-15);
    }

    #[test]
    fn lj_force_is_gradient_of_potential() {
        let sys = make_lennard_jones(2, 1.0, 1.0, 20.0).unwrap();
        let q = vec![0.0, 0.0, 0.0, 1.3, 0.4, -0.2];
        let mut f = vec![0.0; 6];
        sys.force_into(&q, &mut f);
        let h = 1e-6;
        for i in 0..6 {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[i] += h;
            qm[i] -= h;
            let fd = -(sys.potential_energy(&qp) - sys.potential_energy(&qm)) / (2.0 * h);
            assert!((f[i] - fd).abs() < 1e-6, "component {i}: {} vs {fd}", f[i]);
        }
    }

    #[test]
    fn lj_overlap_guard_fires() {
        let sys = make_lennard_jones(2, 1.0, 1.0, 20.0).unwrap();
        let x = vecd(&[0.0, 0.0, 0.0, 0.3, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            sys.validate_state(&x),
            Err(Error::IllConditioned(_))
        ));
    }

    #[test]
    fn lj_box_must_clear_cutoff() {
        assert!(matches!(
            make_lennard_jones(2, 1.0, 1.0, 4.0),
            Err(Error::ParameterDomain(_))
        ));
    }

    #[test]
    fn energy_dispatch_and_shape_errors() {
        let q = DMatrix::from_diagonal(&vecd(&[0.5, 0.5]));
        let h = QuadraticHamiltonian::new(1, q).unwrap();
        assert_eq!(h.energy(&vecd(&[1.0, 0.0])).unwrap(), 0.5);
        assert!(matches!(
            h.energy(&vecd(&[1.0, 0.0, 0.0])),
            Err(Error::Shape(_))
        ));
        let model = Model::Quadratic(h);
        assert_eq!(evaluate_energy(&model, &vecd(&[1.0, 0.0])).unwrap(), 0.5);
    }

    #[test]
    fn quadratic_energy_scaling() {
        let h = make_harmonic_chain(3, 2.0, 0.5).unwrap();
        let x = vecd(&[0.1, 0.4, -0.3, 0.2, 0.0, 0.7]);
        let base = h.energy(&x).unwrap();
        for c in [0.5, 2.0, -3.0] {
            let scaled = h.energy(&(c * &x)).unwrap();
            assert!((scaled - c * c * base).abs() < 1e-12 * base.abs().max(1.0));
        }
    }
}

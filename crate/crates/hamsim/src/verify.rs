//! Machine-checkable property suites behind the `verify` CLI subcommand.
//!
//! Each check returns a measured value and its threshold so the CLI can emit
//! flat `name,status,measured,threshold` lines and exit nonzero on failure.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::carleman::{self, CarlemanRoute};
use crate::diagnostics;
use crate::error::Result;
use crate::history::{self, CondMethod};
use crate::linalg;
use crate::models::{self, QuadraticHamiltonian};
use crate::rkg::{self, ButcherTableau, SolverOptions, StageSolver};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub measured: f64,
    pub threshold: f64,
}

impl CheckResult {
    fn upper(name: &str, measured: f64, threshold: f64) -> Self {
        Self {
            name: name.to_string(),
            pass: measured <= threshold,
            measured,
            threshold,
        }
    }

    fn range(name: &str, measured: f64, lo: f64, hi: f64) -> Self {
        Self {
            name: name.to_string(),
            pass: measured >= lo && measured <= hi,
            measured,
            threshold: hi,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{},{},{:.6e},{:.6e}",
            self.name,
            if self.pass { "pass" } else { "FAIL" },
            self.measured,
            self.threshold
        )
    }
}

/// Random stable quadratic Hamiltonian (positive-definite Q) with d ≤ 4.
pub fn random_stable_system(rng: &mut ChaCha8Rng, max_d: usize) -> QuadraticHamiltonian {
    let d = 1 + (rng.random::<u32>() as usize) % max_d;
    let n = 2 * d;
    let a = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
    let q = &a * a.transpose() + DMatrix::identity(n, n) * 0.2;
    QuadraticHamiltonian::new(d, q).expect("construction is total for symmetric Q")
}

fn random_state(rng: &mut ChaCha8Rng, n: usize, amp: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| amp * (rng.random::<f64>() * 2.0 - 1.0))
}

/// Symplecticity, unit-modulus spectrum, order, Padé identity, similarity
/// invariance and quadratic-invariant conservation of the collocation maps.
pub fn suite_rkg(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // ensemble symplecticity + unit modulus over p ∈ {1,2,3}
    let mut worst_defect = 0.0f64;
    let mut worst_modulus = 0.0f64;
    for _ in 0..50 {
        let sys = random_stable_system(&mut rng, 4);
        let k = sys.flow_matrix();
        let norm_k = linalg::spectral_norm(k);
        let tau = 0.5 / norm_k.max(1e-6) * (0.3 + 0.7 * rng.random::<f64>());
        let p = 1 + (rng.random::<u32>() as usize) % 3;
        let tab = rkg::gauss_tableau(p)?;
        let op = rkg::build_step_operator(&tab, k, tau)?;
        worst_defect = worst_defect.max(diagnostics::symplectic_defect(&op.matrix)?);
        for l in op.matrix.complex_eigenvalues().iter() {
            worst_modulus = worst_modulus.max((l.norm() - 1.0).abs());
        }
    }
    out.push(CheckResult::upper("rkg.symplectic_defect", worst_defect, 1e-10));
    out.push(CheckResult::upper("rkg.unit_modulus", worst_modulus, 1e-10));

    // Padé identity for p = 2 on 20 sampled points
    let tab2 = rkg::gauss_tableau(2)?;
    let mut pade_err = 0.0f64;
    for k in 0..20 {
        let theta = 0.31 * k as f64;
        let z = linalg::C64::new(0.3 * theta.cos(), 0.3 * theta.sin());
        let r = rkg::stability_scalar(&tab2, z)?;
        let pade = (z * z + linalg::C64::new(6.0, 0.0) * z + linalg::C64::new(12.0, 0.0))
            / (z * z - linalg::C64::new(6.0, 0.0) * z + linalg::C64::new(12.0, 0.0));
        pade_err = pade_err.max((r - pade).norm());
    }
    out.push(CheckResult::upper("rkg.pade_identity_p2", pade_err, 1e-12));

    // order on the oscillator for p = 1, 2, 3
    for p in 1..=3usize {
        let slope = oscillator_order_slope(p)?;
        let target = 2.0 * p as f64;
        out.push(CheckResult::range(
            &format!("rkg.order_p{p}"),
            slope,
            0.9 * target,
            1.1 * target,
        ));
    }

    // similarity invariance under a random well-conditioned transform
    let sys = random_stable_system(&mut rng, 2);
    let k = sys.flow_matrix();
    let n = k.nrows();
    let v = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            0.2 * (rng.random::<f64>() - 0.5)
        }
    });
    let v_inv = v.clone().try_inverse().expect("diagonally dominant");
    let tab = rkg::gauss_tableau(2)?;
    let tau = 0.3 / linalg::spectral_norm(k).max(1e-6);
    let lhs = rkg::build_step_operator(&tab, &(&v * k * &v_inv), tau)?.matrix;
    let rhs = &v * rkg::build_step_operator(&tab, k, tau)?.matrix * &v_inv;
    let sim = linalg::spectral_norm_auto(&(lhs - rhs));
    out.push(CheckResult::upper("rkg.similarity_invariance", sim, 1e-10));

    // quadratic invariant along a linear trajectory
    let chain = models::make_harmonic_chain(4, 1.0, 1.0)?;
    let x0 = random_state(&mut rng, 8, 0.7);
    let traj = rkg::integrate_linear(&tab, chain.flow_matrix(), &x0, 0.1, 2_000)?;
    let h0 = chain.energy(&x0)?;
    let drift = traj
        .iter()
        .map(|x| (chain.energy(x).unwrap() - h0).abs() / h0.abs())
        .fold(0.0, f64::max);
    out.push(CheckResult::upper("rkg.quadratic_invariant", drift, 1e-10));

    Ok(out)
}

/// Order slope of the named tableau family on the oscillator; exposed
/// separately so a corrupted tableau can be fault-injected in tests.
pub fn oscillator_order_check(tabs: &[ButcherTableau], expected: f64) -> Result<CheckResult> {
    let chain = models::make_harmonic_chain(1, 1.0, 1.0)?;
    let x0 = DVector::from_row_slice(&[1.0, 0.0]);
    let mut errs = Vec::new();
    let mut taus = Vec::new();
    for (i, tab) in tabs.iter().enumerate() {
        let m = 10 * (1 << i);
        let tau = 1.0 / m as f64;
        let traj = rkg::integrate_linear(tab, chain.flow_matrix(), &x0, tau, m)?;
        let exact = DVector::from_row_slice(&[1.0f64.cos(), -(1.0f64.sin())]);
        errs.push((traj[m].clone() - exact).norm().max(1e-16));
        taus.push(tau);
    }
    let slope = diagnostics::order_fit(&errs, &taus)?;
    Ok(CheckResult::range(
        "rkg.order_fault_check",
        slope,
        0.9 * expected,
        1.1 * expected,
    ))
}

fn oscillator_order_slope(p: usize) -> Result<f64> {
    let chain = models::make_harmonic_chain(1, 1.0, 1.0)?;
    let tab = rkg::gauss_tableau(p)?;
    let x0 = DVector::from_row_slice(&[1.0, 0.0]);
    let mut errs = Vec::new();
    let mut taus = Vec::new();
    for m in [8usize, 16, 32] {
        let tau = 1.0 / m as f64;
        let traj = rkg::integrate_linear(&tab, chain.flow_matrix(), &x0, tau, m)?;
        let exact = DVector::from_row_slice(&[1.0f64.cos(), -(1.0f64.sin())]);
        errs.push((traj[m].clone() - exact).norm().max(1e-16));
        taus.push(tau);
    }
    diagnostics::order_fit(&errs, &taus)
}

/// Solve-step equivalence, residuals, padding behavior, the condition-number
/// envelope and the nilpotent-series bound.
pub fn suite_history(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut worst_equiv = 0.0f64;
    let mut worst_residual = 0.0f64;
    let mut worst_tail = 0.0f64;
    for i in 0..20 {
        let sys = random_stable_system(&mut rng, 3);
        let k = sys.flow_matrix();
        let tau = 0.4 / linalg::spectral_norm(k).max(1e-6);
        let p = 1 + (rng.random::<u32>() as usize) % 2;
        let tab = rkg::gauss_tableau(p)?;
        let op = rkg::build_step_operator(&tab, k, tau)?;
        let x0 = random_state(&mut rng, k.nrows(), 1.0);
        let m = 20 + (rng.random::<u32>() as usize) % 60;
        let r = if i % 2 == 0 { m } else { 0 };
        let hsys = history::assemble(&op, &x0, m, r)?;
        let sol = hsys.solve()?;
        let seq = rkg::integrate_linear(&tab, k, &x0, tau, m)?;
        worst_equiv = worst_equiv
            .max((&sol.final_state - &seq[m]).norm() / seq[m].norm().max(f64::MIN_POSITIVE));
        worst_residual = worst_residual.max(sol.residual);
        for blk in m..(m + r) {
            worst_tail = worst_tail.max((&sol.blocks[blk] - &sol.blocks[blk + 1]).norm());
        }
    }
    out.push(CheckResult::upper("history.solve_equivalence", worst_equiv, 1e-10));
    out.push(CheckResult::upper("history.residual", worst_residual, 1e-10));
    out.push(CheckResult::upper("history.padded_tail", worst_tail, 1e-12));

    // κ(L) ≤ C·M·κ(V)² envelope with one fitted constant across the ensemble
    let mut constants = Vec::new();
    for _ in 0..10 {
        let sys = random_stable_system(&mut rng, 2);
        let k = sys.flow_matrix();
        let report = diagnostics::spectral_report(k)?;
        let tau = 0.3 / linalg::spectral_norm(k).max(1e-6);
        let tab = rkg::gauss_tableau(1)?;
        let op = rkg::build_step_operator(&tab, k, tau)?;
        let x0 = random_state(&mut rng, k.nrows(), 1.0);
        let m = 30;
        let hsys = history::assemble(&op, &x0, m, 0)?;
        let kappa = hsys.condition_number(CondMethod::Exact)?;
        constants.push(kappa / (m as f64 * report.kappa_v * report.kappa_v));
    }
    let mut sorted = constants.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sorted[sorted.len() / 2];
    let worst_ratio = constants
        .iter()
        .map(|c| c / median)
        .fold(0.0f64, f64::max);
    out.push(CheckResult::upper(
        "history.kappa_envelope_spread",
        worst_ratio,
        10.0,
    ));

    // nilpotent-series bound ‖L⁻¹‖ ≤ 1 + Σ‖R^j‖ on a small instance
    let sys = random_stable_system(&mut rng, 2);
    let k = sys.flow_matrix();
    let tau = 0.3 / linalg::spectral_norm(k).max(1e-6);
    let tab = rkg::gauss_tableau(1)?;
    let op = rkg::build_step_operator(&tab, k, tau)?;
    let x0 = random_state(&mut rng, k.nrows(), 1.0);
    let hsys = history::assemble(&op, &x0, 10, 3)?;
    let inv = hsys
        .dense()
        .try_inverse()
        .expect("unit lower-triangular block matrix");
    let inv_norm = linalg::spectral_norm_auto(&inv);
    let bound = 1.0 + linalg::power_norms(&op.matrix, 13).iter().sum::<f64>();
    out.push(CheckResult::upper(
        "history.nilpotent_series",
        inv_norm / bound,
        1.0 + 1e-10,
    ));

    Ok(out)
}

/// Carleman block structure, spectrum structure, cross-route agreement and
/// truncation decay on a small FPU instance.
pub fn suite_carleman(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // product rule on random states
    let sys = models::make_fpu_chain(2, 1.0, 0.2, 1.0)?;
    let csys = carleman::build_carleman(&sys, 3)?;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let x = random_state(&mut rng, 4, 0.5);
        let xx = carleman::kron_vec(&x, &x);
        let xxx = carleman::kron_vec(&xx, &x);
        let lhs = &csys.diag_blocks[1] * &xx + &csys.super_blocks[1] * &xxx;
        let f = models::VectorField::eval(&sys, &x);
        let rhs = carleman::kron_vec(&f, &x) + carleman::kron_vec(&x, &f);
        worst = worst.max((lhs - rhs).amax());
    }
    out.push(CheckResult::upper("carleman.product_rule", worst, 1e-12));

    // spectrum of A^(N) inside the ≤N-fold sums
    let eig = linalg::complex_eig(sys.f1_matrix())?;
    let sums = carleman::fold_sums(&eig.values, 3);
    let mut spectrum_defect = 0.0f64;
    for l in csys.matrix.complex_eigenvalues().iter() {
        let d = sums
            .iter()
            .map(|s| (l - s).norm())
            .fold(f64::INFINITY, f64::min);
        spectrum_defect = spectrum_defect.max(d);
    }
    out.push(CheckResult::upper(
        "carleman.spectrum_structure",
        spectrum_defect,
        1e-8,
    ));

    // sequential and history routes agree
    let tab = rkg::gauss_tableau(2)?;
    let x0 = DVector::from_row_slice(&[0.15, -0.1, 0.05, 0.1]);
    let seq = carleman::integrate_carleman(&csys, &x0, &tab, 0.02, 50, CarlemanRoute::Sequential)?;
    let hist = carleman::integrate_carleman(&csys, &x0, &tab, 0.02, 50, CarlemanRoute::History)?;
    let mut route_diff = 0.0f64;
    for (a, b) in seq.iter().zip(&hist) {
        route_diff = route_diff.max((a - b).norm());
    }
    out.push(CheckResult::upper("carleman.route_agreement", route_diff, 1e-10));

    // exact-solution embedding: y_j tracks x(t)^{⊗j}
    let x0_small = DVector::from_row_slice(&[0.05, -0.03, 0.02, 0.03]);
    let reference = rkg::integrate_nonlinear(
        &tab,
        &sys,
        &x0_small,
        0.002,
        500,
        SolverOptions {
            solver: StageSolver::Newton,
            tol: 1e-13,
            max_iter: 50,
        },
    )?;
    let x_end = &reference[500];
    let csys5 = carleman::build_carleman(&sys, 4)?;
    let op = rkg::build_step_operator(&tab, &csys5.matrix, 0.02)?;
    let mut y = csys5.initial_vector(&x0_small)?;
    for _ in 0..50 {
        y = op.apply(&y);
    }
    let mut embed_defect = 0.0f64;
    let mut power = x_end.clone();
    for j in 1..=csys5.level {
        if j > 1 {
            power = carleman::kron_vec(&power, x_end);
        }
        let block = y.rows(csys5.offsets[j - 1], power.len()).clone_owned();
        embed_defect = embed_defect.max((block - &power).norm() / power.norm().max(1e-300));
    }
    out.push(CheckResult::upper(
        "carleman.block_embedding",
        embed_defect,
        1e-2,
    ));

    Ok(out)
}

/// Propagator-norm envelope, κ(G) bound and the conditioning chain for the
/// Carleman history system.
pub fn suite_bounds(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Appendix-style envelope on small random cubic instances
    let mut worst_ratio = 0.0f64;
    let mut nilpotent_ok = true;
    for _ in 0..5 {
        let alpha = 0.05 + 0.2 * rng.random::<f64>();
        let q = DMatrix::from_diagonal(&DVector::from_row_slice(&[0.5, 0.5]));
        let c = models::CubicTensor::from_triplets(2, &[(0, 0, 0, alpha / 3.0)])?;
        let sys = models::CubicHamiltonian::new(1, q, c)?;
        let csys = carleman::build_carleman(&sys, 3)?;
        let report = carleman::verify_norm_bound(&csys, &[0.1, 0.5, 1.0])?;
        worst_ratio = worst_ratio.max(report.max_ratio);
        nilpotent_ok &= report.a1_nilpotent;
    }
    out.push(CheckResult::upper("bounds.norm_envelope", worst_ratio, 1.0));
    out.push(CheckResult::upper(
        "bounds.a1_nilpotent",
        if nilpotent_ok { 0.0 } else { 1.0 },
        0.5,
    ));

    // κ(G) < 2 + 2√p for τ‖K‖ < 1/(2√p)
    let mut worst_margin = 0.0f64;
    for _ in 0..50 {
        let sys = random_stable_system(&mut rng, 3);
        let k = sys.flow_matrix();
        let p = 1 + (rng.random::<u32>() as usize) % 8;
        let tab = rkg::gauss_tableau(p)?;
        let norm_k = linalg::spectral_norm(k);
        let tau = 0.9 / (2.0 * (p as f64).sqrt() * norm_k.max(1e-9));
        let op = rkg::build_step_operator(&tab, k, tau)?;
        let bound = 2.0 + 2.0 * (p as f64).sqrt();
        worst_margin = worst_margin.max(op.kappa_g / bound);
    }
    out.push(CheckResult::upper("bounds.kappa_g", worst_margin, 1.0));

    // κ(L) for a Carleman history system against c·M·max_j‖R^j‖·‖R‖
    let sys = models::make_fpu_chain(2, 1.0, 0.05, 1.0)?;
    let csys = carleman::build_carleman(&sys, 2)?;
    let tab = rkg::gauss_tableau(2)?;
    let tau = 0.5 / linalg::spectral_norm(&csys.matrix).max(1e-9);
    let op = rkg::build_step_operator(&tab, &csys.matrix, tau)?;
    let y0 = csys.initial_vector(&DVector::from_row_slice(&[0.1, -0.05, 0.1, 0.05]))?;
    let m = 12;
    let hsys = history::assemble(&op, &y0, m, 0)?;
    let kappa = hsys.condition_number(CondMethod::Exact)?;
    let norms = linalg::power_norms(&op.matrix, m);
    let max_power = norms.iter().cloned().fold(0.0, f64::max);
    let chain_bound = 4.0 * m as f64 * max_power * norms[0];
    out.push(CheckResult::upper(
        "bounds.carleman_kappa_chain",
        kappa / chain_bound,
        1.0,
    ));

    // the norm-lemma envelope N·κ(V)^N caps ‖R^j‖ while jτ stays inside the
    // regime T ≤ 1/(e‖F₂‖κ(V)^N)
    let eig = linalg::complex_eig(sys.f1_matrix())?;
    let f2_norm = linalg::spectral_norm_auto(&sys.f2_matrix());
    let level = csys.level as f64;
    let kn = eig.kappa2.powf(level);
    let t_max = 1.0 / (std::f64::consts::E * f2_norm * kn);
    let j_max = ((t_max / tau).floor() as usize).clamp(1, m);
    let envelope = level * kn;
    let mut worst_power = 0.0f64;
    for &nj in norms.iter().take(j_max) {
        worst_power = worst_power.max(nj / envelope);
    }
    out.push(CheckResult::upper(
        "bounds.power_norm_envelope",
        worst_power,
        1.0,
    ));

    Ok(out)
}

/// All suites.
pub fn suite_all(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = suite_rkg(seed)?;
    out.extend(suite_history(seed + 1)?);
    out.extend(suite_carleman(seed + 2)?);
    out.extend(suite_bounds(seed + 3)?);
    Ok(out)
}

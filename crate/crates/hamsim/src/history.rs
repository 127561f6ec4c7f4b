//! Global history-state formulation of the stepped recursion.
//!
//! The one-step maps x_{m+1} = R x_m over m = 0..M are concatenated into a
//! single block lower-bidiagonal system L·x = b with unit diagonal blocks,
//! −R on the first M subdiagonal blocks and, when r tail repetitions are
//! requested, −I on the final r subdiagonal blocks (so the last r+1 blocks
//! of the solution all equal x_M). Classically L is solved by forward block
//! substitution; the condition number κ(L) is the quantity of interest and
//! is reported exactly (SVD) or by power iteration.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rkg::StepOperator;

#[derive(Debug, Clone)]
pub struct BlockHistorySystem {
    pub step: StepOperator,
    pub x0: DVector<f64>,
    /// Number of time steps M.
    pub steps: usize,
    /// Number of padded tail repetitions r.
    pub padding: usize,
}

#[derive(Debug, Clone)]
pub struct HistorySolution {
    /// All blocks x_0 .. x_{M+r}.
    pub blocks: Vec<DVector<f64>>,
    pub final_state: DVector<f64>,
    /// Power-iteration estimate of κ(L).
    pub kappa_estimate: f64,
    /// ‖L·history − b‖ / ‖b‖ recomputed through the sparse triplet form.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CondMethod {
    Exact,
    Estimate,
}

pub fn assemble(
    step: &StepOperator,
    x0: &DVector<f64>,
    steps: usize,
    padding: usize,
) -> Result<BlockHistorySystem> {
    if steps < 1 {
        return Err(Error::ParameterDomain("history system needs M >= 1".into()));
    }
    if x0.len() != step.dim() {
        return Err(Error::Shape(format!(
            "initial state length {} vs block dimension {}",
            x0.len(),
            step.dim()
        )));
    }
    Ok(BlockHistorySystem {
        step: step.clone(),
        x0: x0.clone(),
        steps,
        padding,
    })
}

impl BlockHistorySystem {
    pub fn block_dim(&self) -> usize {
        self.step.dim()
    }

    pub fn total_blocks(&self) -> usize {
        self.steps + self.padding + 1
    }

    pub fn dim(&self) -> usize {
        self.total_blocks() * self.block_dim()
    }

    /// Coordinate triplets (row, col, value) of L, suitable for dumping or
    /// materializing.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let b = self.block_dim();
        let mut out = Vec::new();
        for blk in 0..self.total_blocks() {
            for i in 0..b {
                out.push((blk * b + i, blk * b + i, 1.0));
            }
        }
        let r = &self.step.matrix;
        for blk in 1..=self.steps {
            for i in 0..b {
                for j in 0..b {
                    let v = r[(i, j)];
                    if v != 0.0 {
                        out.push((blk * b + i, (blk - 1) * b + j, -v));
                    }
                }
            }
        }
        for blk in (self.steps + 1)..self.total_blocks() {
            for i in 0..b {
                out.push((blk * b + i, (blk - 1) * b + i, -1.0));
            }
        }
        out
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for (i, j, v) in self.triplets() {
            m[(i, j)] += v;
        }
        m
    }

    /// Right-hand side b = (x₀, 0, …, 0).
    pub fn rhs(&self) -> DVector<f64> {
        let mut b = DVector::zeros(self.dim());
        b.rows_mut(0, self.block_dim()).copy_from(&self.x0);
        b
    }

    /// Forward block substitution.
    pub fn solve(&self) -> Result<HistorySolution> {
        let mut blocks = Vec::with_capacity(self.total_blocks());
        blocks.push(self.x0.clone());
        for blk in 1..self.total_blocks() {
            let prev = &blocks[blk - 1];
            let next = if blk <= self.steps {
                self.step.apply(prev)
            } else {
                prev.clone()
            };
            let norm = next.norm();
            if !norm.is_finite() || norm > 1e300 {
                return Err(Error::Divergence(format!(
                    "history block {blk} has norm {norm:.3e}"
                )));
            }
            blocks.push(next);
        }

        // independent residual check through the triplet representation
        let history = concat_blocks(&blocks);
        let b = self.rhs();
        let mut lx = DVector::zeros(self.dim());
        for (i, j, v) in self.triplets() {
            lx[i] += v * history[j];
        }
        let residual = (lx - &b).norm() / b.norm().max(f64::MIN_POSITIVE);

        let kappa_estimate = self.condition_number(CondMethod::Estimate)?;
        let final_state = blocks.last().expect("at least one block").clone();
        Ok(HistorySolution {
            blocks,
            final_state,
            kappa_estimate,
            residual,
        })
    }

    /// L·v and Lᵀ·v through the block structure.
    fn apply_l(&self, v: &DVector<f64>) -> DVector<f64> {
        let b = self.block_dim();
        let mut out = v.clone();
        for blk in 1..self.total_blocks() {
            let prev = v.rows((blk - 1) * b, b);
            let contrib = if blk <= self.steps {
                &self.step.matrix * prev
            } else {
                prev.clone_owned()
            };
            let mut row = out.rows_mut(blk * b, b);
            row -= contrib;
        }
        out
    }

    fn apply_lt(&self, v: &DVector<f64>) -> DVector<f64> {
        let b = self.block_dim();
        let mut out = v.clone();
        for blk in 1..self.total_blocks() {
            let next = v.rows(blk * b, b);
            let contrib = if blk <= self.steps {
                self.step.matrix.transpose() * next
            } else {
                next.clone_owned()
            };
            let mut row = out.rows_mut((blk - 1) * b, b);
            row -= contrib;
        }
        out
    }

    /// L⁻¹·v by forward substitution.
    fn solve_l(&self, v: &DVector<f64>) -> DVector<f64> {
        let b = self.block_dim();
        let mut out = DVector::zeros(self.dim());
        let mut prev = DVector::zeros(b);
        for blk in 0..self.total_blocks() {
            let mut x = v.rows(blk * b, b).clone_owned();
            if blk >= 1 {
                if blk <= self.steps {
                    x += &self.step.matrix * &prev;
                } else {
                    x += &prev;
                }
            }
            out.rows_mut(blk * b, b).copy_from(&x);
            prev = x;
        }
        out
    }

    /// L⁻ᵀ·v by backward substitution.
    fn solve_lt(&self, v: &DVector<f64>) -> DVector<f64> {
        let b = self.block_dim();
        let total = self.total_blocks();
        let mut out = DVector::zeros(self.dim());
        let mut next = DVector::zeros(b);
        for blk in (0..total).rev() {
            let mut x = v.rows(blk * b, b).clone_owned();
            if blk + 1 < total {
                if blk + 1 <= self.steps {
                    x += self.step.matrix.transpose() * &next;
                } else {
                    x += &next;
                }
            }
            out.rows_mut(blk * b, b).copy_from(&x);
            next = x;
        }
        out
    }

    /// κ(L): exact singular-value ratio (dimension ≤ 4000) or randomized
    /// power iteration on LᵀL and L⁻ᵀL⁻¹ (20 iterations, 3 probes).
    pub fn condition_number(&self, method: CondMethod) -> Result<f64> {
        match method {
            CondMethod::Exact => {
                if self.dim() > 4000 {
                    return Err(Error::Capability(format!(
                        "exact condition number limited to dimension 4000, got {}; \
                         use the estimate",
                        self.dim()
                    )));
                }
                linalg::cond2_exact(&self.dense(), 4000)
            }
            CondMethod::Estimate => {
                let smax = self.power_estimate(|v| self.apply_lt(&self.apply_l(v)));
                let sinv = self.power_estimate(|v| self.solve_lt(&self.solve_l(v)));
                Ok(smax * sinv)
            }
        }
    }

    fn power_estimate<F>(&self, op: F) -> f64
    where
        F: Fn(&DVector<f64>) -> DVector<f64>,
    {
        use rand::prelude::*;
        let n = self.dim();
        let mut best: f64 = 0.0;
        for probe in 0..3 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x9e3779b9 + probe);
            let mut v = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
            v /= v.norm();
            let mut sigma: f64 = 0.0;
            for _ in 0..20 {
                let w = op(&v);
                let nw = w.norm();
                if nw == 0.0 {
                    break;
                }
                sigma = nw.sqrt();
                v = w / nw;
            }
            best = best.max(sigma);
        }
        best
    }
}

/// Query-count predictions of the quantum formulation next to the measured
/// classical conditioning; purely diagnostic.
#[derive(Debug, Clone)]
pub struct ComplexityReport {
    /// T‖K‖κ(V)² (linear pipeline, logarithmic factors dropped).
    pub linear_queries: f64,
    /// T^(1+2 ln κV) ε^(−2 ln κV) · coefficient norm (nonlinear pipeline).
    pub nonlinear_queries: f64,
    pub measured_kappa_l: f64,
    pub horizon: f64,
    pub kappa_v: f64,
    pub eps: f64,
}

pub fn complexity_report(
    sys: &BlockHistorySystem,
    kappa_v: f64,
    horizon: f64,
    coeff_norm: f64,
    eps: f64,
) -> Result<ComplexityReport> {
    if !(horizon > 0.0 && kappa_v >= 1.0 && coeff_norm >= 0.0 && eps > 0.0) {
        return Err(Error::ParameterDomain(
            "complexity report needs positive T, eps, coefficient norm and kappa_V >= 1".into(),
        ));
    }
    let measured = sys.condition_number(CondMethod::Estimate)?;
    let e = kappa_v.ln();
    Ok(ComplexityReport {
        linear_queries: horizon * coeff_norm * kappa_v * kappa_v,
        nonlinear_queries: horizon.powf(1.0 + 2.0 * e) * eps.powf(-2.0 * e) * coeff_norm,
        measured_kappa_l: measured,
        horizon,
        kappa_v,
        eps,
    })
}

fn concat_blocks(blocks: &[DVector<f64>]) -> DVector<f64> {
    let b = blocks[0].len();
    let mut out = DVector::zeros(b * blocks.len());
    for (i, blk) in blocks.iter().enumerate() {
        out.rows_mut(i * b, b).copy_from(blk);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::make_harmonic_chain;
    use crate::rkg::{build_step_operator, gauss_tableau, integrate_linear};

    fn oscillator_step(tau: f64, p: usize) -> StepOperator {
        let chain = make_harmonic_chain(1, 1.0, 1.0).unwrap();
        let tab = gauss_tableau(p).unwrap();
        build_step_operator(&tab, chain.flow_matrix(), tau).unwrap()
    }

    #[test]
    fn smallest_system_structure() {
        let op = oscillator_step(0.1, 1);
        let x0 = DVector::from_row_slice(&[1.0, 0.0]);
        let sys = assemble(&op, &x0, 1, 0).unwrap();
        let dense = sys.dense();
        assert_eq!(dense.nrows(), 4);
        // L = [[I, 0], [−R, I]]
        assert_eq!(dense[(0, 0)], 1.0);
        assert_eq!(dense[(2, 0)], -op.matrix[(0, 0)]);
        assert_eq!(dense[(3, 1)], -op.matrix[(1, 1)]);
        assert_eq!(dense[(0, 2)], 0.0);
    }

    #[test]
    fn padded_subdiagonal_pattern() {
        let op = oscillator_step(0.1, 1);
        let x0 = DVector::from_row_slice(&[1.0, 0.0]);
        let sys = assemble(&op, &x0, 2, 1).unwrap();
        let dense = sys.dense();
        let b = 2;
        // blocks (1,0) and (2,1) are −R, block (3,2) is −I
        for i in 0..b {
            for j in 0..b {
                assert_eq!(dense[(b + i, j)], -op.matrix[(i, j)]);
                assert_eq!(dense[(2 * b + i, b + j)], -op.matrix[(i, j)]);
                let expected = if i == j { -1.0 } else { 0.0 };
                assert_eq!(dense[(3 * b + i, 2 * b + j)], expected);
            }
        }
    }

    #[test]
    fn triplet_count_formula() {
        let op = oscillator_step(0.07, 2);
        let x0 = DVector::from_row_slice(&[0.5, 0.5]);
        let m = 5;
        let r = 3;
        let sys = assemble(&op, &x0, m, r).unwrap();
        let b = sys.block_dim();
        let nnz_r = op.matrix.iter().filter(|&&v| v != 0.0).count();
        let expected = (m + r + 1) * b + m * nnz_r + r * b;
        assert_eq!(sys.triplets().len(), expected);
    }

    #[test]
    fn identity_step_keeps_blocks_constant() {
        let tab = gauss_tableau(1).unwrap();
        let k = DMatrix::zeros(2, 2);
        let op = build_step_operator(&tab, &k, 0.1).unwrap();
        let x0 = DVector::from_row_slice(&[0.3, 0.7]);
        let sys = assemble(&op, &x0, 4, 2).unwrap();
        let sol = sys.solve().unwrap();
        for blk in &sol.blocks {
            assert_eq!(blk, &x0);
        }
        assert!(sol.residual < 1e-15);
    }

    #[test]
    fn solve_matches_sequential_stepping() {
        let chain = make_harmonic_chain(1, 1.0, 1.0).unwrap();
        let tab = gauss_tableau(2).unwrap();
        let tau = 0.05;
        let m = 100;
        let op = build_step_operator(&tab, chain.flow_matrix(), tau).unwrap();
        let x0 = DVector::from_row_slice(&[1.0, 0.2]);
        let seq = integrate_linear(&tab, chain.flow_matrix(), &x0, tau, m).unwrap();
        let sys = assemble(&op, &x0, m, 0).unwrap();
        let sol = sys.solve().unwrap();
        let diff = (&sol.final_state - &seq[m]).norm() / seq[m].norm();
        assert!(diff < 1e-12, "relative deviation {diff}");
        assert!(sol.residual < 1e-10);
    }

    #[test]
    fn padded_tail_blocks_equal_final_state() {
        let op = oscillator_step(0.1, 2);
        let x0 = DVector::from_row_slice(&[0.9, -0.4]);
        let m = 20;
        let r = 7;
        let sys = assemble(&op, &x0, m, r).unwrap();
        let sol = sys.solve().unwrap();
        for blk in m..(m + r) {
            let diff = (&sol.blocks[blk] - &sol.blocks[blk + 1]).norm();
            assert!(diff < 1e-12, "tail blocks {blk} and {} differ", blk + 1);
        }
    }

    #[test]
    fn condition_number_exact_vs_estimate() {
        let op = oscillator_step(0.1, 1);
        let x0 = DVector::from_row_slice(&[1.0, 0.0]);
        let sys = assemble(&op, &x0, 12, 0).unwrap();
        let exact = sys.condition_number(CondMethod::Exact).unwrap();
        let est = sys.condition_number(CondMethod::Estimate).unwrap();
        assert!(
            (est - exact).abs() / exact < 0.05,
            "estimate {est} vs exact {exact}"
        );
    }

    #[test]
    fn condition_number_grows_about_linearly_in_m() {
        let op = oscillator_step(0.1, 1);
        let x0 = DVector::from_row_slice(&[1.0, 0.0]);
        let ms = [10usize, 20, 40, 80];
        let mut kappas = Vec::new();
        for &m in &ms {
            let sys = assemble(&op, &x0, m, 0).unwrap();
            kappas.push(sys.condition_number(CondMethod::Exact).unwrap());
        }
        let taus: Vec<f64> = ms.iter().map(|&m| m as f64).collect();
        let slope = crate::diagnostics::order_fit(&kappas, &taus).unwrap();
        assert!(slope <= 1.2, "κ(L) growth slope {slope}");
        assert!(slope > 0.5, "κ(L) should grow with M, slope {slope}");
    }

    #[test]
    fn nilpotent_series_bounds_inverse_norm() {
        let op = oscillator_step(0.15, 1);
        let x0 = DVector::from_row_slice(&[1.0, 0.0]);
        let m = 8;
        let r = 2;
        let sys = assemble(&op, &x0, m, r).unwrap();
        let dense = sys.dense();
        let inv = dense.clone().try_inverse().unwrap();
        let inv_norm = linalg::spectral_norm_auto(&inv);
        let bound = 1.0
            + linalg::power_norms(&op.matrix, m + r)
                .iter()
                .sum::<f64>();
        assert!(inv_norm <= bound * (1.0 + 1e-10), "{inv_norm} vs {bound}");
    }

    #[test]
    fn complexity_report_scalings() {
        let op = oscillator_step(0.1, 1);
        let x0 = DVector::from_row_slice(&[1.0, 0.0]);
        let sys = assemble(&op, &x0, 5, 0).unwrap();
        let r1 = complexity_report(&sys, 1.0, 1.0, 1.0, 1e-3).unwrap();
        assert!((r1.linear_queries - 1.0).abs() < 1e-12);
        // κV = 1 removes the ε dependence entirely
        assert!((r1.nonlinear_queries - 1.0).abs() < 1e-12);
        let r2 = complexity_report(&sys, 1.0, 2.0, 1.0, 1e-3).unwrap();
        assert!((r2.linear_queries - 2.0 * r1.linear_queries).abs() < 1e-12);
        // nonlinear exponent 2 ln 2 at κV = 2
        let r3 = complexity_report(&sys, 2.0, 1.0, 1.0, 1e-3).unwrap();
        let expected = 1e3f64.powf(2.0 * 2.0f64.ln());
        assert!(
            ((r3.nonlinear_queries - expected) / expected).abs() < 1e-12,
            "{} vs {expected}",
            r3.nonlinear_queries
        );
    }

    #[test]
    fn assemble_shape_checks() {
        let op = oscillator_step(0.1, 1);
        let bad = DVector::from_row_slice(&[1.0, 0.0, 0.0]);
        assert!(matches!(
            assemble(&op, &bad, 3, 0),
            Err(Error::Shape(_))
        ));
        let x0 = DVector::from_row_slice(&[1.0, 0.0]);
        assert!(matches!(
            assemble(&op, &x0, 0, 0),
            Err(Error::ParameterDomain(_))
        ));
    }
}

// Scratch calibration runs (not part of the shipped suite).

use hamsim::carleman::{self, CarlemanRoute, ResonanceMode};
use hamsim::linalg;
use hamsim::models;
use hamsim::rkg::{self, SolverOptions, StageSolver};
use nalgebra::DVector;

#[test]
#[ignore]
fn fpu2_carleman_landscape() {
    let alpha = 0.05;
    let sys = models::make_fpu_chain(2, 1.0, alpha, 1.0).unwrap();
    let f1 = sys.f1_matrix();
    let f2 = sys.f2_matrix();
    let eig = linalg::complex_eig(f1).unwrap();
    println!("eigs = {:?}", eig.values);
    println!("kappa1(V) = {}, kappa2(V) = {}", eig.kappa1, eig.kappa2);
    println!("|F2|_1 = {}, |F2|_2 = {}", linalg::one_norm(&f2), linalg::spectral_norm_auto(&f2));
    for cap in [4usize, 5, 6, 7, 8] {
        let m = carleman::resonance_margins(f1, cap).unwrap();
        println!("cap {cap}: literal {} effective {}", m.literal, m.effective);
    }

    let t = 1.0;
    let tau = 0.01;
    let steps = 100;
    let tab = rkg::gauss_tableau(2).unwrap();

    // integration-error floor at N = 4: halve tau and compare
    {
        let csys = carleman::build_carleman(&sys, 4).unwrap();
        let x0 = DVector::from_row_slice(&[0.4, -0.25, 0.15, 0.3]) * 0.1;
        let a = carleman::integrate_carleman(&csys, &x0, &tab, tau, steps, CarlemanRoute::Sequential).unwrap();
        let b = carleman::integrate_carleman(&csys, &x0, &tab, tau / 2.0, steps * 2, CarlemanRoute::Sequential).unwrap();
        println!("integration floor estimate p=2: {:.3e}", (&a[steps] - &b[2 * steps]).norm());
        let tab3 = rkg::gauss_tableau(3).unwrap();
        let c = carleman::integrate_carleman(&csys, &x0, &tab3, tau, steps, CarlemanRoute::Sequential).unwrap();
        println!("p=2 vs p=3 at same tau: {:.3e}", (&a[steps] - &c[steps]).norm());
    }

    for scale in [0.02f64, 0.05, 0.1] {
        let x0 = DVector::from_row_slice(&[0.4, -0.25, 0.15, 0.3]) * scale;
        let mu = carleman::estimate_solution_bound(&sys, &x0, t).unwrap();
        let delta = carleman::resonance_margin(f1, 7, ResonanceMode::Effective).unwrap();
        let rr = carleman::convergence_radius(f1, &f2, mu, delta).unwrap();
        println!("\nscale {scale}: mu = {mu:.4}, delta = {delta:.4}, rr = {rr:.4}");

        // reference at tau/100
        let reference = rkg::integrate_nonlinear(
            &tab,
            &sys,
            &x0,
            tau / 100.0,
            steps * 100,
            SolverOptions {
                solver: StageSolver::Newton,
                tol: 1e-14,
                max_iter: 60,
            },
        )
        .unwrap();
        let x_ref = &reference[steps * 100];

        let mut errs = Vec::new();
        for level in [2usize, 3, 4, 5] {
            let t0 = std::time::Instant::now();
            let csys = carleman::build_carleman(&sys, level).unwrap();
            let y1 = carleman::integrate_carleman(&csys, &x0, &tab, tau, steps, CarlemanRoute::Sequential)
                .unwrap();
            let err = (&y1[steps] - x_ref).norm();
            errs.push(err);
            let resid = carleman::symplectic_residual(&csys, &x0, &tab, tau, steps).unwrap();
            println!("  N = {level}: error = {err:.6e}, symp_residual = {resid:.6e}, elapsed {:?}", t0.elapsed());
        }
        for w in errs.windows(2) {
            println!("  ratio {:.4}", w[1] / w[0]);
        }
    }
}

#[test]
#[ignore]
fn normal_form_toy_landscape() {
    for alpha in [0.05f64, 0.1, 0.2] {
        for scale in [0.05f64, 0.1, 0.2] {
            let q = nalgebra::DMatrix::from_diagonal(&DVector::from_row_slice(&[0.5, 0.5]));
            let c = models::CubicTensor::from_triplets(2, &[(0, 0, 0, alpha / 3.0)]).unwrap();
            let sys = models::CubicHamiltonian::new(1, q, c).unwrap();
            let csys = carleman::build_carleman(&sys, 3).unwrap();
            let x0 = DVector::from_row_slice(&[scale, 0.5 * scale]);
            let tab = rkg::gauss_tableau(3).unwrap();
            let tau = 0.01;
            let steps = 100;
            let rep = carleman::normal_form_check(&csys, &x0, &tab, tau, steps).unwrap();
            let mu = carleman::estimate_solution_bound(&sys, &x0, 1.0).unwrap();
            let delta = carleman::resonance_margin(sys.f1_matrix(), 5, ResonanceMode::Effective).unwrap();
            let rr = carleman::convergence_radius(sys.f1_matrix(), &sys.f2_matrix(), mu, delta).unwrap();
            let trunc = 3.0 * 1.0 * rr * rr;
            println!(
                "alpha {alpha} scale {scale}: deviation {:.4e}, incompat {:.4e}, trunc_scale {:.4e}, ratio {:.3}",
                rep.deviation,
                rep.max_incompatibility,
                trunc,
                rep.deviation / trunc
            );
        }
    }
}

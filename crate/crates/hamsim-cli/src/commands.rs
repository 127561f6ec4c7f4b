//! Subcommand implementations.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;

use hamsim::carleman::{self, CarlemanRoute};
use hamsim::config::{
    build_initial_state, build_model, ExperimentConfig, Method, ModelSpec,
};
use hamsim::csvio;
use hamsim::diagnostics::{self, DriftSeries};
use hamsim::error::{Error, Result};
use hamsim::history::{self, CondMethod};
use hamsim::models::{self, Model, SeparableForceSystem, VectorField};
use hamsim::rkg::{self, SolverOptions, StageSolver};
use hamsim::verify::{self, CheckResult};

struct Run {
    cfg: ExperimentConfig,
    model: Model,
    x0: DVector<f64>,
    out_dir: PathBuf,
}

fn load_run(config_path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<Run> {
    let text = std::fs::read_to_string(config_path)?;
    let mut cfg = ExperimentConfig::parse_str(&text)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let model = build_model(&cfg.model)?;
    let x0 = build_initial_state(&model, &cfg.initial, &cfg.model, cfg.seed)?;
    if let Model::Separable(sys) = &model {
        sys.validate_state(&x0)?;
    }
    let out_dir = out
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;
    Ok(Run {
        cfg,
        model,
        x0,
        out_dir,
    })
}

fn out_path(run: &Run, suffix: &str) -> PathBuf {
    run.out_dir
        .join(format!("{}_{suffix}", run.cfg.output.prefix))
}

/// Separable view of the configured model, for Verlet and the benchmark.
fn separable_view(spec: &ModelSpec, model: &Model) -> Result<SeparableForceSystem> {
    match (spec, model) {
        (ModelSpec::Harmonic { l, k, m, boundary }, _) => {
            models::harmonic_force_system(*l, *k, *m, *boundary)
        }
        (
            ModelSpec::Fpu {
                l,
                k,
                alpha,
                m,
                boundary,
            },
            _,
        ) => models::fpu_force_system(*l, *k, *alpha, *m, *boundary),
        (ModelSpec::Lj { .. }, Model::Separable(sys)) => Ok(sys.clone()),
        _ => Err(Error::Capability(
            "this model has no separable (force) form; verlet is unavailable".into(),
        )),
    }
}

pub fn integrate(config_path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<()> {
    let run = load_run(config_path, out, seed)?;
    let cfg = &run.cfg;
    let tau = cfg.integrator.tau;
    let steps = cfg.integrator.steps;

    let mut csv = String::from("t");
    for i in 1..=run.model.dim() {
        csv.push_str(&format!(",x_{i}"));
    }
    csv.push('\n');
    let mut energies = Vec::with_capacity(steps + 1);
    let model_ref = &run.model;
    let mut on_state = |step: usize, x: &DVector<f64>| {
        csv.push_str(&csvio::fmt_float(step as f64 * tau));
        for v in x.iter() {
            csv.push(',');
            csv.push_str(&csvio::fmt_float(*v));
        }
        csv.push('\n');
        energies.push(model_ref.energy(x).unwrap_or(f64::NAN));
    };

    let mut kappa_g = None;
    let mut step_defect = None;
    match (cfg.integrator.method, &run.model) {
        (Method::Rkg, Model::Quadratic(sys)) => {
            let tab = rkg::gauss_tableau(cfg.integrator.stages)?;
            let op = rkg::build_step_operator(&tab, sys.flow_matrix(), tau)?;
            kappa_g = Some(op.kappa_g);
            step_defect = Some(diagnostics::symplectic_defect(&op.matrix)?);
            rkg::integrate_linear_with(&tab, sys.flow_matrix(), &run.x0, tau, steps, &mut on_state)?;
        }
        (Method::Rkg, Model::Cubic(sys)) => {
            let tab = rkg::gauss_tableau(cfg.integrator.stages)?;
            let opts = cfg.solver_options(true);
            rkg::integrate_nonlinear_with(&tab, sys, &run.x0, tau, steps, opts, &mut on_state)?;
        }
        (Method::Rkg, Model::Separable(sys)) => {
            let tab = rkg::gauss_tableau(cfg.integrator.stages)?;
            let opts = SolverOptions {
                solver: cfg.integrator.effective_solver(false),
                ..cfg.solver_options(false)
            };
            rkg::integrate_nonlinear_with(&tab, sys, &run.x0, tau, steps, opts, &mut on_state)?;
        }
        (Method::Rk4, _) => {
            let field: &dyn VectorField = match &run.model {
                Model::Quadratic(s) => s,
                Model::Cubic(s) => s,
                Model::Separable(s) => s,
            };
            rkg::integrate_rk4_with(field, &run.x0, tau, steps, &mut on_state)?;
        }
        (Method::Verlet, _) => {
            let sys = separable_view(&cfg.model, &run.model)?;
            rkg::integrate_verlet_with(&sys, &run.x0, tau, steps, &mut on_state)?;
        }
    }
    drop(on_state);

    csvio::atomic_write(&out_path(&run, "trajectory.csv"), &csv)?;

    let drift = DriftSeries::from_energy_samples(tau, energies)?;
    let (slope, stderr) = drift.trend();
    let mut report = String::new();
    report.push_str(&format!("method = {:?}\n", cfg.integrator.method));
    report.push_str(&format!("tau = {}\n", tau));
    report.push_str(&format!("steps = {steps}\n"));
    if let Some(k) = flow_matrix_of(&run.model) {
        let spectral = diagnostics::spectral_report(k)?;
        report.push_str(&format!("kappa_v = {:.17e}\n", spectral.kappa_v));
        report.push_str(&format!("stable = {}\n", spectral.stable));
    }
    if let Some(kg) = kappa_g {
        report.push_str(&format!("kappa_g = {kg:.17e}\n"));
    }
    if let Some(d) = step_defect {
        report.push_str(&format!("step_symplectic_defect = {d:.17e}\n"));
    }
    report.push_str(&format!(
        "max_relative_drift = {:.17e}\n",
        drift.max_relative_drift()
    ));
    report.push_str(&format!("drift_slope = {slope:.17e}\n"));
    report.push_str(&format!("drift_slope_stderr = {stderr:.17e}\n"));
    csvio::atomic_write(&out_path(&run, "report.txt"), &report)?;
    println!(
        "integrate: {} steps written to {}",
        steps,
        out_path(&run, "trajectory.csv").display()
    );
    Ok(())
}

fn flow_matrix_of(model: &Model) -> Option<&nalgebra::DMatrix<f64>> {
    match model {
        Model::Quadratic(s) => Some(s.flow_matrix()),
        Model::Cubic(s) => Some(s.f1_matrix()),
        Model::Separable(_) => None,
    }
}

pub fn bench_energy(config_path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<()> {
    let run = load_run(config_path, out, seed)?;
    let cfg = &run.cfg;
    let tau = cfg.integrator.tau;
    let steps = cfg.integrator.steps;
    if steps == 0 {
        return Err(Error::Config {
            line: 0,
            field: "integrator.steps".into(),
            message: "the benchmark needs at least one step".into(),
        });
    }
    // verlet availability is a precondition of the whole benchmark
    let separable = separable_view(&cfg.model, &run.model)?;

    let methods = [Method::Rkg, Method::Rk4, Method::Verlet];
    let series: Vec<Result<DriftSeries>> = methods
        .par_iter()
        .map(|method| -> Result<DriftSeries> {
            let mut energies = Vec::with_capacity(steps + 1);
            let model = &run.model;
            let collect = |_: usize, x: &DVector<f64>| {
                energies.push(model.energy(x).unwrap_or(f64::NAN));
            };
            match method {
                Method::Rkg => match &run.model {
                    Model::Quadratic(sys) => {
                        let tab = rkg::gauss_tableau(cfg.integrator.stages)?;
                        rkg::integrate_linear_with(
                            &tab,
                            sys.flow_matrix(),
                            &run.x0,
                            tau,
                            steps,
                            collect,
                        )?;
                    }
                    Model::Cubic(sys) => {
                        let tab = rkg::gauss_tableau(cfg.integrator.stages)?;
                        rkg::integrate_nonlinear_with(
                            &tab,
                            sys,
                            &run.x0,
                            tau,
                            steps,
                            cfg.solver_options(true),
                            collect,
                        )?;
                    }
                    Model::Separable(sys) => {
                        let tab = rkg::gauss_tableau(cfg.integrator.stages)?;
                        let opts = SolverOptions {
                            solver: cfg.integrator.effective_solver(false),
                            ..cfg.solver_options(false)
                        };
                        rkg::integrate_nonlinear_with(
                            &tab, sys, &run.x0, tau, steps, opts, collect,
                        )?;
                    }
                },
                Method::Rk4 => {
                    let field: &dyn VectorField = match &run.model {
                        Model::Quadratic(s) => s,
                        Model::Cubic(s) => s,
                        Model::Separable(s) => s,
                    };
                    rkg::integrate_rk4_with(field, &run.x0, tau, steps, collect)?;
                }
                Method::Verlet => {
                    rkg::integrate_verlet_with(&separable, &run.x0, tau, steps, collect)?;
                }
            }
            DriftSeries::from_energy_samples(tau, energies)
        })
        .collect();

    let mut summary = String::from("method,max_rel_drift,slope,slope_stderr\n");
    for (method, result) in methods.iter().zip(series) {
        let name = match method {
            Method::Rkg => "rkg",
            Method::Rk4 => "rk4",
            Method::Verlet => "verlet",
        };
        let drift = result?;
        csvio::write_drift_csv(&out_path(&run, &format!("drift_{name}.csv")), &drift)?;
        let (slope, stderr) = drift.trend();
        summary.push_str(&format!(
            "{name},{},{},{}\n",
            csvio::fmt_float(drift.max_relative_drift()),
            csvio::fmt_float(slope),
            csvio::fmt_float(stderr)
        ));
    }
    csvio::atomic_write(&out_path(&run, "bench_summary.csv"), &summary)?;
    println!("{summary}");
    Ok(())
}

pub fn carleman(config_path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<()> {
    let run = load_run(config_path, out, seed)?;
    let cfg = &run.cfg;
    let sys = match &run.model {
        Model::Cubic(s) => s.clone(),
        _ => {
            return Err(Error::Unsupported(
                "the carleman pipeline needs a cubic model (fpu or matrix with a C file)".into(),
            ))
        }
    };
    let tau = cfg.integrator.tau;
    let steps = cfg.integrator.steps;
    let horizon = cfg
        .carleman
        .horizon
        .unwrap_or(tau * steps as f64);
    let steps = (horizon / tau).round().max(1.0) as usize;
    if cfg.carleman.level.is_none() && cfg.carleman.eps.is_none() {
        return Err(Error::Config {
            line: 0,
            field: "carleman.eps".into(),
            message: "auto truncation (carleman.n = auto) needs carleman.eps".into(),
        });
    }
    let eps = cfg.carleman.eps.unwrap_or(1e-4);

    let plan = carleman::plan_embedding(
        &sys,
        &run.x0,
        horizon,
        eps,
        cfg.carleman.level,
        cfg.carleman.resonance,
    )?;
    let csys = &plan.system;
    let mut diagnostics = plan.diagnostics.clone();

    let tab = rkg::gauss_tableau(cfg.integrator.stages)?;
    let y1 = carleman::integrate_carleman(csys, &run.x0, &tab, tau, steps, CarlemanRoute::Sequential)?;

    // fine nonlinear reference for the measured embedding error
    let ref_scale = 100;
    let reference = rkg::integrate_nonlinear(
        &tab,
        &sys,
        &run.x0,
        tau / ref_scale as f64,
        steps * ref_scale,
        SolverOptions {
            solver: StageSolver::Newton,
            tol: 1e-13,
            max_iter: 60,
        },
    )?;
    let measured = (&y1[steps] - &reference[steps * ref_scale]).norm();
    diagnostics.measured_error = Some(measured);

    if csys.dim() <= 2000 {
        diagnostics.symplectic_residual =
            Some(carleman::symplectic_residual(csys, &run.x0, &tab, tau, steps)?);
    }

    csvio::write_trajectory_csv(&out_path(&run, "carleman_y1.csv"), tau, &y1)?;
    csvio::atomic_write(
        &out_path(&run, "carleman_report.txt"),
        &diagnostics.to_kv_lines(),
    )?;
    print!("{}", diagnostics.to_kv_lines());
    Ok(())
}

pub fn verify(suite: &str, seed: u64) -> Result<()> {
    let checks: Vec<CheckResult> = match suite {
        "all" => verify::suite_all(seed)?,
        "rkg" => verify::suite_rkg(seed)?,
        "history" => verify::suite_history(seed)?,
        "carleman" => verify::suite_carleman(seed)?,
        "bounds" => verify::suite_bounds(seed)?,
        other => {
            return Err(Error::Config {
                line: 0,
                field: "suite".into(),
                message: format!("unknown suite `{other}` (all, rkg, history, carleman, bounds)"),
            })
        }
    };
    println!("check_name,status,measured,threshold");
    let mut failed = 0;
    for check in &checks {
        println!("{}", check.line());
        if !check.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(Error::Verification(format!(
            "{failed} of {} checks failed",
            checks.len()
        )));
    }
    Ok(())
}

pub fn dump_matrix(
    config_path: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
    what: &str,
) -> Result<()> {
    let run = load_run(config_path, out, seed)?;
    let cfg = &run.cfg;
    match what {
        "q" => {
            let q = match &run.model {
                Model::Quadratic(s) => s.coefficients().clone(),
                Model::Cubic(s) => s.quadratic_part().clone(),
                Model::Separable(_) => {
                    return Err(Error::Unsupported(
                        "force-based models have no coefficient matrix".into(),
                    ))
                }
            };
            let triplets: Vec<(usize, usize, f64)> = (0..q.nrows())
                .flat_map(|i| (0..q.ncols()).map(move |j| (i, j)))
                .filter_map(|(i, j)| {
                    let v = q[(i, j)];
                    (v != 0.0).then_some((i, j, v))
                })
                .collect();
            csvio::write_triplets_csv(&out_path(&run, "q.csv"), &triplets)?;
        }
        "c" => {
            let sys = match &run.model {
                Model::Cubic(s) => s.clone(),
                _ => return Err(Error::Unsupported("no cubic tensor in this model".into())),
            };
            let mut text = String::from("i,j,k,value\n");
            for &(i, j, k, v) in sys.cubic_part().entries() {
                text.push_str(&format!("{i},{j},{k},{}\n", csvio::fmt_float(v)));
            }
            csvio::atomic_write(&out_path(&run, "c.csv"), &text)?;
        }
        "history-l" => {
            let k = flow_matrix_of(&run.model).ok_or_else(|| {
                Error::Unsupported("history dump needs a coefficient model".into())
            })?;
            let tab = rkg::gauss_tableau(cfg.integrator.stages)?;
            let op = rkg::build_step_operator(&tab, k, cfg.integrator.tau)?;
            let m = cfg.integrator.steps.max(1);
            let sys = history::assemble(&op, &run.x0, m, m)?;
            csvio::write_triplets_csv(&out_path(&run, "history_l.csv"), &sys.triplets())?;
            // report the conditioning next to the dump
            let kappa = sys.condition_number(CondMethod::Estimate)?;
            println!("kappa_l_estimate = {kappa:.6e}");
        }
        "carleman-a" => {
            let sys = match &run.model {
                Model::Cubic(s) => s.clone(),
                _ => return Err(Error::Unsupported("no cubic model configured".into())),
            };
            let level = cfg.carleman.level.unwrap_or(3);
            let csys = carleman::build_carleman(&sys, level)?;
            csvio::write_triplets_csv(&out_path(&run, "carleman_a.csv"), &csys.triplets())?;
        }
        other => {
            return Err(Error::Config {
                line: 0,
                field: "what".into(),
                message: format!("unknown matrix `{other}` (q, c, history-l, carleman-a)"),
            })
        }
    }
    Ok(())
}

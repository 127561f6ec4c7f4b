//! Flat `section.key = value` experiment configuration.
//!
//! The format is intentionally diff-friendly: one assignment per line,
//! `#` comments, no nesting. `model = harmonic|fpu|lj|matrix` selects the
//! system, `model.*` keys carry its parameters, and the `integrator`,
//! `carleman`, `initial`, `output` and `run` sections configure the run.

use std::collections::BTreeMap;
use std::path::PathBuf;

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::carleman::ResonanceMode;
use crate::error::{Error, Result};
use crate::models::{
    self, Boundary, CubicTensor, Model, QuadraticHamiltonian,
};
use crate::rkg::{SolverOptions, StageSolver};

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Harmonic {
        l: usize,
        k: f64,
        m: f64,
        boundary: Boundary,
    },
    Fpu {
        l: usize,
        k: f64,
        alpha: f64,
        m: f64,
        boundary: Boundary,
    },
    Lj {
        l: usize,
        epsilon: f64,
        sigma: f64,
        box_len: f64,
    },
    Matrix {
        q_path: PathBuf,
        c_path: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Rkg,
    Rk4,
    Verlet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorSpec {
    pub method: Method,
    pub stages: usize,
    pub tau: f64,
    pub steps: usize,
    /// None = per-system default (Newton when an analytic Jacobian exists,
    /// fixed point otherwise).
    pub solver: Option<StageSolver>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IntegratorSpec {
    fn default() -> Self {
        Self {
            method: Method::Rkg,
            stages: 2,
            tau: 0.05,
            steps: 100,
            solver: None,
            tol: 1e-12,
            max_iter: 50,
        }
    }
}

impl IntegratorSpec {
    pub fn effective_solver(&self, has_jacobian: bool) -> StageSolver {
        self.solver.unwrap_or(if has_jacobian {
            StageSolver::Newton
        } else {
            StageSolver::FixedPoint
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CarlemanSpec {
    /// None = auto (requires eps).
    pub level: Option<usize>,
    pub eps: Option<f64>,
    pub horizon: Option<f64>,
    pub resonance: ResonanceMode,
}

impl Default for CarlemanSpec {
    fn default() -> Self {
        Self {
            level: None,
            eps: None,
            horizon: None,
            resonance: ResonanceMode::Effective,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    /// Explicit state vector.
    State(Vec<f64>),
    /// Seed-driven state with the given amplitude scale.
    Amplitude(f64),
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec::Amplitude(0.1)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
    pub prefix: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub integrator: IntegratorSpec,
    pub carleman: CarlemanSpec,
    pub initial: InitialSpec,
    pub output: OutputSpec,
    pub seed: u64,
}

struct RawConfig {
    entries: BTreeMap<String, (usize, String)>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw_line) in text.lines().enumerate() {
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some(eq) = line.find('=') else {
                return Err(Error::Config {
                    line: lineno + 1,
                    field: line.chars().take(40).collect(),
                    message: "expected `key = value`".into(),
                });
            };
            let key = line[..eq].trim().to_string();
            let mut value = line[eq + 1..].trim().to_string();
            if value.len() >= 2
                && ((value.starts_with('"') && value.ends_with('"'))
                    || (value.starts_with('\'') && value.ends_with('\'')))
            {
                value = value[1..value.len() - 1].to_string();
            }
            if key.is_empty() {
                return Err(Error::Config {
                    line: lineno + 1,
                    field: "(empty)".into(),
                    message: "empty key".into(),
                });
            }
            if entries.contains_key(&key) {
                return Err(Error::Config {
                    line: lineno + 1,
                    field: key,
                    message: "duplicate key".into(),
                });
            }
            entries.insert(key, (lineno + 1, value));
        }
        Ok(Self { entries })
    }

    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key)
    }

    fn parse_with<T, F>(&mut self, key: &str, default: T, f: F) -> Result<T>
    where
        F: Fn(&str) -> Option<T>,
    {
        match self.take(key) {
            None => Ok(default),
            Some((line, v)) => f(&v).ok_or_else(|| Error::Config {
                line,
                field: key.to_string(),
                message: format!("cannot parse value `{v}`"),
            }),
        }
    }

    fn require(&mut self, key: &str) -> Result<(usize, String)> {
        self.take(key).ok_or_else(|| Error::Config {
            line: 0,
            field: key.to_string(),
            message: "missing required key".into(),
        })
    }
}

fn parse_f64(v: &str) -> Option<f64> {
    v.parse::<f64>().ok().filter(|x| x.is_finite())
}

fn parse_usize(v: &str) -> Option<usize> {
    v.parse::<usize>().ok()
}

fn parse_boundary(v: &str) -> Option<Boundary> {
    match v {
        "fixed" => Some(Boundary::Fixed),
        "anchored" => Some(Boundary::Anchored),
        "free" => Some(Boundary::Free),
        _ => None,
    }
}

impl ExperimentConfig {
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut raw = RawConfig::parse(text)?;

        let (model_line, model_kind) = raw.require("model")?;
        let model = match model_kind.as_str() {
            "harmonic" => ModelSpec::Harmonic {
                l: raw.parse_with("model.l", 1, parse_usize)?,
                k: raw.parse_with("model.k", 1.0, parse_f64)?,
                m: raw.parse_with("model.m", 1.0, parse_f64)?,
                boundary: raw.parse_with("model.boundary", Boundary::Anchored, parse_boundary)?,
            },
            "fpu" => ModelSpec::Fpu {
                l: raw.parse_with("model.l", 2, parse_usize)?,
                k: raw.parse_with("model.k", 1.0, parse_f64)?,
                alpha: raw.parse_with("model.alpha", 0.25, parse_f64)?,
                m: raw.parse_with("model.m", 1.0, parse_f64)?,
                boundary: raw.parse_with("model.boundary", Boundary::Fixed, parse_boundary)?,
            },
            "lj" => ModelSpec::Lj {
                l: raw.parse_with("model.l", 64, parse_usize)?,
                epsilon: raw.parse_with("model.epsilon", 1.0, parse_f64)?,
                sigma: raw.parse_with("model.sigma", 1.0, parse_f64)?,
                box_len: raw.parse_with("model.box", 12.0, parse_f64)?,
            },
            "matrix" => {
                let (_, q) = raw.require("model.q_csv")?;
                let c = raw.take("model.c_csv").map(|(_, v)| PathBuf::from(v));
                ModelSpec::Matrix {
                    q_path: PathBuf::from(q),
                    c_path: c,
                }
            }
            other => {
                return Err(Error::Config {
                    line: model_line,
                    field: "model".into(),
                    message: format!(
                        "unknown model `{other}` (expected harmonic, fpu, lj or matrix)"
                    ),
                })
            }
        };

        let method = raw.parse_with("integrator.method", Method::Rkg, |v| match v {
            "rkg" => Some(Method::Rkg),
            "rk4" => Some(Method::Rk4),
            "verlet" => Some(Method::Verlet),
            _ => None,
        })?;
        let solver = raw.parse_with("integrator.solver", None, |v| match v {
            "auto" => Some(None),
            "fixed_point" => Some(Some(StageSolver::FixedPoint)),
            "newton" => Some(Some(StageSolver::Newton)),
            _ => None,
        })?;
        let defaults = IntegratorSpec::default();
        let tau = raw.parse_with("integrator.tau", defaults.tau, parse_f64)?;
        let steps = raw.parse_with("integrator.steps", defaults.steps, parse_usize)?;
        let integrator = IntegratorSpec {
            method,
            stages: raw.parse_with("integrator.p", defaults.stages, parse_usize)?,
            tau,
            steps,
            solver,
            tol: raw.parse_with("integrator.tol", defaults.tol, parse_f64)?,
            max_iter: raw.parse_with("integrator.max_iter", defaults.max_iter, parse_usize)?,
        };
        if let Some((line, v)) = raw.take("integrator.t") {
            let t = parse_f64(&v).ok_or_else(|| Error::Config {
                line,
                field: "integrator.t".into(),
                message: format!("cannot parse value `{v}`"),
            })?;
            let implied = tau * steps as f64;
            if (implied - t).abs() > 1e-9 * t.abs().max(1.0) {
                return Err(Error::Config {
                    line,
                    field: "integrator.t".into(),
                    message: format!(
                        "inconsistent horizon: tau*steps = {implied} but t = {t}"
                    ),
                });
            }
        }

        let level = match raw.take("carleman.n") {
            None => None,
            Some((_, v)) if v == "auto" => None,
            Some((line, v)) => Some(parse_usize(&v).ok_or_else(|| Error::Config {
                line,
                field: "carleman.n".into(),
                message: format!("expected `auto` or an integer, got `{v}`"),
            })?),
        };
        let eps = match raw.take("carleman.eps") {
            None => None,
            Some((line, v)) => Some(parse_f64(&v).ok_or_else(|| Error::Config {
                line,
                field: "carleman.eps".into(),
                message: format!("cannot parse value `{v}`"),
            })?),
        };
        let horizon = match raw.take("carleman.t") {
            None => None,
            Some((line, v)) => Some(parse_f64(&v).ok_or_else(|| Error::Config {
                line,
                field: "carleman.t".into(),
                message: format!("cannot parse value `{v}`"),
            })?),
        };
        let resonance = raw.parse_with(
            "carleman.resonance",
            ResonanceMode::Effective,
            |v| match v {
                "effective" => Some(ResonanceMode::Effective),
                "literal" => Some(ResonanceMode::Literal),
                _ => None,
            },
        )?;
        if level.is_none() && eps.is_none() {
            // auto-N needs a target accuracy; only enforced when the carleman
            // section is actually used, so record it but do not fail here
        }
        let carleman = CarlemanSpec {
            level,
            eps,
            horizon,
            resonance,
        };

        let initial = match (raw.take("initial.state"), raw.take("initial.amplitude")) {
            (Some((line, _)), Some(_)) => {
                return Err(Error::Config {
                    line,
                    field: "initial.state".into(),
                    message: "initial.state and initial.amplitude are mutually exclusive".into(),
                })
            }
            (Some((line, v)), None) => {
                let vals: Option<Vec<f64>> =
                    v.split(',').map(|s| parse_f64(s.trim())).collect();
                InitialSpec::State(vals.filter(|v| !v.is_empty()).ok_or_else(|| {
                    Error::Config {
                        line,
                        field: "initial.state".into(),
                        message: "expected a comma-separated list of numbers".into(),
                    }
                })?)
            }
            (None, Some((line, v))) => {
                InitialSpec::Amplitude(parse_f64(&v).ok_or_else(|| Error::Config {
                    line,
                    field: "initial.amplitude".into(),
                    message: format!("cannot parse value `{v}`"),
                })?)
            }
            (None, None) => InitialSpec::default(),
        };

        let output = OutputSpec {
            dir: raw.take("output.dir").map(|(_, v)| PathBuf::from(v)),
            prefix: raw
                .take("output.prefix")
                .map(|(_, v)| v)
                .unwrap_or_else(|| "run".to_string()),
        };

        let seed = raw.parse_with("run.seed", 0u64, |v| v.parse::<u64>().ok())?;

        if let Some((line, key)) = raw.entries.iter().next().map(|(k, (l, _))| (*l, k.clone())) {
            return Err(Error::Config {
                line,
                field: key,
                message: "unknown key".into(),
            });
        }

        Ok(Self {
            model,
            integrator,
            carleman,
            initial,
            output,
            seed,
        })
    }

    /// Canonical serialization; `parse_str(serialize(c)) == c`.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        match &self.model {
            ModelSpec::Harmonic { l, k, m, boundary } => {
                s.push_str("model = harmonic\n");
                s.push_str(&format!("model.l = {l}\n"));
                s.push_str(&format!("model.k = {k}\n"));
                s.push_str(&format!("model.m = {m}\n"));
                s.push_str(&format!("model.boundary = {}\n", boundary_name(*boundary)));
            }
            ModelSpec::Fpu {
                l,
                k,
                alpha,
                m,
                boundary,
            } => {
                s.push_str("model = fpu\n");
                s.push_str(&format!("model.l = {l}\n"));
                s.push_str(&format!("model.k = {k}\n"));
                s.push_str(&format!("model.alpha = {alpha}\n"));
                s.push_str(&format!("model.m = {m}\n"));
                s.push_str(&format!("model.boundary = {}\n", boundary_name(*boundary)));
            }
            ModelSpec::Lj {
                l,
                epsilon,
                sigma,
                box_len,
            } => {
                s.push_str("model = lj\n");
                s.push_str(&format!("model.l = {l}\n"));
                s.push_str(&format!("model.epsilon = {epsilon}\n"));
                s.push_str(&format!("model.sigma = {sigma}\n"));
                s.push_str(&format!("model.box = {box_len}\n"));
            }
            ModelSpec::Matrix { q_path, c_path } => {
                s.push_str("model = matrix\n");
                s.push_str(&format!("model.q_csv = {}\n", q_path.display()));
                if let Some(c) = c_path {
                    s.push_str(&format!("model.c_csv = {}\n", c.display()));
                }
            }
        }
        let i = &self.integrator;
        s.push_str(&format!(
            "integrator.method = {}\n",
            match i.method {
                Method::Rkg => "rkg",
                Method::Rk4 => "rk4",
                Method::Verlet => "verlet",
            }
        ));
        s.push_str(&format!("integrator.p = {}\n", i.stages));
        s.push_str(&format!("integrator.tau = {}\n", i.tau));
        s.push_str(&format!("integrator.steps = {}\n", i.steps));
        s.push_str(&format!(
            "integrator.solver = {}\n",
            match i.solver {
                None => "auto",
                Some(StageSolver::FixedPoint) => "fixed_point",
                Some(StageSolver::Newton) => "newton",
            }
        ));
        s.push_str(&format!("integrator.tol = {}\n", i.tol));
        s.push_str(&format!("integrator.max_iter = {}\n", i.max_iter));
        match self.carleman.level {
            Some(n) => s.push_str(&format!("carleman.n = {n}\n")),
            None => s.push_str("carleman.n = auto\n"),
        }
        if let Some(e) = self.carleman.eps {
            s.push_str(&format!("carleman.eps = {e}\n"));
        }
        if let Some(t) = self.carleman.horizon {
            s.push_str(&format!("carleman.t = {t}\n"));
        }
        s.push_str(&format!(
            "carleman.resonance = {}\n",
            match self.carleman.resonance {
                ResonanceMode::Effective => "effective",
                ResonanceMode::Literal => "literal",
            }
        ));
        match &self.initial {
            InitialSpec::State(v) => {
                let joined: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
                s.push_str(&format!("initial.state = {}\n", joined.join(", ")));
            }
            InitialSpec::Amplitude(a) => s.push_str(&format!("initial.amplitude = {a}\n")),
        }
        if let Some(dir) = &self.output.dir {
            s.push_str(&format!("output.dir = {}\n", dir.display()));
        }
        s.push_str(&format!("output.prefix = {}\n", self.output.prefix));
        s.push_str(&format!("run.seed = {}\n", self.seed));
        s
    }

    pub fn solver_options(&self, has_jacobian: bool) -> SolverOptions {
        SolverOptions {
            solver: self.integrator.effective_solver(has_jacobian),
            tol: self.integrator.tol,
            max_iter: self.integrator.max_iter,
        }
    }
}

fn boundary_name(b: Boundary) -> &'static str {
    match b {
        Boundary::Fixed => "fixed",
        Boundary::Anchored => "anchored",
        Boundary::Free => "free",
    }
}

/// Instantiates the model described by the spec; `matrix` models read their
/// coefficient CSVs from disk.
pub fn build_model(spec: &ModelSpec) -> Result<Model> {
    match spec {
        ModelSpec::Harmonic { l, k, m, boundary } => Ok(Model::Quadratic(
            models::make_harmonic_chain_bc(*l, *k, *m, *boundary)?,
        )),
        ModelSpec::Fpu {
            l,
            k,
            alpha,
            m,
            boundary,
        } => Ok(Model::Cubic(models::make_fpu_chain_bc(
            *l, *k, *alpha, *m, *boundary,
        )?)),
        ModelSpec::Lj {
            l,
            epsilon,
            sigma,
            box_len,
        } => Ok(Model::Separable(models::make_lennard_jones(
            *l, *epsilon, *sigma, *box_len,
        )?)),
        ModelSpec::Matrix { q_path, c_path } => {
            let q_text = std::fs::read_to_string(q_path)?;
            let q_entries = crate::csvio::read_matrix_csv(&q_text)?;
            let q = build_quadratic_matrix(&q_entries)?;
            let d = q.nrows() / 2;
            match c_path {
                None => Ok(Model::Quadratic(QuadraticHamiltonian::new(d, q)?)),
                Some(cp) => {
                    let c_text = std::fs::read_to_string(cp)?;
                    let c_entries = crate::csvio::read_matrix_csv(&c_text)?;
                    let mut triplets = Vec::new();
                    let n = 2 * d;
                    for rec in &c_entries {
                        match rec.indices.as_slice() {
                            [i, j, k] => triplets.push((*i, *j, *k, rec.value)),
                            _ => {
                                return Err(Error::Shape(
                                    "cubic CSV entries need i,j,k,value".into(),
                                ))
                            }
                        }
                    }
                    let c = CubicTensor::from_triplets(n, &triplets)?;
                    Ok(Model::Cubic(crate::models::CubicHamiltonian::new(d, q, c)?))
                }
            }
        }
    }
}

fn build_quadratic_matrix(entries: &[crate::csvio::MatrixRecord]) -> Result<nalgebra::DMatrix<f64>> {
    let mut max_idx = 0usize;
    for rec in entries {
        match rec.indices.as_slice() {
            [i, j] => max_idx = max_idx.max(*i).max(*j),
            _ => return Err(Error::Shape("quadratic CSV entries need i,j,value".into())),
        }
    }
    let mut n = max_idx + 1;
    if n % 2 == 1 {
        n += 1; // state dimension must be even
    }
    let mut q = nalgebra::DMatrix::zeros(n, n);
    for rec in entries {
        if let [i, j] = rec.indices.as_slice() {
            q[(*i, *j)] += rec.value;
        }
    }
    Ok(q)
}

/// Deterministic initial state: explicit vector, or a seeded sample shaped to
/// the model (lattice positions plus velocity noise for particle gases,
/// uniform phase-space noise for chains).
pub fn build_initial_state(
    model: &Model,
    spec: &InitialSpec,
    model_spec: &ModelSpec,
    seed: u64,
) -> Result<DVector<f64>> {
    let dim = model.dim();
    match spec {
        InitialSpec::State(vals) => {
            if vals.len() != dim {
                return Err(Error::Shape(format!(
                    "initial.state has {} entries, model needs {dim}",
                    vals.len()
                )));
            }
            Ok(DVector::from_row_slice(vals))
        }
        InitialSpec::Amplitude(amp) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            match model_spec {
                ModelSpec::Lj { l, sigma, box_len, .. } => {
                    let d = dim / 2;
                    let mut x = DVector::zeros(dim);
                    // simple cubic lattice, centered in the box
                    let per_side = (*l as f64).cbrt().ceil() as usize;
                    let spacing = box_len / per_side as f64;
                    let mut placed = 0usize;
                    'outer: for ix in 0..per_side {
                        for iy in 0..per_side {
                            for iz in 0..per_side {
                                if placed >= *l {
                                    break 'outer;
                                }
                                x[3 * placed] = (ix as f64 + 0.5) * spacing;
                                x[3 * placed + 1] = (iy as f64 + 0.5) * spacing;
                                x[3 * placed + 2] = (iz as f64 + 0.5) * spacing;
                                placed += 1;
                            }
                        }
                    }
                    if spacing < 0.9 * sigma {
                        return Err(Error::IllConditioned(format!(
                            "lattice spacing {spacing:.3} too small for sigma = {sigma}"
                        )));
                    }
                    for i in 0..d {
                        x[d + i] = amp * (rng.random::<f64>() * 2.0 - 1.0);
                    }
                    Ok(x)
                }
                _ => Ok(DVector::from_fn(dim, |_, _| {
                    amp * (rng.random::<f64>() * 2.0 - 1.0)
                })),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# FPU bench
model = fpu
model.l = 4
model.alpha = 0.25
integrator.method = rkg
integrator.p = 2
integrator.tau = 0.05
integrator.steps = 200
integrator.t = 10.0
initial.amplitude = 0.3
run.seed = 7
";

    #[test]
    fn parses_sample() {
        let cfg = ExperimentConfig::parse_str(SAMPLE).unwrap();
        match cfg.model {
            ModelSpec::Fpu { l, alpha, .. } => {
                assert_eq!(l, 4);
                assert_eq!(alpha, 0.25);
            }
            other => panic!("wrong model {other:?}"),
        }
        assert_eq!(cfg.integrator.steps, 200);
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn roundtrip_is_identity() {
        let cfg = ExperimentConfig::parse_str(SAMPLE).unwrap();
        let text = cfg.serialize();
        let cfg2 = ExperimentConfig::parse_str(&text).unwrap();
        assert_eq!(cfg, cfg2);
    }

    #[test]
    fn unknown_method_names_the_field() {
        let text = "model = harmonic\nintegrator.method = euler\n";
        match ExperimentConfig::parse_str(text) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "integrator.method"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_key_rejected() {
        let text = "model = harmonic\nmodel.banana = 3\n";
        match ExperimentConfig::parse_str(text) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "model.banana"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_key_rejected() {
        let text = "model = harmonic\nmodel = fpu\n";
        assert!(matches!(
            ExperimentConfig::parse_str(text),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn inconsistent_horizon_rejected() {
        let text = "model = harmonic\nintegrator.tau = 0.1\nintegrator.steps = 10\nintegrator.t = 2.0\n";
        match ExperimentConfig::parse_str(text) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "integrator.t"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn initial_state_determinism() {
        let cfg = ExperimentConfig::parse_str(SAMPLE).unwrap();
        let model = build_model(&cfg.model).unwrap();
        let a = build_initial_state(&model, &cfg.initial, &cfg.model, cfg.seed).unwrap();
        let b = build_initial_state(&model, &cfg.initial, &cfg.model, cfg.seed).unwrap();
        assert_eq!(a, b);
        let c = build_initial_state(&model, &cfg.initial, &cfg.model, cfg.seed + 1).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn lj_lattice_has_no_overlaps() {
        let spec = ModelSpec::Lj {
            l: 64,
            epsilon: 1.0,
            sigma: 1.0,
            box_len: 12.0,
        };
        let model = build_model(&spec).unwrap();
        let x = build_initial_state(&model, &InitialSpec::Amplitude(0.5), &spec, 3).unwrap();
        match &model {
            Model::Separable(sys) => sys.validate_state(&x).unwrap(),
            _ => unreachable!(),
        }
    }
}

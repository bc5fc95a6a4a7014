use std::fmt;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use immidx::immersion::{ImmersionSpec, SharedImmersion};
use immidx::intersections::{
    find_self_intersections, index_from_records, IntersectionRecord, SolverConfig,
};
use immidx::quadrature::{
    index_by_integral, index_whitney_1d, laplace_sweep, IndexReport, LaplaceConfig, LaplaceReport,
    QuadratureConfig,
};
use immidx::stiefel_form::{
    check_closedness, integrand_direct, integrand_pullback, whitney_integrand_1d, ClosednessConfig,
    ClosednessReport, OmegaEvaluator,
};
use immidx::{immersion::validate_derivatives, immersion::DerivativeReport, Error};

use crate::{output, suite};

/// Why a command did not produce a passing report.
#[derive(Debug)]
pub enum Failure {
    /// Bad arguments, files or descriptors (exit 1).
    Config(String),
    /// A numerical check could not be completed (exit 2).
    Check(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Check(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) | Failure::Check(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::RoundingAmbiguous { .. }
            | Error::NonTransversal { .. }
            | Error::DegenerateDeterminant { .. }
            | Error::RankDeficient { .. }
            | Error::Budget { .. } => Failure::Check(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Config(format!("JSON: {e}"))
    }
}

/// Contents of `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Overrides {
    pub solver: Option<SolverConfig>,
    pub quadrature: Option<QuadratureConfig>,
    pub laplace: Option<LaplaceConfig>,
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Overrides::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
    }

    fn solver(&self, n: usize) -> SolverConfig {
        self.solver
            .clone()
            .unwrap_or_else(|| SolverConfig::for_dim(n))
    }

    fn seed(&self, flag: Option<u64>, default: u64) -> u64 {
        flag.or(self.seed).unwrap_or(default)
    }
}

fn load_spec(path: &Path) -> Result<(ImmersionSpec, SharedImmersion), Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let spec: ImmersionSpec = serde_json::from_str(&text)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let f = spec.build()?;
    Ok((spec, f))
}

fn write<T: Serialize>(command: &str, body: &T, out: Option<&Path>) -> Result<(), Failure> {
    let text = output::to_string(&output::envelope(command, body)?)?;
    output::emit(&text, out).map_err(|e| Failure::Config(format!("writing output: {e}")))
}

#[derive(Serialize)]
struct IndexOutput {
    spec: ImmersionSpec,
    n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    sign_sum: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    integral: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    whitney_1d: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    parity: Option<i64>,
    agree: bool,
    reports: Vec<IndexReport>,
}

pub fn index(
    spec_path: &Path,
    tol: Option<f64>,
    ov: &Overrides,
    out: Option<&Path>,
) -> Result<bool, Failure> {
    let (spec, f) = load_spec(spec_path)?;
    let n = f.dim();
    let solver = ov.solver(n);
    let mut quad = ov.quadrature.clone().unwrap_or_default();
    if let Some(t) = tol {
        quad.abs_tol = t;
        quad.rel_tol = t;
    }
    quad.validate()?;
    let records = find_self_intersections(f.as_ref(), &solver)?;
    let counted = index_from_records(f.as_ref(), &records, &solver)?;
    let mut report = IndexOutput {
        spec,
        n,
        sign_sum: None,
        integral: None,
        whitney_1d: None,
        parity: None,
        agree: true,
        reports: vec![counted.clone()],
    };
    let quadrature = if n == 1 {
        report.sign_sum = Some(counted.index);
        let r = index_whitney_1d(f.as_ref(), &quad)?;
        report.whitney_1d = Some(r.index);
        Some(r)
    } else if n % 2 == 0 {
        report.sign_sum = Some(counted.index);
        let r = index_by_integral(f.as_ref(), &quad)?;
        report.integral = Some(r.index);
        Some(r)
    } else {
        report.parity = Some(counted.index);
        None
    };
    if let Some(r) = quadrature {
        report.agree = r.index == counted.index;
        report.reports.push(r);
    }
    write("index", &report, out)?;
    if !report.agree {
        warn!("the two index methods disagree");
    }
    Ok(report.agree)
}

#[derive(Serialize)]
struct IntersectionsOutput {
    spec: ImmersionSpec,
    n: usize,
    solver: SolverConfig,
    records: Vec<IntersectionRecord>,
}

pub fn intersections(
    spec_path: &Path,
    grid: Option<usize>,
    ov: &Overrides,
    out: Option<&Path>,
) -> Result<bool, Failure> {
    let (spec, f) = load_spec(spec_path)?;
    let n = f.dim();
    let mut solver = ov.solver(n);
    if let Some(g) = grid {
        solver.grid_points_per_axis = g;
    }
    let records = find_self_intersections(f.as_ref(), &solver)?;
    write(
        "intersections",
        &IntersectionsOutput {
            spec,
            n,
            solver,
            records,
        },
        out,
    )?;
    Ok(true)
}

pub struct FormArgs {
    pub n: usize,
    pub samples: usize,
    pub seed: Option<u64>,
    pub h: f64,
    pub threshold: f64,
    pub richardson: bool,
    pub perturb: bool,
}

pub fn check_form(args: FormArgs, ov: &Overrides, out: Option<&Path>) -> Result<bool, Failure> {
    if !(args.h > 0.0) || !(args.threshold > 0.0) {
        return Err(Failure::Config(
            "--h and --threshold must be positive".into(),
        ));
    }
    let cfg = ClosednessConfig {
        n: args.n,
        samples: args.samples,
        seed: ov.seed(args.seed, ClosednessConfig::default().seed),
        h: args.h,
        richardson: args.richardson,
        threshold: args.threshold,
        perturbed: args.perturb,
        ..ClosednessConfig::default()
    };
    if cfg.samples == 0 {
        warn!("no samples requested; the closedness check passes vacuously");
    }
    let report: ClosednessReport = check_closedness(&cfg)?;
    write("check-form", &report, out)?;
    Ok(report.pass)
}

#[derive(Serialize)]
struct LaplaceOutput {
    spec: ImmersionSpec,
    n: usize,
    /// Bound on `|J|`: ten times the absolute quadrature tolerance.
    j_bound: f64,
    j_pass: bool,
    /// `|normalized_defect|` decreases along increasing `lambda`.
    defect_decreasing: bool,
    reports: Vec<LaplaceReport>,
}

pub fn check_laplace(
    spec_path: &Path,
    lambdas: &[f64],
    ov: &Overrides,
    out: Option<&Path>,
) -> Result<bool, Failure> {
    let (spec, f) = load_spec(spec_path)?;
    if lambdas.is_empty() || lambdas.iter().any(|l| !(*l > 0.0)) {
        return Err(Failure::Config("--lambdas must be positive".into()));
    }
    let mut lambdas = lambdas.to_vec();
    lambdas.sort_by(f64::total_cmp);
    let cfg = ov.laplace.clone().unwrap_or_default();
    for q in [
        &cfg.quadrature,
        &cfg.index_quadrature,
        &cfg.local_quadrature,
    ] {
        q.validate()?;
    }
    let reports = laplace_sweep(f.as_ref(), &lambdas, &cfg)?;
    let j_bound = 10.0 * cfg.quadrature.abs_tol;
    let j_pass = reports.iter().all(|r| r.j_value.abs() < j_bound);
    let defect_decreasing = reports.windows(2).all(|w| {
        let (a, b) = (w[0].normalized_defect.abs(), w[1].normalized_defect.abs());
        b < a || (a == 0.0 && b == 0.0)
    });
    let result = LaplaceOutput {
        spec,
        n: f.dim(),
        j_bound,
        j_pass,
        defect_decreasing,
        reports,
    };
    write("check-laplace", &result, out)?;
    Ok(j_pass && defect_decreasing)
}

#[derive(Serialize)]
struct ValidateOutput {
    spec: ImmersionSpec,
    tolerance: f64,
    seed: u64,
    max_deviation: f64,
    pass: bool,
    report: DerivativeReport,
}

pub fn validate(
    spec_path: &Path,
    h: f64,
    samples: usize,
    seed: Option<u64>,
    tol: f64,
    ov: &Overrides,
    out: Option<&Path>,
) -> Result<bool, Failure> {
    let (spec, f) = load_spec(spec_path)?;
    let seed = ov.seed(seed, 1);
    let report = validate_derivatives(f.as_ref(), samples, h, seed)?;
    let max_deviation = report.max_deviation();
    let pass = max_deviation < tol;
    write(
        "validate",
        &ValidateOutput {
            spec,
            tolerance: tol,
            seed,
            max_deviation,
            pass,
            report,
        },
        out,
    )?;
    Ok(pass)
}

#[derive(Serialize)]
struct EvalOutput {
    x: Vec<f64>,
    value: Vec<f64>,
    /// Row `j` holds `df_j / dx_i` over `i`.
    jacobian: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    integrand_pullback: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    integrand_direct: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    whitney_integrand: Option<f64>,
}

pub fn eval(spec_path: &Path, x: &[f64], out: Option<&Path>) -> Result<bool, Failure> {
    let (_, f) = load_spec(spec_path)?;
    let n = f.dim();
    if x.len() != n {
        return Err(Failure::Config(format!(
            "--x needs {n} coordinates, got {}",
            x.len()
        )));
    }
    let jac = f.jacobian(x);
    let jacobian = (0..2 * n)
        .map(|j| (0..n).map(|i| jac.get(j, i)).collect())
        .collect();
    let mut result = EvalOutput {
        x: x.to_vec(),
        value: f.value(x),
        jacobian,
        integrand_pullback: None,
        integrand_direct: None,
        whitney_integrand: None,
    };
    if n % 2 == 0 {
        let omega = OmegaEvaluator::new(n)?;
        result.integrand_pullback = Some(integrand_pullback(&omega, f.as_ref(), x)?);
        result.integrand_direct = Some(integrand_direct(f.as_ref(), x)?);
    } else if n == 1 {
        result.whitney_integrand = Some(whitney_integrand_1d(f.as_ref(), x[0])?);
    }
    write("eval", &result, out)?;
    Ok(true)
}

#[derive(Serialize)]
struct ExampleEntry {
    name: &'static str,
    description: &'static str,
    n: usize,
}

pub fn examples_list(out: Option<&Path>) -> Result<bool, Failure> {
    let mut examples = Vec::new();
    for (name, description, spec) in suite::all() {
        examples.push(ExampleEntry {
            name,
            description,
            n: spec.build()?.dim(),
        });
    }
    #[derive(Serialize)]
    struct List {
        examples: Vec<ExampleEntry>,
    }
    write("examples", &List { examples }, out)?;
    Ok(true)
}

/// Writes the bare descriptor (no envelope) so it can be passed to `--spec`.
pub fn examples_emit(name: &str, out: Option<&Path>) -> Result<bool, Failure> {
    let spec = suite::find(name).ok_or_else(|| {
        let names: Vec<_> = suite::all().into_iter().map(|(n, _, _)| n).collect();
        Failure::Config(format!(
            "unknown example {name:?}; known: {}",
            names.join(", ")
        ))
    })?;
    let text = output::to_string(&spec)?;
    output::emit(&text, out).map_err(|e| Failure::Config(format!("writing output: {e}")))?;
    Ok(true)
}

use distspec_core::error::Error;
use distspec_core::fatou::fatou_convergence_scan;
use distspec_core::linalg::{c, frob, I};
use distspec_core::measures::Location;
use distspec_core::propagation::wronskian_defect;
use distspec_core::spectral::{
    atom_invariants, eigen_scan, equation_defect, fit_constants, resolvent_identity_residual, spectral_measure_model,
    ModelOptions, ModelSource, Resolvent, ScanOptions, DEFAULT_EPS,
};
use distspec_core::system::{partition_points, SingularitySet};
use distspec_core::transform::{
    eigenfunctions, forward, multiplication_check, parseval_check, resolvent_transform_residual, tau_norm, AtomBasis,
};
use distspec_core::weyl::{analyticity_probe, m_function, nevanlinna_diagnostics, upper_grid};
use distspec_core::{PiecewiseFn, SpectralProblem, Vect};
use serde::Serialize;

use crate::config::{self, matrix_cfg, parse_list, GridCfg, MatrixCfg, ProblemConfig, TolerancesCfg};
use crate::{Artifact, CliError, Command, Options, Output};

type Outcome = Result<(Output, Option<CliError>), CliError>;

pub const DEFAULT_RANGE: [f64; 2] = [-3.2, 3.2];

struct Ctx {
    cfg: ProblemConfig,
    tol: Option<TolerancesCfg>,
    grid: GridCfg,
    eps: Vec<f64>,
    range: [f64; 2],
}

impl Ctx {
    fn new(opts: &Options) -> Result<Self, CliError> {
        let path = opts
            .config
            .as_ref()
            .ok_or_else(|| CliError::field("--config", "required"))?;
        let cfg = config::load(path)?;
        let tol = opts
            .tol_override
            .as_deref()
            .map(TolerancesCfg::parse_override)
            .transpose()?;
        let grid = match &opts.lambda_grid {
            Some(s) => GridCfg::parse(s)?,
            None => cfg.lambda_grid.clone().unwrap_or(GridCfg {
                lo: -3.0,
                hi: 3.0,
                step: 0.25,
                eps: vec![0.1, 1.0],
            }),
        };
        grid.check()?;
        let eps = match &opts.eps_schedule {
            Some(s) => parse_list(s, "--eps-schedule")?,
            None => cfg.eps_schedule.clone().unwrap_or_else(|| DEFAULT_EPS.to_vec()),
        };
        let range = match &opts.range {
            Some(s) => {
                let v = parse_list(s, "--range")?;
                if v.len() != 2 {
                    return Err(CliError::field("--range", "expected lo,hi"));
                }
                [v[0], v[1]]
            }
            None => cfg.range.unwrap_or(DEFAULT_RANGE),
        };
        if !(range[0] < range[1]) {
            return Err(CliError::field("range", "needs lo < hi"));
        }
        Ok(Ctx {
            cfg,
            tol,
            grid,
            eps,
            range,
        })
    }

    fn problem(&self) -> Result<SpectralProblem, CliError> {
        self.cfg.problem(self.tol.as_ref())
    }

    fn model_options(&self) -> ModelOptions {
        ModelOptions {
            eps: self.eps.clone(),
            ..ModelOptions::default()
        }
    }
}

pub fn dispatch(command: Command, opts: &Options) -> Outcome {
    let ctx = Ctx::new(opts)?;
    match command {
        Command::Validate => validate(&ctx),
        Command::Analyze => analyze(&ctx),
        Command::Mfun => mfun(&ctx),
        Command::Tau => tau(&ctx),
        Command::Eigen => eigen(&ctx),
        Command::Expand => expand(&ctx),
        Command::Verify => verify(&ctx),
        Command::FatouDemo => fatou_demo(&ctx),
    }
}

fn json<T: Serialize>(v: &T) -> Result<Artifact, CliError> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::Io(e.to_string()))?;
    s.push('\n');
    Ok(Artifact::Json(s))
}

fn csv_text(header: &[String], rows: &[Vec<String>]) -> Result<Artifact, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| CliError::Io(e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| CliError::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    Ok(Artifact::Csv(
        String::from_utf8(bytes).map_err(|e| CliError::Io(e.to_string()))?,
    ))
}

fn only(a: Artifact) -> Output {
    Output {
        primary: a,
        summary: None,
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

#[derive(Serialize)]
struct FieldViolation {
    field: String,
    kind: String,
    x: f64,
    magnitude: f64,
}

#[derive(Serialize)]
struct ValidateReport {
    valid: bool,
    j_skew_residual: f64,
    j_det_abs: f64,
    violations: Vec<FieldViolation>,
    boundary_ok: bool,
    boundary_message: Option<String>,
    problem_ok: bool,
    problem_message: Option<String>,
}

fn field_of(cfg: &ProblemConfig, name: &str, loc: &Location) -> (String, f64) {
    let m = if name == "q" { &cfg.q } else { &cfg.w };
    match loc {
        Location::Atom(x) => {
            let k = m.as_ref().and_then(|m| m.atoms.iter().position(|a| a.x == *x));
            (
                k.map_or(format!("{name}.atoms"), |k| format!("{name}.atoms[{k}].weight")),
                *x,
            )
        }
        Location::Density(x) => {
            let k = m.as_ref().and_then(|m| {
                m.segments
                    .iter()
                    .position(|s| s.interval[0] <= *x && *x <= s.interval[1])
            });
            (
                k.map_or(format!("{name}.segments"), |k| format!("{name}.segments[{k}].density")),
                *x,
            )
        }
    }
}

fn validate(ctx: &Ctx) -> Outcome {
    let sys = ctx.cfg.system(ctx.tol.as_ref())?;
    let v = sys.validate();
    let mut violations = Vec::new();
    for (name, rep) in [("q", &v.q), ("w", &v.w)] {
        for viol in &rep.violations {
            let (field, x) = field_of(&ctx.cfg, name, &viol.location);
            violations.push(FieldViolation {
                field,
                kind: format!("{:?}", viol.kind),
                x,
                magnitude: viol.magnitude,
            });
        }
    }
    let bc = ctx.cfg.boundary(sys.n)?;
    let (boundary_ok, boundary_message) = match sys.check_boundary_conditions(&bc) {
        Ok(_) => (true, None),
        Err(e) => (false, Some(e.to_string())),
    };
    let (problem_ok, problem_message) = if v.is_valid() && boundary_ok {
        match SpectralProblem::new(sys.clone(), bc) {
            Ok(_) => (true, None),
            Err(e) => (false, Some(e.to_string())),
        }
    } else {
        (false, None)
    };
    let valid = v.is_valid() && boundary_ok && problem_ok;
    let mut reasons: Vec<String> = violations.iter().map(|f| format!("{} ({})", f.field, f.kind)).collect();
    if !v.j_ok {
        reasons.push("j".into());
    }
    reasons.extend(boundary_message.clone());
    reasons.extend(problem_message.clone());
    let report = ValidateReport {
        valid,
        j_skew_residual: v.j_skew_residual,
        j_det_abs: v.j_det_abs,
        violations,
        boundary_ok,
        boundary_message,
        problem_ok,
        problem_message,
    };
    let failure = (!valid).then(|| CliError::Core(Error::Validation(reasons.join("; "))));
    Ok((only(json(&report)?), failure))
}

#[derive(Serialize)]
#[allow(non_snake_case)]
struct AnalyzeReport {
    name: Option<String>,
    n: usize,
    N: usize,
    partition: Vec<f64>,
    singularities: SingularitySet,
    anchors: Vec<f64>,
    window: [f64; 2],
    regular: bool,
    dim_B: usize,
    dim_ranP: usize,
    dim_N0: usize,
    B_equals_ranP: bool,
}

fn analyze(ctx: &Ctx) -> Outcome {
    let p = ctx.problem()?;
    let s = partition_points(&p.sys);
    let (dim_b, equal) = p.transform_range_dim();
    let (lo, hi) = p.sys.window();
    let report = AnalyzeReport {
        name: ctx.cfg.name.clone(),
        n: p.sys.n,
        N: p.layout.partition_count(),
        partition: s.partition.clone(),
        singularities: s,
        anchors: p.layout.anchors.clone(),
        window: [lo, hi],
        regular: p.sys.is_regular(),
        dim_B: dim_b,
        dim_ranP: p.size() - p.n0.ncols(),
        dim_N0: p.n0.ncols(),
        B_equals_ranP: equal,
    };
    Ok((only(json(&report)?), None))
}

fn mfun(ctx: &Ctx) -> Outcome {
    let p = ctx.problem()?;
    let grid = upper_grid(ctx.grid.lo, ctx.grid.hi, ctx.grid.step, &ctx.grid.eps);
    let k = p.size();
    let mut header = vec!["lambda_re".to_string(), "lambda_im".to_string()];
    for i in 0..k {
        for j in 0..k {
            header.push(format!("m{i}{j}_re"));
            header.push(format!("m{i}{j}_im"));
        }
    }
    header.extend(["symmetry".to_string(), "omega".to_string()]);
    let mut rows = Vec::with_capacity(grid.len());
    for l in grid {
        let s = m_function(&p, l)?;
        let down = distspec_core::weyl::m_matrix(&p, l.conj())?;
        let mut row = vec![num(l.re), num(l.im)];
        for i in 0..k {
            for j in 0..k {
                row.push(num(s.m[(i, j)].re));
                row.push(num(s.m[(i, j)].im));
            }
        }
        row.push(num(frob(&(&s.m - down.adjoint()))));
        row.push(num(s.omega_norm.unwrap_or(f64::NAN)));
        rows.push(row);
    }
    Ok((only(csv_text(&header, &rows)?), None))
}

#[derive(Serialize)]
struct TauAtomOut {
    s: f64,
    trace: f64,
    weight: MatrixCfg,
    cross_gap: Option<f64>,
    b_residual: f64,
    p_residual: f64,
}

#[derive(Serialize)]
struct DensityOut {
    s: f64,
    trace: f64,
    value: MatrixCfg,
}

#[derive(Serialize)]
struct TauReport {
    range: [f64; 2],
    eps: Vec<f64>,
    source: ModelSource,
    atoms: Vec<TauAtomOut>,
    density: Vec<DensityOut>,
    a_const: Option<MatrixCfg>,
    b_const: Option<MatrixCfg>,
}

fn tau(ctx: &Ctx) -> Outcome {
    let p = ctx.problem()?;
    let mut model = spectral_measure_model(&p, ctx.range[0], ctx.range[1], &ctx.model_options())?;
    fit_constants(&p, &mut model)?;
    let atoms = model
        .atoms
        .iter()
        .map(|a| {
            let (b, pr) = atom_invariants(&p, a.s, &a.weight)?;
            Ok(TauAtomOut {
                s: a.s,
                trace: a.weight.trace().re,
                weight: matrix_cfg(&a.weight),
                cross_gap: a.cross_gap,
                b_residual: b,
                p_residual: pr,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let report = TauReport {
        range: ctx.range,
        eps: ctx.eps.clone(),
        source: model.source,
        atoms,
        density: model
            .density
            .iter()
            .map(|(s, m)| DensityOut {
                s: *s,
                trace: m.trace().re,
                value: matrix_cfg(m),
            })
            .collect(),
        a_const: model.a_const.as_ref().map(matrix_cfg),
        b_const: model.b_const.as_ref().map(matrix_cfg),
    };
    Ok((only(json(&report)?), None))
}

fn eigen(ctx: &Ctx) -> Outcome {
    let p = ctx.problem()?;
    let eigs = eigen_scan(&p, ctx.range[0], ctx.range[1], &ScanOptions::default())?;
    let header: Vec<String> = ["index", "lambda", "multiplicity", "residual", "weight_trace"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows = eigs
        .iter()
        .enumerate()
        .map(|(k, e)| {
            vec![
                k.to_string(),
                num(e.lambda),
                e.multiplicity.to_string(),
                num(e.residual),
                num(e.weight.trace().re),
            ]
        })
        .collect::<Vec<_>>();
    Ok((only(csv_text(&header, &rows)?), None))
}

#[derive(Serialize)]
struct ExpandSummary {
    truncation: f64,
    eigenvalues: usize,
    tau_norm_sq: f64,
    projection_norm_sq: f64,
    f_norm_sq: f64,
    parseval_gap: f64,
    tail_estimate: f64,
    /// `(‖f‖² - Σ |c_k|²)^{1/2}`
    reconstruction_error: f64,
}

fn expand(ctx: &Ctx) -> Outcome {
    let p = ctx.problem()?;
    let ex = ctx
        .cfg
        .expand
        .as_ref()
        .ok_or_else(|| CliError::field("expand", "missing"))?;
    let f = ex.f.build(p.sys.n, "expand.f")?;
    let k = ex.truncation;
    if !(k > 0.0) {
        return Err(CliError::field("expand.truncation", "must be positive"));
    }
    let (lo, hi) = (-k - 0.5, k + 0.5);
    let eigs: Vec<_> = eigen_scan(&p, lo, hi, &ScanOptions::default())?
        .into_iter()
        .filter(|e| e.lambda.abs() <= k * (1.0 + 1e-9))
        .collect();
    let model = spectral_measure_model(&p, lo, hi, &ctx.model_options())?;
    let rep = parseval_check(&p, &model, &eigs, &f, k)?;
    let header: Vec<String> = ["lambda", "vector", "coef_re", "coef_im", "energy"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    let mut energy = 0.0;
    for e in &eigs {
        for (v, u) in eigenfunctions(&p, e)?.iter().enumerate() {
            let cf = distspec_core::spectral::w_inner(&p, u, &f)?;
            energy += cf.norm_sqr();
            rows.push(vec![
                num(e.lambda),
                v.to_string(),
                num(cf.re),
                num(cf.im),
                num(cf.norm_sqr()),
            ]);
        }
    }
    let summary = ExpandSummary {
        truncation: k,
        eigenvalues: eigs.len(),
        tau_norm_sq: rep.tau_norm_sq,
        projection_norm_sq: rep.projection_norm_sq,
        f_norm_sq: rep.f_norm_sq,
        parseval_gap: rep.gap,
        tail_estimate: rep.tail_estimate,
        reconstruction_error: (rep.f_norm_sq - energy).max(0.0).sqrt(),
    };
    Ok((
        Output {
            primary: csv_text(&header, &rows)?,
            summary: Some(json(&summary)?),
        },
        None,
    ))
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    /// `true` when `value >= tolerance` is required instead of `<=`.
    pub lower_bound: bool,
    pub pass: bool,
}

impl Check {
    fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            value,
            tolerance,
            lower_bound: false,
            pass: value <= tolerance,
        }
    }

    fn at_least(name: &str, value: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            value,
            tolerance,
            lower_bound: true,
            pass: value >= tolerance,
        }
    }
}

#[derive(Serialize)]
pub struct VerifyReport {
    pub name: Option<String>,
    pub range: [f64; 2],
    pub checks: Vec<Check>,
    pub pass: bool,
}

/// First-component indicator of the computational window.
fn probe_function(p: &SpectralProblem) -> PiecewiseFn {
    let (lo, hi) = p.sys.window();
    let mut v = Vect::zeros(p.sys.n);
    v[0] = c(1.0, 0.0);
    PiecewiseFn::constant(v, lo, hi)
}

fn wronskian_max(p: &SpectralProblem) -> Result<f64, CliError> {
    let mut worst: f64 = 0.0;
    for lambda in [c(0.0, 0.0), c(1.0, 0.0), I, c(2.0, 1.0)] {
        for j in 0..p.layout.blocks() {
            let (lo, hi) = p.layout.subinterval(j);
            let grid: Vec<f64> = (0..50).map(|k| lo + (hi - lo) * k as f64 / 49.0).collect();
            worst = worst.max(wronskian_defect(&p.sys, &p.layout, j, lambda, &grid)?);
        }
    }
    Ok(worst)
}

pub fn verify_checks(
    p: &SpectralProblem,
    grid: &GridCfg,
    range: [f64; 2],
    eps: &[f64],
) -> Result<Vec<Check>, CliError> {
    let mut checks = Vec::new();
    checks.push(Check::at_most("wronskian", wronskian_max(p)?, 1e-9));

    let nev = nevanlinna_diagnostics(p, &upper_grid(grid.lo, grid.hi, grid.step, &grid.eps))?;
    checks.push(Check::at_most("weyl_symmetry", nev.max_symmetry, 1e-8));
    checks.push(Check::at_least("weyl_im_min_eig", nev.min_im_eig, -1e-8));
    checks.push(Check::at_most("omega_norm", nev.max_omega, 1e-9));
    let probe = analyticity_probe(p, c(0.3, 1.0), &[1e-3, 5e-4])?;
    checks.push(Check::at_most("weyl_analyticity", probe.worst(), 1e-4));

    let f = probe_function(p);
    let res = Resolvent::new(p, I, &f)?;
    let (lo, hi) = p.sys.window();
    let egrid: Vec<f64> = (0..=40).map(|k| lo + (hi - lo) * k as f64 / 40.0).collect();
    checks.push(Check::at_most(
        "resolvent_equation_defect",
        equation_defect(p, &res, &egrid)?,
        1e-7,
    ));
    checks.push(Check::at_most(
        "resolvent_identity",
        resolvent_identity_residual(p, I, c(0.5, 1.5), &f)?,
        1e-6,
    ));

    if p.sys.is_regular() {
        let opts = ModelOptions {
            eps: eps.to_vec(),
            ..ModelOptions::default()
        };
        let model = spectral_measure_model(p, range[0], range[1], &opts)?;
        let gap = model.atoms.iter().filter_map(|a| a.cross_gap).fold(0.0, f64::max);
        checks.push(Check::at_most("tau_cross_validation", gap, 1e-4));
        let mut b_worst: f64 = 0.0;
        let mut p_worst: f64 = 0.0;
        for a in &model.atoms {
            let (b, pr) = atom_invariants(p, a.s, &a.weight)?;
            b_worst = b_worst.max(b);
            p_worst = p_worst.max(pr);
        }
        checks.push(Check::at_most("atom_b_annihilation", b_worst, 1e-6));
        checks.push(Check::at_most("atom_p_absorption", p_worst, 1e-8));
        checks.push(Check::at_most(
            "transform_of_resolvent",
            resolvent_transform_residual(p, &model, I, &f)?,
            1e-6,
        ));
        let u = res.to_fn();
        let g = f.add_scaled(&u, I);
        checks.push(Check::at_most(
            "multiplication",
            multiplication_check(p, &model, &u, &g)?,
            1e-6,
        ));
        let basis = AtomBasis::new(p, &model)?;
        let fh = forward(p, &basis, &f)?;
        let excess = tau_norm(&model, &fh)? - distspec_core::spectral::w_norm(p, &f)?;
        checks.push(Check::at_most("norm_contraction_excess", excess, 1e-8));
    }
    Ok(checks)
}

fn verify(ctx: &Ctx) -> Outcome {
    let p = ctx.problem()?;
    let checks = verify_checks(&p, &ctx.grid, ctx.range, &ctx.eps)?;
    let pass = checks.iter().all(|c| c.pass);
    let failed: Vec<String> = checks.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect();
    let report = VerifyReport {
        name: ctx.cfg.name.clone(),
        range: ctx.range,
        checks,
        pass,
    };
    let failure = (!pass).then(|| CliError::Checks(format!("failed checks: {}", failed.join(", "))));
    Ok((only(json(&report)?), failure))
}

#[derive(Serialize)]
struct FatouSummary {
    s: f64,
    limit: f64,
    monotone: bool,
    caveat: Option<String>,
}

fn fatou_demo(ctx: &Ctx) -> Outcome {
    let cfg = ctx
        .cfg
        .fatou
        .as_ref()
        .ok_or_else(|| CliError::field("fatou", "missing"))?;
    let mu = cfg.measure.build()?;
    let f = cfg.f.build()?;
    let header: Vec<String> = ["s", "r", "quotient", "tail_bound"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &s in &cfg.points {
        let scan = fatou_convergence_scan(&mu, &f, s, &cfg.r, cfg.delta)?;
        for r in &scan.rows {
            rows.push(vec![num(s), num(r.r), num(r.quotient), num(r.tail_bound)]);
        }
        summary.push(FatouSummary {
            s,
            limit: scan.limit,
            monotone: scan.monotone,
            caveat: scan.caveat,
        });
    }
    Ok((
        Output {
            primary: csv_text(&header, &rows)?,
            summary: Some(json(&summary)?),
        },
        None,
    ))
}

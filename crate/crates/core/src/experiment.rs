//! Experiment driver: truth generation, observation synthesis, reconstruction
//! with a retry ladder, diagnostics, refinement sweeps and artifact output.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use crate::coefficients::ClosedForm;
use crate::config::{ExperimentConfig, SolverMethod, TruthSource, WeightChoice};
use crate::csvio::{self, fmt_f64, write_key_values, write_table, OBSERVATION_HEADER};
use crate::diagnostics::{estimate_infsup, multiplier_consistency, weighted_error, weighted_norms, NormReport};
use crate::dual::{default_controls, minimize_dual, DualOperator};
use crate::error::{Error, ErrorCategory, Result};
use crate::field::Field;
use crate::firstorder::{assemble_mf4, assemble_mf4_alpha};
use crate::forward::solve_forward_mixed;
use crate::grid::{quadrature_points, BasisKind, DerivLevel, SpaceTimeGrid};
use crate::linalg::CgResult;
use crate::observe::{make_observation, ObservationSet};
use crate::problem::{Formulation, Problem};
use crate::saddle::{solve_saddle, ReconstructionReport, SaddleSystem, SolveOptions};
use crate::secondorder::{assemble_mf, assemble_mf_alpha, assemble_qr, SecondOrderSpaces};
use crate::weights::{build_beta, Member, WeightFamily};

/// Reference solution used to synthesize data and measure errors.
#[derive(Debug, Clone)]
pub enum Truth {
    ClosedForm(ClosedForm),
    /// Mixed forward solve on a refined grid.
    Forward { y: Field, p: Field },
}

impl Truth {
    pub fn y(&self, x: f64, t: f64) -> f64 {
        match self {
            Truth::ClosedForm(c) => c.y(x, t),
            Truth::Forward { y, .. } => y.eval(x, t, DerivLevel::Value).map(|v| v.v).unwrap_or(f64::NAN),
        }
    }

    pub fn p(&self, x: f64, t: f64) -> f64 {
        match self {
            Truth::ClosedForm(c) => c.p(x, t),
            Truth::Forward { p, .. } => p.eval(x, t, DerivLevel::Value).map(|v| v.v).unwrap_or(f64::NAN),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Truth::ClosedForm(_) => "closed_form",
            Truth::Forward { .. } => "forward",
        }
    }
}

/// Builds the truth for reconstructions on grids up to `finest`.
pub fn build_truth(cfg: &ExperimentConfig, finest: &SpaceTimeGrid) -> Result<Truth> {
    let closed = cfg.coefficients.closed_form();
    match (cfg.truth.source, closed) {
        (TruthSource::Auto, Some(c)) | (TruthSource::ClosedForm, Some(c)) => Ok(Truth::ClosedForm(c)),
        (TruthSource::ClosedForm, None) => Err(Error::Config("the coefficients have no closed-form solution".into())),
        _ => {
            let r = cfg.truth.refine;
            let fine = finest.refined(r, r);
            let sol = solve_forward_mixed(&fine, &cfg.coefficients, cfg.truth.theta)?;
            Ok(Truth::Forward { y: sol.y, p: sol.p })
        }
    }
}

/// Reference Carleman family for the global-estimate diagnostics: `rho_c` for
/// the second-order formulations, `rho_p` for the first-order ones, with the
/// configured `K1`, `K2`, `m`, cap and floor.
pub fn reference_family(cfg: &ExperimentConfig) -> Result<WeightFamily> {
    let w = &cfg.weights;
    let first = cfg.formulation.name.is_first_order();
    let beta = build_beta(
        cfg.grid.x_min,
        cfg.grid.x_max,
        (cfg.observation.omega_a, cfg.observation.omega_b),
        w.k1,
        w.k2,
        w.m,
    )?;
    let t = cfg.grid.t_final;
    let mut fam = if first { WeightFamily::carleman_p(beta, t) } else { WeightFamily::carleman_c(beta, t) };
    fam = fam.with_cap(w.cap);
    fam.rho_star = w.rho_star;
    Ok(fam)
}

/// Grid, weights and observation for one run.
pub fn build_problem(cfg: &ExperimentConfig, truth: &Truth) -> Result<Arc<Problem>> {
    let grid = cfg.build_grid()?;
    let quad = quadrature_points(&grid, cfg.grid.quad_order)?;
    let omega = (cfg.observation.omega_a, cfg.observation.omega_b);
    let obs = make_observation(&|x: f64, t: f64| truth.y(x, t), omega, &quad, cfg.observation.sigma, cfg.observation.seed)?;
    Problem::new(cfg.coefficients.clone(), cfg.weight_family()?, obs)
}

/// Assembles the configured formulation.
pub fn assemble(cfg: &ExperimentConfig, pb: &Arc<Problem>) -> Result<SaddleSystem> {
    let f = &cfg.formulation;
    let ms = f.multiplier_space();
    let sp = SecondOrderSpaces { primal: BasisKind::HermiteC1, multiplier: ms };
    match f.name {
        Formulation::Mf => assemble_mf(pb, &sp, &f.params),
        Formulation::MfAlpha => assemble_mf_alpha(pb, &sp, &f.params),
        Formulation::Mf4 => assemble_mf4(pb, ms, &f.params),
        Formulation::Mf4Alpha => assemble_mf4_alpha(pb, ms, &f.params),
        Formulation::Qr => assemble_qr(pb, BasisKind::HermiteC1, &f.params),
    }
}

/// Solved system with optional CG history.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub system: SaddleSystem,
    pub report: ReconstructionReport,
    pub cg: Option<CgResult>,
}

/// Solves with the configured method. The direct path retries solver failures
/// first with renormalization, then with `r -> max(10 r, 1)`.
pub fn reconstruct(cfg: &ExperimentConfig, pb: &Arc<Problem>) -> Result<Reconstruction> {
    if !cfg.coefficients.f.is_zero() || !cfg.coefficients.flux_source.is_zero() {
        return Err(Error::Config("reconstruction assumes vanishing sources f and F".into()));
    }
    let system = assemble(cfg, pb)?;
    if cfg.solver.method == SolverMethod::Dual {
        let op = DualOperator::new(&system)?;
        let (tol, maxit) = default_controls(&op);
        let tol = if cfg.solver.tol > 0.0 { cfg.solver.tol } else { tol };
        let maxit = if cfg.solver.maxit > 0 { cfg.solver.maxit } else { maxit };
        let sol = minimize_dual(&op, tol, maxit)?;
        return Ok(Reconstruction { system, report: sol.report, cg: Some(sol.cg) });
    }
    let mut opts = SolveOptions { renormalize: cfg.solver.renormalize, ..SolveOptions::default() };
    let mut sys = system;
    let mut retries = 0;
    loop {
        match solve_saddle(&sys, &opts) {
            Ok(mut report) => {
                report.stats.retries += retries;
                return Ok(Reconstruction { system: sys, report, cg: None });
            }
            Err(e) if e.category() == ErrorCategory::Solver && retries < 2 => {
                retries += 1;
                if !opts.renormalize {
                    log::warn!("direct solve failed ({e}); retrying with renormalization");
                    opts.renormalize = true;
                } else {
                    let mut c = cfg.clone();
                    let p = &mut c.formulation.params;
                    p.r = (10.0 * p.r).max(1.0);
                    p.r2 = (10.0 * p.r2).max(1.0);
                    log::warn!("direct solve failed ({e}); retrying with r = {}", p.r);
                    sys = assemble(&c, pb)?;
                }
            }
            Err(e) => return Err(e),
        }
    }
}

/// Scalar outcome of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub nx: usize,
    pub nt: usize,
    pub h: f64,
    pub misfit: f64,
    pub cost: f64,
    pub observed_norm: f64,
    pub data_norm: f64,
    pub equation_residual: f64,
    pub flux_residual: f64,
    pub multiplier_norm: f64,
    pub state_norm: f64,
    /// `||w_0^{-1}(y_h - y)||` with the reference Carleman family.
    pub weighted_error: f64,
    /// Unweighted `L2(Q_T)` error.
    pub l2_error: f64,
    pub norms: NormReport,
    pub delta_h: f64,
    pub multiplier_consistency: f64,
    pub scaled_residual: f64,
    pub iterations: usize,
}

pub const SUMMARY_HEADER: [&str; 20] = [
    "nx",
    "nt",
    "h",
    "misfit",
    "cost",
    "observed_norm",
    "data_norm",
    "equation_residual",
    "flux_residual",
    "multiplier_norm",
    "state_norm",
    "weighted_error",
    "l2_error",
    "weighted_state",
    "weighted_gradient",
    "global_norm",
    "c_emp",
    "delta_h",
    "multiplier_consistency",
    "scaled_residual",
];

impl RunSummary {
    pub fn row(&self) -> Vec<f64> {
        vec![
            self.nx as f64,
            self.nt as f64,
            self.h,
            self.misfit,
            self.cost,
            self.observed_norm,
            self.data_norm,
            self.equation_residual,
            self.flux_residual,
            self.multiplier_norm,
            self.state_norm,
            self.weighted_error,
            self.l2_error,
            self.norms.weighted_state,
            self.norms.weighted_gradient,
            self.norms.global,
            self.norms.c_emp.unwrap_or(f64::NAN),
            self.delta_h,
            self.multiplier_consistency,
            self.scaled_residual,
        ]
    }
}

/// Evaluates the diagnostics of a solved run.
pub fn summarize(cfg: &ExperimentConfig, pb: &Problem, rec: &Reconstruction, truth: &Truth) -> Result<RunSummary> {
    let rep = &rec.report;
    let reference = reference_family(cfg)?;
    let ty = |x: f64, t: f64| truth.y(x, t);
    let weighted = weighted_error(pb, &rep.y, &ty, &reference, Member::Observation)?;
    let l2 = weighted_error(pb, &rep.y, &ty, &WeightFamily::unit(cfg.grid.t_final), Member::Observation)?;
    let norms = weighted_norms(pb, &rec.system.params, &rep.y, rep.p.as_ref(), &reference)?;
    let delta_h = if rec.system.n_multiplier() > 0 {
        match estimate_infsup(&rec.system) {
            Ok(d) => d,
            Err(e) => {
                log::warn!("inf-sup estimate failed: {e}");
                f64::NAN
            }
        }
    } else {
        f64::NAN
    };
    let consistency = multiplier_consistency(&rec.system, &rep.primal_solution, &rep.multiplier_solution)?;
    Ok(RunSummary {
        nx: pb.grid.nx,
        nt: pb.grid.nt,
        h: pb.grid.hx().max(pb.grid.ht()),
        misfit: rep.misfit,
        cost: rep.cost,
        observed_norm: rep.observed_norm,
        data_norm: rep.data_norm,
        equation_residual: rep.equation_residual,
        flux_residual: rep.flux_residual.unwrap_or(f64::NAN),
        multiplier_norm: rep.multiplier_norm,
        state_norm: rep.state_norm,
        weighted_error: weighted,
        l2_error: l2,
        norms,
        delta_h,
        multiplier_consistency: consistency,
        scaled_residual: rep.stats.residual,
        iterations: rep.stats.iterations,
    })
}

fn cell_centers(grid: &SpaceTimeGrid) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
    (0..grid.n_cells()).map(move |cell| {
        let b = grid.cell_bounds(cell);
        (cell, 0.5 * (b.x0 + b.x1), 0.5 * (b.t0 + b.t1))
    })
}

/// Reconstructed fields at cell centers.
pub fn reconstruction_rows(pb: &Problem, rep: &ReconstructionReport) -> Result<(Vec<&'static str>, Vec<Vec<f64>>)> {
    let first = rep.p.is_some();
    let header = if first { vec!["x", "t", "y", "p", "lambda", "mu"] } else { vec!["x", "t", "y", "lambda"] };
    let c = (0.5, 0.5);
    let mut rows = Vec::with_capacity(pb.grid.n_cells());
    for (cell, x, t) in cell_centers(&pb.grid) {
        let y = rep.y.eval_local(cell, c, DerivLevel::Value)?.v;
        let lam = rep.lambda.value(pb, cell, c, x, t)?;
        if let (Some(p), Some(mu)) = (&rep.p, &rep.mu) {
            let pv = p.eval_local(cell, c, DerivLevel::Value)?.v;
            rows.push(vec![x, t, y, pv, lam, mu.value(pb, cell, c, x, t)?]);
        } else {
            rows.push(vec![x, t, y, lam]);
        }
    }
    Ok((header, rows))
}

pub fn truth_rows(grid: &SpaceTimeGrid, truth: &Truth) -> Vec<Vec<f64>> {
    cell_centers(grid).map(|(_, x, t)| vec![x, t, truth.y(x, t), truth.p(x, t)]).collect()
}

pub fn report_entries(rec: &Reconstruction, s: &RunSummary, truth: &Truth) -> Vec<(String, String)> {
    let r = &rec.report;
    let st = &r.stats;
    let p = &r.params;
    let mut v: Vec<(String, String)> = vec![
        ("formulation".into(), r.formulation.name().into()),
        ("truth".into(), truth.name().into()),
        ("solver".into(), st.method.into()),
        ("n_primal".into(), st.n_primal.to_string()),
        ("n_multiplier".into(), st.n_multiplier.to_string()),
        ("factor_nnz".into(), st.factor_nnz.to_string()),
        ("dynamic_pivots".into(), st.dynamic_pivots.to_string()),
        ("iterations".into(), st.iterations.to_string()),
        ("retries".into(), st.retries.to_string()),
        ("converged".into(), st.converged.to_string()),
        ("r".into(), fmt_f64(p.r)),
        ("r2".into(), fmt_f64(p.r2)),
        ("alpha".into(), fmt_f64(p.alpha)),
        ("alpha2".into(), fmt_f64(p.alpha2)),
        ("eta".into(), fmt_f64(p.eta)),
        ("eta2".into(), fmt_f64(p.eta2)),
        ("eps".into(), fmt_f64(p.eps)),
    ];
    for (k, val) in SUMMARY_HEADER.iter().zip(s.row()) {
        let text = if matches!(*k, "nx" | "nt") { format!("{}", val as usize) } else { fmt_f64(val) };
        v.push(((*k).into(), text));
    }
    if let Some(c) = st.condition_before {
        v.push(("condition_before".into(), fmt_f64(c)));
    }
    if let Some(c) = st.condition_after {
        v.push(("condition_after".into(), fmt_f64(c)));
    }
    v
}

/// Subcommands of the driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Forward,
    Observe,
    Reconstruct,
    Diagnose,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Forward => "forward",
            Command::Observe => "observe",
            Command::Reconstruct => "reconstruct",
            Command::Diagnose => "diagnose",
            Command::Sweep => "sweep",
        }
    }
}

/// Resolved configuration plus version and command; parses back as a config.
pub fn manifest_text(cfg: &ExperimentConfig, command: Command, levels: Option<usize>) -> Result<String> {
    let mut s = format!(
        "[manifest]\nprogram = heat-recon\nversion = {}\ncommand = {}\n",
        env!("CARGO_PKG_VERSION"),
        command.name()
    );
    if let Some(l) = levels {
        s.push_str(&format!("levels = {l}\n"));
    }
    s.push('\n');
    s.push_str(&cfg.to_text()?);
    Ok(s)
}

fn write_manifest(cfg: &ExperimentConfig, out: &Path, command: Command, levels: Option<usize>) -> Result<()> {
    csvio::write_atomic(&out.join("manifest.txt"), manifest_text(cfg, command, levels)?.as_bytes())
}

/// `forward`: mixed forward solve on the configured grid, nodal rows `(x, t, y, p)`.
/// The nodal flux averages the adjacent elements.
pub fn run_forward(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    let grid = cfg.build_grid()?;
    let sol = solve_forward_mixed(&grid, &cfg.coefficients, cfg.truth.theta)?;
    let mut rows = Vec::with_capacity(grid.n_nodes());
    for j in 0..=grid.nt {
        for i in 0..=grid.nx {
            let (x, t) = (grid.node_x(i), grid.node_t(j));
            let y = sol.y.values[grid.node_index(i, j)];
            let lev = &sol.p_levels[j * grid.nx..(j + 1) * grid.nx];
            let p = match i {
                0 => lev[0],
                _ if i == grid.nx => lev[grid.nx - 1],
                _ => 0.5 * (lev[i - 1] + lev[i]),
            };
            rows.push(vec![x, t, y, p]);
        }
    }
    write_manifest(cfg, out, Command::Forward, None)?;
    write_table(&out.join("forward.csv"), &["x", "t", "y", "p"], &rows)
}

/// `observe`: truth and synthetic observation.
pub fn run_observe(cfg: &ExperimentConfig, out: &Path) -> Result<ObservationSet> {
    cfg.validate()?;
    let grid = cfg.build_grid()?;
    let truth = build_truth(cfg, &grid)?;
    let pb = build_problem(cfg, &truth)?;
    write_manifest(cfg, out, Command::Observe, None)?;
    write_table(&out.join("truth.csv"), &["x", "t", "y", "p"], &truth_rows(&grid, &truth))?;
    write_table(&out.join("observation.csv"), &OBSERVATION_HEADER, &csvio::observation_rows(&pb.obs))?;
    Ok(pb.obs.clone())
}

/// `reconstruct`: the full pipeline on one grid.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<(Reconstruction, RunSummary)> {
    cfg.validate()?;
    let grid = cfg.build_grid()?;
    let truth = build_truth(cfg, &grid)?;
    let pb = build_problem(cfg, &truth)?;
    let rec = reconstruct(cfg, &pb)?;
    let summary = summarize(cfg, &pb, &rec, &truth)?;
    write_manifest(cfg, out, Command::Reconstruct, None)?;
    write_table(&out.join("truth.csv"), &["x", "t", "y", "p"], &truth_rows(&grid, &truth))?;
    write_table(&out.join("observation.csv"), &OBSERVATION_HEADER, &csvio::observation_rows(&pb.obs))?;
    let (header, rows) = reconstruction_rows(&pb, &rec.report)?;
    write_table(&out.join("reconstruction.csv"), &header, &rows)?;
    write_table(&out.join("diagnostics.csv"), &SUMMARY_HEADER, &[summary.row()])?;
    write_key_values(&out.join("report.txt"), &report_entries(&rec, &summary, &truth))?;
    if let Some(cg) = &rec.cg {
        let rows: Vec<Vec<f64>> = cg
            .residuals
            .iter()
            .enumerate()
            .map(|(k, r)| vec![k as f64, *r, cg.functional.get(k).copied().unwrap_or(f64::NAN)])
            .collect();
        write_table(&out.join("dual_residuals.csv"), &["iteration", "residual", "functional"], &rows)?;
    }
    Ok((rec, summary))
}

/// Configuration of refinement level `k` (`nx`, `nt` doubled per level).
pub fn level_config(cfg: &ExperimentConfig, k: usize) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.grid.nx = cfg.grid.nx << k;
    c.grid.nt = cfg.grid.nt << k;
    c
}

/// One sweep row.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub level: usize,
    pub summary: RunSummary,
    pub runtime: f64,
}

pub const SWEEP_HEADER: [&str; 10] = [
    "level",
    "nx",
    "nt",
    "h",
    "misfit",
    "weighted_error",
    "l2_error",
    "multiplier_norm",
    "delta_h",
    "runtime",
];

impl SweepRow {
    pub fn row(&self) -> Vec<f64> {
        let s = &self.summary;
        vec![
            self.level as f64,
            s.nx as f64,
            s.nt as f64,
            s.h,
            s.misfit,
            s.weighted_error,
            s.l2_error,
            s.multiplier_norm,
            s.delta_h,
            self.runtime,
        ]
    }
}

fn run_levels(
    cfg: &ExperimentConfig,
    levels: usize,
    mut each: impl FnMut(&[(usize, RunSummary, f64)]) -> Result<()>,
) -> Result<Vec<(usize, RunSummary, f64)>> {
    if levels < 2 {
        return Err(Error::Config(format!("a sweep needs at least 2 levels, got {levels}")));
    }
    cfg.validate()?;
    let finest = level_config(cfg, levels - 1).build_grid()?;
    let truth = build_truth(cfg, &finest)?;
    let mut done = Vec::with_capacity(levels);
    for k in 0..levels {
        let c = level_config(cfg, k);
        let start = Instant::now();
        let pb = build_problem(&c, &truth)?;
        let rec = reconstruct(&c, &pb)?;
        let s = summarize(&c, &pb, &rec, &truth)?;
        // clamp so that the column is positive even on coarse timers
        let runtime = start.elapsed().as_secs_f64().max(1e-9);
        done.push((k + 1, s, runtime));
        each(&done)?;
    }
    Ok(done)
}

/// Nested refinements against a fixed truth. Rows are written after every
/// level, so a failure keeps the completed part of the table.
pub fn convergence_sweep(cfg: &ExperimentConfig, levels: usize, out: &Path) -> Result<Vec<SweepRow>> {
    if levels < 2 {
        return Err(Error::Config(format!("a sweep needs at least 2 levels, got {levels}")));
    }
    cfg.validate()?;
    write_manifest(cfg, out, Command::Sweep, Some(levels))?;
    let path = out.join("sweep.csv");
    let done = run_levels(cfg, levels, |rows| {
        let table: Vec<Vec<f64>> = rows
            .iter()
            .map(|(l, s, r)| SweepRow { level: *l, summary: s.clone(), runtime: *r }.row())
            .collect();
        write_table(&path, &SWEEP_HEADER, &table)
    })?;
    Ok(done.into_iter().map(|(level, summary, runtime)| SweepRow { level, summary, runtime }).collect())
}

/// Norms and constants per refinement level.
pub fn run_diagnose(cfg: &ExperimentConfig, levels: usize, out: &Path) -> Result<Vec<RunSummary>> {
    if levels < 2 {
        return Err(Error::Config(format!("diagnose needs at least 2 levels, got {levels}")));
    }
    cfg.validate()?;
    write_manifest(cfg, out, Command::Diagnose, Some(levels))?;
    let mut header = vec!["level"];
    header.extend_from_slice(&SUMMARY_HEADER);
    let path = out.join("diagnostics.csv");
    let done = run_levels(cfg, levels, |rows| {
        let table: Vec<Vec<f64>> = rows
            .iter()
            .map(|(l, s, _)| {
                let mut r = vec![*l as f64];
                r.extend(s.row());
                r
            })
            .collect();
        write_table(&path, &header, &table)
    })?;
    Ok(done.into_iter().map(|(_, s, _)| s).collect())
}

/// True when the weights are already of the reference Carleman type.
pub fn weights_are_reference(cfg: &ExperimentConfig) -> bool {
    matches!(
        (cfg.weights.kind.clone(), cfg.formulation.name.is_first_order()),
        (WeightChoice::CarlemanC, false) | (WeightChoice::CarlemanP, true)
    )
}

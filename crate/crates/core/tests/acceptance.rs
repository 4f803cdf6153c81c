//! Acceptance suite. Runs every criterion, prints one line per criterion and
//! exits nonzero when any of them fails.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::Instant;

use heat_recon::coefficients::Coefficients;
use heat_recon::diagnostics::{infsup_from_matrices, min_eigen, weighted_error, weighted_norms};
use heat_recon::dual::{minimize_dual, DualOperator};
use heat_recon::field::Field;
use heat_recon::firstorder::{assemble_mf4, assemble_mf4_alpha};
use heat_recon::forward::{solve_forward, solve_forward_mixed};
use heat_recon::grid::{build_grid, quadrature_points, BasisKind, DerivLevel, QuadratureSet};
use heat_recon::linalg::{norm2, CsrMatrix, TripletBuilder};
use heat_recon::observe::{make_observation, ObservationSet};
use heat_recon::problem::{MultiplierSpace, Params, Problem};
use heat_recon::saddle::{solve_saddle, ReconstructionReport, SaddleSystem, SolveOptions};
use heat_recon::secondorder::{assemble_mf, assemble_mf_alpha, assemble_qr, SecondOrderSpaces};
use heat_recon::weights::{build_beta, check_domination, Member, WeightFamily};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const T: f64 = 0.5;
const OMEGA: (f64, f64) = (0.25, 0.5);

type Outcome = std::result::Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn carleman_c() -> WeightFamily {
    WeightFamily::carleman_c(build_beta(0.0, 1.0, OMEGA, 1.0, 1.0, 0.5).unwrap(), T).with_cap(5f64.exp())
}

fn carleman_p() -> WeightFamily {
    WeightFamily::carleman_p(build_beta(0.0, 1.0, OMEGA, 1.0, 1.0, 0.5).unwrap(), T).with_cap(5f64.exp())
}

fn quad(n: usize) -> QuadratureSet {
    quadrature_points(&build_grid(0.0, 1.0, T, n, n).unwrap(), 3).unwrap()
}

/// Heat eigenmode observed on `q_T` at the quadrature points, plus noise.
fn problem(n: usize, w: WeightFamily, sigma: f64) -> Arc<Problem> {
    let q = quad(n);
    let coeffs = Coefficients::heat(0.0, 1.0);
    let cf = coeffs.closed_form().unwrap();
    let obs = make_observation(&|x: f64, t: f64| cf.y(x, t), OMEGA, &q, sigma, 7).unwrap();
    Problem::new(coeffs, w, obs).unwrap()
}

fn random_problem(n: usize, w: WeightFamily, seed: u64) -> Arc<Problem> {
    let q = quad(n);
    let layout = ObservationSet::layout(&q, OMEGA).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..layout.samples.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    Problem::new(Coefficients::heat(0.0, 1.0), w, layout.with_values(&v).unwrap()).unwrap()
}

fn solve(sys: &SaddleSystem) -> ReconstructionReport {
    solve_saddle(sys, &SolveOptions::default()).unwrap()
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm2(&d) / norm2(b)
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn order(a: f64, b: f64) -> f64 {
    (a / b).log2()
}

fn mf_p0() -> SecondOrderSpaces {
    SecondOrderSpaces::default()
}

fn mf_hermite() -> SecondOrderSpaces {
    SecondOrderSpaces { multiplier: MultiplierSpace::Hermite, ..Default::default() }
}

/// Parameters of the first-order runs on consistent data: unit augmentation
/// locks the pair, so `r1 = r2 = 1e-4`.
fn fo_params() -> Params {
    Params { r: 1e-4, r2: 1e-4, ..Params::default() }
}

fn l2_error(field: &Field, q: &QuadratureSet, truth: impl Fn(f64, f64) -> f64) -> f64 {
    q.points()
        .iter()
        .map(|p| p.w * (field.eval(p.x, p.t, DerivLevel::Value).unwrap().v - truth(p.x, p.t)).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn forward_fidelity() -> Outcome {
    let coeffs = Coefficients::heat(0.0, 1.0);
    let cf = coeffs.closed_form().unwrap();
    let mut cn = Vec::new();
    let mut mixed = Vec::new();
    let mut cross = Vec::new();
    for n in [16, 32] {
        let g = build_grid(0.0, 1.0, T, n, n).unwrap();
        let q = quadrature_points(&g, 3).unwrap();
        let a = solve_forward(&g, &coeffs, 0.5).unwrap();
        let b = solve_forward_mixed(&g, &coeffs, 0.5).unwrap().y;
        let ea = l2_error(&a, &q, |x, t| cf.y(x, t));
        let eb = l2_error(&b, &q, |x, t| cf.y(x, t));
        let d = q
            .points()
            .iter()
            .map(|p| {
                let u = a.eval(p.x, p.t, DerivLevel::Value).unwrap().v;
                let v = b.eval(p.x, p.t, DerivLevel::Value).unwrap().v;
                p.w * (u - v).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        cross.push(d <= ea + eb);
        cn.push(ea);
        mixed.push(eb);
    }
    let (oa, ob) = (order(cn[0], cn[1]), order(mixed[0], mixed[1]));
    check(
        oa >= 1.9 && ob >= 1.9 && cross.iter().all(|c| *c),
        format!("order CN {oa:.3}, mixed {ob:.3}; cross-solver within summed errors: {cross:?}"),
    )
}

fn observation_bound() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    let mut runs = 0;
    let mut rejected = Vec::new();
    for seed in 0..3 {
        for w in [WeightFamily::unit(T), carleman_c(), carleman_p()] {
            let pb = random_problem(8, w, 100 + seed);
            for r in [0.0, 1.0] {
                let p = Params { r, r2: r, ..Params::default() };
                let systems = [
                    ("mf", assemble_mf(&pb, &mf_p0(), &p)),
                    ("mf/hermite", assemble_mf(&pb, &mf_hermite(), &p)),
                    ("mf-alpha", assemble_mf_alpha(&pb, &mf_hermite(), &p)),
                    ("mf4", assemble_mf4(&pb, MultiplierSpace::P0, &p)),
                    ("mf4/q1", assemble_mf4(&pb, MultiplierSpace::Q1, &p)),
                    ("mf4-alpha", assemble_mf4_alpha(&pb, MultiplierSpace::Q1, &p)),
                ];
                for (name, sys) in systems {
                    match sys {
                        Ok(sys) => {
                            let rep = solve(&sys);
                            worst = worst.max(rep.observed_norm / rep.data_norm - 1.0);
                            runs += 1;
                        }
                        // r1, r2 > 0 is a precondition of the stabilized first-order formulation
                        Err(_) if name == "mf4-alpha" && r == 0.0 => {
                            if !rejected.contains(&name) {
                                rejected.push(name);
                            }
                        }
                        Err(e) => return Err(format!("{name} r={r}: {e}")),
                    }
                }
            }
        }
    }
    check(
        worst <= 1e-10,
        format!("{runs} solves, max ||y_h||/||y_obs|| - 1 = {worst:.3e}; rejected at r = 0 by precondition: {rejected:?}"),
    )
}

fn decreasing_with_ratio(v: &[f64], ratio: f64) -> bool {
    v.windows(2).all(|w| w[1] < w[0]) && v[v.len() - 1] <= ratio * v[0]
}

fn multiplier_vanishing() -> Outcome {
    let mut second = Vec::new();
    let mut first = Vec::new();
    for n in [8, 16, 32] {
        let pb = problem(n, carleman_c(), 0.0);
        second.push(solve(&assemble_mf(&pb, &mf_p0(), &Params::default()).unwrap()).multiplier_norm);
        let pb = problem(n, carleman_p(), 0.0);
        first.push(solve(&assemble_mf4(&pb, MultiplierSpace::P0, &fo_params()).unwrap()).multiplier_norm);
    }
    check(
        decreasing_with_ratio(&second, 0.1) && decreasing_with_ratio(&first, 0.1),
        format!(
            "|lambda| {} (ratio {:.3}); |(lambda, mu)| {} (ratio {:.3})",
            sci(&second),
            second[2] / second[0],
            sci(&first),
            first[2] / first[0]
        ),
    )
}

fn formulation_coincidence() -> Outcome {
    let mut gaps = Vec::new();
    for n in [8, 16] {
        let pb = problem(n, carleman_c(), 0.0);
        let p = Params { alpha: 0.5, ..Params::default() };
        let a = solve(&assemble_mf(&pb, &mf_hermite(), &p).unwrap());
        let b = solve(&assemble_mf_alpha(&pb, &mf_hermite(), &p).unwrap());
        let g2 = rel(&b.primal_solution, &a.primal_solution);
        let pb = problem(n, carleman_p(), 0.0);
        let p = Params { alpha: 0.5, alpha2: 0.5, ..fo_params() };
        let a = solve(&assemble_mf4(&pb, MultiplierSpace::Q1, &p).unwrap());
        let b = solve(&assemble_mf4_alpha(&pb, MultiplierSpace::Q1, &p).unwrap());
        let ya = &a.primal_solution[..a.y.to_free().len()];
        let yb = &b.primal_solution[..b.y.to_free().len()];
        gaps.push((n, g2, rel(yb, ya)));
    }
    let ok = gaps.iter().all(|(_, a, b)| *a <= 1e-8 && *b <= 1e-8);
    let text: Vec<String> =
        gaps.iter().map(|(n, a, b)| format!("n={n}: mf/mf-alpha {a:.2e}, mf4/mf4-alpha {b:.2e}")).collect();
    check(ok, text.join("; "))
}

fn primal_dual() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (label, w, first) in [
        ("mf unit", WeightFamily::unit(T), false),
        ("mf carleman", carleman_c(), false),
        ("mf4 unit", WeightFamily::unit(T), true),
        ("mf4 carleman", carleman_p(), true),
    ] {
        let pb = problem(8, w, 1e-2);
        let sys = if first {
            assemble_mf4(&pb, MultiplierSpace::P0, &Params::default()).unwrap()
        } else {
            assemble_mf(&pb, &mf_p0(), &Params::default()).unwrap()
        };
        let direct = solve(&sys);
        let op = DualOperator::new(&sys).unwrap();
        let dim = op.dim();
        match minimize_dual(&op, 1e-10, 4 * dim) {
            Ok(d) => {
                let e = rel(&d.report.primal_solution, &direct.primal_solution);
                let it = d.cg.iterations;
                ok &= e <= 1e-6 && dim <= 256 && (it as f64) <= 1.2 * dim as f64;
                lines.push(format!("{label}: rel {e:.1e}, {it} it / {dim}"));
            }
            Err(e) => {
                ok = false;
                lines.push(format!("{label}: {e}"));
            }
        }
    }
    check(ok, lines.join("; "))
}

fn dual_certificates() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut sym: f64 = 0.0;
    let mut min_pos = f64::INFINITY;
    let mut bound_violations = 0;
    let mut checked = 0;
    for (sys, label) in [
        (assemble_mf(&problem(8, carleman_c(), 0.0), &mf_p0(), &Params::default()).unwrap(), "mf r=1"),
        (
            assemble_mf4(&problem(8, carleman_p(), 0.0), MultiplierSpace::P0, &Params { r: 2.0, r2: 4.0, ..Params::default() })
                .unwrap(),
            "mf4 r1=2 r2=4",
        ),
    ] {
        let op = DualOperator::new(&sys).map_err(|e| format!("{label}: {e}"))?;
        for _ in 0..100 {
            let u: Vec<f64> = (0..op.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..op.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (tu, tv) = (op.apply_tr(&u).unwrap(), op.apply_tr(&v).unwrap());
            let (a, b) = (op.inner(&tu, &v), op.inner(&u, &tv));
            sym = sym.max((a - b).abs() / (op.norm(&tu) * op.norm(&v)));
            let q = op.inner(&tu, &u);
            min_pos = min_pos.min(q / op.inner(&u, &u));
            if op.norm(&tu) > op.norm(&u) / op.r * (1.0 + 1e-12) {
                bound_violations += 1;
            }
            checked += 1;
        }
    }
    check(
        sym <= 1e-10 && min_pos > 0.0 && bound_violations == 0,
        format!(
            "{checked} vectors: symmetry defect {sym:.2e}, min <T u,u>/<u,u> {min_pos:.3e}, bound violations {bound_violations}"
        ),
    )
}

fn noise_stability() -> Outcome {
    let fam = [carleman_c(), carleman_p()];
    // capped families are dominated by the uncapped ones, with a finite K that does not grow under refinement
    let q8 = quad(8);
    let pairs: Vec<(Member, Member)> = Member::ALL.iter().map(|m| (*m, *m)).collect();
    let reference = [
        WeightFamily::carleman_c(build_beta(0.0, 1.0, OMEGA, 1.0, 1.0, 0.5).unwrap(), T),
        WeightFamily::carleman_p(build_beta(0.0, 1.0, OMEGA, 1.0, 1.0, 0.5).unwrap(), T),
    ];
    let dominated = fam
        .iter()
        .zip(&reference)
        .all(|(f, r)| check_domination(f, r, &pairs, &q8).unwrap().iter().all(|e| e.pass));

    let cf = Coefficients::heat(0.0, 1.0).closed_form().unwrap();
    let truth = |x: f64, t: f64| cf.y(x, t);
    let mut ratios = Vec::new();
    for n in [16, 32] {
        let mut errs = [0.0; 2];
        for (k, sigma) in [1e-3, 1e-2].into_iter().enumerate() {
            let pb = problem(n, carleman_c(), sigma);
            let rep = solve(&assemble_mf(&pb, &mf_p0(), &Params::default()).unwrap());
            errs[k] = weighted_error(&pb, &rep.y, &truth, &carleman_c(), Member::Observation).unwrap();
        }
        ratios.push(errs[1] / errs[0]);
    }
    let linear = ratios.iter().all(|r| *r >= 2.0 && *r <= 50.0);

    let mut c2 = Vec::new();
    let mut c1 = Vec::new();
    for n in [8, 16, 32] {
        let pb = problem(n, carleman_c(), 0.0);
        let p = Params::default();
        let rep = solve(&assemble_mf(&pb, &mf_p0(), &p).unwrap());
        c2.push(weighted_norms(&pb, &p, &rep.y, None, &carleman_c()).unwrap().c_emp.unwrap());
        let pb = problem(n, carleman_p(), 0.0);
        let p = fo_params();
        let rep = solve(&assemble_mf4(&pb, MultiplierSpace::P0, &p).unwrap());
        c1.push(weighted_norms(&pb, &p, &rep.y, rep.p.as_ref(), &carleman_p()).unwrap().c_emp.unwrap());
    }
    let spread = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max) / v.iter().cloned().fold(f64::INFINITY, f64::min);
    let (s2, s1) = (spread(&c2), spread(&c1));
    check(
        dominated && linear && s2 <= 2.0 && s1 <= 2.0,
        format!(
            "domination {dominated}; error ratio sigma 1e-2 / 1e-3 at n=16,32: {ratios:.2?}; C_emp second order {c2:.3?} (x{s2:.2}), first order {c1:.3?} (x{s1:.2})"
        ),
    )
}

fn flux_consistency() -> Outcome {
    let mut fl = Vec::new();
    for n in [8, 16, 32] {
        let pb = problem(n, carleman_p(), 0.0);
        fl.push(solve(&assemble_mf4(&pb, MultiplierSpace::P0, &fo_params()).unwrap()).flux_residual.unwrap());
    }
    let orders: Vec<f64> = fl.windows(2).map(|w| order(w[0], w[1])).collect();
    check(orders.iter().all(|o| *o >= 0.9), format!("flux residual {}, orders {orders:.3?}", sci(&fl)))
}

fn qr_baseline() -> Outcome {
    let pb = problem(8, carleman_c(), 0.0);
    let mut misfit = Vec::new();
    let mut eig = Vec::new();
    for eps in [1e-2, 1e-4, 1e-6] {
        let sys = assemble_qr(&pb, BasisKind::HermiteC1, &Params { eps, ..Params::default() }).unwrap();
        eig.push(min_eigen(&sys.a).unwrap());
        misfit.push(solve(&sys).misfit);
    }
    check(
        misfit.windows(2).all(|w| w[1] < w[0]) && eig.iter().all(|e| *e > 0.0),
        format!("misfit {}; smallest eigenvalue {}", sci(&misfit), sci(&eig)),
    )
}

/// Reference Carleman configuration: default parameters on a 16 x 16 grid.
fn renormalization() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for first in [false, true] {
        let sys = if first {
            assemble_mf4(&problem(16, carleman_p(), 0.0), MultiplierSpace::P0, &Params::default()).unwrap()
        } else {
            assemble_mf(&problem(16, carleman_c(), 0.0), &mf_p0(), &Params::default()).unwrap()
        };
        let plain = solve(&sys);
        let scaled =
            solve_saddle(&sys, &SolveOptions { renormalize: true, estimate_condition: true, ..SolveOptions::default() })
                .unwrap();
        let (b, a) = (scaled.stats.condition_before.unwrap(), scaled.stats.condition_after.unwrap());
        let e = rel(&scaled.primal_solution, &plain.primal_solution);
        ok &= a < b && e <= 1e-6;
        lines.push(format!("{}: cond {b:.3e} -> {a:.3e}, rel {e:.1e}", if first { "mf4" } else { "mf" }));
    }
    check(ok, lines.join("; "))
}

fn dense_infsup_oracle(b: &DMatrix<f64>, gy: &DMatrix<f64>, gm: &DMatrix<f64>) -> f64 {
    // smallest singular value of L_m^{-1} B L_y^{-T}
    let ly = gy.clone().cholesky().unwrap().l();
    let lm = gm.clone().cholesky().unwrap().l();
    let left = lm.try_inverse().unwrap();
    let right = ly.try_inverse().unwrap().transpose();
    let s = (left * b * right).svd(false, false).singular_values;
    s.iter().cloned().fold(f64::INFINITY, f64::min)
}

fn csr(m: &DMatrix<f64>) -> CsrMatrix {
    let mut t = TripletBuilder::new(m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if m[(i, j)] != 0.0 {
                t.push(i, j, m[(i, j)]);
            }
        }
    }
    t.build()
}

fn run_cli(config: &Path, out: &Path) -> std::result::Result<(), String> {
    let st = Command::new(env!("CARGO_BIN_EXE_heat-recon"))
        .args(["reconstruct", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .status()
        .map_err(|e| e.to_string())?;
    if st.success() {
        Ok(())
    } else {
        Err(format!("cli exited with {st}"))
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "[grid]\nnx = 8\nnt = 8\n\n[observation]\nsigma = 1e-2\nseed = 5\n\n[weights]\nkind = carleman_c\ncap_log = 5\n",
    )
    .map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_cli(&cfg, &a)?;
    run_cli(&cfg, &b)?;
    let mut files = Vec::new();
    for e in std::fs::read_dir(&a).map_err(|e| e.to_string())? {
        let name = e.map_err(|e| e.to_string())?.file_name();
        if name.to_string_lossy().ends_with(".csv") {
            files.push(name);
        }
    }
    files.sort();
    let identical = files
        .iter()
        .all(|f| std::fs::read(a.join(f)).ok().is_some_and(|x| std::fs::read(b.join(f)).ok() == Some(x)));

    let bm = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
    let gy = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let gm = DMatrix::from_row_slice(1, 1, &[1.5]);
    let oracle = dense_infsup_oracle(&bm, &gy, &gm);
    let delta = infsup_from_matrices(&csr(&bm), &csr(&gy), &csr(&gm)).map_err(|e| e.to_string())?;
    // closed form for one multiplier: delta^2 = B G_Y^{-1} B^T / G_M
    let gyi = gy.clone().try_inverse().unwrap();
    let bv = DVector::from_row_slice(&[3.0, 4.0]);
    let closed = (bv.dot(&(&gyi * &bv)) / 1.5).sqrt();
    let err = (delta - oracle).abs();
    check(
        files.len() >= 4 && identical && err <= 1e-10 && (oracle - closed).abs() <= 1e-12,
        format!(
            "{} CSV files byte-identical: {identical}; delta_h {delta:.15} vs oracle {oracle:.15} (diff {err:.1e})",
            files.len()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("forward fidelity", forward_fidelity),
        ("observation bound", observation_bound),
        ("multiplier vanishing", multiplier_vanishing),
        ("formulation coincidence", formulation_coincidence),
        ("primal/dual equivalence", primal_dual),
        ("dual operator certificates", dual_certificates),
        ("noise stability", noise_stability),
        ("flux consistency", flux_consistency),
        ("quasi-reversibility baseline", qr_baseline),
        ("renormalization", renormalization),
        ("determinism and formats", determinism),
    ];
    let mut failed = Vec::new();
    let mut out = std::io::stdout();
    for (k, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match &res {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        let _ = writeln!(out, "ACCEPTANCE {:>2} {name}: {tag} ({secs:.1} s) {detail}", k + 1);
        let _ = out.flush();
        if res.is_err() {
            failed.push(k + 1);
        }
    }
    if failed.is_empty() {
        let _ = writeln!(out, "ACCEPTANCE all 11 criteria pass");
        ExitCode::SUCCESS
    } else {
        let _ = writeln!(out, "ACCEPTANCE failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}

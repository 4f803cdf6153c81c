//! Line-oriented sectioned `key = value` experiment configuration.
//!
//! ```text
//! [grid]
//! nx = 16
//! nt = 16
//! [weights]
//! kind = carleman_c
//! cap = 148.4131591025766
//! ```
//!
//! `#` starts a comment. Unknown sections and keys are rejected.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::coefficients::{Coefficients, DerivativeMode, Profile};
use crate::error::{Error, Result};
use crate::grid::{build_grid, SpaceTimeGrid};
use crate::problem::{Formulation, MultiplierSpace, Params};
use crate::weights::{build_beta, WeightFamily, DEFAULT_CAP_LOG, DEFAULT_RHO_STAR};

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub nx: usize,
    pub nt: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub t_final: f64,
    pub quad_order: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WeightChoice {
    Unit,
    Power,
    CarlemanC,
    CarlemanP,
}

impl WeightChoice {
    pub fn name(&self) -> &'static str {
        match self {
            WeightChoice::Unit => "unit",
            WeightChoice::Power => "power",
            WeightChoice::CarlemanC => "carleman_c",
            WeightChoice::CarlemanP => "carleman_p",
        }
    }
}

impl FromStr for WeightChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "unit" => WeightChoice::Unit,
            "power" => WeightChoice::Power,
            "carleman_c" => WeightChoice::CarlemanC,
            "carleman_p" => WeightChoice::CarlemanP,
            _ => return Err(cfg_err(format!("unknown weight kind '{s}'"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightConfig {
    pub kind: WeightChoice,
    pub k1: f64,
    pub k2: f64,
    pub m: f64,
    /// Cap `M` on the capped members; infinite disables.
    pub cap: f64,
    pub rho_star: f64,
    /// Exponent of the power family.
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationConfig {
    pub omega_a: f64,
    pub omega_b: f64,
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FormulationConfig {
    pub name: Formulation,
    /// `None` picks the formulation's default space.
    pub multiplier: Option<MultiplierSpace>,
    pub params: Params,
}

impl FormulationConfig {
    /// Multiplier space, with defaults P0 (mf, mf4), Hermite (mf-alpha) and Q1 (mf4-alpha).
    pub fn multiplier_space(&self) -> MultiplierSpace {
        self.multiplier.unwrap_or(match self.name {
            Formulation::MfAlpha => MultiplierSpace::Hermite,
            Formulation::Mf4Alpha => MultiplierSpace::Q1,
            _ => MultiplierSpace::P0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMethod {
    Direct,
    Dual,
}

impl SolverMethod {
    pub fn name(self) -> &'static str {
        match self {
            SolverMethod::Direct => "direct",
            SolverMethod::Dual => "dual",
        }
    }
}

impl FromStr for SolverMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(SolverMethod::Direct),
            "dual" => Ok(SolverMethod::Dual),
            _ => Err(cfg_err(format!("unknown solver '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub method: SolverMethod,
    pub tol: f64,
    /// `0` means four times the multiplier dimension.
    pub maxit: usize,
    pub renormalize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruthSource {
    /// Closed form when available, forward solve otherwise.
    Auto,
    ClosedForm,
    Forward,
}

impl TruthSource {
    pub fn name(self) -> &'static str {
        match self {
            TruthSource::Auto => "auto",
            TruthSource::ClosedForm => "closed_form",
            TruthSource::Forward => "forward",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthConfig {
    pub source: TruthSource,
    /// Refinement factor of the forward truth grid (at least 2).
    pub refine: usize,
    pub theta: f64,
}

/// Parsed and validated experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    pub coefficients: Coefficients,
    pub weights: WeightConfig,
    pub observation: ObservationConfig,
    pub formulation: FormulationConfig,
    pub solver: SolverConfig,
    pub truth: TruthConfig,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            grid: GridConfig { nx: 16, nt: 16, x_min: 0.0, x_max: 1.0, t_final: 0.5, quad_order: 3 },
            coefficients: Coefficients::heat(0.0, 1.0),
            weights: WeightConfig {
                kind: WeightChoice::Unit,
                k1: 1.0,
                k2: 1.0,
                m: 0.5,
                cap: DEFAULT_CAP_LOG.exp(),
                rho_star: DEFAULT_RHO_STAR,
                q: 1.0,
            },
            observation: ObservationConfig { omega_a: 0.25, omega_b: 0.5, sigma: 0.0, seed: 1 },
            formulation: FormulationConfig { name: Formulation::Mf, multiplier: None, params: Params::default() },
            solver: SolverConfig { method: SolverMethod::Direct, tol: 1e-10, maxit: 0, renormalize: false },
            truth: TruthConfig { source: TruthSource::Auto, refine: 4, theta: 0.5 },
            output: PathBuf::from("out"),
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    match v {
        "inf" | "infinity" => Ok(f64::INFINITY),
        _ => v.parse::<f64>().map_err(|_| cfg_err(format!("{key}: '{v}' is not a number"))),
    }
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse::<usize>().map_err(|_| cfg_err(format!("{key}: '{v}' is not a non-negative integer")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(cfg_err(format!("{key}: '{v}' is not a boolean"))),
    }
}

/// `zero`, `constant v`, `polynomial a0 a1 ...`, `eigenmode m A`, `bump x0 w A`.
pub fn parse_profile(key: &str, v: &str) -> Result<Profile> {
    let mut it = v.split_whitespace();
    let name = it.next().ok_or_else(|| cfg_err(format!("{key}: empty preset")))?;
    let nums: Vec<f64> = it.map(|s| parse_f64(key, s)).collect::<Result<_>>()?;
    let want = |n: usize| {
        if nums.len() == n {
            Ok(())
        } else {
            Err(cfg_err(format!("{key}: preset '{name}' takes {n} numbers, got {}", nums.len())))
        }
    };
    Ok(match name {
        "zero" => {
            want(0)?;
            Profile::Zero
        }
        "constant" => {
            want(1)?;
            Profile::Constant(nums[0])
        }
        "polynomial" => {
            if nums.is_empty() {
                return Err(cfg_err(format!("{key}: polynomial needs at least one coefficient")));
            }
            Profile::Polynomial(nums)
        }
        "eigenmode" => {
            want(2)?;
            if nums[0] < 1.0 || nums[0].fract() != 0.0 {
                return Err(cfg_err(format!("{key}: eigenmode index must be a positive integer")));
            }
            Profile::Eigenmode { mode: nums[0] as u32, amplitude: nums[1] }
        }
        "bump" => {
            want(3)?;
            if !(nums[1] > 0.0) {
                return Err(cfg_err(format!("{key}: bump width must be positive")));
            }
            Profile::Bump { center: nums[0], width: nums[1], amplitude: nums[2] }
        }
        _ => return Err(cfg_err(format!("{key}: unknown preset '{name}'"))),
    })
}

/// Canonical text of a preset; round-trips through [`parse_profile`].
pub fn profile_text(p: &Profile) -> Result<String> {
    Ok(match p {
        Profile::Zero => "zero".into(),
        Profile::Constant(v) => format!("constant {}", num(*v)),
        Profile::Polynomial(a) => {
            let mut s = String::from("polynomial");
            for v in a {
                s.push(' ');
                s.push_str(&num(*v));
            }
            s
        }
        Profile::Eigenmode { mode, amplitude } => format!("eigenmode {mode} {}", num(*amplitude)),
        Profile::Bump { center, width, amplitude } => {
            format!("bump {} {} {}", num(*center), num(*width), num(*amplitude))
        }
        Profile::Custom(_) => return Err(cfg_err("custom profiles cannot be written to a config")),
    })
}

/// Shortest representation that parses back to the same `f64`.
fn num(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".into()
    } else {
        format!("{v:?}")
    }
}

/// Raw `(section, key, value, line)` entries.
fn entries(text: &str) -> Result<Vec<(String, String, String, usize)>> {
    let mut section = String::new();
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| cfg_err(format!("line {}: malformed section header", n + 1)))?;
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| cfg_err(format!("line {}: expected key = value", n + 1)))?;
        if section.is_empty() {
            return Err(cfg_err(format!("line {}: key outside of a section", n + 1)));
        }
        out.push((section.clone(), k.trim().to_string(), v.trim().to_string(), n + 1));
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        text.parse()
    }

    /// Builds the grid, checking the extents.
    pub fn build_grid(&self) -> Result<SpaceTimeGrid> {
        let g = &self.grid;
        build_grid(g.x_min, g.x_max, g.t_final, g.nx, g.nt)
    }

    /// Builds the weight family of the reconstruction.
    pub fn weight_family(&self) -> Result<WeightFamily> {
        let w = &self.weights;
        let t = self.grid.t_final;
        let mut fam = match w.kind {
            WeightChoice::Unit => WeightFamily::unit(t),
            WeightChoice::Power => WeightFamily::power(t, w.q)?,
            WeightChoice::CarlemanC | WeightChoice::CarlemanP => {
                let beta = build_beta(
                    self.grid.x_min,
                    self.grid.x_max,
                    (self.observation.omega_a, self.observation.omega_b),
                    w.k1,
                    w.k2,
                    w.m,
                )?;
                if w.kind == WeightChoice::CarlemanC {
                    WeightFamily::carleman_c(beta, t)
                } else {
                    WeightFamily::carleman_p(beta, t)
                }
            }
        };
        if w.kind != WeightChoice::Unit {
            fam = fam.with_cap(w.cap);
        }
        fam.rho_star = w.rho_star;
        Ok(fam)
    }

    /// Checks every parameter range before any computation.
    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if g.nx < 2 || g.nt < 1 {
            return Err(cfg_err("grid needs nx >= 2 and nt >= 1"));
        }
        if !(g.x_min < g.x_max) || !(g.t_final > 0.0) {
            return Err(cfg_err("grid extents must satisfy x_min < x_max and T > 0"));
        }
        if !(2..=4).contains(&g.quad_order) {
            return Err(cfg_err(format!("quadrature order {} (expected 2, 3 or 4)", g.quad_order)));
        }
        let o = &self.observation;
        if !(g.x_min < o.omega_a && o.omega_a < o.omega_b && o.omega_b < g.x_max) {
            return Err(cfg_err(format!("omega = ({}, {}) must lie strictly inside the domain", o.omega_a, o.omega_b)));
        }
        if !(o.sigma >= 0.0) {
            return Err(cfg_err("sigma must be non-negative"));
        }
        let w = &self.weights;
        if !(w.cap > 0.0) || !(w.rho_star > 0.0) || !(w.k1 > 0.0) || !(w.k2 > 0.0) {
            return Err(cfg_err("weights need positive cap, rho_star, K1 and K2"));
        }
        let f = &self.formulation;
        f.params.validate(f.name).map_err(|e| cfg_err(e.to_string()))?;
        if f.name == Formulation::Mf4Alpha && !(f.params.r > 0.0 && f.params.r2 > 0.0) {
            return Err(cfg_err("mf4-alpha needs r1, r2 > 0"));
        }
        let ms = f.multiplier_space();
        let ok = match f.name {
            Formulation::Mf => true,
            Formulation::MfAlpha => ms == MultiplierSpace::Hermite,
            Formulation::Mf4 => ms != MultiplierSpace::Hermite,
            Formulation::Mf4Alpha => ms == MultiplierSpace::Q1,
            Formulation::Qr => true,
        };
        if !ok {
            return Err(cfg_err(format!("multiplier space {} is not available for {}", ms.name(), f.name.name())));
        }
        if self.solver.method == SolverMethod::Dual {
            if matches!(f.name, Formulation::MfAlpha | Formulation::Mf4Alpha | Formulation::Qr) {
                return Err(cfg_err(format!("the dual solver does not apply to {}", f.name.name())));
            }
            if !(f.params.r > 0.0) || (f.name.is_first_order() && !(f.params.r2 > 0.0)) {
                return Err(cfg_err("the dual solver needs r > 0"));
            }
        }
        if !(self.solver.tol > 0.0) {
            return Err(cfg_err("solver tol must be positive"));
        }
        if self.truth.refine < 2 {
            return Err(cfg_err("truth refine must be at least 2"));
        }
        if !(0.5..=1.0).contains(&self.truth.theta) {
            return Err(cfg_err("truth theta must lie in [0.5, 1]"));
        }
        self.coefficients.validate(g.nx).map_err(|e| cfg_err(e.to_string()))?;
        self.weight_family().map_err(|e| cfg_err(e.to_string()))?;
        Ok(())
    }

    /// Canonical text form. Parsing it yields an identical configuration.
    pub fn to_text(&self) -> Result<String> {
        let mut s = String::new();
        let g = &self.grid;
        let c = &self.coefficients;
        let w = &self.weights;
        let o = &self.observation;
        let f = &self.formulation;
        let p = &f.params;
        let sv = &self.solver;
        let t = &self.truth;
        let cx = match c.derivative {
            DerivativeMode::Analytic => "analytic".to_string(),
            DerivativeMode::CentralDifference { step } => format!("central {}", num(step)),
        };
        let ms = match f.multiplier {
            None => "auto",
            Some(m) => m.name(),
        };
        // writing to a String cannot fail
        let _ = write!(
            s,
            "[grid]\nnx = {}\nnt = {}\nx_min = {}\nx_max = {}\nt_final = {}\nquad_order = {}\n\n",
            g.nx,
            g.nt,
            num(g.x_min),
            num(g.x_max),
            num(g.t_final),
            g.quad_order
        );
        let _ = write!(
            s,
            "[coefficients]\nc = {}\nd = {}\nf = {}\nflux_source = {}\ny0 = {}\nc_x = {}\n\n",
            profile_text(&c.c)?,
            profile_text(&c.d)?,
            profile_text(&c.f)?,
            profile_text(&c.flux_source)?,
            profile_text(&c.y0)?,
            cx
        );
        let _ = write!(
            s,
            "[weights]\nkind = {}\nk1 = {}\nk2 = {}\nm = {}\ncap = {}\nrho_star = {}\nq = {}\n\n",
            w.kind.name(),
            num(w.k1),
            num(w.k2),
            num(w.m),
            num(w.cap),
            num(w.rho_star),
            num(w.q)
        );
        let _ = write!(
            s,
            "[observation]\nomega_a = {}\nomega_b = {}\nsigma = {}\nseed = {}\n\n",
            num(o.omega_a),
            num(o.omega_b),
            num(o.sigma),
            o.seed
        );
        let _ = write!(
            s,
            "[formulation]\nname = {}\nmultiplier = {}\nr = {}\nr2 = {}\nalpha = {}\nalpha2 = {}\neta = {}\neta2 = {}\neps = {}\nqr_unweighted = {}\n\n",
            f.name.name(),
            ms,
            num(p.r),
            num(p.r2),
            num(p.alpha),
            num(p.alpha2),
            num(p.eta),
            num(p.eta2),
            num(p.eps),
            p.qr_unweighted
        );
        let _ = write!(
            s,
            "[solver]\nmethod = {}\ntol = {}\nmaxit = {}\nrenormalize = {}\n\n",
            sv.method.name(),
            num(sv.tol),
            sv.maxit,
            sv.renormalize
        );
        let _ = write!(
            s,
            "[truth]\nsource = {}\nrefine = {}\ntheta = {}\n\n[output]\ndir = {}\n",
            t.source.name(),
            t.refine,
            num(t.theta),
            self.output.display()
        );
        Ok(s)
    }
}

impl FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        // aliases (r1 for r, ...) must agree with the primary key when both are given
        let mut seen: Vec<(String, f64)> = Vec::new();
        let mut alias = |canon: &str, v: f64| -> Result<()> {
            if let Some((_, old)) = seen.iter().find(|(k, _)| k == canon) {
                if *old != v {
                    return Err(cfg_err(format!("conflicting values for {canon} and its alias")));
                }
            }
            seen.push((canon.to_string(), v));
            Ok(())
        };
        for (sec, key, v, line) in entries(text)? {
            let k = format!("{sec}.{key}");
            let k = k.as_str();
            let p = &mut cfg.formulation.params;
            match (sec.as_str(), key.as_str()) {
                ("manifest", _) => {}
                ("grid", "nx") => cfg.grid.nx = parse_usize(k, &v)?,
                ("grid", "nt") => cfg.grid.nt = parse_usize(k, &v)?,
                ("grid", "x_min") => cfg.grid.x_min = parse_f64(k, &v)?,
                ("grid", "x_max") => cfg.grid.x_max = parse_f64(k, &v)?,
                ("grid", "t_final") | ("grid", "T") => cfg.grid.t_final = parse_f64(k, &v)?,
                ("grid", "quad_order") => cfg.grid.quad_order = parse_usize(k, &v)?,
                ("coefficients", "c") => cfg.coefficients.c = parse_profile(k, &v)?,
                ("coefficients", "d") => cfg.coefficients.d = parse_profile(k, &v)?,
                ("coefficients", "f") => cfg.coefficients.f = parse_profile(k, &v)?,
                ("coefficients", "flux_source") => cfg.coefficients.flux_source = parse_profile(k, &v)?,
                ("coefficients", "y0") => cfg.coefficients.y0 = parse_profile(k, &v)?,
                ("coefficients", "c_x") => {
                    cfg.coefficients.derivative = match v.split_whitespace().collect::<Vec<_>>().as_slice() {
                        ["analytic"] => DerivativeMode::Analytic,
                        ["central", h] => DerivativeMode::CentralDifference { step: parse_f64(k, h)? },
                        _ => return Err(cfg_err(format!("{k}: expected 'analytic' or 'central <step>'"))),
                    }
                }
                ("weights", "kind") => cfg.weights.kind = v.parse()?,
                ("weights", "k1") | ("weights", "K1") => cfg.weights.k1 = parse_f64(k, &v)?,
                ("weights", "k2") | ("weights", "K2") => cfg.weights.k2 = parse_f64(k, &v)?,
                ("weights", "m") => cfg.weights.m = parse_f64(k, &v)?,
                ("weights", "cap") => cfg.weights.cap = parse_f64(k, &v)?,
                ("weights", "cap_log") => cfg.weights.cap = parse_f64(k, &v)?.exp(),
                ("weights", "rho_star") => cfg.weights.rho_star = parse_f64(k, &v)?,
                ("weights", "q") => cfg.weights.q = parse_f64(k, &v)?,
                ("observation", "omega_a") => cfg.observation.omega_a = parse_f64(k, &v)?,
                ("observation", "omega_b") => cfg.observation.omega_b = parse_f64(k, &v)?,
                ("observation", "sigma") => cfg.observation.sigma = parse_f64(k, &v)?,
                ("observation", "seed") => {
                    cfg.observation.seed = v.parse().map_err(|_| cfg_err(format!("{k}: '{v}' is not a seed")))?
                }
                ("formulation", "name") => cfg.formulation.name = v.parse().map_err(|e: Error| cfg_err(e.to_string()))?,
                ("formulation", "multiplier") => {
                    cfg.formulation.multiplier = match v.as_str() {
                        "auto" => None,
                        s => Some(s.parse().map_err(|e: Error| cfg_err(e.to_string()))?),
                    }
                }
                ("formulation", "r") | ("formulation", "r1") => {
                    p.r = parse_f64(k, &v)?;
                    alias("r", p.r)?
                }
                ("formulation", "r2") => p.r2 = parse_f64(k, &v)?,
                ("formulation", "alpha") | ("formulation", "alpha1") => {
                    p.alpha = parse_f64(k, &v)?;
                    alias("alpha", p.alpha)?
                }
                ("formulation", "alpha2") => p.alpha2 = parse_f64(k, &v)?,
                ("formulation", "eta") | ("formulation", "eta1") => {
                    p.eta = parse_f64(k, &v)?;
                    alias("eta", p.eta)?
                }
                ("formulation", "eta2") => p.eta2 = parse_f64(k, &v)?,
                ("formulation", "eps") => p.eps = parse_f64(k, &v)?,
                ("formulation", "qr_unweighted") => p.qr_unweighted = parse_bool(k, &v)?,
                ("solver", "method") => cfg.solver.method = v.parse()?,
                ("solver", "tol") => cfg.solver.tol = parse_f64(k, &v)?,
                ("solver", "maxit") => cfg.solver.maxit = parse_usize(k, &v)?,
                ("solver", "renormalize") => cfg.solver.renormalize = parse_bool(k, &v)?,
                ("truth", "source") => {
                    cfg.truth.source = match v.as_str() {
                        "auto" => TruthSource::Auto,
                        "closed_form" => TruthSource::ClosedForm,
                        "forward" => TruthSource::Forward,
                        _ => return Err(cfg_err(format!("{k}: unknown truth source '{v}'"))),
                    }
                }
                ("truth", "refine") => cfg.truth.refine = parse_usize(k, &v)?,
                ("truth", "theta") => cfg.truth.theta = parse_f64(k, &v)?,
                ("output", "dir") => cfg.output = PathBuf::from(&v),
                _ => return Err(cfg_err(format!("line {line}: unknown key '{k}'"))),
            }
        }
        cfg.coefficients.x_min = cfg.grid.x_min;
        cfg.coefficients.x_max = cfg.grid.x_max;
        Ok(cfg)
    }
}

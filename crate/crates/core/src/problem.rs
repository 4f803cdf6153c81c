//! Shared data of a reconstruction problem and the formulation parameters.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::coefficients::Coefficients;
use crate::error::{Error, Result};
use crate::grid::{quadrature_points, QuadratureSet, SpaceTimeGrid};
use crate::observe::ObservationSet;
use crate::weights::{WeightFamily, WeightSamples};

/// Grid, quadrature, coefficients, weights and observations of one instance.
#[derive(Debug, Clone)]
pub struct Problem {
    pub grid: SpaceTimeGrid,
    pub quad: QuadratureSet,
    pub coeffs: Coefficients,
    pub weights: WeightFamily,
    pub obs: ObservationSet,
    pub samples: WeightSamples,
}

impl Problem {
    pub fn new(coeffs: Coefficients, weights: WeightFamily, obs: ObservationSet) -> Result<Arc<Problem>> {
        let grid = obs.grid;
        if coeffs.x_min != grid.x_min || coeffs.x_max != grid.x_max {
            return Err(Error::LayoutMismatch("coefficients and grid live on different intervals".into()));
        }
        coeffs.validate(grid.nx)?;
        let quad = quadrature_points(&grid, obs.order)?;
        let samples = WeightSamples::new(&weights, &quad)?;
        if samples.observation.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidParameter(
                "observation weight underflows on the grid; use a capped family".into(),
            ));
        }
        Ok(Arc::new(Problem { grid, quad, coeffs, weights, obs, samples }))
    }

    /// The observed value at quadrature point `q` of `cell`, if the cell lies in `q_T`.
    pub fn observed(&self, cell: usize, q: usize) -> Option<f64> {
        self.obs.cell_samples(cell).get(q).map(|s| s.value)
    }

    pub fn in_omega(&self, cell: usize) -> bool {
        self.obs.omega.contains_cell(&self.grid, cell)
    }
}

/// The reconstruction formulations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Formulation {
    /// Second-order mixed formulation.
    Mf,
    /// Second-order mixed formulation with the stabilization in `alpha`.
    MfAlpha,
    /// First-order mixed formulation in `(y, p)`.
    Mf4,
    /// First-order mixed formulation with the stabilization in `(alpha1, alpha2)`.
    Mf4Alpha,
    /// Quasi-reversibility baseline.
    Qr,
}

impl Formulation {
    pub const ALL: [Formulation; 5] =
        [Formulation::Mf, Formulation::MfAlpha, Formulation::Mf4, Formulation::Mf4Alpha, Formulation::Qr];

    pub fn name(self) -> &'static str {
        match self {
            Formulation::Mf => "mf",
            Formulation::MfAlpha => "mf-alpha",
            Formulation::Mf4 => "mf4",
            Formulation::Mf4Alpha => "mf4-alpha",
            Formulation::Qr => "qr",
        }
    }

    pub fn is_first_order(self) -> bool {
        matches!(self, Formulation::Mf4 | Formulation::Mf4Alpha)
    }
}

impl fmt::Display for Formulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Formulation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Formulation::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown formulation '{s}'")))
    }
}

/// Discrete multiplier space.
///
/// `P0` carries `lambda` directly. `Q1` and `Hermite` carry `phi = rho^{-1} lambda`
/// with zero trace on the lateral boundary and at `t = T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MultiplierSpace {
    P0,
    Q1,
    Hermite,
}

impl MultiplierSpace {
    pub fn name(self) -> &'static str {
        match self {
            MultiplierSpace::P0 => "p0",
            MultiplierSpace::Q1 => "q1",
            MultiplierSpace::Hermite => "hermite",
        }
    }
}

impl FromStr for MultiplierSpace {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p0" => Ok(MultiplierSpace::P0),
            "q1" => Ok(MultiplierSpace::Q1),
            "hermite" => Ok(MultiplierSpace::Hermite),
            _ => Err(Error::Config(format!("unknown multiplier space '{s}'"))),
        }
    }
}

/// Augmentation, stabilization and norm parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Params {
    /// `r` (second order) or `r1` (first order, flux equation).
    pub r: f64,
    /// `r2` (first order, state equation).
    pub r2: f64,
    /// `alpha` or `alpha1`.
    pub alpha: f64,
    pub alpha2: f64,
    /// `eta` or `eta1`.
    pub eta: f64,
    pub eta2: f64,
    /// Quasi-reversibility parameter.
    pub eps: f64,
    /// Quasi-reversibility with unit weights.
    pub qr_unweighted: bool,
}

impl Default for Params {
    fn default() -> Self {
        Params { r: 1.0, r2: 1.0, alpha: 0.5, alpha2: 0.5, eta: 1.0, eta2: 1.0, eps: 1e-2, qr_unweighted: false }
    }
}

impl Params {
    pub fn validate(&self, formulation: Formulation) -> Result<()> {
        let nonneg = |v: f64, n: &str| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{n} = {v} must be finite and non-negative")))
            }
        };
        nonneg(self.r, "r")?;
        nonneg(self.r2, "r2")?;
        if !(self.eta > 0.0 && self.eta2 > 0.0) {
            return Err(Error::InvalidParameter("eta must be positive".into()));
        }
        match formulation {
            Formulation::MfAlpha => {
                if !(self.alpha > 0.0 && self.alpha < 1.0) {
                    return Err(Error::AlphaOutOfRange(self.alpha));
                }
            }
            Formulation::Mf4Alpha => {
                if !(self.alpha > 0.0 && self.alpha < 1.0) {
                    return Err(Error::AlphaOutOfRange(self.alpha));
                }
                if !(self.alpha2 > 0.0 && self.alpha2 < 1.0) {
                    return Err(Error::AlphaOutOfRange(self.alpha2));
                }
            }
            Formulation::Qr => {
                if !(self.eps > 0.0) {
                    return Err(Error::NonPositiveEps(self.eps));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

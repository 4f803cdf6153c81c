//! Synthetic observations on `q_T = omega x (0, T)` and the weighted misfit.

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::field::{Field, SpaceTimeFunction};
use crate::grid::{DerivLevel, QuadratureSet, SpaceTimeGrid};
use crate::weights::{Member, WeightFamily};

/// One observed value at a quadrature point of a cell in `q_T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub cell: usize,
    /// Index of the reference quadrature point.
    pub qp: usize,
    pub x: f64,
    pub t: f64,
    pub w: f64,
    pub value: f64,
}

/// Observation interval after snapping to cell boundaries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Omega {
    pub a: f64,
    pub b: f64,
    /// First and one-past-last spatial cell index inside `omega`.
    pub i0: usize,
    pub i1: usize,
}

impl Omega {
    pub fn contains_cell(&self, grid: &SpaceTimeGrid, cell: usize) -> bool {
        let (i, _) = grid.cell_coords(cell);
        i >= self.i0 && i < self.i1
    }

    pub fn width(&self) -> f64 {
        self.b - self.a
    }
}

/// Snaps `(a, b)` to the nearest cell boundaries, warning when it moves.
pub fn snap_omega(grid: &SpaceTimeGrid, omega: (f64, f64)) -> Result<Omega> {
    let (a, b) = omega;
    if !(a < b) {
        return Err(Error::DegenerateOmega);
    }
    if a <= grid.x_min || b >= grid.x_max {
        return Err(Error::OmegaOutsideDomain { a, b, x_min: grid.x_min, x_max: grid.x_max });
    }
    let h = grid.hx();
    let i0 = (((a - grid.x_min) / h).round() as usize).max(1);
    let i1 = (((b - grid.x_min) / h).round() as usize).min(grid.nx - 1);
    if i0 >= i1 {
        return Err(Error::DegenerateOmega);
    }
    let (sa, sb) = (grid.node_x(i0), grid.node_x(i1));
    let tol = 1e-9 * h;
    if (sa - a).abs() > tol || (sb - b).abs() > tol {
        warn!("observation interval ({a}, {b}) snapped to ({sa}, {sb})");
    }
    Ok(Omega { a: sa, b: sb, i0, i1 })
}

/// Observed values at the quadrature points of every cell in `q_T`.
#[derive(Debug, Clone)]
pub struct ObservationSet {
    pub grid: SpaceTimeGrid,
    pub order: usize,
    pub omega: Omega,
    pub sigma: f64,
    pub seed: u64,
    pub samples: Vec<Sample>,
    cell_start: Vec<Option<usize>>,
}

impl ObservationSet {
    /// Sample layout of `q_T` with all values zero.
    pub fn layout(quad: &QuadratureSet, omega: (f64, f64)) -> Result<ObservationSet> {
        let grid = quad.grid;
        let omega = snap_omega(&grid, omega)?;
        let mut samples = Vec::new();
        let mut cell_start = vec![None; grid.n_cells()];
        for cell in 0..grid.n_cells() {
            if !omega.contains_cell(&grid, cell) {
                continue;
            }
            cell_start[cell] = Some(samples.len());
            for (qp, p) in quad.cell_points(cell).iter().enumerate() {
                samples.push(Sample { cell, qp, x: p.x, t: p.t, w: p.w, value: 0.0 });
            }
        }
        Ok(ObservationSet { grid, order: quad.order, omega, sigma: 0.0, seed: 0, samples, cell_start })
    }

    /// Samples of one cell, empty outside `q_T`.
    pub fn cell_samples(&self, cell: usize) -> &[Sample] {
        match self.cell_start[cell] {
            Some(s) => &self.samples[s..s + self.per_cell()],
            None => &[],
        }
    }

    pub fn per_cell(&self) -> usize {
        self.order * self.order
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.value).collect()
    }

    pub fn with_values(mut self, values: &[f64]) -> Result<ObservationSet> {
        if values.len() != self.samples.len() {
            return Err(Error::LayoutMismatch(format!("{} values for {} samples", values.len(), self.samples.len())));
        }
        for (s, v) in self.samples.iter_mut().zip(values) {
            s.value = *v;
        }
        Ok(self)
    }

    pub fn check_grid(&self, grid: &SpaceTimeGrid) -> Result<()> {
        if !self.grid.same_layout(grid) {
            return Err(Error::LayoutMismatch(format!(
                "observations live on a {}x{} grid, field on {}x{}",
                self.grid.nx, self.grid.nt, grid.nx, grid.nt
            )));
        }
        Ok(())
    }

    pub fn check_quadrature(&self, quad: &QuadratureSet) -> Result<()> {
        self.check_grid(&quad.grid)?;
        if quad.order != self.order {
            return Err(Error::LayoutMismatch(format!("quadrature order {} vs {}", quad.order, self.order)));
        }
        Ok(())
    }

    /// `|| rho_0^{-1} g ||_{L2(q_T)}` for the samples of `g`.
    pub fn weighted_norm(&self, values: &[f64], family: &WeightFamily) -> Result<f64> {
        let mut s = 0.0;
        for (smp, v) in self.samples.iter().zip(values) {
            let r = family.inverse(Member::Observation, smp.x, smp.t)?;
            s += smp.w * (r * v).powi(2);
        }
        Ok(s.sqrt())
    }

    /// `|| rho_0^{-1} y_obs ||_{L2(q_T)}`.
    pub fn data_norm(&self, family: &WeightFamily) -> Result<f64> {
        self.weighted_norm(&self.values(), family)
    }
}

/// Samples `truth` at the quadrature points of `q_T` and adds Gaussian noise of
/// standard deviation `sigma`. The noise sequence depends only on `seed`, so the
/// perturbation scales exactly with `sigma`.
pub fn make_observation(
    truth: &dyn SpaceTimeFunction,
    omega: (f64, f64),
    quad: &QuadratureSet,
    sigma: f64,
    seed: u64,
) -> Result<ObservationSet> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!("noise level {sigma} must be non-negative")));
    }
    let mut set = ObservationSet::layout(quad, omega)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for s in set.samples.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        s.value = truth.value(s.x, s.t) + sigma * z;
        if !s.value.is_finite() {
            return Err(Error::InvalidParameter(format!("truth is not finite at ({}, {})", s.x, s.t)));
        }
    }
    set.sigma = sigma;
    set.seed = seed;
    Ok(set)
}

/// Values of `y` at the samples of `obs`.
pub fn sample_field(y: &Field, obs: &ObservationSet, quad: &QuadratureSet) -> Result<Vec<f64>> {
    obs.check_grid(&y.space.grid)?;
    obs.check_quadrature(quad)?;
    obs.samples
        .iter()
        .map(|s| y.eval_local(s.cell, quad.local[s.qp], DerivLevel::Value).map(|p| p.v))
        .collect()
}

/// `J(y) = 1/2 int_{q_T} rho_0^{-2} |y - y_obs|^2`.
pub fn weighted_misfit(y: &Field, obs: &ObservationSet, quad: &QuadratureSet, family: &WeightFamily) -> Result<f64> {
    let vals = sample_field(y, obs, quad)?;
    let diff: Vec<f64> = vals.iter().zip(&obs.samples).map(|(v, s)| v - s.value).collect();
    Ok(0.5 * obs.weighted_norm(&diff, family)?.powi(2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, quadrature_points, BasisKind, Constraints, FemSpace};

    #[test]
    fn sample_count_and_snapping() {
        let g = build_grid(0.0, 1.0, 0.5, 10, 6).unwrap();
        let q = quadrature_points(&g, 3).unwrap();
        let o = ObservationSet::layout(&q, (0.3, 0.5)).unwrap();
        assert_eq!(o.len(), 2 * 6 * 9);
        let o = ObservationSet::layout(&q, (0.31, 0.52)).unwrap();
        assert!((o.omega.a - 0.3).abs() < 1e-15 && (o.omega.b - 0.5).abs() < 1e-15);
        assert!(matches!(ObservationSet::layout(&q, (0.0, 0.5)), Err(Error::OmegaOutsideDomain { .. })));
        assert!(matches!(ObservationSet::layout(&q, (0.5, 0.5)), Err(Error::DegenerateOmega)));
    }

    #[test]
    fn noise_is_deterministic_and_linear() {
        let g = build_grid(0.0, 1.0, 0.5, 8, 8).unwrap();
        let q = quadrature_points(&g, 3).unwrap();
        let truth = |x: f64, t: f64| x * (1.0 - x) * (1.0 + t);
        let a = make_observation(&truth, (0.25, 0.75), &q, 0.01, 7).unwrap();
        let b = make_observation(&truth, (0.25, 0.75), &q, 0.01, 7).unwrap();
        let c = make_observation(&truth, (0.25, 0.75), &q, 0.02, 7).unwrap();
        let clean = make_observation(&truth, (0.25, 0.75), &q, 0.0, 7).unwrap();
        assert_eq!(a.values(), b.values());
        for ((va, vc), v0) in a.values().iter().zip(c.values()).zip(clean.values()) {
            assert!(((vc - v0) - 2.0 * (va - v0)).abs() < 1e-15);
        }
    }

    #[test]
    fn misfit_of_unit_gap() {
        let g = build_grid(0.0, 1.0, 0.5, 10, 4).unwrap();
        let q = quadrature_points(&g, 3).unwrap();
        let obs = make_observation(&|_: f64, _: f64| 0.0, (0.3, 0.5), &q, 0.0, 1).unwrap();
        let sp = FemSpace::new(BasisKind::Q1, g, Constraints::NONE);
        let y = Field::interpolate(sp.clone(), |_, _| 1.0);
        let unit = WeightFamily::unit(0.5);
        let j = weighted_misfit(&y, &obs, &q, &unit).unwrap();
        assert!((j - 0.05).abs() < 1e-14);
        let y2 = Field::interpolate(sp, |_, _| 2.0);
        assert!((weighted_misfit(&y2, &obs, &q, &unit).unwrap() - 4.0 * j).abs() < 1e-14);
        let other = build_grid(0.0, 1.0, 0.5, 8, 4).unwrap();
        let y3 = Field::interpolate(FemSpace::new(BasisKind::Q1, other, Constraints::NONE), |_, _| 1.0);
        assert!(matches!(weighted_misfit(&y3, &obs, &q, &unit), Err(Error::LayoutMismatch(_))));
    }
}

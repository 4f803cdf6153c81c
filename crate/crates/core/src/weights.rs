//! Carleman-type weight profiles and the weight families used by the
//! formulations.
//!
//! Inverse weights are computed in log space. Capped members return
//! `max(w^-1, 1/M)`, every member returns at most `1/rho_star`, and an
//! underflowing exponential yields exactly zero.

use crate::error::{Error, Result};
use crate::grid::{quadrature_points, QuadratureSet};

/// Spatial profile `beta(x) = K1 (e^{K2} - e^{K2 (1 - m psi(x))})`.
///
/// `psi` is piecewise quintic: `1 - (1 - s)^5` on each side of the midpoint of
/// the observation interval, with `s` the normalized distance from the
/// boundary. It is C^1, vanishes at both ends, equals 1 at the midpoint and is
/// strictly monotone on each side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaProfile {
    pub x_min: f64,
    pub x_max: f64,
    pub x_mid: f64,
    pub k1: f64,
    pub k2: f64,
    pub m: f64,
}

pub fn build_beta(x_min: f64, x_max: f64, omega: (f64, f64), k1: f64, k2: f64, m: f64) -> Result<BetaProfile> {
    let (a, b) = omega;
    if a >= b {
        return Err(Error::DegenerateOmega);
    }
    if a <= x_min || b >= x_max {
        return Err(Error::OmegaOutsideDomain { a, b, x_min, x_max });
    }
    if !(k1 > 0.0 && k2 > 0.0) {
        return Err(Error::InvalidParameter(format!("K1 = {k1} and K2 = {k2} must be positive")));
    }
    if !(m > 0.0 && m < 1.0) {
        return Err(Error::InvalidParameter(format!("m = {m} must lie in (0, 1)")));
    }
    Ok(BetaProfile { x_min, x_max, x_mid: 0.5 * (a + b), k1, k2, m })
}

impl BetaProfile {
    /// `psi(x)` and `psi'(x)`.
    pub fn psi(&self, x: f64) -> (f64, f64) {
        let x = x.clamp(self.x_min, self.x_max);
        let (s, ds) = if x <= self.x_mid {
            let l = self.x_mid - self.x_min;
            ((x - self.x_min) / l, 1.0 / l)
        } else {
            let l = self.x_max - self.x_mid;
            ((self.x_max - x) / l, -1.0 / l)
        };
        let r = 1.0 - s;
        (1.0 - r.powi(5), 5.0 * r.powi(4) * ds)
    }

    pub fn value(&self, x: f64) -> f64 {
        let (p, _) = self.psi(x);
        self.k1 * (self.k2.exp() - (self.k2 * (1.0 - self.m * p)).exp())
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let (p, dp) = self.psi(x);
        self.k1 * (self.k2 * (1.0 - self.m * p)).exp() * self.k2 * self.m * dp
    }

    pub fn max_value(&self) -> f64 {
        self.value(self.x_mid)
    }
}

/// Shape of the weight family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightKind {
    Unit,
    /// All inverse weights equal `(t / T)^q`.
    Power { q: f64 },
    /// `rho_c = e^{beta/t}`, `rho_{c,0} = t^{3/2} rho_c`, `rho_{c,1} = t^{1/2} rho_c`.
    CarlemanC,
    /// `rho_p = e^{beta/t^2}`, `rho_{p,0} = t rho_p`, `rho_{p,1} = rho_p / t`,
    /// `rho_{p,2} = rho_p / t^2`.
    CarlemanP,
}

/// Role of a weight inside a family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Member {
    /// `rho_c` or `rho_p`.
    Base,
    /// Multiplier weight `rho` (`rho_c` or `rho_{p,2}`).
    Multiplier,
    /// Observation weight `rho_0` (`rho_{c,0}` or `rho_{p,0}`).
    Observation,
    /// Flux weight `rho_1` (`rho_{c,1}` or `rho_{p,1}`).
    Flux,
}

impl Member {
    pub const ALL: [Member; 4] = [Member::Base, Member::Multiplier, Member::Observation, Member::Flux];

    pub fn name(self) -> &'static str {
        match self {
            Member::Base => "base",
            Member::Multiplier => "rho",
            Member::Observation => "rho0",
            Member::Flux => "rho1",
        }
    }
}

/// A weight family with its floor `rho_star` and cap `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFamily {
    pub kind: WeightKind,
    pub beta: Option<BetaProfile>,
    pub t_final: f64,
    /// Lower bound of every weight.
    pub rho_star: f64,
    /// Upper bound applied to the capped members (`f64::INFINITY` disables).
    pub cap: f64,
    pub capped: Vec<Member>,
}

pub const DEFAULT_CAP_LOG: f64 = 40.0;
pub const DEFAULT_RHO_STAR: f64 = 1e-6;

impl WeightFamily {
    pub fn unit(t_final: f64) -> WeightFamily {
        WeightFamily {
            kind: WeightKind::Unit,
            beta: None,
            t_final,
            rho_star: DEFAULT_RHO_STAR,
            cap: f64::INFINITY,
            capped: Vec::new(),
        }
    }

    pub fn power(t_final: f64, q: f64) -> Result<WeightFamily> {
        if !(q >= 0.0) {
            return Err(Error::InvalidParameter(format!("power exponent {q} must be non-negative")));
        }
        Ok(WeightFamily { kind: WeightKind::Power { q }, ..Self::capped_default(t_final) })
    }

    pub fn carleman_c(beta: BetaProfile, t_final: f64) -> WeightFamily {
        WeightFamily { kind: WeightKind::CarlemanC, beta: Some(beta), ..Self::capped_default(t_final) }
    }

    pub fn carleman_p(beta: BetaProfile, t_final: f64) -> WeightFamily {
        WeightFamily { kind: WeightKind::CarlemanP, beta: Some(beta), ..Self::capped_default(t_final) }
    }

    fn capped_default(t_final: f64) -> WeightFamily {
        WeightFamily {
            kind: WeightKind::Unit,
            beta: None,
            t_final,
            rho_star: DEFAULT_RHO_STAR,
            cap: DEFAULT_CAP_LOG.exp(),
            capped: vec![Member::Multiplier, Member::Flux, Member::Observation],
        }
    }

    /// Same family with every cap removed.
    pub fn uncapped(&self) -> WeightFamily {
        WeightFamily { cap: f64::INFINITY, capped: Vec::new(), ..self.clone() }
    }

    pub fn with_cap(mut self, cap: f64) -> WeightFamily {
        self.cap = cap;
        self
    }

    pub fn is_unit(&self) -> bool {
        self.kind == WeightKind::Unit
    }

    pub fn is_capped(&self, member: Member) -> bool {
        self.cap.is_finite() && self.capped.contains(&member)
    }

    fn log_inverse(&self, member: Member, beta: f64, t: f64) -> f64 {
        match self.kind {
            WeightKind::Unit => 0.0,
            WeightKind::Power { q } => q * (t / self.t_final).ln(),
            WeightKind::CarlemanC => {
                let base = -beta / t;
                match member {
                    Member::Base | Member::Multiplier => base,
                    Member::Observation => base - 1.5 * t.ln(),
                    Member::Flux => base - 0.5 * t.ln(),
                }
            }
            WeightKind::CarlemanP => {
                let base = -beta / (t * t);
                match member {
                    Member::Base => base,
                    Member::Multiplier => base + 2.0 * t.ln(),
                    Member::Observation => base - t.ln(),
                    Member::Flux => base + t.ln(),
                }
            }
        }
    }

    /// `w^{-1}(x, t)` for one member.
    pub fn inverse(&self, member: Member, x: f64, t: f64) -> Result<f64> {
        let beta = self.beta.as_ref().map(|b| b.value(x)).unwrap_or(0.0);
        self.inverse_at_beta(member, beta, t)
    }

    /// `w^{-1}` for a given value of the spatial profile.
    pub fn inverse_at_beta(&self, member: Member, beta: f64, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::NonPositiveTime(t));
        }
        let mut v = self.log_inverse(member, beta, t).exp().min(1.0 / self.rho_star);
        if self.is_capped(member) {
            v = v.max(1.0 / self.cap);
        }
        Ok(v)
    }
}

/// Convenience wrapper matching the single-member evaluation contract.
pub fn eval_inverse_weight(family: &WeightFamily, member: Member, x: f64, t: f64) -> Result<f64> {
    family.inverse(member, x, t)
}

/// Inverse weights tabulated at every quadrature point.
#[derive(Debug, Clone)]
pub struct WeightSamples {
    pub multiplier: Vec<f64>,
    pub observation: Vec<f64>,
    pub flux: Vec<f64>,
}

impl WeightSamples {
    pub fn new(family: &WeightFamily, quad: &QuadratureSet) -> Result<WeightSamples> {
        let tab = |m: Member| -> Result<Vec<f64>> {
            quad.points().iter().map(|p| family.inverse(m, p.x, p.t)).collect()
        };
        Ok(WeightSamples {
            multiplier: tab(Member::Multiplier)?,
            observation: tab(Member::Observation)?,
            flux: tab(Member::Flux)?,
        })
    }
}

/// Result for one `(candidate, reference)` member pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DominationEntry {
    pub candidate: Member,
    pub reference: Member,
    /// Smallest `K` with `candidate <= K reference` at all quadrature points.
    pub k: f64,
    /// Same quantity on the twice refined quadrature.
    pub k_refined: f64,
    /// `K` finite and not growing under refinement.
    pub pass: bool,
}

fn domination_constant(cand: &WeightFamily, cm: Member, refr: &WeightFamily, rm: Member, q: &QuadratureSet) -> Result<f64> {
    let mut k: f64 = 0.0;
    for p in q.points() {
        let ci = cand.inverse(cm, p.x, p.t)?;
        let ri = refr.inverse(rm, p.x, p.t)?;
        let ratio = if ri == 0.0 {
            0.0
        } else if ci == 0.0 {
            f64::INFINITY
        } else {
            ri / ci
        };
        k = k.max(ratio);
    }
    Ok(k)
}

/// Checks `candidate <= K reference` for each member pair.
pub fn check_domination(
    candidate: &WeightFamily,
    reference: &WeightFamily,
    pairs: &[(Member, Member)],
    quad: &QuadratureSet,
) -> Result<Vec<DominationEntry>> {
    let fine = quadrature_points(&quad.grid.refined(2, 2), quad.order)?;
    pairs
        .iter()
        .map(|&(cm, rm)| {
            if cm != rm {
                return Err(Error::MemberMismatch(format!("{} cannot be compared with {}", cm.name(), rm.name())));
            }
            let k = domination_constant(candidate, cm, reference, rm, quad)?;
            let k_refined = domination_constant(candidate, cm, reference, rm, &fine)?;
            let pass = k.is_finite() && k_refined <= k * (1.0 + 1e-9);
            Ok(DominationEntry { candidate: cm, reference: rm, k, k_refined, pass })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use proptest::prelude::*;

    fn beta() -> BetaProfile {
        build_beta(0.0, 1.0, (0.25, 0.75), 1.0, 1.0, 0.5).unwrap()
    }

    #[test]
    fn beta_shape() {
        let b = beta();
        assert_eq!(b.value(0.0), 0.0);
        assert_eq!(b.value(1.0), 0.0);
        assert!((b.max_value() - 1.069_560_557_758_917).abs() < 1e-14);
        assert!(b.derivative(0.5).abs() < 1e-14);
        assert!(matches!(build_beta(0.0, 1.0, (0.0, 0.5), 1.0, 1.0, 0.5), Err(Error::OmegaOutsideDomain { .. })));
        assert!(matches!(build_beta(0.0, 1.0, (0.5, 0.5), 1.0, 1.0, 0.5), Err(Error::DegenerateOmega)));
        assert!(matches!(build_beta(0.0, 1.0, (0.2, 0.5), 1.0, 1.0, 1.5), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn beta_derivative_matches_difference_quotient() {
        let b = beta();
        for k in 1..40 {
            let x = k as f64 / 40.0;
            let e = 1e-6;
            let fd = (b.value(x + e) - b.value(x - e)) / (2.0 * e);
            assert!((fd - b.derivative(x)).abs() < 1e-7, "x = {x}");
        }
    }

    proptest! {
        #[test]
        fn beta_monotone_each_side(x1 in 0.0f64..1.0, x2 in 0.0f64..1.0) {
            let b = beta();
            let (lo, hi) = if x1 < x2 { (x1, x2) } else { (x2, x1) };
            prop_assume!(hi - lo > 1e-9);
            if hi <= 0.5 {
                prop_assert!(b.value(lo) < b.value(hi));
            } else if lo >= 0.5 {
                prop_assert!(b.value(lo) > b.value(hi));
            }
            prop_assert!(b.value(lo) >= 0.0);
        }

        #[test]
        fn carleman_member_relations(x in 0.0f64..1.0, t in 0.01f64..0.5) {
            let c = WeightFamily::carleman_c(beta(), 0.5).uncapped();
            let r0 = c.inverse(Member::Observation, x, t).unwrap();
            let r1 = c.inverse(Member::Flux, x, t).unwrap();
            if r0 < 1.0 / c.rho_star {
                prop_assert!((r1 - t * r0).abs() <= 1e-12 * r1.abs().max(1e-300));
            }
            let p = WeightFamily::carleman_p(beta(), 0.5).uncapped();
            let base = p.inverse(Member::Base, x, t).unwrap();
            prop_assert!(p.inverse(Member::Flux, x, t).unwrap() <= 0.5 * base * (1.0 + 1e-14));
            let capped = WeightFamily::carleman_c(beta(), 0.5);
            let raw = c.inverse(Member::Multiplier, x, t).unwrap();
            let cap = capped.inverse(Member::Multiplier, x, t).unwrap();
            prop_assert_eq!(cap, raw.max((-DEFAULT_CAP_LOG).exp()));
        }
    }

    #[test]
    fn inverse_weight_values() {
        let c = WeightFamily::carleman_c(beta(), 1.0).uncapped();
        let v = c.inverse_at_beta(Member::Base, 1.0, 1.0).unwrap();
        assert!((v - 0.367_879_441_171_442_3).abs() < 1e-16);
        assert_eq!(c.inverse_at_beta(Member::Base, 1.0, 1e-8).unwrap(), 0.0);
        assert!(matches!(c.inverse(Member::Base, 0.5, 0.0), Err(Error::NonPositiveTime(_))));
        assert!(matches!(c.inverse(Member::Base, 0.5, -1.0), Err(Error::NonPositiveTime(_))));
        let capped = WeightFamily::carleman_c(beta(), 1.0);
        assert!((capped.inverse_at_beta(Member::Multiplier, 1.0, 1e-8).unwrap() - 4.248_354_255_291_589e-18).abs() < 1e-30);
        let p = WeightFamily::carleman_p(beta(), 1.0).uncapped();
        assert!((p.inverse_at_beta(Member::Multiplier, 1.0, 0.5).unwrap() - 0.25 * (-4.0f64).exp()).abs() < 1e-16);
    }

    #[test]
    fn domination_examples() {
        let g = build_grid(0.0, 1.0, 0.5, 8, 8).unwrap();
        let q = quadrature_points(&g, 3).unwrap();
        let reference = WeightFamily::carleman_c(beta(), 0.5).uncapped();
        let capped = WeightFamily::carleman_c(beta(), 0.5);
        let e = check_domination(&capped, &reference, &[(Member::Multiplier, Member::Multiplier)], &q).unwrap();
        assert!((e[0].k - 1.0).abs() < 1e-14 && e[0].pass);
        let e = check_domination(&reference, &reference, &[(Member::Observation, Member::Observation)], &q).unwrap();
        assert!((e[0].k - 1.0).abs() < 1e-14 && e[0].pass);
        let unit = WeightFamily::unit(0.5);
        let e = check_domination(&unit, &reference, &[(Member::Observation, Member::Observation)], &q).unwrap();
        assert!(e[0].k_refined > e[0].k && !e[0].pass);
        assert!(matches!(
            check_domination(&unit, &reference, &[(Member::Observation, Member::Flux)], &q),
            Err(Error::MemberMismatch(_))
        ));
    }
}

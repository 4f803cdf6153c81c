//! Coefficients `c(x)`, `d(x, t)`, sources and initial data of the parabolic
//! operator `L y = y_t - (c y_x)_x + d y`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::gauss_legendre;

type Custom = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Scalar profile on `Q_T`. Presets depend on `x` only.
#[derive(Clone)]
pub enum Profile {
    Zero,
    Constant(f64),
    /// `sum_k a_k x^k`.
    Polynomial(Vec<f64>),
    /// `A sin(m pi (x - x_min) / |Omega|)`.
    Eigenmode { mode: u32, amplitude: f64 },
    /// `A (1 - ((x - x0) / w)^2)^2` inside `|x - x0| < w`, zero outside.
    Bump { center: f64, width: f64, amplitude: f64 },
    /// Arbitrary function of `(x, t)`.
    Custom(Custom),
}

impl fmt::Debug for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Profile::Zero => write!(f, "zero"),
            Profile::Constant(v) => write!(f, "constant {v}"),
            Profile::Polynomial(a) => write!(f, "polynomial {a:?}"),
            Profile::Eigenmode { mode, amplitude } => write!(f, "eigenmode {mode} {amplitude}"),
            Profile::Bump { center, width, amplitude } => write!(f, "bump {center} {width} {amplitude}"),
            Profile::Custom(_) => write!(f, "custom"),
        }
    }
}

impl Profile {
    pub fn custom(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Profile {
        Profile::Custom(Arc::new(f))
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Profile::Zero => true,
            Profile::Constant(v) => *v == 0.0,
            Profile::Polynomial(a) => a.iter().all(|v| *v == 0.0),
            Profile::Eigenmode { amplitude, .. } | Profile::Bump { amplitude, .. } => *amplitude == 0.0,
            Profile::Custom(_) => false,
        }
    }

    /// Value at `(x, t)` on the interval `(x_min, x_min + len)`.
    pub fn eval(&self, x: f64, t: f64, x_min: f64, len: f64) -> f64 {
        match self {
            Profile::Zero => 0.0,
            Profile::Constant(v) => *v,
            Profile::Polynomial(a) => a.iter().rev().fold(0.0, |acc, c| acc * x + c),
            Profile::Eigenmode { mode, amplitude } => amplitude * (*mode as f64 * PI * (x - x_min) / len).sin(),
            Profile::Bump { center, width, amplitude } => {
                let z = (x - center) / width;
                if z.abs() < 1.0 {
                    amplitude * (1.0 - z * z).powi(2)
                } else {
                    0.0
                }
            }
            Profile::Custom(f) => f(x, t),
        }
    }

    /// Exact x-derivative for presets; `None` for custom profiles.
    pub fn dx(&self, x: f64, x_min: f64, len: f64) -> Option<f64> {
        Some(match self {
            Profile::Zero | Profile::Constant(_) => 0.0,
            Profile::Polynomial(a) => {
                let mut acc = 0.0;
                for (k, c) in a.iter().enumerate().skip(1).rev() {
                    acc = acc * x + k as f64 * c;
                }
                acc
            }
            Profile::Eigenmode { mode, amplitude } => {
                let w = *mode as f64 * PI / len;
                amplitude * w * (w * (x - x_min)).cos()
            }
            Profile::Bump { center, width, amplitude } => {
                let z = (x - center) / width;
                if z.abs() < 1.0 {
                    -4.0 * amplitude * z * (1.0 - z * z) / width
                } else {
                    0.0
                }
            }
            Profile::Custom(_) => return None,
        })
    }
}

/// How `c_x` is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DerivativeMode {
    Analytic,
    CentralDifference { step: f64 },
}

/// Closed-form solution available for eigenmode data with constant coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedForm {
    pub amplitude: f64,
    pub wavenumber: f64,
    pub rate: f64,
    pub c: f64,
    pub x_min: f64,
}

impl ClosedForm {
    pub fn y(&self, x: f64, t: f64) -> f64 {
        self.amplitude * (-self.rate * t).exp() * (self.wavenumber * (x - self.x_min)).sin()
    }

    pub fn y_x(&self, x: f64, t: f64) -> f64 {
        self.amplitude * self.wavenumber * (-self.rate * t).exp() * (self.wavenumber * (x - self.x_min)).cos()
    }

    pub fn y_t(&self, x: f64, t: f64) -> f64 {
        -self.rate * self.y(x, t)
    }

    pub fn y_xt(&self, x: f64, t: f64) -> f64 {
        -self.rate * self.y_x(x, t)
    }

    /// Flux `p = c y_x`.
    pub fn p(&self, x: f64, t: f64) -> f64 {
        self.c * self.y_x(x, t)
    }
}

/// Data of the parabolic problem on `(x_min, x_max) x (0, T)`.
#[derive(Debug, Clone)]
pub struct Coefficients {
    pub x_min: f64,
    pub x_max: f64,
    pub c: Profile,
    pub d: Profile,
    /// Right-hand side `f`.
    pub f: Profile,
    /// Flux source `F` in `p = c y_x - F`.
    pub flux_source: Profile,
    pub y0: Profile,
    pub derivative: DerivativeMode,
}

impl Coefficients {
    /// Heat equation with `c = 1`, `d = 0`, no sources and the first eigenmode as initial datum.
    pub fn heat(x_min: f64, x_max: f64) -> Coefficients {
        Coefficients {
            x_min,
            x_max,
            c: Profile::Constant(1.0),
            d: Profile::Zero,
            f: Profile::Zero,
            flux_source: Profile::Zero,
            y0: Profile::Eigenmode { mode: 1, amplitude: 1.0 },
            derivative: DerivativeMode::Analytic,
        }
    }

    fn len(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn c(&self, x: f64) -> f64 {
        self.c.eval(x, 0.0, self.x_min, self.len())
    }

    pub fn c_x(&self, x: f64) -> f64 {
        let fd = |h: f64| (self.c(x + h) - self.c(x - h)) / (2.0 * h);
        match self.derivative {
            DerivativeMode::Analytic => self.c.dx(x, self.x_min, self.len()).unwrap_or_else(|| fd(1e-6)),
            DerivativeMode::CentralDifference { step } => fd(step),
        }
    }

    pub fn d(&self, x: f64, t: f64) -> f64 {
        self.d.eval(x, t, self.x_min, self.len())
    }

    pub fn f(&self, x: f64, t: f64) -> f64 {
        self.f.eval(x, t, self.x_min, self.len())
    }

    pub fn flux_source(&self, x: f64, t: f64) -> f64 {
        self.flux_source.eval(x, t, self.x_min, self.len())
    }

    pub fn y0(&self, x: f64) -> f64 {
        self.y0.eval(x, 0.0, self.x_min, self.len())
    }

    /// Checks `c >= c0 > 0` at Gauss abscissae of `nx` cells and returns the sampled minimum.
    pub fn validate(&self, nx: usize) -> Result<f64> {
        if self.x_min >= self.x_max {
            return Err(Error::InvalidCoefficients("empty spatial interval".into()));
        }
        let (s, _) = gauss_legendre(4)?;
        let h = self.len() / nx.max(1) as f64;
        let mut c0 = f64::INFINITY;
        for k in 0..nx.max(1) {
            for sk in &s {
                let x = self.x_min + (k as f64 + sk) * h;
                let c = self.c(x);
                if !c.is_finite() || c <= 0.0 {
                    return Err(Error::InvalidCoefficients(format!("c({x}) = {c} is not positive")));
                }
                if !self.d(x, 0.0).is_finite() {
                    return Err(Error::InvalidCoefficients(format!("d({x}, 0) is not finite")));
                }
                c0 = c0.min(c);
            }
        }
        Ok(c0)
    }

    /// Exact solution when `c`, `d` are constant, sources vanish and `y0` is an eigenmode.
    pub fn closed_form(&self) -> Option<ClosedForm> {
        let c = match self.c {
            Profile::Constant(v) => v,
            _ => return None,
        };
        let d = match self.d {
            Profile::Zero => 0.0,
            Profile::Constant(v) => v,
            _ => return None,
        };
        if !self.f.is_zero() || !self.flux_source.is_zero() {
            return None;
        }
        match self.y0 {
            Profile::Eigenmode { mode, amplitude } => {
                let k = mode as f64 * PI / self.len();
                Some(ClosedForm { amplitude, wavenumber: k, rate: c * k * k + d, c, x_min: self.x_min })
            }
            Profile::Zero => Some(ClosedForm { amplitude: 0.0, wavenumber: PI / self.len(), rate: 0.0, c, x_min: self.x_min }),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_derivatives_match_differences() {
        let profiles = [
            Profile::Polynomial(vec![1.0, -2.0, 0.5, 3.0]),
            Profile::Eigenmode { mode: 2, amplitude: 1.5 },
            Profile::Bump { center: 0.4, width: 0.33, amplitude: 2.0 },
        ];
        for p in &profiles {
            for k in 1..20 {
                let x = k as f64 / 20.0;
                let h = 1e-6;
                let fd = (p.eval(x + h, 0.0, 0.0, 1.0) - p.eval(x - h, 0.0, 0.0, 1.0)) / (2.0 * h);
                assert!((fd - p.dx(x, 0.0, 1.0).unwrap()).abs() < 1e-6, "{p:?} at {x}");
            }
        }
    }

    #[test]
    fn validation_rejects_nonpositive_c() {
        let mut c = Coefficients::heat(0.0, 1.0);
        assert_eq!(c.validate(8).unwrap(), 1.0);
        c.c = Profile::Polynomial(vec![1.0, -2.0]);
        assert!(matches!(c.validate(8), Err(Error::InvalidCoefficients(_))));
    }

    #[test]
    fn closed_form_solves_the_equation() {
        let mut c = Coefficients::heat(0.0, 2.0);
        c.c = Profile::Constant(0.7);
        c.d = Profile::Constant(1.0);
        let cf = c.closed_form().unwrap();
        let (x, t, h) = (0.3, 0.2, 1e-4);
        let yxx = (cf.y(x + h, t) - 2.0 * cf.y(x, t) + cf.y(x - h, t)) / (h * h);
        let res = cf.y_t(x, t) - 0.7 * yxx + cf.y(x, t);
        assert!(res.abs() < 1e-6);
    }
}

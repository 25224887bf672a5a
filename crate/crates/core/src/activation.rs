//! Activation functions and the expansion-point data used by every
//! h-parameterized construction.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Vector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ActivationError {
    #[error("{0} is not differentiable at {1}")]
    NonDifferentiablePoint(ActivationKind, f64),
    #[error("{0} has no usable expansion point")]
    NoExpansionPoint(ActivationKind),
    #[error("{kind} has zero derivative at expansion point c = {c}")]
    ZeroDerivative { kind: ActivationKind, c: f64 },
    #[error("unknown activation '{0}'")]
    Unknown(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Softplus,
    Relu,
    Sigmoid,
    Tanh,
    Heaviside,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 5] = [
        ActivationKind::Softplus,
        ActivationKind::Relu,
        ActivationKind::Sigmoid,
        ActivationKind::Tanh,
        ActivationKind::Heaviside,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Softplus => "softplus",
            ActivationKind::Relu => "relu",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Heaviside => "heaviside",
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            ActivationKind::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::Sigmoid => logistic(x),
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Heaviside => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative at `x`. The relu kink (|x| < 1e-15) and the heaviside jump are errors.
    pub fn deriv(self, x: f64) -> Result<f64, ActivationError> {
        match self {
            ActivationKind::Softplus | ActivationKind::Sigmoid | ActivationKind::Tanh => {
                Ok(self.deriv_unchecked(x))
            }
            ActivationKind::Relu | ActivationKind::Heaviside => {
                if x.abs() < 1e-15 {
                    Err(ActivationError::NonDifferentiablePoint(self, x))
                } else {
                    Ok(self.deriv_unchecked(x))
                }
            }
        }
    }

    /// Derivative with the one-sided convention at kinks (used by training).
    pub(crate) fn deriv_unchecked(self, x: f64) -> f64 {
        match self {
            ActivationKind::Softplus => logistic(x),
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Sigmoid => {
                let s = logistic(x);
                s * (1.0 - s)
            }
            ActivationKind::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            ActivationKind::Heaviside => 0.0,
        }
    }

    /// Value and derivative together; softplus shares one exponential.
    #[inline]
    pub(crate) fn eval_with_deriv(self, x: f64) -> (f64, f64) {
        match self {
            ActivationKind::Softplus => {
                let e = (-x.abs()).exp();
                let value = x.max(0.0) + e.ln_1p();
                let d = if x >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
                (value, d)
            }
            _ => (self.eval(x), self.deriv_unchecked(x)),
        }
    }

    pub fn default_expansion_point(self) -> Result<f64, ActivationError> {
        match self {
            ActivationKind::Softplus | ActivationKind::Sigmoid | ActivationKind::Tanh => Ok(0.5),
            ActivationKind::Relu => Ok(1.0),
            ActivationKind::Heaviside => Err(ActivationError::NoExpansionPoint(self)),
        }
    }

    /// Continuity on the whole real line (heaviside is the only exception).
    pub fn is_continuous(self) -> bool {
        self != ActivationKind::Heaviside
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = ActivationError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ActivationKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| ActivationError::Unknown(s.to_string()))
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn default_expansion_point(kind: ActivationKind) -> Result<f64, ActivationError> {
    kind.default_expansion_point()
}

/// An activation together with its expansion point `c`, `ρ(c)` and `ρ′(c)`.
///
/// Serialized as `{"name", "c"}`; the cached values are recomputed on load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ActivationRepr", into = "ActivationRepr")]
pub struct ActivationSpec {
    pub name: ActivationKind,
    pub c: f64,
    pub rho_c: f64,
    pub drho_c: f64,
    pub differentiable_at_c: bool,
    /// None of the shipped activations is mean-periodic.
    pub mean_periodic: bool,
}

#[derive(Serialize, Deserialize)]
struct ActivationRepr {
    name: ActivationKind,
    c: f64,
}

impl TryFrom<ActivationRepr> for ActivationSpec {
    type Error = ActivationError;
    fn try_from(r: ActivationRepr) -> Result<Self, Self::Error> {
        ActivationSpec::new(r.name, r.c)
    }
}

impl From<ActivationSpec> for ActivationRepr {
    fn from(s: ActivationSpec) -> Self {
        ActivationRepr {
            name: s.name,
            c: s.c,
        }
    }
}

impl ActivationSpec {
    pub fn new(name: ActivationKind, c: f64) -> Result<Self, ActivationError> {
        let differentiable_at_c = name.deriv(c).is_ok() && name != ActivationKind::Heaviside;
        let drho_c = if differentiable_at_c {
            name.deriv_unchecked(c)
        } else {
            0.0
        };
        if differentiable_at_c && drho_c == 0.0 {
            return Err(ActivationError::ZeroDerivative { kind: name, c });
        }
        Ok(ActivationSpec {
            name,
            c,
            rho_c: name.eval(c),
            drho_c,
            differentiable_at_c,
            mean_periodic: false,
        })
    }

    /// Spec at the default expansion point; heaviside gets `c = 0` and is
    /// flagged non-differentiable.
    pub fn with_default(name: ActivationKind) -> Self {
        let c = name.default_expansion_point().unwrap_or(0.0);
        ActivationSpec::new(name, c).expect("default expansion points have nonzero derivative")
    }

    pub fn softplus() -> Self {
        ActivationSpec::with_default(ActivationKind::Softplus)
    }

    pub fn heaviside() -> Self {
        ActivationSpec::with_default(ActivationKind::Heaviside)
    }

    /// Fails unless the activation is differentiable at `c` (h-constructions need it).
    pub fn require_expansion(&self) -> Result<(), ActivationError> {
        if self.differentiable_at_c {
            Ok(())
        } else {
            Err(ActivationError::NoExpansionPoint(self.name))
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.name.eval(x)
    }

    pub fn deriv(&self, x: f64) -> Result<f64, ActivationError> {
        self.name.deriv(x)
    }

    pub fn eval_vec(&self, v: &Vector) -> Vector {
        v.iter().map(|&x| self.eval(x)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn closed_forms() {
        assert!((ActivationKind::Softplus.eval(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(ActivationKind::Heaviside.eval(-0.5), 0.0);
        assert_eq!(ActivationKind::Heaviside.eval(0.0), 1.0);
        assert_eq!(ActivationKind::Relu.eval(-3.0), 0.0);
        assert_eq!(ActivationKind::Relu.eval(3.0), 3.0);
        // no overflow far out
        assert_eq!(ActivationKind::Softplus.eval(1000.0), 1000.0);
        assert_eq!(ActivationKind::Softplus.deriv(-1000.0).unwrap(), 0.0);
    }

    #[test]
    fn expansion_points() {
        assert_eq!(default_expansion_point(ActivationKind::Softplus), Ok(0.5));
        assert_eq!(default_expansion_point(ActivationKind::Tanh), Ok(0.5));
        let relu = ActivationSpec::with_default(ActivationKind::Relu);
        assert_eq!((relu.c, relu.drho_c, relu.rho_c), (1.0, 1.0, 1.0));
        assert!(matches!(
            default_expansion_point(ActivationKind::Heaviside),
            Err(ActivationError::NoExpansionPoint(_))
        ));
        let h = ActivationSpec::heaviside();
        assert!(!h.differentiable_at_c);
        assert!(h.require_expansion().is_err());
        assert!(ActivationKind::ALL
            .iter()
            .all(|&k| !ActivationSpec::with_default(k).mean_periodic));
    }

    #[test]
    fn cached_values_match_closed_form() {
        for kind in [
            ActivationKind::Softplus,
            ActivationKind::Sigmoid,
            ActivationKind::Tanh,
            ActivationKind::Relu,
        ] {
            let s = ActivationSpec::with_default(kind);
            assert!((s.rho_c - kind.eval(s.c)).abs() < 1e-12);
            assert!((s.drho_c - kind.deriv(s.c).unwrap()).abs() < 1e-12);
            assert!(s.drho_c != 0.0);
        }
    }

    #[test]
    fn relu_kink_is_an_error() {
        assert!(matches!(
            ActivationKind::Relu.deriv(0.0),
            Err(ActivationError::NonDifferentiablePoint(..))
        ));
        assert!(matches!(
            ActivationSpec::new(ActivationKind::Relu, -1.0),
            Err(ActivationError::ZeroDerivative { .. })
        ));
    }

    #[test]
    fn finite_differences_match_derivative() {
        let mut rng = crate::linalg::rng_for(2024, 0);
        for kind in [
            ActivationKind::Softplus,
            ActivationKind::Sigmoid,
            ActivationKind::Tanh,
            ActivationKind::Relu,
        ] {
            for _ in 0..100 {
                let x: f64 = rng.gen_range(-6.0..6.0);
                if kind == ActivationKind::Relu && x.abs() < 1e-3 {
                    continue;
                }
                let h = 1e-6;
                let fd = (kind.eval(x + h) - kind.eval(x - h)) / (2.0 * h);
                let d = kind.deriv(x).unwrap();
                assert!((fd - d).abs() < 1e-6, "{kind} at {x}: {fd} vs {d}");
                let (v2, d2) = kind.eval_with_deriv(x);
                assert!((v2 - kind.eval(x)).abs() < 1e-15 && (d2 - d).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn eval_vec_is_elementwise() {
        let s = ActivationSpec::softplus();
        let v = Vector::new(vec![-1.0, 0.0, 2.5]);
        let out = s.eval_vec(&v);
        for i in 0..3 {
            assert_eq!(out[i], s.eval(v[i]));
        }
    }

    #[test]
    fn json_recomputes_cached_fields() {
        let s: ActivationSpec = serde_json::from_str(r#"{"name":"tanh","c":0.25}"#).unwrap();
        assert_eq!(s.rho_c, 0.25_f64.tanh());
        assert_eq!(
            serde_json::to_string(&s).unwrap(),
            r#"{"name":"tanh","c":0.25}"#
        );
        assert!("gelu".parse::<ActivationKind>().is_err());
        assert_eq!("ReLU".parse::<ActivationKind>().unwrap(), ActivationKind::Relu);
    }
}

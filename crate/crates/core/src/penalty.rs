//! Sparse penalty families `g(x) = h(x^2)` and their hyperparameter-space
//! counterparts `f(gamma)`.
//!
//! Each family is represented by a concave, non-decreasing `h` on `[0, inf)`.
//! The variational identity
//!
//! ```text
//! h(z) = min_{gamma >= 0}  z / gamma + ln(gamma) + f(gamma)
//! ```
//!
//! fixes `f` as the concave conjugate `f(gamma) = sup_z [h(z) - z/gamma] - ln(gamma)`,
//! and by the envelope theorem the minimizing `gamma` is `1 / h'(z)`. Every
//! reweighting rule in the crate is built on these two facts.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Default `delta` for the log-sum penalty.
pub const DEFAULT_LOGSUM_DELTA: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PenaltyFamily {
    /// `g(x) = |x|^p`, `p` in `(0, 2]`.
    LpNorm { p: f64 },
    /// `g(x) = ln(delta + |x|)`.
    LogSum { delta: f64 },
    /// `g(x) = x^2`; the non-sparse boundary case.
    Gaussian,
    /// Flat hyperprior, `f(gamma) = 0`. Here `h(z) = 1 + ln z`, so `g(0) = -inf`.
    ArdFlat,
}

impl PenaltyFamily {
    pub fn validate(&self) -> Result<(), Error> {
        match *self {
            PenaltyFamily::LpNorm { p } if !(p > 0.0 && p <= 2.0) => {
                Err(Error::Config(format!("lp penalty needs p in (0, 2], got {p}")))
            }
            PenaltyFamily::LogSum { delta } if !(delta > 0.0) => {
                Err(Error::Config(format!("log-sum penalty needs delta > 0, got {delta}")))
            }
            _ => Ok(()),
        }
    }

    /// `s = p/2` for the lp family, `None` when the family behaves like the Gaussian.
    fn lp_exponent(&self) -> Option<f64> {
        match *self {
            PenaltyFamily::LpNorm { p } if p < 2.0 => Some(0.5 * p),
            _ => None,
        }
    }

    fn is_gaussian_like(&self) -> bool {
        matches!(self, PenaltyFamily::Gaussian)
            || matches!(*self, PenaltyFamily::LpNorm { p } if p >= 2.0)
    }

    pub fn is_ard(&self) -> bool {
        matches!(self, PenaltyFamily::ArdFlat)
    }

    /// Per-coefficient penalty `g(x)`.
    pub fn g(&self, x: f64) -> f64 {
        match *self {
            PenaltyFamily::LpNorm { p } => x.abs().powf(p),
            PenaltyFamily::LogSum { delta } => (delta + x.abs()).ln(),
            _ => self.h(x * x),
        }
    }

    pub fn h(&self, z: f64) -> f64 {
        debug_assert!(z >= 0.0);
        if self.is_gaussian_like() {
            return z;
        }
        match *self {
            PenaltyFamily::LpNorm { p } => z.powf(0.5 * p),
            PenaltyFamily::LogSum { delta } => (delta + z.sqrt()).ln(),
            PenaltyFamily::ArdFlat => 1.0 + z.ln(),
            PenaltyFamily::Gaussian => unreachable!(),
        }
    }

    /// `h'(z)`; infinite at `z = 0` for the sparse families.
    pub fn h_prime(&self, z: f64) -> f64 {
        if self.is_gaussian_like() {
            return 1.0;
        }
        match *self {
            PenaltyFamily::LpNorm { p } => {
                let s = 0.5 * p;
                s * z.powf(s - 1.0)
            }
            PenaltyFamily::LogSum { delta } => {
                let r = z.sqrt();
                1.0 / (2.0 * r * (delta + r))
            }
            PenaltyFamily::ArdFlat => 1.0 / z,
            PenaltyFamily::Gaussian => unreachable!(),
        }
    }

    /// The `z` attaining `sup_z h(z) - z/gamma`, i.e. `h'(z) = 1/gamma`.
    fn conjugate_point(&self, gamma: f64) -> f64 {
        if let Some(s) = self.lp_exponent() {
            return (s * gamma).powf(1.0 / (1.0 - s));
        }
        match *self {
            PenaltyFamily::LogSum { delta } => {
                let t = gamma / (delta + (delta * delta + 2.0 * gamma).sqrt());
                t * t
            }
            PenaltyFamily::ArdFlat => gamma,
            _ => 0.0,
        }
    }

    /// Hyperprior penalty `f(gamma) = -2 ln phi(gamma)`, never normalized.
    pub fn f(&self, gamma: f64) -> f64 {
        if self.is_ard() {
            return 0.0;
        }
        if gamma <= 0.0 {
            return f64::INFINITY;
        }
        if self.is_gaussian_like() {
            // sup_z z(1 - 1/gamma) is finite only for gamma <= 1
            return if gamma <= 1.0 { -gamma.ln() } else { f64::INFINITY };
        }
        let z = self.conjugate_point(gamma);
        self.h(z) - z / gamma - gamma.ln()
    }

    /// `f'(gamma) = z*(gamma)/gamma^2 - 1/gamma` by the envelope theorem.
    pub fn f_prime(&self, gamma: f64) -> f64 {
        if self.is_ard() {
            return 0.0;
        }
        let z = self.conjugate_point(gamma);
        z / (gamma * gamma) - 1.0 / gamma
    }

    /// Minimizer over `gamma >= 0` of `c/gamma + ln(gamma) + f(gamma)`, which is
    /// `1 / h'(c)`. This is the exact hyperparameter step of every EM-style update.
    pub fn optimal_gamma(&self, c: f64) -> f64 {
        if self.is_gaussian_like() {
            return 1.0;
        }
        if c <= 0.0 {
            return 0.0;
        }
        1.0 / self.h_prime(c)
    }
}

impl fmt::Display for PenaltyFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PenaltyFamily::LpNorm { p } => write!(f, "lp:{p}"),
            PenaltyFamily::LogSum { delta } => write!(f, "logsum:{delta}"),
            PenaltyFamily::Gaussian => write!(f, "gaussian"),
            PenaltyFamily::ArdFlat => write!(f, "ard"),
        }
    }
}

impl FromStr for PenaltyFamily {
    type Err = Error;

    /// Accepts `ard`, `gaussian`, `lp:<p>`, `logsum` and `logsum:<delta>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, arg) = match s.split_once(':') {
            Some((a, b)) => (a, Some(b)),
            None => (s, None),
        };
        let parse = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad penalty parameter '{v}'")))
        };
        let pen = match (name.to_ascii_lowercase().as_str(), arg) {
            ("ard" | "ardflat" | "ard_flat", None) => PenaltyFamily::ArdFlat,
            ("gaussian", None) => PenaltyFamily::Gaussian,
            ("lp" | "lp_norm", Some(p)) => PenaltyFamily::LpNorm { p: parse(p)? },
            ("l1", None) => PenaltyFamily::LpNorm { p: 1.0 },
            ("logsum" | "log_sum", None) => PenaltyFamily::LogSum { delta: DEFAULT_LOGSUM_DELTA },
            ("logsum" | "log_sum", Some(d)) => PenaltyFamily::LogSum { delta: parse(d)? },
            _ => return Err(Error::Config(format!("unknown penalty '{s}'"))),
        };
        pen.validate()?;
        Ok(pen)
    }
}

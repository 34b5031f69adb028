//! Penalty families `β_γ` enforcing the superhedging inequality softly.
//!
//! A penalty is a nondecreasing differentiable convex function
//! `β: R → R₊` with superlinear growth, scaled by a factor `γ > 0` as
//! `β_γ(x) = β(γx)/γ`. Two families are supported:
//!
//! - exponential: `β(x) = exp(x−1)`, conjugate `β*(y) = y·log(y)`;
//! - power `p > 1`: `β(x) = max{0,x}^p / p`, conjugate
//!   `β*(y) = y^q / q` with `q = p/(p−1)`.
//!
//! The conjugates scale as `β*_γ(y) = β*(y)/γ`, which is what turns a
//! candidate density `dμ/dθ` into a penalization error in the duality
//! bounds.

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

/// Exponent argument above which `exp` is evaluated clamped. Only
/// reachable far outside any sane training range (`γ·x − 1 > 700`
/// means the unclamped value would exceed ~1e304).
const EXP_ARG_CLAMP: f64 = 700.0;

/// Which penalty family `β` to scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenaltyFamily {
    /// `β(x) = exp(x − 1)`.
    Exponential,
    /// `β(x) = max{0, x}^p / p` for `p > 1`.
    Power(f64),
}

/// A penalty family together with its scaling factor `γ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltySpec {
    pub family: PenaltyFamily,
    pub gamma: f64,
}

impl PenaltySpec {
    pub fn exponential(gamma: f64) -> Self {
        Self { family: PenaltyFamily::Exponential, gamma }
    }

    pub fn power(p: f64, gamma: f64) -> Self {
        Self { family: PenaltyFamily::Power(p), gamma }
    }

    /// Checks `γ > 0` and, for the power family, `p > 1`.
    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() || self.gamma <= 0.0 {
            return Err(Error::InvalidSpec(alloc::format!(
                "penalty factor gamma must be positive, got {}",
                self.gamma
            )));
        }
        if let PenaltyFamily::Power(p) = self.family {
            if !p.is_finite() || p <= 1.0 {
                return Err(Error::InvalidSpec(alloc::format!(
                    "power penalty requires p > 1, got {p}"
                )));
            }
        }
        Ok(())
    }

    /// `β_γ(x) = β(γx)/γ`.
    pub fn beta(&self, x: f64) -> Result<f64> {
        if x.is_nan() {
            return Err(Error::NonFiniteInput);
        }
        Ok(self.beta_raw(x))
    }

    /// `β'_γ(x) = β'(γx)`; nonnegative and nondecreasing.
    pub fn beta_prime(&self, x: f64) -> Result<f64> {
        if x.is_nan() {
            return Err(Error::NonFiniteInput);
        }
        Ok(self.beta_prime_raw(x))
    }

    /// Convex conjugate `β*_γ(y) = β*(y)/γ` for `y ≥ 0`.
    ///
    /// For the exponential family `y log y` is extended by continuity
    /// to `0` at `y = 0`.
    pub fn beta_conjugate(&self, y: f64) -> Result<f64> {
        if y.is_nan() {
            return Err(Error::NonFiniteInput);
        }
        if y < 0.0 {
            return Err(Error::ConjugateDomain);
        }
        let unscaled = match self.family {
            PenaltyFamily::Exponential => {
                if y == 0.0 {
                    0.0
                } else {
                    y * y.ln()
                }
            }
            PenaltyFamily::Power(p) => {
                let q = p / (p - 1.0);
                y.powf(q) / q
            }
        };
        Ok(unscaled / self.gamma)
    }

    /// `β_γ(0) = β(0)/γ`, the upper-sandwich offset in the duality bound.
    pub fn zero_penalty(&self) -> f64 {
        self.beta_raw(0.0)
    }

    #[inline]
    pub(crate) fn beta_raw(&self, x: f64) -> f64 {
        match self.family {
            PenaltyFamily::Exponential => {
                let arg = (self.gamma * x - 1.0).min(EXP_ARG_CLAMP);
                arg.exp() / self.gamma
            }
            PenaltyFamily::Power(p) => {
                let pos = x.max(0.0);
                self.gamma.powf(p - 1.0) * pos.powf(p) / p
            }
        }
    }

    #[inline]
    pub(crate) fn beta_prime_raw(&self, x: f64) -> f64 {
        match self.family {
            PenaltyFamily::Exponential => {
                let arg = (self.gamma * x - 1.0).min(EXP_ARG_CLAMP);
                arg.exp()
            }
            PenaltyFamily::Power(p) => {
                let pos = x.max(0.0);
                self.gamma.powf(p - 1.0) * pos.powf(p - 1.0)
            }
        }
    }
}

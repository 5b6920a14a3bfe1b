//! Ad valorem rate arithmetic.
//!
//! A rate is quoted either on the tax-inclusive price ("inside", the share of
//! the final price that is tax) or on the tax-exclusive price ("outside", the
//! statutory markup). The two are linked by
//!
//! ```text
//! inside = outside / (1 + outside)      outside = inside / (1 - inside)
//! ```
//!
//! Statutory rates, reduced fractions and the excise composition are all
//! expressed on the outside basis. Tax bases in household data are
//! tax-inclusive expenditures, so the engine applies inside rates.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("inside rate {0} must lie in [0, 1): the tax would consume the whole price")]
    InsideDomain(f64),
    #[error("outside rate {0} must be a finite non-negative number")]
    OutsideDomain(f64),
    #[error("rate fraction {0} must lie in (0, 1]")]
    Fraction(f64),
}

/// Which price the rate is quoted against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// Fraction of the tax-inclusive price.
    Inside,
    /// Fraction of the tax-exclusive price.
    Outside,
}

/// A validated ad valorem rate with an explicit basis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRate", into = "RawRate")]
pub struct Rate {
    value: f64,
    basis: Basis,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRate {
    value: f64,
    basis: Basis,
}

impl TryFrom<RawRate> for Rate {
    type Error = RateError;

    fn try_from(raw: RawRate) -> Result<Self, Self::Error> {
        Rate::new(raw.value, raw.basis)
    }
}

impl From<Rate> for RawRate {
    fn from(r: Rate) -> Self {
        RawRate {
            value: r.value,
            basis: r.basis,
        }
    }
}

impl Rate {
    pub const ZERO_INSIDE: Rate = Rate {
        value: 0.0,
        basis: Basis::Inside,
    };
    pub const ZERO_OUTSIDE: Rate = Rate {
        value: 0.0,
        basis: Basis::Outside,
    };

    pub fn new(value: f64, basis: Basis) -> Result<Self, RateError> {
        match basis {
            Basis::Inside => Self::inside(value),
            Basis::Outside => Self::outside(value),
        }
    }

    /// Inside rates must lie in `[0, 1)`.
    pub fn inside(value: f64) -> Result<Self, RateError> {
        if !(value.is_finite() && (0.0..1.0).contains(&value)) {
            return Err(RateError::InsideDomain(value));
        }
        Ok(Rate {
            value,
            basis: Basis::Inside,
        })
    }

    /// Outside rates may be any finite non-negative number.
    pub fn outside(value: f64) -> Result<Self, RateError> {
        if !(value.is_finite() && value >= 0.0) {
            return Err(RateError::OutsideDomain(value));
        }
        Ok(Rate {
            value,
            basis: Basis::Outside,
        })
    }

    /// Outside rate from a product of already-validated quantities.
    pub(crate) fn outside_unchecked(value: f64) -> Self {
        debug_assert!(value.is_finite() && value >= 0.0);
        Rate {
            value,
            basis: Basis::Outside,
        }
    }

    pub fn value(self) -> f64 {
        self.value
    }

    pub fn basis(self) -> Basis {
        self.basis
    }

    /// Converts to the tax-exclusive basis: `t / (1 - t)` for inside rates.
    pub fn to_outside(self) -> Rate {
        match self.basis {
            Basis::Outside => self,
            Basis::Inside => Rate {
                value: self.value / (1.0 - self.value),
                basis: Basis::Outside,
            },
        }
    }

    /// Converts to the tax-inclusive basis: `t / (1 + t)` for outside rates.
    pub fn to_inside(self) -> Rate {
        match self.basis {
            Basis::Inside => self,
            Basis::Outside => Rate {
                value: self.value / (1.0 + self.value),
                basis: Basis::Inside,
            },
        }
    }

    /// Value as a percentage, on the rate's own basis.
    pub fn percent(self) -> f64 {
        self.value * 100.0
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.basis {
            Basis::Inside => "inside",
            Basis::Outside => "outside",
        };
        write!(f, "{:.4} ({tag})", self.value)
    }
}

/// Composes an excise levied ahead of the VAT with the VAT itself.
///
/// The excise is part of the VAT base, so a unit net price becomes
/// `(1 + excise) * (1 + vat)` and the combined outside rate is that product
/// minus one. Both arguments are converted to the outside basis first.
pub fn compose_selective(excise: Rate, vat: Rate) -> Rate {
    let a = excise.to_outside().value;
    let b = vat.to_outside().value;
    Rate {
        value: (1.0 + a) * (1.0 + b) - 1.0,
        basis: Basis::Outside,
    }
}

/// Scales a statutory reference rate by a reduction fraction in `(0, 1]`.
///
/// Reductions act on the outside (legal) rate; callers convert the result to
/// the inside basis when applying it to expenditures.
pub fn apply_fraction(fraction: f64, reference: Rate) -> Result<Rate, RateError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(RateError::Fraction(fraction));
    }
    Rate::outside(fraction * reference.to_outside().value)
}

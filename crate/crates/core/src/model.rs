//! Model parameters, admissibility checks, and derived scalar quantities.
//!
//! The asset price grows at rate `f1 > 0` while a two-state Markov chain sits
//! in its first state and decays at rate `f2 < 0` in the second; the chain
//! leaves state 1 at rate `lambda1` and state 2 at rate `lambda2`. Selling at
//! time `tau` earns `exp(-rho*tau) * (S_tau - K)`. Everything downstream
//! (solver, verifier, simulator) consumes [`ModelParams`] and the scalars in
//! [`DerivedQuantities`].

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Regime of the driving chain. `Up` earns `f1`, `Down` earns `f2`.
///
/// Serialized as the integer 1 or 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ChainState {
    Up,
    Down,
}

impl ChainState {
    /// 1 for `Up`, 2 for `Down`.
    pub fn index(self) -> u8 {
        match self {
            ChainState::Up => 1,
            ChainState::Down => 2,
        }
    }

    pub fn from_index(i: u8) -> Option<Self> {
        match i {
            1 => Some(ChainState::Up),
            2 => Some(ChainState::Down),
            _ => None,
        }
    }

    pub fn other(self) -> Self {
        match self {
            ChainState::Up => ChainState::Down,
            ChainState::Down => ChainState::Up,
        }
    }
}

impl fmt::Display for ChainState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

impl Serialize for ChainState {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.index())
    }
}

impl<'de> Deserialize<'de> for ChainState {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let i = u8::deserialize(d)?;
        ChainState::from_index(i)
            .ok_or_else(|| serde::de::Error::custom(format!("chain state must be 1 or 2, got {i}")))
    }
}

/// Full parameter set for the selling problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Growth rate in the up regime (`> 0` under the standing assumptions).
    pub f1: f64,
    /// Growth rate in the down regime (`< 0` under the standing assumptions).
    pub f2: f64,
    /// Switching rate out of the up regime.
    pub lambda1: f64,
    /// Switching rate out of the down regime.
    pub lambda2: f64,
    /// Discount rate.
    pub rho: f64,
    /// Transaction cost subtracted from the sale price.
    #[serde(rename = "K")]
    pub k: f64,
}

/// A violated standing assumption. Carries the numbers that witnessed it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Violation {
    /// `f1 > 0 > f2` fails: the chain does not alternate growth and decay.
    ReturnRateSigns { f1: f64, f2: f64 },
    /// `phi(rho) <= 0` (equivalently `rho <= rho_crit`): discounting is too
    /// weak for waiting to ever stop paying, so no finite rule exists.
    DiscountTooWeak {
        phi_rho: f64,
        rho: f64,
        rho_crit: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ReturnRateSigns { f1, f2 } => {
                write!(f, "need f1 > 0 > f2, got f1 = {f1}, f2 = {f2}")
            }
            Violation::DiscountTooWeak { phi_rho, rho, rho_crit } => write!(
                f,
                "need phi(rho) > 0, got phi({rho}) = {phi_rho} (critical rate {rho_crit})"
            ),
        }
    }
}

/// `phi(r) = (r + lambda1 - f1) * (r + lambda2 - f2) - lambda1 * lambda2`.
///
/// Positive iff discounting at rate `r` beats the chain's compounded growth;
/// its sign gates whether a finite selling threshold exists.
pub fn phi(f1: f64, f2: f64, lambda1: f64, lambda2: f64, r: f64) -> f64 {
    (r + lambda1 - f1) * (r + lambda2 - f2) - lambda1 * lambda2
}

/// Scalars derived from [`ModelParams`], computed once and reused everywhere.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedQuantities {
    /// `phi(rho)`; must be positive for a rule to exist.
    pub phi_rho: f64,
    /// Critical discount rate: the larger root of
    /// `r^2 - ((f1-lambda1)+(f2-lambda2)) r + (f1-lambda1)(f2-lambda2) - lambda1 lambda2`.
    /// `phi(rho) > 0` for `rho > rho_crit`.
    pub rho_crit: f64,
    /// Stationary weight of the up regime, `lambda2 / (lambda1 + lambda2)`.
    pub nu1: f64,
    /// Stationary weight of the down regime.
    pub nu2: f64,
    /// Long-run mean growth rate `nu1*f1 + nu2*f2`.
    pub mu: f64,
    /// `(rho+lambda1)*f2 + (rho+lambda2)*f1`.
    pub d1: f64,
    /// `(rho+lambda1)*(rho+lambda2) - lambda1*lambda2`; positive for `rho > 0`.
    pub d2: f64,
    /// Negative root of `f1*f2*b^2 - d1*b + d2 = 0`.
    pub beta1: f64,
    /// Positive root of the same quadratic; `beta2 > 1` under admissibility.
    pub beta2: f64,
    /// `(rho + lambda1) / f1`, the exponent of the middle-branch power term.
    pub gamma1: f64,
    /// `(rho + lambda1 - f1*beta2) / lambda1`; lies in `(0, 1)` and couples
    /// the two value components on the shared power branch.
    pub kappa2: f64,
    /// `lambda1 / (rho + lambda1 - f1)`, slope of the affine particular part.
    pub a0: f64,
    /// `-lambda1*K / (rho + lambda1)`, intercept of the affine particular part.
    pub b0: f64,
}

impl ModelParams {
    /// Rejects non-finite inputs and wrong-signed positives (`lambda`s, `rho`,
    /// `K` must be `> 0`; `f1`, `f2` merely finite). Sign *assumptions* on the
    /// `f`s are handled by [`validate`](Self::validate) instead, so callers can
    /// still inspect derived quantities for assumption-violating models.
    pub fn well_formed(&self) -> Result<()> {
        finite("f1", self.f1)?;
        finite("f2", self.f2)?;
        positive("lambda1", self.lambda1)?;
        positive("lambda2", self.lambda2)?;
        positive("rho", self.rho)?;
        positive("K", self.k)?;
        Ok(())
    }

    /// Checks the standing assumptions, returning every violation found.
    /// `Err` only for malformed (non-finite / wrong-sign) inputs.
    pub fn validate(&self) -> Result<Vec<Violation>> {
        self.well_formed()?;
        let mut violations = Vec::new();
        if !(self.f1 > 0.0 && self.f2 < 0.0) {
            violations.push(Violation::ReturnRateSigns {
                f1: self.f1,
                f2: self.f2,
            });
        }
        let phi_rho = phi(self.f1, self.f2, self.lambda1, self.lambda2, self.rho);
        let rho_crit = dominant_discount_root(self.f1, self.f2, self.lambda1, self.lambda2);
        if !(phi_rho > 0.0 && self.rho > rho_crit) {
            violations.push(Violation::DiscountTooWeak {
                phi_rho,
                rho: self.rho,
                rho_crit,
            });
        }
        Ok(violations)
    }

    /// True iff well-formed and no assumption is violated.
    pub fn is_admissible(&self) -> bool {
        matches!(self.validate(), Ok(v) if v.is_empty())
    }

    /// Computes the derived scalars. Works for assumption-violating (but
    /// well-formed) parameters too; values may then be infinite where a
    /// denominator vanishes.
    pub fn derive(&self) -> Result<DerivedQuantities> {
        self.well_formed()?;
        let ModelParams { f1, f2, lambda1, lambda2, rho, k } = *self;
        let d1 = (rho + lambda1) * f2 + (rho + lambda2) * f1;
        let d2 = (rho + lambda1) * (rho + lambda2) - lambda1 * lambda2;
        let (beta1, beta2) = characteristic_roots(f1 * f2, d1, d2);
        let nu1 = lambda2 / (lambda1 + lambda2);
        let nu2 = lambda1 / (lambda1 + lambda2);
        Ok(DerivedQuantities {
            phi_rho: phi(f1, f2, lambda1, lambda2, rho),
            rho_crit: dominant_discount_root(f1, f2, lambda1, lambda2),
            nu1,
            nu2,
            mu: nu1 * f1 + nu2 * f2,
            d1,
            d2,
            beta1,
            beta2,
            gamma1: (rho + lambda1) / f1,
            kappa2: (rho + lambda1 - f1 * beta2) / lambda1,
            a0: lambda1 / (rho + lambda1 - f1),
            b0: -lambda1 * k / (rho + lambda1),
        })
    }
}

fn finite(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::MalformedParameter {
            name,
            value,
            reason: "must be finite",
        })
    }
}

fn positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::MalformedParameter {
            name,
            value,
            reason: "must be a positive finite number",
        })
    }
}

/// Roots of `a*b^2 - d1*b + d2 = 0` sorted ascending, paired so neither root
/// suffers subtractive cancellation: the numerator `d1 ± sqrt(disc)` is formed
/// with matching signs, and the other root comes from the product identity
/// `b1 * b2 = d2 / a`.
fn characteristic_roots(a: f64, d1: f64, d2: f64) -> (f64, f64) {
    if a == 0.0 {
        // Degenerate (one of the growth rates is zero): single linear root.
        let b = d2 / d1;
        return (b, b);
    }
    let disc = d1 * d1 - 4.0 * a * d2;
    let sq = disc.max(0.0).sqrt();
    let s = if d1 >= 0.0 { d1 + sq } else { d1 - sq };
    if s == 0.0 {
        return (0.0, 0.0);
    }
    let direct = s / (2.0 * a);
    let via_product = 2.0 * d2 / s;
    if direct <= via_product {
        (direct, via_product)
    } else {
        (via_product, direct)
    }
}

/// Larger root of `r^2 - s*r + p` where `s = (f1-lambda1)+(f2-lambda2)` and
/// `p = (f1-lambda1)(f2-lambda2) - lambda1*lambda2`. The discriminant is
/// rewritten as a sum of squares so it never cancels to a spurious negative.
fn dominant_discount_root(f1: f64, f2: f64, lambda1: f64, lambda2: f64) -> f64 {
    let u = f1 - lambda1;
    let w = f2 - lambda2;
    let s = u + w;
    let p = u * w - lambda1 * lambda2;
    let disc = (u - w) * (u - w) + 4.0 * lambda1 * lambda2;
    let sq = disc.sqrt();
    let q = if s >= 0.0 { (s + sq) / 2.0 } else { (s - sq) / 2.0 };
    if q == 0.0 {
        0.0
    } else {
        q.max(p / q)
    }
}

//! Closed-form selling rules and their value functions.
//!
//! With `phi(rho) > 0` the optimal strategy is a threshold rule. Its shape
//! depends on how the discount rate compares to the up-regime growth rate:
//!
//! * `rho <= f1` (`CaseI`): waiting in the up regime never hurts, so only the
//!   down regime sells, at prices above a single threshold `x_star`. The
//!   threshold is a closed-form expression.
//! * `rho > f1` (`CaseII`): even the up regime eventually sells, at prices
//!   above `x0_star = rho*K/(rho - f1)`; the down regime sells above a lower
//!   threshold `x_star` found as the unique root of a scalar equation that is
//!   bracketed analytically and bisected to floating-point exhaustion.
//!
//! Both cases assemble a piecewise value function from a shared power branch
//! `A2 * x^beta2` (scaled by `kappa2` in the down regime), an affine
//! particular part `a0*x + b0`, and the payoff `x - K`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ChainState, DerivedQuantities, ModelParams, Violation};

/// Which side of a branch boundary to evaluate from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// The shape of an optimal rule together with its defining constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime")]
pub enum Regime {
    /// Discounting too weak: no finite threshold, hold forever.
    NeverSell,
    /// Single threshold; only the down regime sells.
    CaseI {
        x_star: f64,
        #[serde(rename = "A2")]
        a2: f64,
    },
    /// Two thresholds; the up regime sells at or above `x0_star`.
    CaseII {
        x_star: f64,
        x0_star: f64,
        #[serde(rename = "A2")]
        a2: f64,
        #[serde(rename = "C1")]
        c1: f64,
        /// Upper bound the down-regime threshold must respect for the rule to
        /// be certified; `x_star <= x_star_bound` is checked at solve time.
        #[serde(rename = "X0")]
        x_star_bound: f64,
    },
}

/// Structured facts recorded while solving, kept with the rule so a stored
/// rule explains itself.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostic {
    /// Outcome of the down-threshold bound check in the two-threshold case.
    /// `sufficient_condition` reports whether `phi_star(x_star_bound) <= 0`,
    /// which by itself forces `within_bound`.
    ThresholdBound {
        x_star: f64,
        x_star_bound: f64,
        phi_star_at_bound: f64,
        within_bound: bool,
        sufficient_condition: bool,
    },
    /// Why the rule never sells.
    NeverSell {
        phi_rho: f64,
        rho: f64,
        rho_crit: f64,
    },
}

/// A solved selling rule: regime constants, the inputs, and derived scalars.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SellingRule {
    #[serde(flatten)]
    pub regime: Regime,
    pub params: ModelParams,
    pub derived: DerivedQuantities,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<Diagnostic>,
}

/// Solves for the optimal rule.
///
/// * Malformed numbers return [`Error::MalformedParameter`].
/// * `f1 > 0 > f2` failing returns [`Error::AssumptionsViolated`].
/// * Weak discounting (`phi(rho) <= 0`) yields an `Ok` rule with regime
///   [`Regime::NeverSell`] — holding forever is the answer, not an error.
pub fn solve(params: &ModelParams) -> Result<SellingRule> {
    let violations = params.validate()?;
    if violations
        .iter()
        .any(|v| matches!(v, Violation::ReturnRateSigns { .. }))
    {
        return Err(Error::AssumptionsViolated { violations });
    }
    let derived = params.derive()?;
    if derived.phi_rho <= 0.0 || params.rho <= derived.rho_crit {
        return Ok(SellingRule {
            regime: Regime::NeverSell,
            params: *params,
            derived,
            diagnostics: vec![Diagnostic::NeverSell {
                phi_rho: derived.phi_rho,
                rho: params.rho,
                rho_crit: derived.rho_crit,
            }],
        });
    }
    if params.rho <= params.f1 {
        let regime = solve_single_threshold(params, &derived);
        Ok(SellingRule {
            regime,
            params: *params,
            derived,
            diagnostics: Vec::new(),
        })
    } else {
        let (regime, diagnostic) = solve_two_threshold(params, &derived)?;
        Ok(SellingRule {
            regime,
            params: *params,
            derived,
            diagnostics: vec![diagnostic],
        })
    }
}

/// Single-threshold rule (`rho <= f1`), fully closed-form.
pub fn solve_single_threshold(params: &ModelParams, d: &DerivedQuantities) -> Regime {
    let ModelParams { f1, lambda1, rho, k, .. } = *params;
    let x_star = (rho + lambda1 - f1) / (rho + lambda1) * (k * d.beta2 / (d.beta2 - 1.0));
    // a2 = (a0*x* + b0) / x*^beta2, in log space: beta2 scales like
    // lambda1/f1 and can reach the thousands, where x*^beta2 under- or
    // overflows long before a2 itself leaves the double range.
    let a2 = ((d.a0 * x_star + d.b0).ln() - d.beta2 * x_star.ln()).exp();
    Regime::CaseI { x_star, a2 }
}

/// Two-threshold rule (`rho > f1`): `x0_star` is exact, `x_star` is the root
/// of `phi_star` on `[K, x0_star]`, where
/// `phi_star(x) = C1*x^gamma1 + a0*x + b0 - (x - K)/kappa2`.
///
/// The bracket signs are analytic consequences of admissibility
/// (`phi_star(K) > 0 > phi_star(x0_star)`); if they fail, the inputs are
/// inconsistent and [`Error::RootBracket`] is returned. Bisection runs until
/// the interval cannot be split, giving the root to within one ulp.
pub fn solve_two_threshold(
    params: &ModelParams,
    d: &DerivedQuantities,
) -> Result<(Regime, Diagnostic)> {
    let ModelParams { f2, lambda2, rho, k, .. } = *params;
    let x0_star = rho * k / (rho - params.f1);
    let phi0 = |x: f64| d.a0 * x + d.b0;
    // C1*x^gamma1 is evaluated as N*(x/x0_star)^gamma1 with
    // N = C1*x0_star^gamma1: gamma1 can be large enough that x^gamma1 and C1
    // overflow separately even where the product is tame.
    let n = x0_star - k - phi0(x0_star);
    let scaled_power = |x: f64| n * (d.gamma1 * (x / x0_star).ln()).exp();
    let phi_star = |x: f64| scaled_power(x) + phi0(x) - (x - k) / d.kappa2;

    let (mut lo, mut hi) = (k, x0_star);
    let (phi_lo, phi_hi) = (phi_star(lo), phi_star(hi));
    if !(phi_lo > 0.0) {
        return Err(Error::RootBracket {
            lo,
            hi,
            phi_lo,
            phi_hi,
            reason: "expected phi_star(K) > 0",
        });
    }
    if !(phi_hi < 0.0) {
        return Err(Error::RootBracket {
            lo,
            hi,
            phi_lo,
            phi_hi,
            reason: "expected phi_star(x0_star) < 0",
        });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if phi_star(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x_star = if phi_star(lo).abs() <= phi_star(hi).abs() { lo } else { hi };

    // Constants in log space for the same overflow reason as above. Both are
    // positive; for extreme parameter magnitudes they can still round to 0 or
    // infinity, which is the honest double-precision image of the rule (the
    // verifier then reports the failure instead of mispricing silently).
    let c1 = n.signum() * (n.abs().ln() - d.gamma1 * x0_star.ln()).exp();
    let a2 = ((x_star - k).ln() - d.kappa2.ln() - d.beta2 * x_star.ln()).exp();
    let bound_power = k * d.beta2 / (d.beta2 - 1.0);
    let bound_slope =
        (lambda2 - d.kappa2 * (rho + lambda2)) * k / (lambda2 - d.kappa2 * (rho + lambda2 - f2));
    let x_star_bound = bound_power.min(bound_slope);
    let phi_star_at_bound = phi_star(x_star_bound);
    let diagnostic = Diagnostic::ThresholdBound {
        x_star,
        x_star_bound,
        phi_star_at_bound,
        within_bound: x_star <= x_star_bound,
        sufficient_condition: phi_star_at_bound <= 0.0,
    };
    Ok((
        Regime::CaseII {
            x_star,
            x0_star,
            a2,
            c1,
            x_star_bound,
        },
        diagnostic,
    ))
}

/// `coeff * x^exponent` through logarithms, so a huge exponent cannot
/// overflow the intermediate power where the product is representable. The
/// exponents used here are all positive, so the term vanishes at `x = 0`.
fn power_term(coeff: f64, exponent: f64, x: f64) -> f64 {
    if coeff == 0.0 || x == 0.0 {
        return 0.0;
    }
    coeff.signum() * (coeff.abs().ln() + exponent * x.ln()).exp()
}

/// Value-function branches, ordered left to right along the price axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Branch {
    /// `A2 * x^beta2` (up regime, below `x_star`).
    Power,
    /// `kappa2 * A2 * x^beta2` (down regime, below `x_star`).
    ScaledPower,
    /// `C1 * x^gamma1 + a0*x + b0` (up regime between the thresholds).
    Middle,
    /// `a0*x + b0` (up regime above `x_star` in the single-threshold case).
    Affine,
    /// `x - K`.
    Payoff,
}

impl SellingRule {
    /// `(x_star, x0_star)`; `None` for a never-sell rule.
    pub fn thresholds(&self) -> Option<(f64, Option<f64>)> {
        match self.regime {
            Regime::NeverSell => None,
            Regime::CaseI { x_star, .. } => Some((x_star, None)),
            Regime::CaseII { x_star, x0_star, .. } => Some((x_star, Some(x0_star))),
        }
    }

    /// The value of following this rule from price `x` in `state`.
    /// Branch boundaries evaluate on their left branch; the function is
    /// continuous, so the side only matters for derivatives.
    pub fn value(&self, x: f64, state: ChainState) -> Result<f64> {
        self.value_side(x, state, Side::Left)
    }

    /// Like [`value`](Self::value) but selecting which branch formula applies
    /// exactly at a threshold. Used to check continuity branch-by-branch.
    pub fn value_side(&self, x: f64, state: ChainState, side: Side) -> Result<f64> {
        let branch = self.branch_at(x, state, side)?;
        Ok(self.eval_branch(branch, x))
    }

    /// One-sided derivative of the value in `x`, evaluated analytically on
    /// the branch selected by `side`.
    pub fn slope(&self, x: f64, state: ChainState, side: Side) -> Result<f64> {
        let branch = self.branch_at(x, state, side)?;
        Ok(self.eval_branch_slope(branch, x))
    }

    fn check_price(&self, x: f64) -> Result<()> {
        if x.is_finite() && x >= 0.0 {
            Ok(())
        } else {
            Err(Error::PriceDomain { x })
        }
    }

    fn branch_at(&self, x: f64, state: ChainState, side: Side) -> Result<Branch> {
        self.check_price(x)?;
        // `Left` keeps boundary points on the branch below them, matching the
        // closed-interval convention used by `value`.
        let below = |threshold: f64| match side {
            Side::Left => x <= threshold,
            Side::Right => x < threshold,
        };
        match (self.regime, state) {
            (Regime::NeverSell, _) => Err(Error::NeverSellRule),
            (Regime::CaseI { x_star, .. }, ChainState::Up) => {
                Ok(if below(x_star) { Branch::Power } else { Branch::Affine })
            }
            (Regime::CaseI { x_star, .. }, ChainState::Down) => {
                Ok(if below(x_star) { Branch::ScaledPower } else { Branch::Payoff })
            }
            (Regime::CaseII { x_star, x0_star, .. }, ChainState::Up) => Ok(if below(x_star) {
                Branch::Power
            } else if below(x0_star) {
                Branch::Middle
            } else {
                Branch::Payoff
            }),
            (Regime::CaseII { x_star, .. }, ChainState::Down) => {
                Ok(if below(x_star) { Branch::ScaledPower } else { Branch::Payoff })
            }
        }
    }

    fn coefficients(&self) -> (f64, f64) {
        match self.regime {
            Regime::NeverSell => (f64::NAN, f64::NAN),
            Regime::CaseI { a2, .. } => (a2, f64::NAN),
            Regime::CaseII { a2, c1, .. } => (a2, c1),
        }
    }

    fn eval_branch(&self, branch: Branch, x: f64) -> f64 {
        let d = &self.derived;
        let (a2, c1) = self.coefficients();
        match branch {
            Branch::Power => power_term(a2, d.beta2, x),
            Branch::ScaledPower => d.kappa2 * power_term(a2, d.beta2, x),
            Branch::Middle => power_term(c1, d.gamma1, x) + d.a0 * x + d.b0,
            Branch::Affine => d.a0 * x + d.b0,
            Branch::Payoff => x - self.params.k,
        }
    }

    fn eval_branch_slope(&self, branch: Branch, x: f64) -> f64 {
        let d = &self.derived;
        let (a2, c1) = self.coefficients();
        match branch {
            Branch::Power => d.beta2 * power_term(a2, d.beta2 - 1.0, x),
            Branch::ScaledPower => d.kappa2 * d.beta2 * power_term(a2, d.beta2 - 1.0, x),
            Branch::Middle => d.gamma1 * power_term(c1, d.gamma1 - 1.0, x) + d.a0,
            Branch::Affine => d.a0,
            Branch::Payoff => 1.0,
        }
    }
}

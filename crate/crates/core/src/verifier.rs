//! Independent certification of a selling rule.
//!
//! A correct rule's value function `v` must satisfy, at every price `x`,
//! `min(rho*v - Av, v - (x - K)) = 0`, where `A` is the generator of the
//! price/regime pair: `Av(x,i) = x*f_i*v'(x,i) + lambda_i*(v(x,other) - v(x,i))`.
//! [`verify`] checks this on a log-spaced grid — an equality residual where
//! the rule says "hold", signed slack where it says "sell" — plus value
//! continuity, the slope conditions at each threshold, and a handful of
//! scalar facts the construction relies on. Every check reports a signed
//! margin, so a corrupted rule shows *where* and *by how much* it fails.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::model::{phi, ChainState};
use crate::solver::{Regime, SellingRule, Side};

/// Relative tolerance for grid residuals and signed margins.
pub const TOL_REL: f64 = 1e-8;
/// Absolute residual floor, as a fraction of the transaction cost `K`.
pub const TOL_ABS_COST_FRACTION: f64 = 1e-12;
/// Default number of grid points.
pub const DEFAULT_GRID_POINTS: usize = 10_000;
/// Relative gap allowed between branch values meeting at a threshold.
const TOL_CONTINUITY: f64 = 1e-10;
/// Relative gap allowed between slopes that must match at a threshold.
const TOL_SMOOTH_FIT: f64 = 1e-9;
/// Tolerance for re-derived scalars against the ones stored in the rule.
const TOL_CONSISTENCY: f64 = 1e-9;
/// Grid points this close (relatively) to a threshold get nudged off it.
const KINK_DETECT: f64 = 4.0 * f64::EPSILON;
const KINK_OFFSET: f64 = 1e-13;

/// A price grid; [`log_points`](Self::log_points) spaces it geometrically.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason| Error::BadGrid {
            x_min: self.x_min,
            x_max: self.x_max,
            n: self.n,
            reason,
        };
        if !(self.x_min.is_finite() && self.x_min > 0.0) {
            return Err(bad("x_min must be a positive finite price"));
        }
        if !(self.x_max.is_finite() && self.x_max > self.x_min) {
            return Err(bad("x_max must be finite and exceed x_min"));
        }
        if self.n < 2 {
            return Err(bad("need at least two points"));
        }
        Ok(())
    }

    /// Geometrically spaced points from `x_min` to `x_max` inclusive.
    pub fn log_points(&self) -> Vec<f64> {
        let step = (self.x_max / self.x_min).ln() / (self.n - 1) as f64;
        let mut pts: Vec<f64> = (0..self.n)
            .map(|i| self.x_min * (step * i as f64).exp())
            .collect();
        pts[self.n - 1] = self.x_max;
        pts
    }

    /// Same bounds, different resolution.
    pub fn with_points(self, n: usize) -> GridSpec {
        GridSpec { n, ..self }
    }

    /// Grid covering both sides of every threshold of `rule`:
    /// `[x_star/100, 3*max(x_star, x0_star)]` with the default point count.
    pub fn default_for(rule: &SellingRule) -> Result<GridSpec> {
        let (x_star, upper) = rule.thresholds().ok_or(Error::NeverSellRule)?;
        let top = upper.unwrap_or(x_star).max(x_star);
        Ok(GridSpec {
            x_min: x_star / 100.0,
            x_max: 3.0 * top,
            n: DEFAULT_GRID_POINTS,
        })
    }
}

/// Worst signed margin of one inequality family over the grid.
/// Negative means violated at `at_x`; `passed` allows `-TOL_REL` of slack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub name: String,
    pub state: ChainState,
    /// Smallest scaled margin seen.
    pub min: f64,
    /// Where it occurred.
    pub at_x: f64,
    /// Number of grid points contributing.
    pub points: usize,
    pub passed: bool,
}

/// Continuity or slope condition at a single threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCheck {
    /// "x_star" or "x0_star".
    pub location: String,
    pub state: ChainState,
    /// "continuity", "smooth_fit", or "kink".
    pub kind: String,
    pub left: f64,
    pub right: f64,
    /// For matches: tolerance minus relative gap. For kinks: the scaled
    /// amount by which the right slope exceeds the left. Negative = violated.
    pub margin: f64,
    pub passed: bool,
}

/// A standalone scalar fact with a human-readable witness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub grid: GridSpec,
    pub tol_rel: f64,
    pub tol_abs: f64,
    /// Largest absolute equality residual `|rho*v - Av|` on hold regions.
    pub residual_max: f64,
    /// The same residual scaled by `rho*|v| + rho*K` plus the absolute floor;
    /// passing means this stays at or below `tol_rel`.
    pub residual_max_rel: f64,
    /// Price where the worst residual occurred.
    pub residual_at_x: f64,
    pub margins: Vec<MarginReport>,
    pub boundary_checks: Vec<BoundaryCheck>,
    pub scalar_checks: Vec<ScalarCheck>,
    pub passed: bool,
}

/// `Av(x, state)` for the rule's value function, using the analytic one-sided
/// derivative from `side`. The value components themselves are continuous, so
/// only the slope depends on the side.
pub fn generator_apply_side(
    rule: &SellingRule,
    x: f64,
    state: ChainState,
    side: Side,
) -> Result<f64> {
    let p = &rule.params;
    let v_self = rule.value(x, state)?;
    let v_other = rule.value(x, state.other())?;
    let dv = rule.slope(x, state, side)?;
    let (f, lambda) = match state {
        ChainState::Up => (p.f1, p.lambda1),
        ChainState::Down => (p.f2, p.lambda2),
    };
    Ok(x * f * dv + lambda * (v_other - v_self))
}

/// `Av(x, state)`, refusing to evaluate exactly on a slope discontinuity.
pub fn generator_apply(rule: &SellingRule, x: f64, state: ChainState) -> Result<f64> {
    if kink_locations(rule, state).contains(&x) {
        return Err(Error::KinkEvaluation { x });
    }
    generator_apply_side(rule, x, state, Side::Left)
}

/// Finite-difference cross-check of the generator: replaces the analytic
/// slope with a central difference of relative width `h_rel`. Intended for
/// validating the branch derivatives in tests, not for certification.
pub fn generator_apply_fd(rule: &SellingRule, x: f64, state: ChainState, h_rel: f64) -> Result<f64> {
    let p = &rule.params;
    let h = h_rel * x;
    let v_self = rule.value(x, state)?;
    let v_other = rule.value(x, state.other())?;
    let dv = (rule.value(x + h, state)? - rule.value(x - h, state)?) / (2.0 * h);
    let (f, lambda) = match state {
        ChainState::Up => (p.f1, p.lambda1),
        ChainState::Down => (p.f2, p.lambda2),
    };
    Ok(x * f * dv + lambda * (v_other - v_self))
}

fn kink_locations(rule: &SellingRule, state: ChainState) -> Vec<f64> {
    match (rule.regime, state) {
        (Regime::NeverSell, _) => Vec::new(),
        (Regime::CaseI { x_star, .. }, _) => vec![x_star],
        (Regime::CaseII { x_star, x0_star, .. }, ChainState::Up) => vec![x_star, x0_star],
        (Regime::CaseII { x_star, .. }, ChainState::Down) => vec![x_star],
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Region {
    Hold,
    Sell,
}

fn region(rule: &SellingRule, x: f64, state: ChainState) -> Region {
    match (rule.regime, state) {
        // Single-threshold rules never sell from the up regime; the equality
        // holds on both of its branches.
        (Regime::CaseI { .. }, ChainState::Up) => Region::Hold,
        (Regime::CaseI { x_star, .. }, ChainState::Down)
        | (Regime::CaseII { x_star, .. }, ChainState::Down) => {
            if x <= x_star {
                Region::Hold
            } else {
                Region::Sell
            }
        }
        (Regime::CaseII { x0_star, .. }, ChainState::Up) => {
            if x <= x0_star {
                Region::Hold
            } else {
                Region::Sell
            }
        }
        (Regime::NeverSell, _) => unreachable!("verify rejects never-sell rules"),
    }
}

struct PointEval {
    x: f64,
    /// Per state: equality residual on hold regions, else None.
    resid: [Option<f64>; 2],
    /// Per state: `(v - payoff) / (x + K)` on hold regions.
    payoff_margin: [Option<f64>; 2],
    /// Per state: `(rho*v - Av) / scale` on sell regions.
    sell_slack: [Option<f64>; 2],
    /// Residual scale per state (for converting back to relative units).
    scale: [f64; 2],
}

fn point_eval(rule: &SellingRule, x: f64) -> PointEval {
    let p = &rule.params;
    let floor = TOL_ABS_COST_FRACTION * p.k / TOL_REL;
    let mut out = PointEval {
        x,
        resid: [None; 2],
        payoff_margin: [None; 2],
        sell_slack: [None; 2],
        scale: [1.0; 2],
    };
    for (slot, state) in [ChainState::Up, ChainState::Down].into_iter().enumerate() {
        let v = rule
            .value(x, state)
            .expect("grid points are positive finite prices");
        let av = generator_apply_side(rule, x, state, Side::Left)
            .expect("grid points avoid branch boundaries");
        let resid = p.rho * v - av;
        let scale = p.rho * v.abs() + p.rho * p.k + floor;
        out.scale[slot] = scale;
        match region(rule, x, state) {
            Region::Hold => {
                out.resid[slot] = Some(resid);
                out.payoff_margin[slot] = Some((v - (x - p.k)) / (x + p.k));
            }
            Region::Sell => {
                out.sell_slack[slot] = Some(resid / scale);
            }
        }
    }
    out
}

fn boundary_checks(rule: &SellingRule) -> Vec<BoundaryCheck> {
    let mut checks = Vec::new();
    let Some((x_star, upper)) = rule.thresholds() else {
        return checks;
    };
    let k = rule.params.k;

    let mut continuity = |location: &str, t: f64, state: ChainState| {
        let left = rule.value_side(t, state, Side::Left).unwrap();
        let right = rule.value_side(t, state, Side::Right).unwrap();
        let gap = (left - right).abs() / left.abs().max(right.abs()).max(k);
        checks.push(BoundaryCheck {
            location: location.to_string(),
            state,
            kind: "continuity".to_string(),
            left,
            right,
            margin: TOL_CONTINUITY - gap,
            passed: gap <= TOL_CONTINUITY,
        });
    };
    continuity("x_star", x_star, ChainState::Up);
    continuity("x_star", x_star, ChainState::Down);
    if let Some(x0_star) = upper {
        continuity("x0_star", x0_star, ChainState::Up);
    }

    let slope_pair = |t: f64, state: ChainState| {
        (
            rule.slope(t, state, Side::Left).unwrap(),
            rule.slope(t, state, Side::Right).unwrap(),
        )
    };
    let smooth_fit = |location: &str, t: f64, state: ChainState| {
        let (left, right) = slope_pair(t, state);
        let gap = (left - right).abs() / left.abs().max(right.abs()).max(f64::MIN_POSITIVE);
        BoundaryCheck {
            location: location.to_string(),
            state,
            kind: "smooth_fit".to_string(),
            left,
            right,
            margin: TOL_SMOOTH_FIT - gap,
            passed: gap <= TOL_SMOOTH_FIT,
        }
    };
    let kink = |location: &str, t: f64, state: ChainState| {
        // The left slope must not exceed the right one: the value leaves the
        // threshold at least as steeply as it arrives (convex corner).
        let (left, right) = slope_pair(t, state);
        let margin = (right - left) / left.abs().max(right.abs()).max(1.0);
        BoundaryCheck {
            location: location.to_string(),
            state,
            kind: "kink".to_string(),
            left,
            right,
            margin,
            passed: margin >= -TOL_REL,
        }
    };
    match rule.regime {
        Regime::NeverSell => {}
        Regime::CaseI { .. } => {
            checks.push(smooth_fit("x_star", x_star, ChainState::Up));
            checks.push(kink("x_star", x_star, ChainState::Down));
        }
        Regime::CaseII { x0_star, .. } => {
            // The up state is C1 at x_star as well: the down state's value
            // matching there gives both one-sided up-state ODEs identical
            // data, forcing the slopes to agree.
            checks.push(smooth_fit("x_star", x_star, ChainState::Up));
            checks.push(kink("x_star", x_star, ChainState::Down));
            checks.push(smooth_fit("x0_star", x0_star, ChainState::Up));
        }
    }
    checks
}

fn scalar_checks(rule: &SellingRule) -> Vec<ScalarCheck> {
    let p = &rule.params;
    let d = &rule.derived;
    let mut checks = Vec::new();
    let mut push = |name: &str, passed: bool, detail: String| {
        checks.push(ScalarCheck {
            name: name.to_string(),
            passed,
            detail,
        });
    };

    // The stored derived block must be reproducible from the parameters;
    // anything else means the rule was assembled from mismatched pieces.
    match p.derive() {
        Ok(fresh) => {
            let fields = [
                ("phi_rho", d.phi_rho, fresh.phi_rho),
                ("rho_crit", d.rho_crit, fresh.rho_crit),
                ("nu1", d.nu1, fresh.nu1),
                ("nu2", d.nu2, fresh.nu2),
                ("mu", d.mu, fresh.mu),
                ("d1", d.d1, fresh.d1),
                ("d2", d.d2, fresh.d2),
                ("beta1", d.beta1, fresh.beta1),
                ("beta2", d.beta2, fresh.beta2),
                ("gamma1", d.gamma1, fresh.gamma1),
                ("kappa2", d.kappa2, fresh.kappa2),
                ("a0", d.a0, fresh.a0),
                ("b0", d.b0, fresh.b0),
            ];
            let mut worst = ("", 0.0f64);
            for (name, stored, recomputed) in fields {
                let gap = (stored - recomputed).abs() / (1.0 + recomputed.abs());
                if gap > worst.1 {
                    worst = (name, gap);
                }
            }
            push(
                "derived_consistency",
                worst.1 <= TOL_CONSISTENCY,
                format!("worst field {} off by {:.3e}", worst.0, worst.1),
            );
        }
        Err(e) => push("derived_consistency", false, format!("cannot re-derive: {e}")),
    }

    let phi_rho = phi(p.f1, p.f2, p.lambda1, p.lambda2, p.rho);
    push(
        "discount_dominates",
        phi_rho > 0.0,
        format!("phi(rho) = {phi_rho}"),
    );
    push(
        "beta2_above_one",
        d.beta2 > 1.0,
        format!("beta2 = {}", d.beta2),
    );
    push(
        "kappa2_in_unit_interval",
        d.kappa2 > 0.0 && d.kappa2 < 1.0,
        format!("kappa2 = {}", d.kappa2),
    );

    match rule.regime {
        Regime::NeverSell => {}
        Regime::CaseI { x_star, .. } => {
            push(
                "threshold_above_cost",
                x_star > p.k,
                format!("x_star = {x_star}, K = {}", p.k),
            );
        }
        Regime::CaseII { x_star, x0_star, .. } => {
            push(
                "threshold_order",
                p.k < x_star && x_star <= x0_star * (1.0 + TOL_CONSISTENCY),
                format!("K = {} x_star = {x_star} x0_star = {x0_star}", p.k),
            );
            let expected_upper = p.rho * p.k / (p.rho - p.f1);
            push(
                "upper_threshold_consistent",
                (x0_star - expected_upper).abs() <= TOL_CONSISTENCY * expected_upper.abs(),
                format!("stored {x0_star}, recomputed {expected_upper}"),
            );
            // Two inequalities the two-threshold construction needs:
            // the single-threshold formula's natural scale stays below the
            // upper threshold, and the slope-bound denominator stays positive.
            let power_bound = p.k * d.beta2 / (d.beta2 - 1.0);
            push(
                "power_bound_below_upper_threshold",
                power_bound < x0_star * (1.0 + TOL_CONSISTENCY),
                format!("K*beta2/(beta2-1) = {power_bound}, x0_star = {x0_star}"),
            );
            let denom = p.lambda2 - d.kappa2 * (p.rho + p.lambda2 - p.f2);
            push(
                "slope_bound_denominator_positive",
                denom > 0.0,
                format!("lambda2 - kappa2*(rho + lambda2 - f2) = {denom}"),
            );
        }
    }
    checks
}

/// Certifies `rule` on `grid`. Fails with [`Error::NeverSellRule`] if the
/// rule has no thresholds to check.
pub fn verify(rule: &SellingRule, grid: &GridSpec) -> Result<VerificationReport> {
    if matches!(rule.regime, Regime::NeverSell) {
        return Err(Error::NeverSellRule);
    }
    rule.params.well_formed()?;
    grid.validate()?;

    let mut points = grid.log_points();
    let thresholds: Vec<f64> = {
        let (x_star, upper) = rule.thresholds().expect("non-never-sell rule");
        std::iter::once(x_star).chain(upper).collect()
    };
    // Nudge any point that lands on a threshold off it, so every evaluation
    // sits strictly inside a branch.
    for x in &mut points {
        for &t in &thresholds {
            if (*x - t).abs() <= KINK_DETECT * t {
                *x = if *x <= t { t * (1.0 - KINK_OFFSET) } else { t * (1.0 + KINK_OFFSET) };
            }
        }
    }

    let evals = exec::map_indexed(points.len(), |i| point_eval(rule, points[i]));

    let mut residual_max = 0.0f64;
    let mut residual_max_rel = 0.0f64;
    let mut residual_at_x = points[0];
    // (min, argmin, count) per state per family.
    let mut payoff = [(f64::INFINITY, 0.0, 0usize); 2];
    let mut slack = [(f64::INFINITY, 0.0, 0usize); 2];
    // A NaN anywhere (e.g. a rule whose constants overflowed the double
    // range) must surface as a failure, not fall out of the comparisons.
    let worst_high = |v: f64| if v.is_nan() { f64::INFINITY } else { v };
    let worst_low = |v: f64| if v.is_nan() { f64::NEG_INFINITY } else { v };
    for e in &evals {
        for slot in 0..2 {
            if let Some(r) = e.resid[slot] {
                let rel = worst_high(r.abs() / e.scale[slot]);
                if rel > residual_max_rel {
                    residual_max_rel = rel;
                    residual_at_x = e.x;
                }
                residual_max = residual_max.max(worst_high(r.abs()));
            }
            if let Some(m) = e.payoff_margin[slot] {
                let m = worst_low(m);
                payoff[slot].2 += 1;
                if m < payoff[slot].0 {
                    payoff[slot] = (m, e.x, payoff[slot].2);
                }
            }
            if let Some(m) = e.sell_slack[slot] {
                let m = worst_low(m);
                slack[slot].2 += 1;
                if m < slack[slot].0 {
                    slack[slot] = (m, e.x, slack[slot].2);
                }
            }
        }
    }

    let mut margins = Vec::new();
    for (slot, state) in [ChainState::Up, ChainState::Down].into_iter().enumerate() {
        for (family, (min, at_x, count)) in
            [("payoff_gap", payoff[slot]), ("sell_slack", slack[slot])]
        {
            if count > 0 {
                margins.push(MarginReport {
                    name: family.to_string(),
                    state,
                    min,
                    at_x,
                    points: count,
                    passed: min >= -TOL_REL,
                });
            }
        }
    }

    let boundary = boundary_checks(rule);
    let scalars = scalar_checks(rule);

    let passed = residual_max_rel <= TOL_REL
        && margins.iter().all(|m| m.passed)
        && boundary.iter().all(|b| b.passed)
        && scalars.iter().all(|s| s.passed);

    Ok(VerificationReport {
        grid: *grid,
        tol_rel: TOL_REL,
        tol_abs: TOL_ABS_COST_FRACTION * rule.params.k,
        residual_max,
        residual_max_rel,
        residual_at_x,
        margins,
        boundary_checks: boundary,
        scalar_checks: scalars,
        passed,
    })
}

/// [`verify`] on the rule's own default grid.
pub fn verify_default(rule: &SellingRule) -> Result<VerificationReport> {
    verify(rule, &GridSpec::default_for(rule)?)
}

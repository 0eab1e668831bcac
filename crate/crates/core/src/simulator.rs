//! Exact simulation of the regime/price pair, rule execution on paths, and
//! Monte Carlo pricing.
//!
//! Paths are simulated event-by-event: holding times are exact exponentials,
//! and between jumps the price moves deterministically as
//! `S(t) = S(t0) * exp(f_state * (t - t0))`, so there is no discretization
//! error anywhere. Each path owns a counter-based RNG stream derived from
//! `(master seed, path index)`, which makes every estimate reproducible
//! bit-for-bit regardless of thread count or the `parallel` feature.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::model::{ChainState, ModelParams};
use crate::solver::{Regime, SellingRule};

/// One regime switch: the moment, the regime entered, and the price there.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub time: f64,
    pub state: ChainState,
    pub price: f64,
}

/// A full sample path on `[0, horizon]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainPath {
    pub initial_state: ChainState,
    pub initial_price: f64,
    pub horizon: f64,
    /// Strictly increasing in time; empty if no switch occurred.
    pub events: Vec<JumpEvent>,
}

/// A maximal interval of constant regime.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    pub state: ChainState,
    pub price_start: f64,
}

pub struct Segments<'a> {
    path: &'a ChainPath,
    idx: usize,
    t: f64,
    price: f64,
    state: ChainState,
    done: bool,
}

impl Iterator for Segments<'_> {
    type Item = Segment;

    fn next(&mut self) -> Option<Segment> {
        if self.done {
            return None;
        }
        if let Some(e) = self.path.events.get(self.idx) {
            let seg = Segment {
                t_start: self.t,
                t_end: e.time,
                state: self.state,
                price_start: self.price,
            };
            self.t = e.time;
            self.price = e.price;
            self.state = e.state;
            self.idx += 1;
            Some(seg)
        } else {
            self.done = true;
            Some(Segment {
                t_start: self.t,
                t_end: self.path.horizon,
                state: self.state,
                price_start: self.price,
            })
        }
    }
}

impl ChainPath {
    /// Constant-regime intervals covering `[0, horizon]` in order.
    pub fn segments(&self) -> Segments<'_> {
        Segments {
            path: self,
            idx: 0,
            t: 0.0,
            price: self.initial_price,
            state: self.initial_state,
            done: false,
        }
    }

    /// Regime at time `t` (right-continuous at jumps).
    pub fn state_at(&self, t: f64) -> ChainState {
        match self.events.partition_point(|e| e.time <= t) {
            0 => self.initial_state,
            idx => self.events[idx - 1].state,
        }
    }

    /// Price at time `t in [0, horizon]`.
    pub fn price_at(&self, params: &ModelParams, t: f64) -> Result<f64> {
        if !(t >= 0.0 && t <= self.horizon) {
            return Err(Error::MalformedParameter {
                name: "t",
                value: t,
                reason: "must lie in [0, horizon]",
            });
        }
        let (t0, s0, state) = match self.events.partition_point(|e| e.time <= t) {
            0 => (0.0, self.initial_price, self.initial_state),
            idx => {
                let e = &self.events[idx - 1];
                (e.time, e.price, e.state)
            }
        };
        let f = match state {
            ChainState::Up => params.f1,
            ChainState::Down => params.f2,
        };
        Ok(s0 * (f * (t - t0)).exp())
    }
}

/// RNG stream for one path: all paths share a master seed but draw from
/// independent ChaCha streams, so path `i` is the same no matter which
/// worker simulates it or how many paths the run contains.
pub fn path_rng(master_seed: u64, path_index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    rng.set_stream(path_index);
    rng
}

fn check_path_inputs(params: &ModelParams, x0: f64, horizon: f64) -> Result<()> {
    params.well_formed()?;
    if !(x0.is_finite() && x0 > 0.0) {
        return Err(Error::PriceDomain { x: x0 });
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::MalformedParameter {
            name: "horizon",
            value: horizon,
            reason: "must be a positive finite time",
        });
    }
    Ok(())
}

fn simulate_path_inner<R: Rng>(
    params: &ModelParams,
    x0: f64,
    state0: ChainState,
    horizon: f64,
    rng: &mut R,
) -> ChainPath {
    let mut events = Vec::new();
    let (mut t, mut price, mut state) = (0.0, x0, state0);
    loop {
        let (f, rate) = match state {
            ChainState::Up => (params.f1, params.lambda1),
            ChainState::Down => (params.f2, params.lambda2),
        };
        // u in [0, 1) makes 1-u in (0, 1], so the log never blows up.
        let u: f64 = rng.gen();
        let hold = -(1.0 - u).ln() / rate;
        if t + hold >= horizon {
            break;
        }
        t += hold;
        price *= (f * hold).exp();
        state = state.other();
        events.push(JumpEvent { time: t, state, price });
    }
    ChainPath {
        initial_state: state0,
        initial_price: x0,
        horizon,
        events,
    }
}

/// Simulates one path of the regime chain and price on `[0, horizon]`.
pub fn simulate_path<R: Rng>(
    params: &ModelParams,
    x0: f64,
    state0: ChainState,
    horizon: f64,
    rng: &mut R,
) -> Result<ChainPath> {
    check_path_inputs(params, x0, horizon)?;
    Ok(simulate_path_inner(params, x0, state0, horizon, rng))
}

/// Horizon at which the truncation error of a discounted payoff is
/// negligible: discounting beats average growth by `rho - mu` (falling back
/// to `rho` if the chain grows faster than the discount), and the returned
/// time makes that decay factor `1e-6`.
pub fn default_horizon(params: &ModelParams) -> Result<f64> {
    let d = params.derive()?;
    let gap = params.rho - d.mu;
    let decay = if gap > 0.0 { gap } else { params.rho };
    Ok((1e6f64).ln() / decay)
}

/// When and at what price a policy sold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopDecision {
    pub time: f64,
    pub price: f64,
}

/// A deterministic functional of an observed path deciding when to sell.
pub trait StoppingPolicy {
    fn decide(&self, params: &ModelParams, path: &ChainPath) -> Option<StopDecision>;
}

/// The threshold rule: sell on entering the down regime at or above `x_star`,
/// and (when an upper threshold exists) sell in the up regime the moment the
/// price reaches `x0_star`.
///
/// Between switches the price moves monotonically, so only two kinds of
/// instants can trigger a sale: segment entry points, and the single upward
/// crossing of `x0_star` inside an up segment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdPolicy {
    pub x_star: f64,
    pub x0_star: Option<f64>,
}

impl ThresholdPolicy {
    pub fn from_rule(rule: &SellingRule) -> Result<Self> {
        match rule.regime {
            Regime::NeverSell => Err(Error::NeverSellRule),
            Regime::CaseI { x_star, .. } => Ok(ThresholdPolicy { x_star, x0_star: None }),
            Regime::CaseII { x_star, x0_star, .. } => {
                Ok(ThresholdPolicy { x_star, x0_star: Some(x0_star) })
            }
        }
    }
}

impl StoppingPolicy for ThresholdPolicy {
    fn decide(&self, params: &ModelParams, path: &ChainPath) -> Option<StopDecision> {
        for seg in path.segments() {
            match seg.state {
                ChainState::Down => {
                    // Price only decays here; entry is the best moment.
                    if seg.price_start >= self.x_star {
                        return Some(StopDecision {
                            time: seg.t_start,
                            price: seg.price_start,
                        });
                    }
                }
                ChainState::Up => {
                    if let Some(x0) = self.x0_star {
                        if seg.price_start >= x0 {
                            return Some(StopDecision {
                                time: seg.t_start,
                                price: seg.price_start,
                            });
                        }
                        if params.f1 > 0.0 {
                            let t_cross = seg.t_start + (x0 / seg.price_start).ln() / params.f1;
                            if t_cross < seg.t_end {
                                return Some(StopDecision { time: t_cross, price: x0 });
                            }
                        }
                    }
                }
            }
        }
        None
    }
}

/// Reference policy: sell at the first entry into the down regime,
/// whatever the price.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SellAtFirstDown;

impl StoppingPolicy for SellAtFirstDown {
    fn decide(&self, _params: &ModelParams, path: &ChainPath) -> Option<StopDecision> {
        path.segments()
            .find(|seg| seg.state == ChainState::Down)
            .map(|seg| StopDecision {
                time: seg.t_start,
                price: seg.price_start,
            })
    }
}

/// Reference policy: sell unconditionally at a fixed time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SellAtFixedTime(pub f64);

impl StoppingPolicy for SellAtFixedTime {
    fn decide(&self, params: &ModelParams, path: &ChainPath) -> Option<StopDecision> {
        if !(self.0 >= 0.0 && self.0 <= path.horizon) {
            return None;
        }
        let price = path.price_at(params, self.0).ok()?;
        Some(StopDecision { time: self.0, price })
    }
}

/// Runs a solved rule over an observed path.
pub fn apply_rule(path: &ChainPath, rule: &SellingRule) -> Result<Option<StopDecision>> {
    let policy = ThresholdPolicy::from_rule(rule)?;
    Ok(policy.decide(&rule.params, path))
}

/// `exp(-rho * time) * (price - K)`, or zero if the policy never sold.
pub fn discounted_payoff(params: &ModelParams, decision: Option<&StopDecision>) -> f64 {
    match decision {
        Some(d) => (-params.rho * d.time).exp() * (d.price - params.k),
        None => 0.0,
    }
}

/// Monte Carlo estimate of a policy's expected discounted payoff.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: u64,
    /// Paths on which the policy never sold (they contribute zero payoff).
    pub n_unstopped: u64,
}

/// Estimates `E[exp(-rho*tau) * (S_tau - K)]` for `policy` from `n_paths`
/// independent paths started at `(x0, state0)`.
///
/// Two runs with equal arguments agree bit-for-bit; so do parallel and
/// sequential builds, because path `i` always draws from stream `i` and the
/// reduction is fixed-shape pairwise summation.
pub fn mc_value<P: StoppingPolicy + Sync>(
    params: &ModelParams,
    policy: &P,
    x0: f64,
    state0: ChainState,
    n_paths: usize,
    horizon: f64,
    seed: u64,
) -> Result<McEstimate> {
    check_path_inputs(params, x0, horizon)?;
    if n_paths == 0 {
        return Err(Error::MalformedParameter {
            name: "n_paths",
            value: 0.0,
            reason: "need at least one path",
        });
    }
    let outcomes: Vec<(f64, bool)> = exec::map_indexed(n_paths, |i| {
        let mut rng = path_rng(seed, i as u64);
        let path = simulate_path_inner(params, x0, state0, horizon, &mut rng);
        let decision = policy.decide(params, &path);
        (discounted_payoff(params, decision.as_ref()), decision.is_none())
    });
    Ok(estimate(&outcomes))
}

fn estimate(outcomes: &[(f64, bool)]) -> McEstimate {
    let n = outcomes.len();
    let n_unstopped = outcomes.iter().filter(|o| o.1).count() as u64;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (v, _) in outcomes {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    if lo == hi {
        // Degenerate empirical law (e.g. an immediate deterministic sale):
        // the mean is exact and the error genuinely zero.
        return McEstimate {
            mean: lo,
            std_error: 0.0,
            n_paths: n as u64,
            n_unstopped,
        };
    }
    let mean = exec::pairwise_sum_by(outcomes, |o| o.0) / n as f64;
    let ss = exec::pairwise_sum_by(outcomes, |o| {
        let d = o.0 - mean;
        d * d
    });
    let std_error = (ss / (n - 1) as f64 / n as f64).sqrt();
    McEstimate {
        mean,
        std_error,
        n_paths: n as u64,
        n_unstopped,
    }
}

/// Sample mean and variance of `log(S_t / S_0)` with the initial regime drawn
/// from the stationary distribution. Used to confirm diffusion-limit scaling.
pub fn log_price_moments(
    params: &ModelParams,
    t: f64,
    n_paths: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_path_inputs(params, 1.0, t)?;
    if n_paths < 2 {
        return Err(Error::MalformedParameter {
            name: "n_paths",
            value: n_paths as f64,
            reason: "need at least two paths for a variance",
        });
    }
    let d = params.derive()?;
    let logs: Vec<f64> = exec::map_indexed(n_paths, |i| {
        let mut rng = path_rng(seed, i as u64);
        let u: f64 = rng.gen();
        let state0 = if u < d.nu1 { ChainState::Up } else { ChainState::Down };
        let path = simulate_path_inner(params, 1.0, state0, t, &mut rng);
        path.price_at(params, t).expect("t equals the horizon").ln()
    });
    let n = n_paths as f64;
    let mean = exec::pairwise_sum(&logs) / n;
    let var = exec::pairwise_sum_by(&logs, |x| {
        let d = x - mean;
        d * d
    }) / (n - 1.0);
    Ok((mean, var))
}

/// One rung of the diffusion-limit ladder.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbmLimitRow {
    pub epsilon: f64,
    /// Whether the matched chain model satisfies the standing assumptions at
    /// this `epsilon` (large values can push `f2` nonnegative).
    pub admissible: bool,
    pub beta2: Option<f64>,
    pub x_star: Option<f64>,
    /// Exponent of the limiting one-regime diffusion problem.
    pub beta0: f64,
    /// Threshold of the limiting problem, `K * beta0 / (beta0 - 1)`.
    pub x_star_limit: f64,
}

/// Chain parameters that embed a geometric Brownian motion with log-drift
/// `mu` and volatility `sigma` at switching scale `epsilon`:
/// `f = mu ± sigma/sqrt(epsilon)`, `lambda1 = lambda2 = 1/epsilon`. As
/// `epsilon -> 0` the time-integrated growth converges to `mu*t + sigma*W_t`.
pub fn gbm_matched_params(mu: f64, sigma: f64, epsilon: f64, rho: f64, k: f64) -> ModelParams {
    let spread = sigma / epsilon.sqrt();
    ModelParams {
        f1: mu + spread,
        f2: mu - spread,
        lambda1: 1.0 / epsilon,
        lambda2: 1.0 / epsilon,
        rho,
        k,
    }
}

/// Positive exponent `beta0` of the limiting diffusion problem: the root of
/// `(sigma^2/2) b^2 + mu b - rho = 0`, computed in whichever of its two
/// algebraic forms avoids cancellation.
pub fn gbm_reference_exponent(mu: f64, sigma: f64, rho: f64) -> f64 {
    let disc = (mu * mu + 2.0 * rho * sigma * sigma).sqrt();
    if mu >= 0.0 {
        2.0 * rho / (mu + disc)
    } else {
        (disc - mu) / (sigma * sigma)
    }
}

/// Solves the matched chain model along a ladder of `epsilons` and pairs each
/// rung with the limiting diffusion values. Requires `rho > mu`, otherwise
/// the limit problem has no finite threshold.
pub fn gbm_limit_study(
    mu: f64,
    sigma: f64,
    rho: f64,
    k: f64,
    epsilons: &[f64],
) -> Result<Vec<GbmLimitRow>> {
    if !mu.is_finite() {
        return Err(Error::MalformedParameter {
            name: "mu",
            value: mu,
            reason: "must be finite",
        });
    }
    for (name, v) in [("sigma", sigma), ("rho", rho), ("K", k)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::MalformedParameter {
                name,
                value: v,
                reason: "must be a positive finite number",
            });
        }
    }
    if epsilons.is_empty() {
        return Err(Error::MalformedParameter {
            name: "epsilons",
            value: 0.0,
            reason: "need at least one switching scale",
        });
    }
    if rho <= mu {
        return Err(Error::DiscountBelowDrift { rho, mu });
    }
    let beta0 = gbm_reference_exponent(mu, sigma, rho);
    let x_star_limit = k * beta0 / (beta0 - 1.0);
    epsilons
        .iter()
        .map(|&epsilon| {
            if !(epsilon.is_finite() && epsilon > 0.0) {
                return Err(Error::MalformedParameter {
                    name: "epsilon",
                    value: epsilon,
                    reason: "must be a positive finite number",
                });
            }
            let params = gbm_matched_params(mu, sigma, epsilon, rho, k);
            if !params.is_admissible() {
                return Ok(GbmLimitRow {
                    epsilon,
                    admissible: false,
                    beta2: None,
                    x_star: None,
                    beta0,
                    x_star_limit,
                });
            }
            let rule = crate::solver::solve(&params)?;
            let (x_star, _) = rule.thresholds().expect("admissible model has thresholds");
            Ok(GbmLimitRow {
                epsilon,
                admissible: true,
                beta2: Some(rule.derived.beta2),
                x_star: Some(x_star),
                beta0,
                x_star_limit,
            })
        })
        .collect()
}

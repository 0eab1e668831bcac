//! Command-line front end: every library operation with file-based I/O.
//!
//! JSON for structured results, CSV for grids, paths, and tables. All numeric
//! output is serialized with 12 significant digits, enough to pipe `solve`
//! into `verify` losslessly at that precision.
//!
//! Exit codes: 0 success, 1 verification failed, 2 malformed flags or files,
//! 3 model assumption violations (including parameters under which the rule
//! never sells).

use std::fs;
use std::io::{self, Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use chainsell::simulator::{
    default_horizon, gbm_limit_study, mc_value, simulate_path, path_rng, ThresholdPolicy,
};
use chainsell::calibration::PriceSeries;
use chainsell::backtest::{run_backtest, write_window_table, BacktestConfig};
use chainsell::{
    calibration, solve, verify, ChainState, Error, GridSpec, ModelParams, Regime, SellingRule,
};

#[derive(Parser)]
#[command(name = "chainsell", version, about = "Optimal selling rules for a two-regime asset")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve for the optimal selling rule and print it as JSON.
    Solve {
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        out: OutArg,
    },
    /// Check a rule (from --rule or stdin, or solved from parameters)
    /// against the variational inequalities; exit 1 if it fails.
    Verify {
        /// Rule JSON file; reads stdin when absent and no parameters given.
        #[arg(long)]
        rule: Option<PathBuf>,
        #[command(flatten)]
        params: ParamArgs,
        /// Evaluation grid MIN:MAX:N (log-spaced); defaults to one derived
        /// from the rule's thresholds.
        #[arg(long)]
        grid: Option<String>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Tabulate the value function: CSV of x, v(x,1), v(x,2).
    Value {
        #[command(flatten)]
        params: ParamArgs,
        /// Evaluation grid MIN:MAX:N, linearly spaced.
        #[arg(long)]
        grid: String,
        #[command(flatten)]
        out: OutArg,
    },
    /// Simulate one regime/price path and print it as CSV of t, state, price.
    Simulate {
        #[command(flatten)]
        params: ParamArgs,
        /// Initial price.
        #[arg(long, default_value_t = 1.0)]
        x0: f64,
        /// Initial regime: 1 (up) or 2 (down).
        #[arg(long, default_value_t = 1)]
        state: u8,
        /// Path horizon; defaults to long enough for discounting to finish.
        #[arg(long)]
        horizon: Option<f64>,
        /// Sampling step between CSV rows.
        #[arg(long, default_value_t = 1.0 / 252.0)]
        delta: f64,
        #[arg(long, default_value_t = 12345)]
        seed: u64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Monte Carlo estimate of the rule's value from a given start.
    McValue {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long, default_value_t = 1.0)]
        x0: f64,
        /// Initial regime: 1 (up) or 2 (down).
        #[arg(long, default_value_t = 1)]
        state: u8,
        #[arg(long, default_value_t = 10_000)]
        paths: usize,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long, default_value_t = 12345)]
        seed: u64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Convergence table of chain thresholds toward the diffusion limit.
    GbmLimit {
        /// Log-drift of the limiting geometric Brownian motion.
        #[arg(long, default_value_t = 0.2, allow_negative_numbers = true)]
        mu: f64,
        /// Volatility of the limiting geometric Brownian motion.
        #[arg(long, default_value_t = 0.3)]
        sigma: f64,
        #[arg(long, default_value_t = 0.5)]
        rho: f64,
        /// Transaction cost K.
        #[arg(long, default_value_t = 1.0)]
        cost: f64,
        /// Comma-separated switching scales.
        #[arg(long, default_value = "0.1,0.01,0.001")]
        epsilons: String,
        #[command(flatten)]
        out: OutArg,
    },
    /// Estimate model parameters from a CSV of daily closes.
    Calibrate {
        /// CSV file with `date` and `close` columns.
        #[arg(long)]
        prices: PathBuf,
        /// Observation spacing in years.
        #[arg(long, default_value_t = 1.0 / 252.0)]
        delta: f64,
        #[arg(long, default_value_t = 0.5)]
        rho: f64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Rolling-window backtest over a CSV of daily closes.
    Backtest {
        /// CSV file with `date` and `close` columns.
        #[arg(long)]
        prices: PathBuf,
        #[arg(long, default_value_t = 1.0 / 252.0)]
        delta: f64,
        /// Closes per calibration window.
        #[arg(long, default_value_t = 126)]
        window: usize,
        #[arg(long, default_value_t = 0.5)]
        rho: f64,
        /// Transaction cost K.
        #[arg(long, default_value_t = 1.0)]
        cost: f64,
        /// Also write the per-window CSV table here.
        #[arg(long)]
        table: Option<PathBuf>,
        #[command(flatten)]
        out: OutArg,
    },
}

#[derive(Args)]
struct ParamArgs {
    /// JSON file with f1, f2, lambda1, lambda2, rho, K; individual flags
    /// override its fields.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    f1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    f2: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    /// Transaction cost K.
    #[arg(long)]
    cost: Option<f64>,
}

impl ParamArgs {
    fn given(&self) -> bool {
        self.params.is_some()
            || [self.f1, self.f2, self.lambda1, self.lambda2, self.rho, self.cost]
                .iter()
                .any(Option::is_some)
    }

    fn resolve(&self) -> Result<ModelParams, Failure> {
        let mut p = match &self.params {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
                serde_json::from_str::<ModelParams>(&text)
                    .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?
            }
            None => {
                let mut missing = Vec::new();
                for (name, v) in [
                    ("--f1", self.f1),
                    ("--f2", self.f2),
                    ("--lambda1", self.lambda1),
                    ("--lambda2", self.lambda2),
                    ("--rho", self.rho),
                    ("--cost", self.cost),
                ] {
                    if v.is_none() {
                        missing.push(name);
                    }
                }
                if !missing.is_empty() {
                    return Err(Failure::usage(format!(
                        "missing parameters: {} (or pass --params FILE)",
                        missing.join(", ")
                    )));
                }
                ModelParams {
                    f1: self.f1.unwrap(),
                    f2: self.f2.unwrap(),
                    lambda1: self.lambda1.unwrap(),
                    lambda2: self.lambda2.unwrap(),
                    rho: self.rho.unwrap(),
                    k: self.cost.unwrap(),
                }
            }
        };
        if let Some(v) = self.f1 {
            p.f1 = v;
        }
        if let Some(v) = self.f2 {
            p.f2 = v;
        }
        if let Some(v) = self.lambda1 {
            p.lambda1 = v;
        }
        if let Some(v) = self.lambda2 {
            p.lambda2 = v;
        }
        if let Some(v) = self.rho {
            p.rho = v;
        }
        if let Some(v) = self.cost {
            p.k = v;
        }
        Ok(p)
    }
}

#[derive(Args)]
struct OutArg {
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl OutArg {
    fn write(&self, text: &str) -> Result<(), Failure> {
        match &self.out {
            Some(path) => fs::write(path, text)
                .map_err(|e| Failure::usage(format!("{}: {e}", path.display()))),
            None => io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| Failure::usage(format!("stdout: {e}"))),
        }
    }
}

/// A terminal failure: message for the diagnostic stream plus exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: String) -> Self {
        Failure { code: 2, message }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::AssumptionsViolated { .. }
            | Error::NeverSellRule
            | Error::DiscountBelowDrift { .. } => 3,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    match cli.cmd {
        Cmd::Solve { params, out } => {
            let rule = solve(&params.resolve()?)?;
            out.write(&json_text(&rule)?)?;
            if let Regime::NeverSell = rule.regime {
                eprintln!(
                    "never sell: phi({}) = {} does not exceed zero with rho above {}; \
                     holding forever is optimal",
                    rule.params.rho, rule.derived.phi_rho, rule.derived.rho_crit
                );
                return Ok(3);
            }
            Ok(0)
        }
        Cmd::Verify { rule, params, grid, out } => {
            let rule = load_rule(rule, &params)?;
            let spec = match grid {
                Some(text) => parse_grid(&text)?,
                None => GridSpec::default_for(&rule)?,
            };
            let report = verify(&rule, &spec)?;
            out.write(&json_text(&report)?)?;
            Ok(if report.passed { 0 } else { 1 })
        }
        Cmd::Value { params, grid, out } => {
            let rule = solve(&params.resolve()?)?;
            let spec = parse_grid(&grid)?;
            spec.validate()?;
            let mut text = String::from("x,v1,v2\n");
            for i in 0..spec.n {
                let frac = i as f64 / (spec.n - 1) as f64;
                let x = if i + 1 == spec.n {
                    spec.x_max
                } else {
                    spec.x_min + frac * (spec.x_max - spec.x_min)
                };
                let v1 = rule.value(x, ChainState::Up)?;
                let v2 = rule.value(x, ChainState::Down)?;
                text.push_str(&format!("{},{},{}\n", sig(x), sig(v1), sig(v2)));
            }
            out.write(&text)?;
            Ok(0)
        }
        Cmd::Simulate { params, x0, state, horizon, delta, seed, out } => {
            let p = params.resolve()?;
            let state0 = parse_state(state)?;
            let horizon = match horizon {
                Some(t) => t,
                None => default_horizon(&p)?,
            };
            if !(delta.is_finite() && delta > 0.0) {
                return Err(Failure::usage(format!("--delta {delta}: must be positive")));
            }
            let path = simulate_path(&p, x0, state0, horizon, &mut path_rng(seed, 0))?;
            let mut text = String::from("t,state,price\n");
            let mut k = 0u64;
            loop {
                let raw = k as f64 * delta;
                if raw > horizon + delta * 1e-6 {
                    break;
                }
                let t = raw.min(horizon);
                let price = path.price_at(&p, t)?;
                text.push_str(&format!("{},{},{}\n", sig(t), path.state_at(t), sig(price)));
                k += 1;
            }
            out.write(&text)?;
            Ok(0)
        }
        Cmd::McValue { params, x0, state, paths, horizon, seed, out } => {
            let p = params.resolve()?;
            let state0 = parse_state(state)?;
            let rule = solve(&p)?;
            let policy = ThresholdPolicy::from_rule(&rule)?;
            let horizon = match horizon {
                Some(t) => t,
                None => default_horizon(&p)?,
            };
            let estimate = mc_value(&p, &policy, x0, state0, paths, horizon, seed)?;
            out.write(&json_text(&estimate)?)?;
            Ok(0)
        }
        Cmd::GbmLimit { mu, sigma, rho, cost, epsilons, out } => {
            let epsilons: Vec<f64> = epsilons
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Failure::usage(format!("--epsilons: bad number {s:?}")))
                })
                .collect::<Result<_, _>>()?;
            let rows = gbm_limit_study(mu, sigma, rho, cost, &epsilons)?;
            let mut text = String::from("epsilon,admissible,beta2,x_star,beta0,x_star_limit\n");
            for r in rows {
                let opt = |v: Option<f64>| v.map(sig).unwrap_or_default();
                text.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    sig(r.epsilon),
                    r.admissible,
                    opt(r.beta2),
                    opt(r.x_star),
                    sig(r.beta0),
                    sig(r.x_star_limit),
                ));
            }
            out.write(&text)?;
            Ok(0)
        }
        Cmd::Calibrate { prices, delta, rho, out } => {
            let series = PriceSeries::from_path(&prices, delta)?;
            let result = calibration::calibrate(&series, rho)?;
            out.write(&json_text(&result)?)?;
            Ok(0)
        }
        Cmd::Backtest { prices, delta, window, rho, cost, table, out } => {
            let series = PriceSeries::from_path(&prices, delta)?;
            let config = BacktestConfig {
                window_len: window,
                rho,
                k: cost,
            };
            let report = run_backtest(&series, &config)?;
            if let Some(path) = table {
                let mut buf = Vec::new();
                write_window_table(&report, &mut buf)?;
                fs::write(&path, buf)
                    .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            }
            out.write(&json_text(&report)?)?;
            Ok(0)
        }
    }
}

fn load_rule(rule: Option<PathBuf>, params: &ParamArgs) -> Result<SellingRule, Failure> {
    if params.given() {
        return Ok(solve(&params.resolve()?)?);
    }
    let text = match rule {
        Some(path) => fs::read_to_string(&path)
            .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?,
        None => {
            let mut buf = String::new();
            io::stdin()
                .read_to_string(&mut buf)
                .map_err(|e| Failure::usage(format!("stdin: {e}")))?;
            buf
        }
    };
    serde_json::from_str(&text).map_err(|e| Failure::usage(format!("rule JSON: {e}")))
}

fn parse_grid(text: &str) -> Result<GridSpec, Failure> {
    let bad = || Failure::usage(format!("--grid {text:?}: expected MIN:MAX:N"));
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    Ok(GridSpec {
        x_min: parts[0].parse().map_err(|_| bad())?,
        x_max: parts[1].parse().map_err(|_| bad())?,
        n: parts[2].parse().map_err(|_| bad())?,
    })
}

fn parse_state(state: u8) -> Result<ChainState, Failure> {
    ChainState::from_index(state)
        .ok_or_else(|| Failure::usage(format!("--state {state}: must be 1 (up) or 2 (down)")))
}

/// Serializes with every float rounded to 12 significant digits.
fn json_text<T: serde::Serialize>(value: &T) -> Result<String, Failure> {
    let mut v = serde_json::to_value(value)
        .map_err(|e| Failure::usage(format!("serialization: {e}")))?;
    round_floats(&mut v);
    let mut text = serde_json::to_string_pretty(&v)
        .map_err(|e| Failure::usage(format!("serialization: {e}")))?;
    text.push('\n');
    Ok(text)
}

fn round_floats(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) => {
            // Counts serialize as u64 and must stay exact integers.
            if n.is_f64() {
                let rounded = round_sig(n.as_f64().unwrap());
                if let Some(m) = serde_json::Number::from_f64(rounded) {
                    *n = m;
                }
            }
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(round_floats),
        serde_json::Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

fn round_sig(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.11e}").parse().unwrap()
}

fn sig(v: f64) -> String {
    round_sig(v).to_string()
}

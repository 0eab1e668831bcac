use thiserror::Error;

use crate::model::Violation;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
#[non_exhaustive]
pub enum Error {
    /// A numeric input is non-finite or outside its admissible sign range.
    #[error("parameter `{name}` = {value} is malformed: {reason}")]
    MalformedParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    /// The model violates the standing assumptions (return-rate signs or
    /// discount strength), so no selling rule is defined.
    #[error("model assumptions violated: {}", format_violations(violations))]
    AssumptionsViolated { violations: Vec<Violation> },

    /// An operation that needs a concrete threshold was given a never-sell rule.
    #[error("the rule never sells: no threshold to evaluate")]
    NeverSellRule,

    /// Price argument outside `[0, inf)`.
    #[error("price {x} is outside the domain [0, +inf)")]
    PriceDomain { x: f64 },

    /// One-sided derivative requested exactly at a threshold without a side.
    #[error("x = {x} sits on a branch boundary; pick an evaluation side")]
    KinkEvaluation { x: f64 },

    /// The root bracket for the upper threshold did not have the guaranteed
    /// signs; indicates inconsistent inputs rather than a solver failure.
    #[error("root bracket [{lo}, {hi}] invalid: {reason} (values {phi_lo}, {phi_hi})")]
    RootBracket {
        lo: f64,
        hi: f64,
        phi_lo: f64,
        phi_hi: f64,
        reason: &'static str,
    },

    /// Verification/value grid is unusable.
    #[error("bad grid [{x_min}, {x_max}] with {n} points: {reason}")]
    BadGrid {
        x_min: f64,
        x_max: f64,
        n: usize,
        reason: &'static str,
    },

    /// Discount rate does not exceed the long-run drift, so the limiting
    /// one-regime problem has no finite threshold.
    #[error("discount rate {rho} does not exceed the mean growth rate {mu}")]
    DiscountBelowDrift { rho: f64, mu: f64 },

    /// Price series too short for the requested operation.
    #[error("price series has {len} closes; at least {min} required")]
    SeriesTooShort { len: usize, min: usize },

    /// Non-positive or non-finite close in a price series.
    #[error("close #{index} = {value} is not a positive finite price")]
    BadPrice { index: usize, value: f64 },

    /// A CSV field failed to parse.
    #[error("row {row}: cannot parse `{field}` from {value:?}")]
    CsvField {
        row: usize,
        field: &'static str,
        value: String,
    },

    /// The series lacks a feature the calibration estimator divides by.
    #[error("degenerate price series: no {missing}")]
    DegenerateSeries { missing: &'static str },

    /// Backtest window configuration inconsistent with the series.
    #[error("window of {window_len} closes unusable on a series of {series_len}: {reason}")]
    WindowConfig {
        window_len: usize,
        series_len: usize,
        reason: &'static str,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn format_violations(violations: &[Violation]) -> String {
    let parts: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
    parts.join("; ")
}

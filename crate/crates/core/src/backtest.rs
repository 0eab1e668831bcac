//! Rolling-window backtest: calibrate, decide, and execute at most one sale.
//!
//! The close series is cut into consecutive non-overlapping windows. Each
//! window is calibrated on its own closes and stamped `Hold` when
//! `phi(rho) <= 0` (or when calibration itself fails) and `SellRegime`
//! otherwise. The first sell-regime window whose estimates admit a finite
//! rule arms that rule; subsequent days are then scanned in order, inferring
//! the regime from the sign of each day's log-increment (flat days inherit
//! the previous regime), and the first day satisfying the rule's threshold
//! conditions executes the single sale.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate, CalibrationResult, PriceSeries};
use crate::error::{Error, Result};
use crate::model::ChainState;
use crate::solver::{solve, Regime};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Hold,
    SellRegime,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    /// Closes per calibration window.
    pub window_len: usize,
    pub rho: f64,
    /// Transaction cost passed to the solver.
    pub k: f64,
}

/// One window's calibration and verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub index: usize,
    /// `first_label..last_label` of the window's closes.
    pub period: String,
    /// Close index range `[start, end)` in the full series.
    pub start: usize,
    pub end: usize,
    pub decision: Decision,
    pub calibration: Option<CalibrationResult>,
    /// Present when calibration failed or a sell-regime window could not be
    /// turned into a usable rule.
    pub note: Option<String>,
}

/// The single executed sale, if any.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaleRecord {
    /// Close index of the sale day.
    pub index: usize,
    pub label: String,
    pub price: f64,
    /// Regime inferred on the sale day.
    pub state: ChainState,
    pub x_star: f64,
    pub x0_star: Option<f64>,
    /// Window whose rule triggered the sale.
    pub window: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub config: BacktestConfig,
    pub windows: Vec<WindowReport>,
    pub sale: Option<SaleRecord>,
}

/// Runs the backtest. Purely deterministic in its inputs.
pub fn run_backtest(series: &PriceSeries, config: &BacktestConfig) -> Result<BacktestReport> {
    for (name, v) in [("rho", config.rho), ("K", config.k)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::MalformedParameter {
                name,
                value: v,
                reason: "must be a positive finite number",
            });
        }
    }
    let len = series.closes.len();
    if config.window_len < 3 {
        return Err(Error::WindowConfig {
            window_len: config.window_len,
            series_len: len,
            reason: "too short to calibrate (need at least 3 closes)",
        });
    }
    if config.window_len > len {
        return Err(Error::WindowConfig {
            window_len: config.window_len,
            series_len: len,
            reason: "window exceeds the series",
        });
    }

    let n_windows = len / config.window_len;
    let mut windows = Vec::with_capacity(n_windows);
    let mut armed = false;
    let mut sale = None;
    for w in 0..n_windows {
        let start = w * config.window_len;
        let end = start + config.window_len;
        let sub = series
            .window(start, config.window_len)
            .expect("window bounds were just checked");
        let period = format!("{}..{}", sub.labels[0], sub.labels[sub.labels.len() - 1]);
        let mut report = WindowReport {
            index: w,
            period,
            start,
            end,
            decision: Decision::Hold,
            calibration: None,
            note: None,
        };
        match calibrate(&sub, config.rho) {
            Err(e) => report.note = Some(format!("calibration failed: {e}")),
            Ok(c) => {
                report.calibration = Some(c);
                if c.phi_rho > 0.0 {
                    report.decision = Decision::SellRegime;
                    if !armed && sale.is_none() {
                        match solve(&c.to_params(config.rho, config.k)) {
                            Ok(rule) => match rule.regime {
                                Regime::NeverSell => {
                                    report.note = Some(
                                        "selling rule unavailable: no finite threshold at this discount rate"
                                            .to_string(),
                                    );
                                }
                                Regime::CaseI { x_star, .. } => {
                                    armed = true;
                                    sale = scan_for_sale(series, end, w, x_star, None);
                                }
                                Regime::CaseII { x_star, x0_star, .. } => {
                                    armed = true;
                                    sale = scan_for_sale(series, end, w, x_star, Some(x0_star));
                                }
                            },
                            Err(e) => {
                                report.note = Some(format!("selling rule unavailable: {e}"));
                            }
                        }
                    }
                }
            }
        }
        windows.push(report);
    }

    Ok(BacktestReport {
        config: *config,
        windows,
        sale,
    })
}

/// Walks the closes from `start` onward, inferring the regime day by day,
/// and returns the first day the armed rule would sell on.
fn scan_for_sale(
    series: &PriceSeries,
    start: usize,
    window: usize,
    x_star: f64,
    x0_star: Option<f64>,
) -> Option<SaleRecord> {
    // Seed the regime from the last non-flat day before the scan begins.
    let mut state = series.closes[..start]
        .windows(2)
        .rev()
        .find_map(|w| match w[1].partial_cmp(&w[0]) {
            Some(std::cmp::Ordering::Greater) => Some(ChainState::Up),
            Some(std::cmp::Ordering::Less) => Some(ChainState::Down),
            _ => None,
        })
        .unwrap_or(ChainState::Up);
    for i in start..series.closes.len() {
        let price = series.closes[i];
        state = match price.partial_cmp(&series.closes[i - 1]) {
            Some(std::cmp::Ordering::Greater) => ChainState::Up,
            Some(std::cmp::Ordering::Less) => ChainState::Down,
            _ => state,
        };
        let down_sale = state == ChainState::Down && price >= x_star;
        let up_sale = x0_star.is_some_and(|x0| price >= x0);
        if down_sale || up_sale {
            return Some(SaleRecord {
                index: i,
                label: series.labels[i].clone(),
                price,
                state,
                x_star,
                x0_star,
                window,
            });
        }
    }
    None
}

/// Writes one CSV row per window: `period,f1,f2,lambda1,lambda2,phi_rho`.
/// Windows whose calibration failed leave the numeric fields empty.
pub fn write_window_table<W: Write>(report: &BacktestReport, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["period", "f1", "f2", "lambda1", "lambda2", "phi_rho"])?;
    for w in &report.windows {
        match &w.calibration {
            Some(c) => wtr.write_record([
                w.period.clone(),
                c.f1_hat.to_string(),
                c.f2_hat.to_string(),
                c.lambda1_hat.to_string(),
                c.lambda2_hat.to_string(),
                c.phi_rho.to_string(),
            ])?,
            None => wtr.write_record([w.period.as_str(), "", "", "", "", ""])?,
        }
    }
    wtr.flush()?;
    Ok(())
}

//! Daily closes and the maximum-likelihood calibration of the model.

use std::io::Read;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const TRADING_DAYS: f64 = 252.0;
pub const MIN_OBSERVATIONS: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    pub dates: Vec<NaiveDate>,
    pub prices: Vec<f64>,
    /// Sampling interval in years.
    pub delta_years: f64,
}

#[derive(Debug, Deserialize)]
struct Row {
    date: String,
    close: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub n_prices: usize,
    pub delta_years: f64,
    pub sigma: f64,
    pub y0: f64,
    pub sigma0_sq: f64,
}

impl PriceSeries {
    /// Parses a `date,close` CSV with ISO-8601 dates.
    pub fn from_reader<R: Read>(reader: R, delta_years: f64) -> CliResult<Self> {
        if !(delta_years > 0.0 && delta_years.is_finite()) {
            return Err(CliError::config(format!("delta_years must be > 0, got {delta_years}")));
        }
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| CliError::io("prices header", e))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["date", "close"] {
            return Err(CliError::config(format!(
                "prices header must be `date,close`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut dates = Vec::new();
        let mut prices = Vec::new();
        for (i, rec) in rdr.deserialize::<Row>().enumerate() {
            // header is line 1
            let line = i + 2;
            let row = rec.map_err(|e| CliError::config(format!("prices line {line}: {e}")))?;
            let date = NaiveDate::parse_from_str(&row.date, "%Y-%m-%d")
                .map_err(|e| CliError::config(format!("prices line {line}: bad date `{}`: {e}", row.date)))?;
            if !(row.close > 0.0 && row.close.is_finite()) {
                return Err(CliError::config(format!(
                    "prices line {line}: close must be positive, got {}",
                    row.close
                )));
            }
            if let Some(&prev) = dates.last() {
                if date <= prev {
                    return Err(CliError::config(format!(
                        "prices line {line}: date {date} does not follow {prev}"
                    )));
                }
            }
            dates.push(date);
            prices.push(row.close);
        }
        Ok(Self {
            dates,
            prices,
            delta_years,
        })
    }

    pub fn from_path(path: &std::path::Path, delta_years: f64) -> CliResult<Self> {
        let file = std::fs::File::open(path).map_err(|e| CliError::io(&format!("prices {}", path.display()), e))?;
        Self::from_reader(file, delta_years)
    }
}

/// Maximum-likelihood volatility and drift of a geometric Brownian motion;
/// the prior variance is the sampling variance of the drift estimate.
pub fn estimate_params(series: &PriceSeries) -> CliResult<Estimate> {
    let n_prices = series.prices.len();
    if n_prices < MIN_OBSERVATIONS {
        return Err(CliError::config(format!(
            "calibration needs at least {MIN_OBSERVATIONS} prices, got {n_prices}"
        )));
    }
    let u: Vec<f64> = series.prices.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
    let n = u.len() as f64;
    let mean = u.iter().sum::<f64>() / n;
    let var = u.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let delta = series.delta_years;
    let sigma_sq = var / delta;
    if !(sigma_sq > 0.0) {
        return Err(CliError::config("calibration: log-returns have zero variance"));
    }
    Ok(Estimate {
        n_prices,
        delta_years: delta,
        sigma: sigma_sq.sqrt(),
        y0: mean / delta + 0.5 * sigma_sq,
        sigma0_sq: sigma_sq / (n * delta),
    })
}

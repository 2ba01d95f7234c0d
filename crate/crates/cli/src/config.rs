//! Run configuration: one JSON document, optionally overridden by flags.

use std::fs;
use std::path::{Path, PathBuf};

use robustfolio::{GridSpec, MarketParams, Prior, QuadratureConfig, ScenarioConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "MarketParams::reference")]
    pub market: MarketParams,
    #[serde(default = "Prior::reference")]
    pub prior: Prior,
    /// `None` picks a grid from the model, see [`GridSpec::default_for`].
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub output_format: OutputFormat,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            market: MarketParams::reference(),
            prior: Prior::reference(),
            grid: None,
            quadrature: QuadratureConfig::default(),
            scenario: ScenarioConfig::default(),
            output_dir: default_output_dir(),
            output_format: OutputFormat::Csv,
        }
    }
}

/// Flag values that replace fields of the loaded configuration.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub r: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub sigma: Option<f64>,
    /// Horizon in years.
    #[arg(long = "horizon", global = true, allow_hyphen_values = true)]
    pub horizon: Option<f64>,
    /// Risk aversion.
    #[arg(long = "k", global = true, allow_hyphen_values = true)]
    pub risk_aversion: Option<f64>,
    /// Confidence multiplier.
    #[arg(long = "a", global = true, allow_hyphen_values = true)]
    pub confidence: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub y0: Option<f64>,
    #[arg(long = "sigma0-sq", global = true, allow_hyphen_values = true)]
    pub sigma0_sq: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub y_min: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub y_max: Option<f64>,
    #[arg(long, global = true)]
    pub n_y: Option<usize>,
    #[arg(long, global = true)]
    pub n_t: Option<usize>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub theta: Option<f64>,
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub initial_wealth: Option<f64>,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<OutputFormat>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::io(&format!("config {}", p.display()), e))?;
                serde_json::from_str(&text).map_err(|e| CliError::config(format!("config {}: {e}", p.display())))
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        let m = &mut self.market;
        set(&mut m.r, o.r);
        set(&mut m.sigma, o.sigma);
        set(&mut m.horizon, o.horizon);
        set(&mut m.risk_aversion, o.risk_aversion);
        set(&mut m.confidence, o.confidence);
        set(&mut self.prior.y0, o.y0);
        set(&mut self.prior.sigma0_sq, o.sigma0_sq);
        let touches_grid =
            o.y_min.is_some() || o.y_max.is_some() || o.n_y.is_some() || o.n_t.is_some() || o.theta.is_some();
        if touches_grid {
            let mut g = self.grid.unwrap_or_else(|| GridSpec::default_for(&self.market, &self.prior, &[]));
            set(&mut g.y_min, o.y_min);
            set(&mut g.y_max, o.y_max);
            set(&mut g.n_y, o.n_y);
            set(&mut g.n_t, o.n_t);
            set(&mut g.theta, o.theta);
            self.grid = Some(g);
        }
        let s = &mut self.scenario;
        set(&mut s.n_paths, o.paths);
        set(&mut s.n_steps, o.steps);
        set(&mut s.seed, o.seed);
        set(&mut s.initial_wealth, o.initial_wealth);
        if let Some(d) = &o.output_dir {
            self.output_dir = d.clone();
        }
        set(&mut self.output_format, o.format);
    }

    /// Checks every section and that the output directory is writable.
    pub fn validate(&self) -> CliResult<()> {
        let section = |name: &str, r: robustfolio::Result<()>| {
            r.map_err(|e| CliError::config(format!("config {name}: {e}")))
        };
        section("market", self.market.validate())?;
        section("prior", self.prior.validate())?;
        section("grid", self.grid().validate_for(&self.market, &self.prior))?;
        section("quadrature", self.quadrature.validate())?;
        section("scenario", self.scenario.validate())?;
        fs::create_dir_all(&self.output_dir)
            .map_err(|e| CliError::io(&format!("config output_dir {}", self.output_dir.display()), e))?;
        let meta = fs::metadata(&self.output_dir)
            .map_err(|e| CliError::io(&format!("config output_dir {}", self.output_dir.display()), e))?;
        if meta.permissions().readonly() {
            return Err(CliError::config(format!(
                "config output_dir {} is not writable",
                self.output_dir.display()
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> GridSpec {
        self.grid.unwrap_or_else(|| GridSpec::default_for(&self.market, &self.prior, &[]))
    }

    /// The configured grid, or a default one that also contains `extra`.
    pub fn grid_covering(&self, extra: &[f64]) -> GridSpec {
        self.grid.unwrap_or_else(|| GridSpec::default_for(&self.market, &self.prior, extra))
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

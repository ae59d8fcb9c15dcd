//! Run configuration: defaults, then the config file, then flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use ordcop_core::combine::{CopulaSharing, Estimator, SystemConfig};
use ordcop_core::forecast::{ForecastConfig, Method, Summary};
use ordcop_core::{Coding, CopulaFamily};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub time_column: Option<String>,
    pub model: ModelFile,
    pub forecast: ForecastFile,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelFile {
    pub lag: Option<usize>,
    pub coding: Option<String>,
    pub family: Option<String>,
    /// Entries `"A:B=frank"`, by series name or 1-based index.
    pub pair_families: Vec<String>,
    pub sharing: Option<String>,
    pub estimator: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastFile {
    pub horizon: Option<usize>,
    pub paths: Option<usize>,
    pub method: Option<String>,
    pub summary: Option<String>,
}

pub fn load(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

fn parse<T: std::str::FromStr>(value: Option<&str>, default: T) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    match value {
        None => Ok(default),
        Some(s) => s.parse().map_err(|e: T::Err| anyhow::anyhow!("{e}")),
    }
}

/// Model options after merging, with pair overrides still unresolved.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelOptions {
    pub lag: usize,
    pub coding: Coding,
    pub family: CopulaFamily,
    pub pair_families: Vec<String>,
    pub sharing: CopulaSharing,
    pub estimator: Estimator,
}

/// Flag values for the model; `None` falls back to the file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct ModelFlags {
    /// Lag order p.
    #[arg(long)]
    pub lag: Option<usize>,
    /// Lag coding: indicator or linear.
    #[arg(long)]
    pub coding: Option<String>,
    /// Default copula family: gumbel, frank or gaussian.
    #[arg(long)]
    pub family: Option<String>,
    /// Per-pair family, e.g. `A:B=frank` (repeatable).
    #[arg(long = "pair-family")]
    pub pair_families: Vec<String>,
    /// Copula sharing: per-pair or common.
    #[arg(long)]
    pub sharing: Option<String>,
    /// Estimator used for the wide tables: weighted or mean.
    #[arg(long)]
    pub estimator: Option<String>,
}

impl ModelOptions {
    pub fn merge(flags: &ModelFlags, file: &ModelFile) -> Result<Self> {
        let pick = |f: &Option<String>, c: &Option<String>| f.clone().or_else(|| c.clone());
        Ok(Self {
            lag: flags.lag.or(file.lag).unwrap_or(1),
            coding: parse(pick(&flags.coding, &file.coding).as_deref(), Coding::Indicator)?,
            family: parse(pick(&flags.family, &file.family).as_deref(), CopulaFamily::Gumbel)?,
            pair_families: if flags.pair_families.is_empty() {
                file.pair_families.clone()
            } else {
                flags.pair_families.clone()
            },
            sharing: parse(pick(&flags.sharing, &file.sharing).as_deref(), CopulaSharing::PerPair)?,
            estimator: parse(pick(&flags.estimator, &file.estimator).as_deref(), Estimator::Weighted)?,
        })
    }

    pub fn system_config(&self, names: &[String]) -> Result<SystemConfig> {
        let mut config = SystemConfig::new(self.lag, self.coding, self.family);
        config.sharing = self.sharing;
        for entry in &self.pair_families {
            config.pair_families.push(parse_pair_family(entry, names)?);
        }
        Ok(config)
    }
}

fn series_index(token: &str, names: &[String]) -> Result<usize> {
    if let Some(i) = names.iter().position(|n| n == token) {
        return Ok(i);
    }
    match token.parse::<usize>() {
        Ok(i) if (1..=names.len()).contains(&i) => Ok(i - 1),
        _ => bail!("unknown series '{token}' in pair family override"),
    }
}

pub fn parse_pair_family(entry: &str, names: &[String]) -> Result<(usize, usize, CopulaFamily)> {
    let (pair, family) = entry
        .split_once('=')
        .with_context(|| format!("pair family '{entry}' is not of the form A:B=family"))?;
    let (a, b) = pair
        .split_once(':')
        .with_context(|| format!("pair family '{entry}' is not of the form A:B=family"))?;
    let (r, s) = (series_index(a.trim(), names)?, series_index(b.trim(), names)?);
    if r == s {
        bail!("pair family '{entry}' names the same series twice");
    }
    let family: CopulaFamily = parse(Some(family.trim()), CopulaFamily::Gumbel)?;
    Ok((r.min(s), r.max(s), family))
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct ForecastFlags {
    /// Forecast horizon H.
    #[arg(long = "h", alias = "horizon")]
    pub horizon: Option<usize>,
    /// Number of simulated paths B.
    #[arg(long)]
    pub paths: Option<usize>,
    /// Combination method: A or B.
    #[arg(long)]
    pub method: Option<String>,
    /// Point summary: mode or median.
    #[arg(long)]
    pub summary: Option<String>,
}

pub fn forecast_config(flags: &ForecastFlags, file: &ForecastFile, seed: u64) -> Result<ForecastConfig> {
    let d = ForecastConfig::default();
    let pick = |f: &Option<String>, c: &Option<String>| f.clone().or_else(|| c.clone());
    Ok(ForecastConfig {
        horizon: flags.horizon.or(file.horizon).unwrap_or(d.horizon),
        n_paths: flags.paths.or(file.paths).unwrap_or(d.n_paths),
        method: parse::<Method>(pick(&flags.method, &file.method).as_deref(), d.method)?,
        summary: parse::<Summary>(pick(&flags.summary, &file.summary).as_deref(), d.summary)?,
        seed,
    })
}

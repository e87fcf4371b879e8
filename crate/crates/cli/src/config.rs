//! Scenario configuration files: TOML sections, `--set` overrides and
//! validation with file/line-attributed errors.

use std::path::{Path, PathBuf};

use losshedge::corrector::HConvention;
use losshedge::experiments::{LossSpec, PathScaling, Scenario};
use losshedge::hedge_sim::{CapitalRule, StopLevel, ThresholdVol};
use losshedge::market::{MarketParams, Payoff, TabulatedPayoff};
use losshedge::second_corrector::FdGrid;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub lambda: f64,
    pub sigma: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PayoffSection {
    #[default]
    Zero,
    Put {
        strike: f64,
    },
    CallSpread {
        k1: f64,
        k2: f64,
    },
    Digital {
        strike: f64,
    },
    Tabulated {
        spots: Vec<f64>,
        values: Vec<f64>,
        #[serde(default)]
        nodes: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PointSection {
    pub t0: f64,
    pub s0: f64,
    pub p0: f64,
    pub x0: Option<f64>,
}

impl Default for PointSection {
    fn default() -> Self {
        Self {
            t0: 0.0,
            s0: 100.0,
            p0: -1.0,
            x0: None,
        }
    }
}

/// `section6`, `eq45` or `both`; `both` runs experiments under `section6`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConventionChoice {
    #[default]
    Section6,
    Eq45,
    Both,
}

impl ConventionChoice {
    pub fn active(self) -> HConvention {
        match self {
            ConventionChoice::Eq45 => HConvention::Eq45,
            _ => HConvention::Section6,
        }
    }

    pub fn listed(self) -> Vec<HConvention> {
        match self {
            ConventionChoice::Section6 => vec![HConvention::Section6],
            ConventionChoice::Eq45 => vec![HConvention::Eq45],
            ConventionChoice::Both => vec![HConvention::Section6, HConvention::Eq45],
        }
    }
}

/// `"auto"`, `"never"` or a fixed wealth floor `k` (stop at `−k`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StopSetting {
    Named(String),
    Level(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericSection {
    pub eps: Option<f64>,
    pub eps_list: Option<Vec<f64>>,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub cushion: f64,
    pub h_constant_convention: ConventionChoice,
    pub delta_min: f64,
    pub capital_rule: Option<CapitalRule>,
    pub stop: StopSetting,
    pub threshold_vol: ThresholdVol,
    /// Scale paths as `n_paths · (eps_ref/ε)²` when set.
    pub eps_ref: Option<f64>,
    pub bisection_factor: f64,
    pub zero_cost_control: bool,
    pub fd_nodes: usize,
    pub fd_steps: usize,
    pub fd_width_sd: f64,
}

impl Default for NumericSection {
    fn default() -> Self {
        let fd = FdGrid::default();
        Self {
            eps: None,
            eps_list: None,
            n_paths: 100_000,
            n_steps: 2000,
            seed: 1,
            cushion: 1.0,
            h_constant_convention: ConventionChoice::Section6,
            delta_min: 1e-4,
            capital_rule: None,
            stop: StopSetting::Named("auto".into()),
            threshold_vol: ThresholdVol::Full,
            eps_ref: None,
            bisection_factor: 1e-4,
            zero_cost_control: false,
            fd_nodes: fd.n_s,
            fd_steps: fd.n_t,
            fd_width_sd: fd.width_sd,
        }
    }
}

/// Contents of a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_id")]
    pub id: String,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub market: MarketSection,
    pub model: LossSpec,
    #[serde(default)]
    pub payoff: PayoffSection,
    #[serde(default)]
    pub point: PointSection,
    #[serde(default)]
    pub numeric: NumericSection,
}

fn default_id() -> String {
    "scenario".into()
}

/// A parsed configuration together with its source text for error lines.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ScenarioConfig,
    pub source: PathBuf,
    text: String,
    overrides: Vec<String>,
}

/// Parses `--set` right-hand sides as TOML values, falling back to strings.
fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set {assignment}: expected key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!(
            "--set {assignment}: empty key segment"
        )));
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry.as_table_mut().ok_or_else(|| {
            CliError::Config(format!("--set {assignment}: `{part}` is not a section"))
        })?;
    }
    node.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl LoadedConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let at = |e: toml::de::Error| CliError::Config(format!("{}: {e}", path.display()));
        let config: ScenarioConfig = if overrides.is_empty() {
            toml::from_str(&text).map_err(at)?
        } else {
            let mut table: toml::Table = text.parse().map_err(at)?;
            for o in overrides {
                apply_override(&mut table, o)?;
            }
            toml::Value::Table(table)
                .try_into()
                .map_err(|e: toml::de::Error| {
                    CliError::Config(format!("{} with --set overrides: {e}", path.display()))
                })?
        };
        let loaded = Self {
            config,
            source: path.to_path_buf(),
            text,
            overrides: overrides.to_vec(),
        };
        loaded.scenario()?;
        Ok(loaded)
    }

    /// Line of the first `key = …` assignment, 1-based.
    fn line_of(&self, key: &str) -> Option<usize> {
        self.text
            .lines()
            .position(|l| {
                l.trim_start()
                    .strip_prefix(key)
                    .is_some_and(|rest| rest.trim_start().starts_with('='))
            })
            .map(|i| i + 1)
    }

    /// Turns a library error into a config error pointing at the offending line.
    pub fn attribute(&self, err: losshedge::Error) -> CliError {
        let losshedge::Error::InvalidParameter { name, reason } = &err else {
            return CliError::Run(err);
        };
        let field = name.rsplit(['.', '/']).next().unwrap_or(name);
        let key = match field {
            "horizon" => "T",
            "p" => "p0",
            "n_s" => "fd_nodes",
            "n_t" => "fd_steps",
            "width_sd" => "fd_width_sd",
            other => other,
        };
        let from_set = self.overrides.iter().rev().find(|o| {
            o.split_once('=')
                .is_some_and(|(k, _)| k.trim().rsplit('.').next() == Some(key))
        });
        let place = match (from_set, self.line_of(key)) {
            (Some(o), _) => format!("--set {o}"),
            (None, Some(line)) => format!("{}:{line}", self.source.display()),
            (None, None) => self.source.display().to_string(),
        };
        CliError::Config(format!("{place}: `{name}`: {reason}"))
    }

    fn payoff(&self) -> losshedge::Result<Payoff> {
        Ok(match &self.config.payoff {
            PayoffSection::Zero => Payoff::zero(),
            PayoffSection::Put { strike } => Payoff::put(*strike)?,
            PayoffSection::CallSpread { k1, k2 } => Payoff::call_spread(*k1, *k2)?,
            PayoffSection::Digital { strike } => Payoff::digital(*strike)?,
            PayoffSection::Tabulated {
                spots,
                values,
                nodes,
            } => {
                let p = Payoff::tabulated(TabulatedPayoff::new(spots.clone(), values.clone())?);
                match nodes {
                    Some(n) => p.with_quadrature_nodes(*n),
                    None => p,
                }
            }
        })
    }

    fn stop(&self) -> Result<StopLevel, CliError> {
        match &self.config.numeric.stop {
            StopSetting::Named(s) if s == "auto" => Ok(StopLevel::Auto),
            StopSetting::Named(s) if s == "never" => Ok(StopLevel::Never),
            StopSetting::Level(k) => Ok(StopLevel::Fixed(*k)),
            StopSetting::Named(other) => {
                let place = self
                    .line_of("stop")
                    .map(|l| format!(":{l}"))
                    .unwrap_or_default();
                Err(CliError::Config(format!(
                    "{}{place}: `stop`: expected \"auto\", \"never\" or a number, got \"{other}\"",
                    self.source.display()
                )))
            }
        }
    }

    fn build_scenario(&self) -> Result<Scenario, CliError> {
        let c = &self.config;
        let n = &c.numeric;
        let market = MarketParams::new(c.market.lambda, c.market.sigma, c.market.horizon)
            .map_err(|e| self.attribute(e))?;
        let payoff = self.payoff().map_err(|e| self.attribute(e))?;
        let mut sc = Scenario::new(&c.id, market, c.model, payoff);
        sc.t0 = c.point.t0;
        sc.s0 = c.point.s0;
        sc.p0 = c.point.p0;
        sc.x0 = c.point.x0;
        if let Some(rule) = n.capital_rule {
            sc.capital_rule = rule;
        }
        sc.cushion = n.cushion;
        sc.stop = self.stop()?;
        sc.delta_min = n.delta_min;
        sc.threshold_vol = n.threshold_vol;
        sc.convention = n.h_constant_convention.active();
        sc.n_paths = n.n_paths;
        sc.path_scaling = match n.eps_ref {
            Some(eps_ref) => PathScaling::InverseSquare { eps_ref },
            None => PathScaling::Fixed,
        };
        sc.n_steps = n.n_steps;
        sc.seed = n.seed;
        sc.fd = FdGrid {
            n_s: n.fd_nodes,
            n_t: n.fd_steps,
            width_sd: n.fd_width_sd,
            ..FdGrid::default()
        };
        sc.bisection_factor = n.bisection_factor;
        sc.zero_cost_control = n.zero_cost_control;
        Ok(sc)
    }

    /// The validated experiment scenario.
    pub fn scenario(&self) -> Result<Scenario, CliError> {
        let sc = self.build_scenario()?;
        sc.validate().map_err(|e| self.attribute(e))?;
        for &e in &self.eps_values() {
            losshedge::hedge_sim::Epsilon::new(e).map_err(|e| self.attribute(e))?;
        }
        Ok(sc)
    }

    /// `eps_list` if present, otherwise the single `eps`.
    pub fn eps_values(&self) -> Vec<f64> {
        let n = &self.config.numeric;
        match (&n.eps_list, n.eps) {
            (Some(list), _) => list.clone(),
            (None, Some(e)) => vec![e],
            (None, None) => Vec::new(),
        }
    }

    /// Like [`Self::eps_values`] but requires at least one value.
    pub fn require_eps(&self) -> Result<Vec<f64>, CliError> {
        let v = self.eps_values();
        if v.is_empty() {
            return Err(CliError::Config(format!(
                "{}: `numeric.eps` or `numeric.eps_list` is required",
                self.source.display()
            )));
        }
        Ok(v)
    }
}

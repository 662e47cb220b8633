//! Scenario files: TOML or JSON, chosen by extension.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use chemostat_core::analysis::{linear_grid, log_grid, SweptParameter};
use chemostat_core::model::{nondimensionalize, Configuration, GrowthLaw, PhysicalScenario};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Growth laws to evaluate; the unit linear law when absent.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub growth: Vec<GrowthLaw>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimensionless: Option<DimensionlessBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub physical: Option<PhysicalScenario>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigKind {
    Single,
    Serial,
    Parallel,
    DeadZone,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionlessBlock {
    pub config: ConfigKind,
    pub s_in: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    #[default]
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default)]
    pub grid: GridKind,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl GridSpec {
    pub fn points(&self, key: &str) -> Result<Vec<f64>> {
        if self.count == 0 {
            bail!("`{key}.count` must be at least 1");
        }
        if !(self.min.is_finite() && self.max.is_finite() && self.min <= self.max) {
            bail!("`{key}.min`/`{key}.max` must be finite with min <= max");
        }
        Ok(match self.grid {
            GridKind::Linear => linear_grid(self.min, self.max, self.count),
            GridKind::Log => {
                if !(self.min > 0.0) {
                    bail!("`{key}.min` must be positive for a log grid");
                }
                log_grid(self.min, self.max, self.count)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: SweptParameter,
    #[serde(default)]
    pub grid: GridKind,
    pub min: f64,
    pub max: f64,
    pub count: usize,
    /// Dimensionless input levels, one curve each; the scenario's own
    /// `s_in` when absent.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub s_in: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abs_tol: Option<f64>,
}

fn default_t_end() -> f64 {
    50.0
}

fn default_samples() -> usize {
    201
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSpec {
    #[serde(default = "default_r_grid")]
    pub r: GridSpec,
    #[serde(default = "default_alpha_grid")]
    pub alpha: GridSpec,
    #[serde(default = "default_d_grid")]
    pub d: GridSpec,
}

impl Default for CompareSpec {
    fn default() -> Self {
        CompareSpec {
            r: default_r_grid(),
            alpha: default_alpha_grid(),
            d: default_d_grid(),
        }
    }
}

fn default_r_grid() -> GridSpec {
    GridSpec {
        grid: GridKind::Linear,
        min: 0.05,
        max: 0.95,
        count: 19,
    }
}

fn default_alpha_grid() -> GridSpec {
    GridSpec {
        grid: GridKind::Linear,
        min: 0.0,
        max: 1.0,
        count: 21,
    }
}

fn default_d_grid() -> GridSpec {
    GridSpec {
        grid: GridKind::Log,
        min: 1e-3,
        max: 1e3,
        count: 31,
    }
}

/// A scenario reduced to dimensionless quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub config: Configuration,
    pub s_in: f64,
    pub laws: Vec<GrowthLaw>,
}

pub fn load(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read scenario {}", path.display()))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let scenario: Scenario = if is_json {
        serde_json::from_str(&text).map_err(|e| anyhow!("{}: {e}", path.display()))?
    } else {
        toml::from_str(&text).map_err(|e| anyhow!("{}: {e}", path.display()))?
    };
    Ok(scenario)
}

fn required(value: Option<f64>, key: &str, kind: &str) -> Result<f64> {
    value.ok_or_else(|| anyhow!("`dimensionless.{key}` is required for a {kind} configuration"))
}

impl Scenario {
    pub fn laws(&self) -> Vec<GrowthLaw> {
        if self.growth.is_empty() {
            vec![GrowthLaw::UNIT_LINEAR]
        } else {
            self.growth.clone()
        }
    }

    pub fn problem(&self) -> Result<Problem> {
        let laws = self.laws();
        for (i, law) in laws.iter().enumerate() {
            law.validate().with_context(|| format!("`growth[{i}]`"))?;
        }
        match (&self.dimensionless, &self.physical) {
            (Some(_), Some(_)) => bail!("scenario has both `dimensionless` and `physical` blocks; keep exactly one"),
            (None, None) => bail!("scenario needs a `dimensionless` or a `physical` block"),
            (Some(b), None) => {
                let config = match b.config {
                    ConfigKind::Single => Ok(Configuration::SingleTank),
                    ConfigKind::Serial => Configuration::serial(required(b.r, "r", "serial")?),
                    ConfigKind::Parallel => Configuration::parallel(
                        required(b.r, "r", "parallel")?,
                        required(b.alpha, "alpha", "parallel")?,
                        required(b.d, "d", "parallel")?,
                    ),
                    ConfigKind::DeadZone => Configuration::dead_zone(
                        required(b.r, "r", "dead_zone")?,
                        required(b.d, "d", "dead_zone")?,
                    ),
                }
                .context("`dimensionless`")?;
                if !(b.s_in >= 0.0 && b.s_in.is_finite()) {
                    bail!("`dimensionless.s_in` must be finite and nonnegative, got {}", b.s_in);
                }
                Ok(Problem {
                    config,
                    s_in: b.s_in,
                    laws,
                })
            }
            (None, Some(phys)) => {
                let scaled = laws
                    .iter()
                    .map(|law| nondimensionalize(phys, law).context("`physical`"))
                    .collect::<Result<Vec<_>>>()?;
                let first = scaled[0];
                if scaled.iter().any(|s| s.config != first.config || s.s_in != first.s_in) {
                    bail!("`physical.concentration_slope` is required when growth laws scale differently");
                }
                Ok(Problem {
                    config: first.config,
                    s_in: first.s_in,
                    laws: scaled.into_iter().map(|s| s.law).collect(),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Scenario> {
        Ok(toml::from_str(text)?)
    }

    #[test]
    fn minimal_dimensionless() {
        let s = parse("[dimensionless]\nconfig = \"serial\"\nr = 0.5\ns_in = 4.0\n").unwrap();
        let p = s.problem().unwrap();
        assert_eq!(p.config, Configuration::serial(0.5).unwrap());
        assert_eq!(p.laws, vec![GrowthLaw::UNIT_LINEAR]);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse("[dimensionless]\nconfig = \"single\"\ns_in = 2.0\nbeta = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("beta"), "{err}");
    }

    #[test]
    fn both_blocks_rejected() {
        let s = parse(
            "[dimensionless]\nconfig = \"single\"\ns_in = 2.0\n\
             [physical]\nlayout = \"single\"\nq = 1.0\nv = 1.0\ns_in = 2.0\n",
        )
        .unwrap();
        assert!(s.problem().unwrap_err().to_string().contains("exactly one"));
    }

    #[test]
    fn missing_parameter_is_named() {
        let s = parse("[dimensionless]\nconfig = \"parallel\"\nr = 0.9\nd = 1.0\ns_in = 2.0\n").unwrap();
        assert!(s.problem().unwrap_err().to_string().contains("dimensionless.alpha"));
    }

    #[test]
    fn physical_block_is_scaled() {
        let s = parse(
            "[[growth]]\nkind = \"linear\"\nm = 2.0\n\
             [physical]\nlayout = \"serial\"\nq = 2.0\nv = 4.0\nv1 = 1.0\ns_in = 3.0\n",
        )
        .unwrap();
        let p = s.problem().unwrap();
        assert_eq!(p.config, Configuration::serial(0.25).unwrap());
        assert_eq!(p.s_in, 12.0);
        assert_eq!(p.laws, vec![GrowthLaw::UNIT_LINEAR]);
    }
}

//! Run configuration: one TOML file with a section per concern.

use std::collections::BTreeMap;
use std::path::PathBuf;

use filippov_core::classify::{CatalogOptions, ChaosOptions, RegularOptions, SphereOptions};
use filippov_core::exact::ExactReal;
use filippov_core::field::{PiecewiseField, TrigField};
use filippov_core::flow::{Direction, IntegrationOptions};
use filippov_core::manifold::ManifoldModel;
use filippov_core::maps::MapOptions;
use filippov_core::scenarios::{by_name, Scenario};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Number(f64),
    /// Exact value such as `"1/3"` or `"sqrt(2)"`.
    Exact(String),
}

impl ParamValue {
    pub fn exact(&self) -> Result<ExactReal, CliError> {
        match self {
            ParamValue::Exact(s) => s.parse().map_err(|e| CliError::Config(format!("{s:?}: {e}"))),
            ParamValue::Number(v) => {
                // integers are exact; other floats are refused by the exact test
                if v.fract() == 0.0 && v.abs() < 1e15 {
                    Ok(ExactReal::int(*v as i128))
                } else {
                    Err(CliError::Config(format!(
                        "{v} is a float; give exact values as strings like \"1/3\" or \"sqrt(2)\""
                    )))
                }
            }
        }
    }

    pub fn value(&self) -> Result<f64, CliError> {
        match self {
            ParamValue::Number(v) => Ok(*v),
            ParamValue::Exact(_) => Ok(self.exact()?.to_f64()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineField {
    pub plus: TrigField,
    pub minus: TrigField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Catalog name, or `inline` together with `field`.
    pub name: String,
    pub model: Option<ManifoldModel>,
    pub params: BTreeMap<String, ParamValue>,
    pub field: Option<InlineField>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "chaotic-torus".into(),
            model: None,
            params: BTreeMap::new(),
            field: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub x0: f64,
    pub y0: f64,
    pub direction: Direction,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            x0: 0.1,
            y0: 0.25,
            direction: Direction::Forward,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampledConfig {
    pub samples: usize,
}

impl Default for SampledConfig {
    fn default() -> Self {
        SampledConfig { samples: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAnalysis {
    /// Region labels on every switching circle plus structural flags.
    Decomposition,
    /// The verdict of `classify`.
    Classify,
    /// Side of the nearest fold-orbit miss (`above`/`below`/`hit`).
    FoldConnection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRange {
    pub param: String,
    pub start: f64,
    pub end: f64,
    /// Number of grid points; 0 gives an empty table.
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub analysis: SweepAnalysis,
    pub ranges: Vec<SweepRange>,
    /// Bisection width for transition refinement along the first range.
    pub refine_tol: f64,
    /// Worker threads; 0 uses all cores.
    pub workers: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            analysis: SweepAnalysis::Decomposition,
            ranges: Vec::new(),
            refine_tol: 1e-6,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: "filippov-out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub scenario: ScenarioConfig,
    pub integration: IntegrationOptions,
    pub simulate: SimulateConfig,
    pub regular: RegularOptions,
    pub maps: MapOptions,
    pub catalog: CatalogOptions,
    pub chaos: ChaosOptions,
    pub chaos_samples: SampledConfig,
    pub sphere: SphereOptions,
    pub sphere_samples: SampledConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            scenario: ScenarioConfig::default(),
            integration: IntegrationOptions::default(),
            simulate: SimulateConfig::default(),
            regular: RegularOptions::default(),
            maps: MapOptions::default(),
            catalog: CatalogOptions::default(),
            chaos: ChaosOptions::default(),
            chaos_samples: SampledConfig { samples: 200 },
            sphere: SphereOptions::default(),
            sphere_samples: SampledConfig { samples: 200 },
            sweep: SweepConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Push the top-level seed into every seeded section.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.regular.seed = seed;
        self.catalog.seed = seed;
        self.chaos.seed = seed;
        self.sphere.seed = seed;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.integration.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let s = &self.sweep;
        if s.ranges.len() > 2 {
            return Err(CliError::Config("sweeps take one or two ranges".into()));
        }
        if !(s.refine_tol > 0.0) {
            return Err(CliError::Config("sweep.refine_tol must be positive".into()));
        }
        for r in &s.ranges {
            if !r.start.is_finite() || !r.end.is_finite() {
                return Err(CliError::Config(format!("range for {} is not finite", r.param)));
            }
        }
        if self.scenario.name == "inline" && self.scenario.field.is_none() {
            return Err(CliError::Config("scenario \"inline\" needs [scenario.field]".into()));
        }
        self.scenario()?;
        Ok(())
    }

    pub fn scenario(&self) -> Result<Scenario, CliError> {
        self.scenario_with(&BTreeMap::new())
    }

    /// Build the scenario with some parameters overridden.
    pub fn scenario_with(&self, overrides: &BTreeMap<String, f64>) -> Result<Scenario, CliError> {
        let sc = &self.scenario;
        if let Some(f) = &sc.field {
            if sc.name != "inline" {
                return Err(CliError::Config("[scenario.field] needs name = \"inline\"".into()));
            }
            let field = PiecewiseField::new(f.plus.clone(), f.minus.clone(), sc.model.unwrap_or(ManifoldModel::Torus));
            return Ok(Scenario {
                name: "inline".into(),
                params: BTreeMap::new(),
                field,
                flags: Vec::new(),
                expected: None,
            });
        }
        let mut params = BTreeMap::new();
        for (k, v) in &sc.params {
            params.insert(k.clone(), v.value()?);
        }
        params.extend(overrides.iter().map(|(k, v)| (k.clone(), *v)));
        by_name(&sc.name, &params, sc.model).map_err(|e| CliError::Config(e.to_string()))
    }
}

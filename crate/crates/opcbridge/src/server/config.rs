//! Server configuration: TOML schema documented in `docs/server-config.md`.

use serde::Deserialize;

use crate::model::ScalarValue;
use crate::protocol::is_wire_name;

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "default_port")]
    pub listen_port: u16,
    /// Fixed start time for deterministic runs; wall clock otherwise.
    pub start_time_ms: Option<u64>,
    #[serde(default, rename = "item")]
    pub items: Vec<ItemSpec>,
}

fn default_port() -> u16 {
    crate::DEFAULT_OPC_PORT
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ItemSpec {
    pub name: String,
    /// The item's cache sampling period in milliseconds.
    pub sampling_period_ms: u64,
    #[serde(default)]
    pub writable: bool,
    pub generator: GeneratorSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(
    tag = "kind",
    rename_all = "kebab-case",
    rename_all_fields = "kebab-case",
    deny_unknown_fields
)]
pub enum GeneratorSpec {
    /// Fixed value, timestamp refreshed every sampling tick.
    Constant { value: ScalarValue },
    /// Walks through `values` one per tick; clamps at the end or cycles.
    Steps {
        values: Vec<ScalarValue>,
        #[serde(default)]
        cycle: bool,
    },
    /// `offset + amplitude * sin(2π t / period-ms)`.
    Sine {
        amplitude: f64,
        period_ms: u64,
        offset: f64,
    },
    /// Seeded LCG-driven walk; see `docs/server-config.md` for the exact
    /// recurrence.
    RandomWalk { seed: u64, step: f64, start: f64 },
    /// Never generator-updated; the value changes only via WRITE.
    External,
}

impl ServerConfig {
    pub fn from_toml(text: &str) -> Result<ServerConfig, String> {
        let cfg: ServerConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut seen = std::collections::HashSet::new();
        for item in &self.items {
            if !is_wire_name(&item.name) {
                return Err(format!("item name `{}` is not a valid name", item.name));
            }
            if !seen.insert(item.name.as_str()) {
                return Err(format!("duplicate item name `{}`", item.name));
            }
            if item.sampling_period_ms < 1 {
                return Err(format!("item `{}`: sampling-period-ms must be >= 1", item.name));
            }
            match &item.generator {
                GeneratorSpec::Steps { values, .. } if values.is_empty() => {
                    return Err(format!("item `{}`: steps generator needs values", item.name));
                }
                GeneratorSpec::Sine { period_ms, amplitude, offset } => {
                    if *period_ms < 2 * item.sampling_period_ms {
                        return Err(format!(
                            "item `{}`: sine period-ms must be >= 2x sampling-period-ms",
                            item.name
                        ));
                    }
                    if !amplitude.is_finite() || !offset.is_finite() {
                        return Err(format!("item `{}`: sine parameters must be finite", item.name));
                    }
                }
                GeneratorSpec::RandomWalk { step, start, .. }
                    if (!step.is_finite() || !start.is_finite()) => {
                        return Err(format!(
                            "item `{}`: random-walk parameters must be finite",
                            item.name
                        ));
                    }
                _ => {}
            }
        }
        Ok(())
    }
}

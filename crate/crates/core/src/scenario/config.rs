//! Scenario file schema and validation.

use crate::endpoints::OperatorScript;
use crate::mitm::AdversaryConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const SCENARIO_SCHEMA: &str = "sublab-scenario/1";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    ConfigInvalid(Vec<String>),
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("simulation error: {0}")]
    Net(#[from] crate::netsim::NetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetParams {
    pub lan_latency_ms: f64,
    pub wan_latency_ms: f64,
    pub rto_ms: f64,
    pub repoison_ms: f64,
    pub arp_timeout_ms: f64,
}

impl Default for NetParams {
    fn default() -> Self {
        Self {
            lan_latency_ms: 1.0,
            wan_latency_ms: 1.0,
            rto_ms: 7_000.0,
            repoison_ms: 2_000.0,
            arp_timeout_ms: 1_000.0,
        }
    }
}

/// Point-table sizes per outstation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointParams {
    pub bi: usize,
    pub bo: usize,
    pub ai: usize,
    pub ao: usize,
}

impl Default for EndpointParams {
    fn default() -> Self {
        Self { bi: 10, bo: 10, ai: 5, ao: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdsParams {
    /// "auto" whitelists the router and every outstation; explicit entries
    /// may be listed instead.
    pub whitelist: String,
    pub entries: Vec<crate::ids::WhitelistEntry>,
    pub dnp3_port: u16,
}

impl Default for IdsParams {
    fn default() -> Self {
        Self { whitelist: "auto".to_string(), entries: Vec::new(), dnp3_port: 20000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default = "default_schema")]
    pub schema: String,
    pub name: String,
    pub seed: u64,
    /// 0 = baseline (no adversary), 1–4 = the attack use cases.
    pub use_case: u8,
    pub outstations: u16,
    pub polling_interval_s: f64,
    pub run_duration_s: f64,
    #[serde(default)]
    pub attack_start_s: f64,
    #[serde(default)]
    pub attack_stop_s: f64,
    #[serde(default)]
    pub net: NetParams,
    #[serde(default)]
    pub points: EndpointParams,
    #[serde(default)]
    pub ids: IdsParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversary: Option<AdversaryConfig>,
    #[serde(default)]
    pub operator: OperatorScript,
    /// Optional standalone operator script file; its rules are appended to
    /// the inline ones. Relative paths resolve against the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator_file: Option<std::path::PathBuf>,
}

fn default_schema() -> String {
    SCENARIO_SCHEMA.to_string()
}

impl ScenarioConfig {
    pub fn from_file(path: &Path, overrides: &[(String, String)]) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        let mut value: toml::Value =
            toml::from_str(&text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        for (key, raw) in overrides {
            apply_override(&mut value, key, raw)
                .map_err(|e| ScenarioError::ConfigInvalid(vec![e]))?;
        }
        let mut cfg: Self =
            value.try_into().map_err(|e: toml::de::Error| ScenarioError::Parse(e.to_string()))?;
        if let Some(script_path) = cfg.operator_file.take() {
            let resolved = if script_path.is_relative() {
                path.parent().unwrap_or(Path::new(".")).join(&script_path)
            } else {
                script_path
            };
            let text = std::fs::read_to_string(&resolved)?;
            let script: OperatorScript =
                toml::from_str(&text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
            cfg.operator.rules.extend(script.rules);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut errors = Vec::new();
        if self.schema != SCENARIO_SCHEMA {
            errors.push(format!(
                "schema: expected {SCENARIO_SCHEMA:?}, found {:?}",
                self.schema
            ));
        }
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '-') {
            errors.push(format!(
                "name: {:?} must be non-empty and filesystem-safe (alphanumeric, '_', '-')",
                self.name
            ));
        }
        if self.use_case > 4 {
            errors.push(format!("use_case: {} is not in 0..=4", self.use_case));
        }
        if self.outstations == 0 {
            errors.push("outstations: must be at least 1".to_string());
        }
        if self.outstations > 50 {
            errors.push(format!("outstations: {} exceeds the supported 50", self.outstations));
        }
        if self.polling_interval_s <= 0.0 {
            errors.push("polling_interval_s: must be positive".to_string());
        }
        if self.run_duration_s <= 0.0 {
            errors.push("run_duration_s: must be positive".to_string());
        }
        if self.use_case == 0 {
            if self.adversary.is_some() {
                errors.push("adversary: a baseline scenario (use_case = 0) forbids an adversary block".to_string());
            }
        } else {
            if self.attack_stop_s <= self.attack_start_s {
                errors.push(format!(
                    "attack window: attack_stop_s ({}) must be after attack_start_s ({})",
                    self.attack_stop_s, self.attack_start_s
                ));
            }
            if self.attack_start_s < 0.0 || self.attack_stop_s > self.run_duration_s {
                errors.push(format!(
                    "attack window: [{}, {}] must lie within the run [0, {}]",
                    self.attack_start_s, self.attack_stop_s, self.run_duration_s
                ));
            }
            if let Some(adv) = &self.adversary {
                if adv.use_case != self.use_case {
                    errors.push(format!(
                        "adversary.use_case: {} does not match scenario use_case {}",
                        adv.use_case, self.use_case
                    ));
                }
                if adv.sniff_stride == 0 {
                    errors.push("adversary.sniff_stride: must be at least 1".to_string());
                }
                if !(0.0..1.0).contains(&adv.delay.jitter_frac) {
                    errors.push(format!(
                        "adversary.delay.jitter_frac: {} is not in [0, 1)",
                        adv.delay.jitter_frac
                    ));
                }
            } else {
                errors.push("adversary: required when use_case > 0".to_string());
            }
        }
        if self.points.bi == 0 && self.points.ai == 0 && self.points.bo == 0 && self.points.ao == 0 {
            errors.push("points: at least one point table must be non-empty".to_string());
        }
        for (i, rule) in self.operator.rules.iter().enumerate() {
            let os = rule.action.outstation();
            if os == 0 || os > self.outstations {
                errors.push(format!(
                    "operator.rules[{i}]: outstation {os} is not in 1..={}",
                    self.outstations
                ));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::ConfigInvalid(errors))
        }
    }

    /// Canonical scenario for one sweep cell, named like `UC1_10OS_30`.
    pub fn cell(use_case: u8, outstations: u16, polling_interval_s: u64, seed: u64) -> Self {
        use crate::endpoints::{BinaryControl, CommandAction, OperatorRule, Trigger};
        let attack_start_s = 120.0;
        let attack_stop_s = 360.0;
        let mut operator = OperatorScript::default();
        let mut adversary = None;
        if use_case > 0 {
            let mut adv = AdversaryConfig { use_case, ..AdversaryConfig::default() };
            match use_case {
                1 => {
                    // close commands to every outstation, per polling cycle
                    for os in 1..=outstations {
                        operator.rules.push(OperatorRule {
                            trigger: Trigger::Every {
                                start_s: attack_start_s + 5.0,
                                period_s: polling_interval_s as f64,
                                until_s: Some(attack_stop_s - 20.0),
                            },
                            action: CommandAction::Binary {
                                outstation: os,
                                index: 7,
                                control: BinaryControl::Close,
                            },
                            repeat: true,
                        });
                    }
                }
                2 => {
                    for os in 1..=outstations {
                        operator.rules.push(OperatorRule {
                            trigger: Trigger::Every {
                                start_s: attack_start_s + 5.0,
                                period_s: polling_interval_s as f64,
                                until_s: Some(attack_stop_s - 20.0),
                            },
                            action: CommandAction::Analog { outstation: os, index: 0, value: 480.0 },
                            repeat: true,
                        });
                    }
                }
                3 | 4 => {
                    // forge every outstation's first analog input low; the
                    // operator restores the setpoint whenever a snapshot
                    // shows it collapsed
                    for os in 1..=outstations {
                        adv.mod_points.push(crate::mitm::ModPoint {
                            outstation: os,
                            point_type: crate::dnp3::PointType::Ai,
                            index: 0,
                            value: 20.0,
                        });
                        operator.rules.push(OperatorRule {
                            trigger: Trigger::SnapshotAiBelow { outstation: os, index: 0, threshold: 100.0 },
                            action: CommandAction::Analog { outstation: os, index: 0, value: 480.0 },
                            repeat: true,
                        });
                    }
                }
                _ => {}
            }
            adversary = Some(adv);
        }
        Self {
            schema: SCENARIO_SCHEMA.to_string(),
            name: format!("UC{use_case}_{outstations}OS_{polling_interval_s}"),
            seed,
            use_case,
            outstations,
            polling_interval_s: polling_interval_s as f64,
            run_duration_s: 420.0,
            attack_start_s: if use_case > 0 { attack_start_s } else { 0.0 },
            attack_stop_s: if use_case > 0 { attack_stop_s } else { 0.0 },
            net: NetParams::default(),
            points: EndpointParams::default(),
            ids: IdsParams::default(),
            adversary,
            operator,
            operator_file: None,
        }
    }

    /// Baseline cell (no adversary).
    pub fn baseline(outstations: u16, polling_interval_s: u64, seed: u64) -> Self {
        let mut cfg = Self::cell(0, outstations, polling_interval_s, seed);
        cfg.name = format!("UC0_{outstations}OS_{polling_interval_s}");
        cfg
    }
}

/// Applies a `--override key=value` pair to a parsed TOML tree. Keys are
/// dotted paths; values parse as TOML scalars with a string fallback.
pub fn apply_override(root: &mut toml::Value, key: &str, raw: &str) -> Result<(), String> {
    let parsed: toml::Value = match raw.parse::<i64>() {
        Ok(v) => toml::Value::Integer(v),
        Err(_) => match raw.parse::<f64>() {
            Ok(v) => toml::Value::Float(v),
            Err(_) => match raw {
                "true" => toml::Value::Boolean(true),
                "false" => toml::Value::Boolean(false),
                _ => toml::Value::String(raw.to_string()),
            },
        },
    };
    let mut cursor = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = cursor
            .as_table_mut()
            .ok_or_else(|| format!("override {key}: {part:?} is not a table"))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        cursor = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    Err(format!("override {key}: empty key"))
}

//! Flat key-value experiment configuration with strict schemas.
//!
//! Format: one `key = value` per line, `#` comments, dotted section
//! prefixes. Every experiment declares its full key set with defaults;
//! unknown keys are rejected so typos cannot silently fall back to a
//! default. Serialization is canonical (sorted keys), which makes the
//! config digest stable and the parse/serialize round trip an identity.

use super::ExperimentError;
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    KernelPsd,
    KernelNormal,
    LinearFlow,
    LinearFqi,
    GridOffline,
    GridOnline,
    GridPenalty,
    GridAblations,
}

pub const ALL_EXPERIMENTS: [ExperimentKind; 8] = [
    ExperimentKind::KernelPsd,
    ExperimentKind::KernelNormal,
    ExperimentKind::LinearFlow,
    ExperimentKind::LinearFqi,
    ExperimentKind::GridOffline,
    ExperimentKind::GridOnline,
    ExperimentKind::GridPenalty,
    ExperimentKind::GridAblations,
];

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::KernelPsd => "kernel-psd",
            ExperimentKind::KernelNormal => "kernel-normal",
            ExperimentKind::LinearFlow => "linear-flow",
            ExperimentKind::LinearFqi => "linear-fqi",
            ExperimentKind::GridOffline => "grid-offline",
            ExperimentKind::GridOnline => "grid-online",
            ExperimentKind::GridPenalty => "grid-penalty",
            ExperimentKind::GridAblations => "grid-ablations",
        }
    }

    pub fn parse(name: &str) -> Result<Self, ExperimentError> {
        ALL_EXPERIMENTS
            .iter()
            .copied()
            .find(|k| k.as_str() == name)
            .ok_or_else(|| ExperimentError::Config(format!("unknown experiment '{name}'")))
    }

    /// Full parameter schema: every valid key with its default value.
    pub fn schema(&self) -> Vec<(&'static str, &'static str)> {
        const GRID_BASE: &[(&str, &str)] = &[
            ("grid.side", "16"),
            ("grid.wall_prob", "0.2"),
            ("grid.discount", "0.95"),
            ("grid.goal", "255"),
            ("grid.feature_dim", "64"),
            ("grid.smoothing_radius", "1"),
            ("grid.seed", "7"),
            ("data.size", "10000"),
            ("data.behavior", "uniform"),
            ("data.epsilon", "0.1"),
            ("train.hidden_width", "64"),
            ("train.fitting_iterations", "40"),
            ("train.grad_steps_per_iteration", "200"),
            ("train.batch_size", "128"),
            ("train.learning_rate", "0.001"),
            ("train.backup", "soft"),
            ("train.tau", "0.1"),
            ("train.penalty_alpha", "0"),
            ("train.reinit", "false"),
            ("train.srank_batch", "2048"),
            ("train.srank_delta", "0.01"),
            ("train.trace_stride", "200"),
        ];
        let mut keys: Vec<(&str, &str)> = match self {
            ExperimentKind::KernelPsd => {
                vec![("dim", "48"), ("radius", "0.95"), ("iterations", "50")]
            }
            ExperimentKind::KernelNormal => vec![
                ("blocks", "0.9:1/4,0.8:1/3,0.55:1/2,0.35:0/1"),
                ("count", "6"),
            ],
            ExperimentKind::LinearFlow => vec![
                ("dims", "8,8,8,1"),
                ("sigma", "1.0,0.8,0.6,0.45,0.3,0.2,0.12,0.06"),
                ("step", "0.001"),
                ("steps", "4000"),
                ("trace_stride", "40"),
                ("srank_delta", "0.01"),
            ],
            ExperimentKind::LinearFqi => vec![
                ("dims", "8,8,8,1"),
                ("sigma", "1.0,0.8,0.6,0.45,0.3,0.2,0.12,0.06"),
                ("step", "0.001"),
                ("steps_per_iteration", "100"),
                ("fitting_iterations", "60"),
                ("discount", "0.95"),
                ("trace_stride", "100"),
                ("srank_delta", "0.01"),
            ],
            ExperimentKind::GridOffline => GRID_BASE.to_vec(),
            ExperimentKind::GridPenalty => {
                let mut v = GRID_BASE.to_vec();
                for entry in v.iter_mut() {
                    if entry.0 == "train.penalty_alpha" {
                        entry.1 = "0.001";
                    }
                }
                v
            }
            ExperimentKind::GridAblations => {
                let mut v = GRID_BASE.to_vec();
                v.extend_from_slice(&[
                    ("mode", "supervised"),
                    ("mc.horizon", "280"),
                    ("mc.rollouts", "5"),
                    ("eval.epsilon", "0.3"),
                ]);
                v
            }
            ExperimentKind::GridOnline => {
                let mut v: Vec<(&str, &str)> =
                    GRID_BASE.iter().copied().filter(|(k, _)| !k.starts_with("data.")).collect();
                v.extend_from_slice(&[
                    ("online.env_steps_per_iteration", "100"),
                    ("online.grad_steps_per_env_step", "1"),
                    ("online.buffer_capacity", "10000"),
                    ("online.epsilon", "0.1"),
                ]);
                v
            }
        };
        keys.sort_by_key(|(k, _)| *k);
        keys
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Fully resolved experiment configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seeds: Vec<u64>,
    /// All schema keys, defaults overlaid with explicit settings.
    pub params: BTreeMap<String, String>,
}

impl ExperimentConfig {
    /// Parse configuration text plus `key=value` command-line overrides.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, ExperimentError> {
        let mut raw: BTreeMap<String, String> = BTreeMap::new();
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ExperimentError::Config(format!("line {}: expected 'key = value'", line_no + 1))
            })?;
            let key = key.trim().to_string();
            if raw.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(ExperimentError::Config(format!("duplicate key '{key}'")));
            }
        }
        for item in overrides {
            let (key, value) = item.split_once('=').ok_or_else(|| {
                ExperimentError::Config(format!("override '{item}': expected key=value"))
            })?;
            raw.insert(key.trim().to_string(), value.trim().to_string());
        }
        let name = raw
            .remove("experiment")
            .ok_or_else(|| ExperimentError::Config("missing required key 'experiment'".into()))?;
        let experiment = ExperimentKind::parse(&name)?;
        let seeds_raw =
            raw.remove("seeds").unwrap_or_else(|| "1,2,3,4,5".to_string());
        let seeds = parse_seed_list(&seeds_raw)?;
        let schema = experiment.schema();
        let mut params: BTreeMap<String, String> =
            schema.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        for (key, value) in raw {
            if !params.contains_key(&key) {
                return Err(ExperimentError::Config(format!(
                    "unknown key '{key}' for experiment '{experiment}'"
                )));
            }
            params.insert(key, value);
        }
        Ok(ExperimentConfig { experiment, seeds, params })
    }

    /// Canonical text form; `parse(serialize(c), &[]) == c`.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("experiment = {}\n", self.experiment));
        let seeds: Vec<String> = self.seeds.iter().map(|s| s.to_string()).collect();
        out.push_str(&format!("seeds = {}\n", seeds.join(",")));
        for (k, v) in &self.params {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// FNV-1a digest of the canonical form, as fixed-width hex.
    pub fn digest(&self) -> String {
        format!("{:016x}", fnv1a(self.serialize().as_bytes()))
    }

    pub fn get(&self, key: &str) -> Result<&str, ExperimentError> {
        self.params
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| ExperimentError::Config(format!("missing key '{key}'")))
    }

    pub fn get_f64(&self, key: &str) -> Result<f64, ExperimentError> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| ExperimentError::Config(format!("key '{key}': '{raw}' is not a number")))
    }

    pub fn get_usize(&self, key: &str) -> Result<usize, ExperimentError> {
        let raw = self.get(key)?;
        raw.parse().map_err(|_| {
            ExperimentError::Config(format!("key '{key}': '{raw}' is not a nonnegative integer"))
        })
    }

    pub fn get_u64(&self, key: &str) -> Result<u64, ExperimentError> {
        let raw = self.get(key)?;
        raw.parse().map_err(|_| {
            ExperimentError::Config(format!("key '{key}': '{raw}' is not a nonnegative integer"))
        })
    }

    pub fn get_bool(&self, key: &str) -> Result<bool, ExperimentError> {
        match self.get(key)? {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(ExperimentError::Config(format!(
                "key '{key}': '{other}' is not 'true' or 'false'"
            ))),
        }
    }

    /// Comma-separated list of numbers.
    pub fn get_f64_list(&self, key: &str) -> Result<Vec<f64>, ExperimentError> {
        self.get(key)?
            .split(',')
            .map(|tok| {
                tok.trim().parse().map_err(|_| {
                    ExperimentError::Config(format!("key '{key}': '{tok}' is not a number"))
                })
            })
            .collect()
    }

    pub fn get_usize_list(&self, key: &str) -> Result<Vec<usize>, ExperimentError> {
        self.get(key)?
            .split(',')
            .map(|tok| {
                tok.trim().parse().map_err(|_| {
                    ExperimentError::Config(format!("key '{key}': '{tok}' is not an integer"))
                })
            })
            .collect()
    }
}

fn parse_seed_list(raw: &str) -> Result<Vec<u64>, ExperimentError> {
    let seeds: Result<Vec<u64>, _> = raw.split(',').map(|tok| tok.trim().parse()).collect();
    let seeds =
        seeds.map_err(|_| ExperimentError::Config(format!("invalid seeds list '{raw}'")))?;
    if seeds.is_empty() {
        return Err(ExperimentError::Config("seeds list is empty".into()));
    }
    Ok(seeds)
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

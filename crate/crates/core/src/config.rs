//! Experiment configuration: a single JSON document, validated up front.
//!
//! Unknown keys are rejected. Errors carry the JSON path of the offending
//! field. `--override key.path=value` edits are applied to the raw document
//! before validation; the value is parsed as JSON when possible and taken as
//! a string otherwise.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::learning::{self, Dataset, LearningRateSchedule, PartitionMode};
use crate::scheduler::{StrategyConfig, StrategyKind};
use crate::straggler::DelayKind;
use crate::topology::{generate_graph, Edge, Graph, GraphKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSpec {
    Ring {
        n: usize,
    },
    Path {
        n: usize,
    },
    Complete {
        n: usize,
    },
    Random {
        n: usize,
        p: f64,
        #[serde(default)]
        seed: u64,
    },
    Explicit {
        n: usize,
        edges: Vec<[usize; 2]>,
    },
}

impl GraphSpec {
    pub fn n(&self) -> usize {
        match self {
            GraphSpec::Ring { n }
            | GraphSpec::Path { n }
            | GraphSpec::Complete { n }
            | GraphSpec::Random { n, .. }
            | GraphSpec::Explicit { n, .. } => *n,
        }
    }

    pub fn build(&self) -> Result<Graph> {
        match self {
            GraphSpec::Ring { n } => generate_graph(*n, GraphKind::Ring, 0),
            GraphSpec::Path { n } => generate_graph(*n, GraphKind::Path, 0),
            GraphSpec::Complete { n } => generate_graph(*n, GraphKind::Complete, 0),
            GraphSpec::Random { n, p, seed } => generate_graph(*n, GraphKind::Random { p: *p }, *seed),
            GraphSpec::Explicit { n, edges } => {
                if *n < 2 {
                    return Err(Error::Graph(format!("need at least 2 workers, got {n}")));
                }
                Graph::new(*n, edges.iter().map(|e| (e[0], e[1])).collect::<Vec<Edge>>())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synth {
        n_examples: usize,
        dim: usize,
        n_classes: usize,
        #[serde(default)]
        n_test: usize,
        #[serde(default)]
        seed: u64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
        #[serde(default)]
        test_images: Option<PathBuf>,
        #[serde(default)]
        test_labels: Option<PathBuf>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
}

impl DatasetSpec {
    /// Loads `(train, test)`. Relative IDX paths resolve against `base`.
    pub fn load(&self, base: Option<&Path>) -> Result<(Dataset, Option<Dataset>)> {
        let resolve = |p: &Path| match base {
            Some(b) if p.is_relative() => b.join(p),
            _ => p.to_path_buf(),
        };
        match self {
            DatasetSpec::Synth {
                n_examples,
                dim,
                n_classes,
                n_test,
                seed,
            } => learning::synth_train_test(*n_examples, *n_test, *dim, *n_classes, *seed),
            DatasetSpec::Idx {
                images,
                labels,
                limit,
                test_images,
                test_labels,
                test_limit,
            } => {
                let train = learning::load_idx(&resolve(images), &resolve(labels), *limit)?;
                let test = match (test_images, test_labels) {
                    (Some(ti), Some(tl)) => Some(learning::load_idx(&resolve(ti), &resolve(tl), *test_limit)?),
                    (None, None) => None,
                    _ => {
                        return Err(Error::Config(
                            "dataset: test_images and test_labels must be given together".into(),
                        ))
                    }
                };
                Ok((train, test))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusPhaseSpec {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_phase_iters")]
    pub max_iters: usize,
}

impl Default for ConsensusPhaseSpec {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            max_iters: default_phase_iters(),
        }
    }
}

fn default_tol() -> f64 {
    1e-6
}
fn default_phase_iters() -> usize {
    500
}
fn default_k() -> usize {
    500
}
fn default_batch() -> usize {
    32
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_replications() -> usize {
    1
}
fn default_partition() -> PartitionMode {
    PartitionMode::Iid
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Free-form notes; ignored.
    #[serde(rename = "_comment", default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<Value>,
    pub graph: GraphSpec,
    pub dataset: DatasetSpec,
    #[serde(default = "default_partition")]
    pub partition: PartitionMode,
    #[serde(default)]
    pub strategy: StrategyKind,
    /// Per-worker `p_j` for `static_p`; defaults to `ceil(|N_j| / 2)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub static_p: Option<Vec<usize>>,
    #[serde(default)]
    pub delay: DelayKind,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default)]
    pub eta: LearningRateSchedule,
    #[serde(default)]
    pub consensus_phase: ConsensusPhaseSpec,
    /// Loss level whose first crossing is reported as `K_eps`.
    #[serde(default)]
    pub epsilon_target: Option<f64>,
    /// Stop the gradient phase at the first crossing of `epsilon_target`.
    #[serde(default)]
    pub stop_at_target: bool,
    /// Workers left out of an iteration still apply their own local step.
    #[serde(default)]
    pub straggler_applies_local: bool,
    /// Connectivity window `B` for checks; defaults to the coverage path length.
    #[serde(default)]
    pub connectivity_window: Option<usize>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Directory the config was read from; relative IDX paths resolve here.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// A small synthetic setup that runs in well under a second.
    pub fn default_synthetic() -> Self {
        Self {
            comment: None,
            graph: GraphSpec::Random { n: 6, p: 0.4, seed: 7 },
            dataset: DatasetSpec::Synth {
                n_examples: 600,
                dim: 10,
                n_classes: 3,
                n_test: 200,
                seed: 1,
            },
            partition: PartitionMode::Iid,
            strategy: StrategyKind::Dtur,
            static_p: None,
            delay: DelayKind::default(),
            k: default_k(),
            batch: default_batch(),
            eta: LearningRateSchedule::default(),
            consensus_phase: ConsensusPhaseSpec::default(),
            epsilon_target: None,
            stop_at_target: false,
            straggler_applies_local: false,
            connectivity_window: None,
            output_dir: default_output_dir(),
            seed: 42,
            replications: 1,
            base_dir: None,
        }
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let cfg: Self = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." {
                Error::Config(inner.to_string())
            } else {
                Error::Config(format!("{path}: {inner}"))
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Self::from_json_str_with_overrides(text, &[])
    }

    pub fn from_json_str_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("not a JSON document: {e}")))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json_str_with_overrides(&text, overrides)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Replication seeds: `seed, seed + 1, ...`.
    pub fn replication_seeds(&self) -> Vec<u64> {
        (0..self.replications as u64).map(|r| self.seed + r).collect()
    }

    pub fn strategy_config(&self, g: &Graph) -> Result<StrategyConfig> {
        let s = match self.strategy {
            StrategyKind::Full => StrategyConfig::Full,
            StrategyKind::Dtur => StrategyConfig::Dtur,
            StrategyKind::StaticP => StrategyConfig::StaticP {
                p: self
                    .static_p
                    .clone()
                    .unwrap_or_else(|| StrategyConfig::default_static_p(g)),
            },
        };
        s.validate(g)?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, e: Error| match e {
            Error::Disconnected => Error::Config("graph: graph not connected".into()),
            other => Error::Config(format!("{name}: {other}")),
        };
        let g = self.graph.build().map_err(|e| field("graph", e))?;
        self.strategy_config(&g).map_err(|e| field("static_p", e))?;
        self.delay.validate().map_err(|e| field("delay", e))?;
        if let DelayKind::FixedHeterogeneous { means, .. } = &self.delay {
            if means.len() != g.n() {
                return Err(Error::Config(format!(
                    "delay.means: expected {} entries, got {}",
                    g.n(),
                    means.len()
                )));
            }
        }
        self.eta.validate()?;
        if self.batch == 0 {
            return Err(Error::Config("batch: must be at least 1".into()));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications: must be at least 1".into()));
        }
        if self.consensus_phase.tol.is_nan() || self.consensus_phase.tol <= 0.0 {
            return Err(Error::Config("consensus_phase.tol: must be positive".into()));
        }
        if let Some(b) = self.connectivity_window {
            if b == 0 {
                return Err(Error::Config("connectivity_window: must be at least 1".into()));
            }
        }
        if let PartitionMode::LabelSkew { s } = self.partition {
            if s == 0 {
                return Err(Error::Config("partition.s: must be at least 1".into()));
            }
        }
        if let DatasetSpec::Synth {
            n_examples,
            dim,
            n_classes,
            ..
        } = &self.dataset
        {
            if *n_classes < 2 || n_examples < n_classes || *dim == 0 {
                return Err(Error::Config(format!(
                    "dataset: need n_examples >= n_classes >= 2 and dim >= 1, got ({n_examples}, {dim}, {n_classes})"
                )));
            }
            if *n_examples < g.n() {
                return Err(Error::Config(format!(
                    "dataset.n_examples: {n_examples} examples cannot cover {} workers",
                    g.n()
                )));
            }
        }
        Ok(())
    }
}

/// Applies `a.b.c=value` to a JSON document, creating objects on the way.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override `{spec}` has an empty key")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (pos, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{part}` is not inside an object")))?;
        if pos + 1 == parts.len() {
            obj.insert((*part).to_string(), value);
            return Ok(());
        }
        node = obj
            .entry((*part).to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one part")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "graph": {"kind": "ring", "n": 4},
        "dataset": {"kind": "synth", "n_examples": 40, "dim": 2, "n_classes": 2},
        "strategy": "dtur"
    }"#;

    #[test]
    fn defaults_are_filled() {
        let cfg = ExperimentConfig::from_json_str(MINIMAL).unwrap();
        assert_eq!(cfg.k, 500);
        assert_eq!(cfg.batch, 32);
        assert_eq!(cfg.eta.eta0, 0.2);
        assert_eq!(cfg.eta.delta, 0.95);
        assert_eq!(cfg.replications, 1);
        assert_eq!(cfg.consensus_phase.tol, 1e-6);
    }

    #[test]
    fn unknown_key_is_named() {
        let text = MINIMAL.replacen('{', r#"{"foo": 1,"#, 1);
        let err = ExperimentConfig::from_json_str(&text).unwrap_err();
        assert!(err.to_string().contains("foo"), "{err}");

        let nested = MINIMAL.replace(r#""n": 4"#, r#""n": 4, "bar": 2"#);
        let err = ExperimentConfig::from_json_str(&nested).unwrap_err();
        assert!(err.to_string().contains("bar"), "{err}");
        assert!(err.to_string().contains("graph"), "{err}");
    }

    #[test]
    fn replication_seeds() {
        let text = MINIMAL.replacen('{', r#"{"replications": 3, "seed": 10,"#, 1);
        let cfg = ExperimentConfig::from_json_str(&text).unwrap();
        assert_eq!(cfg.replication_seeds(), vec![10, 11, 12]);
    }

    #[test]
    fn disconnected_explicit_graph() {
        let text = MINIMAL.replace(
            r#"{"kind": "ring", "n": 4}"#,
            r#"{"kind": "explicit", "n": 4, "edges": [[0,1],[2,3]]}"#,
        );
        let err = ExperimentConfig::from_json_str(&text).unwrap_err();
        assert!(err.to_string().contains("graph not connected"), "{err}");
    }

    #[test]
    fn overrides() {
        let cfg = ExperimentConfig::from_json_str_with_overrides(
            MINIMAL,
            &[
                "strategy=full".into(),
                "k=7".into(),
                "eta.eta0=0.5".into(),
                "delay.kind=exponential".into(),
                "delay.rate=3".into(),
            ],
        );
        // dotted keys build the missing `delay` object
        assert_eq!(cfg.unwrap().delay, DelayKind::Exponential { rate: 3.0 });
        let shifted = MINIMAL.replace(
            r#""strategy": "dtur""#,
            r#""strategy": "dtur", "delay": {"kind": "shifted_exponential", "shift": 1, "rate": 2}"#,
        );
        let err = ExperimentConfig::from_json_str_with_overrides(&shifted, &["delay.kind=exponential".into()]);
        assert!(err.unwrap_err().to_string().contains("shift"));
        let cfg = ExperimentConfig::from_json_str_with_overrides(
            MINIMAL,
            &[
                "strategy=full".into(),
                "k=7".into(),
                "eta.eta0=0.5".into(),
                r#"delay={"kind":"exponential","rate":3}"#.into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.strategy, StrategyKind::Full);
        assert_eq!(cfg.k, 7);
        assert_eq!(cfg.eta.eta0, 0.5);
        assert_eq!(cfg.delay, DelayKind::Exponential { rate: 3.0 });
        assert!(apply_override(&mut Value::Null, "a=1").is_err());
        assert!(apply_override(&mut serde_json::json!({}), "novalue").is_err());
    }

    #[test]
    fn static_p_validation() {
        let text = MINIMAL.replace(
            r#""strategy": "dtur""#,
            r#""strategy": "static_p", "static_p": [1, 3, 1, 1]"#,
        );
        let err = ExperimentConfig::from_json_str(&text).unwrap_err();
        assert!(err.to_string().contains("static_p"), "{err}");
        let text = MINIMAL.replace(r#""strategy": "dtur""#, r#""strategy": "static_p""#);
        let cfg = ExperimentConfig::from_json_str(&text).unwrap();
        let g = cfg.graph.build().unwrap();
        assert_eq!(
            cfg.strategy_config(&g).unwrap(),
            StrategyConfig::StaticP { p: vec![1, 1, 1, 1] }
        );
    }

    #[test]
    fn default_round_trips() {
        let cfg = ExperimentConfig::default_synthetic();
        let back = ExperimentConfig::from_json_str(&cfg.to_json_pretty()).unwrap();
        assert_eq!(cfg, back);
    }
}

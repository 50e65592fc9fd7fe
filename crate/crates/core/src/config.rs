//! Run configuration: one TOML file holds every tunable. All fields are
//! required and unknown keys are rejected, so a config is a complete record
//! of an experiment.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::AgentParams;
use crate::env::skinner::{Phase1Params, WorldParams};
use crate::error::{HicaError, Result};
use crate::graph::HetGraph;
use crate::innate::InnateParams;
use crate::layer::{Layer, LayerSpec};
use crate::neuromod::ModulatorParams;
use crate::signal::{derive_seed, SeededRng};
use crate::unit::Channel;

pub const CONFIG_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    pub seed: u64,
    pub graph: GraphConfig,
    pub modulator: ModulatorParams,
    pub charlm: CharLmConfig,
    pub skinner: SkinnerConfig,
    pub replay_demo: ReplayDemoConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub mailbox: usize,
    pub nodes: Vec<NodeConfig>,
    pub edges: Vec<EdgeConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub label: String,
    pub channel: Channel,
    /// 0 on a token node means "the corpus alphabet size".
    pub d_in: usize,
    pub d_sum: usize,
    pub d_ctx: usize,
    pub k: usize,
    pub w: usize,
    pub base_lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeConfig {
    pub lower: String,
    pub higher: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharLmConfig {
    pub corpus: PathBuf,
    pub wrap: bool,
    pub ticks: u64,
    pub log_interval: u64,
    /// Cosine similarity counted as a hit for continuous-vector accuracy.
    pub threshold: f64,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkinnerConfig {
    pub seeds: usize,
    pub max_trials: usize,
    pub world: WorldParams,
    pub phase1: Phase1Params,
    pub innate: InnateParams,
    pub agent: AgentParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayDemoConfig {
    pub seeds: usize,
    pub episode_len: usize,
    pub repetitions: usize,
    pub dim: usize,
    pub base_lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

/// The shipped template, also the default configuration.
pub const DEFAULT_TOML: &str = include_str!("../../../configs/default.toml");

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::from_toml_str(DEFAULT_TOML).expect("shipped template parses")
    }
}

fn bad(field: impl AsRef<str>, why: impl AsRef<str>) -> String {
    format!("{}: {}", field.as_ref(), why.as_ref())
}

impl RunConfig {
    /// Parses and checks everything that does not depend on the corpus.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| HicaError::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HicaError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HicaError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.format_version != CONFIG_FORMAT {
            problems.push(bad(
                "format_version",
                format!("expected {CONFIG_FORMAT}, found {}", self.format_version),
            ));
        }
        self.check_graph(&mut problems);
        if let Err(e) = self.modulator.validate() {
            problems.push(e.to_string());
        }
        let c = &self.charlm;
        if c.log_interval == 0 {
            problems.push(bad("charlm.log_interval", "must be positive"));
        }
        if !(c.threshold > -1.0 && c.threshold <= 1.0) {
            problems.push(bad("charlm.threshold", "must lie in (-1, 1]"));
        }
        if c.workers == 0 {
            problems.push(bad("charlm.workers", "must be at least 1"));
        }
        let s = &self.skinner;
        if s.seeds == 0 {
            problems.push(bad("skinner.seeds", "must be positive"));
        }
        if s.max_trials == 0 {
            problems.push(bad("skinner.max_trials", "must be positive"));
        }
        for check in [s.world.validate(), s.phase1.q.validate(), s.agent.validate()] {
            if let Err(e) = check {
                problems.push(e.to_string());
            }
        }
        if s.phase1.episode_ticks == 0 {
            problems.push(bad("skinner.phase1.episode_ticks", "must be positive"));
        }
        let r = &self.replay_demo;
        if r.seeds == 0 || r.repetitions == 0 {
            problems.push(bad("replay_demo.seeds/repetitions", "must be positive"));
        }
        if r.episode_len < 2 || r.episode_len > r.dim {
            problems.push(bad("replay_demo.episode_len", "must lie in [2, dim]"));
        }
        if !(r.base_lr > 0.0 && r.base_lr.is_finite()) {
            problems.push(bad("replay_demo.base_lr", "must be positive"));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(HicaError::Config(problems.join("; ")))
        }
    }

    fn check_graph(&self, problems: &mut Vec<String>) {
        let g = &self.graph;
        if g.mailbox == 0 {
            problems.push(bad("graph.mailbox", "must be positive"));
        }
        if g.nodes.is_empty() {
            problems.push(bad("graph.nodes", "at least one node is required"));
        }
        let mut labels = BTreeSet::new();
        for n in &g.nodes {
            let at = |f: &str| format!("graph.nodes[{}].{f}", n.label);
            if !labels.insert(n.label.as_str()) {
                problems.push(bad(at("label"), "duplicate label"));
            }
            if n.k < 2 {
                problems.push(bad(at("k"), "must be at least 2"));
            }
            if n.w == 0 {
                problems.push(bad(at("w"), "must be at least 1"));
            }
            if n.d_sum == 0 || n.d_ctx == 0 {
                problems.push(bad(at("d_sum/d_ctx"), "must be positive"));
            }
            if n.d_in == 0 && n.channel != Channel::Token {
                problems.push(bad(at("d_in"), "0 is only allowed on token nodes"));
            }
            if n.d_in > 0 && n.d_sum >= n.k * n.d_in {
                problems.push(bad(at("d_sum"), format!("must be below k*d_in = {}", n.k * n.d_in)));
            }
            if !(n.base_lr > 0.0 && n.base_lr.is_finite()) {
                problems.push(bad(at("base_lr"), "must be positive"));
            }
        }
        for (i, e) in g.edges.iter().enumerate() {
            for end in [&e.lower, &e.higher] {
                if !labels.contains(end.as_str()) {
                    problems.push(bad(format!("graph.edges[{i}]"), format!("unknown node {end:?}")));
                }
            }
        }
    }

    /// Builds and validates the graph. `alphabet` fills any `d_in = 0`.
    pub fn build_graph(&self, alphabet: usize) -> Result<HetGraph> {
        let mut graph = HetGraph::new(derive_seed(self.seed, 0x6772));
        graph.set_mailbox_capacity(self.graph.mailbox);
        let rng = SeededRng::new(derive_seed(self.seed, 0x6e6f));
        for (i, n) in self.graph.nodes.iter().enumerate() {
            let d_in = if n.d_in == 0 { alphabet } else { n.d_in };
            let spec = LayerSpec {
                d_in,
                d_sum: n.d_sum,
                d_ctx: n.d_ctx,
                k: n.k,
                w: n.w,
                base_lr: n.base_lr,
                channel: n.channel,
            };
            let layer = Layer::new(spec, &mut rng.child(i as u64))
                .map_err(|e| HicaError::Config(bad(format!("graph.nodes[{}]", n.label), e.to_string())))?;
            graph.add_node(layer, &n.label)?;
        }
        for e in &self.graph.edges {
            let lower = graph.node_id(&e.lower).ok_or_else(|| HicaError::Config(bad("graph.edges", &e.lower)))?;
            let higher = graph.node_id(&e.higher).ok_or_else(|| HicaError::Config(bad("graph.edges", &e.higher)))?;
            graph.add_edge(lower, higher)?;
        }
        graph.validate()?;
        Ok(graph)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn template_round_trips() {
        let c = RunConfig::default();
        let again = RunConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(c, again);
        let g = c.build_graph(66).unwrap();
        assert_eq!(g.len(), 3);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = format!("bogus = 1\n{DEFAULT_TOML}");
        let err = RunConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn bad_dim_names_the_node() {
        let mut c = RunConfig::default();
        c.graph.nodes[1].d_in = 7;
        let err = c.build_graph(66).unwrap_err().to_string();
        assert!(err.contains("L2"), "{err}");
    }

    #[test]
    fn small_k_names_the_field() {
        let mut c = RunConfig::default();
        c.graph.nodes[0].k = 1;
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("graph.nodes[L1].k"), "{err}");
    }

    fn leaf_paths(v: &toml::Value, prefix: Vec<String>, out: &mut Vec<Vec<String>>) {
        match v {
            toml::Value::Table(t) => {
                for (k, child) in t {
                    let mut p = prefix.clone();
                    p.push(k.clone());
                    leaf_paths(child, p, out);
                }
            }
            toml::Value::Array(items) if items.iter().all(|i| i.is_table()) && !items.is_empty() => {
                for (i, child) in items.iter().enumerate() {
                    let mut p = prefix.clone();
                    p.push(format!("#{i}"));
                    leaf_paths(child, p, out);
                }
            }
            _ => out.push(prefix),
        }
    }

    fn remove_path(v: &mut toml::Value, path: &[String]) {
        let (head, rest) = path.split_first().expect("non-empty path");
        if let Some(i) = head.strip_prefix('#') {
            let arr = v.as_array_mut().expect("array");
            remove_path(&mut arr[i.parse::<usize>().expect("index")], rest);
        } else if rest.is_empty() {
            v.as_table_mut().expect("table").remove(head);
        } else {
            remove_path(v.as_table_mut().expect("table").get_mut(head).expect("key"), rest);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn deleting_any_field_gives_a_named_error(pick in any::<prop::sample::Index>()) {
            let base: toml::Value = toml::from_str(DEFAULT_TOML).unwrap();
            let mut paths = Vec::new();
            leaf_paths(&base, Vec::new(), &mut paths);
            let path = pick.get(&paths).clone();
            let mut broken = base.clone();
            remove_path(&mut broken, &path);
            let text = toml::to_string(&broken).unwrap();
            let err = RunConfig::from_toml_str(&text).unwrap_err();
            let field = path.last().unwrap();
            prop_assert!(matches!(err, HicaError::Config(_)));
            prop_assert!(err.to_string().contains(field.as_str()), "{} missing from {}", field, err);
        }
    }
}

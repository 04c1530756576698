//! JSON run configuration.
//!
//! ```json
//! {"nodes":[{"id":0,"x_m":0.0,"y_m":0.0}, ...],
//!  "segments":[{"id":0,"prev":0,"next":1,"width_m":1e-7,"j_A_per_m2":4e9,"orientation":"horizontal"}, ...],
//!  "material":{...}, "temperature":{"kind":"constant","t0":350.0}, "scaling":{...},
//!  "trial":{...}, "training":{...}, "fdm":{...},
//!  "probes":{"times_s":[...], "fractions":[...]}, "output_dir":"out", "seed":0}
//! ```
//!
//! Every block except the tree is optional. The tree may instead come from
//! `tree_file` (a JSON file holding `nodes` and `segments`) or, for
//! parameterized training and sweeps, from `random_tree`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{build_tree, generate_random_tree, InterconnectTree, NodeSpec, Orientation, RandomTreeSpec, Segment};
use crate::oracle::{log_times, FdmConfig, ProbeSet};
use crate::physics::{MaterialParams, ScalingFactors, TemperatureModel};
use crate::training::TrainingConfig;
use crate::trial::TrialConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub id: usize,
    pub x_m: f64,
    pub y_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentConfig {
    pub id: usize,
    pub prev: usize,
    pub next: usize,
    pub width_m: f64,
    #[serde(rename = "j_A_per_m2")]
    pub current_density: f64,
    #[serde(default)]
    pub orientation: Orientation,
    /// Optional declared length, cross-checked against the node distance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TreeConfig {
    pub nodes: Vec<NodeConfig>,
    pub segments: Vec<SegmentConfig>,
}

impl TreeConfig {
    pub fn build(&self) -> Result<InterconnectTree> {
        let nodes: Vec<NodeSpec> = self.nodes.iter().map(|n| NodeSpec { id: n.id, coord: [n.x_m, n.y_m] }).collect();
        let mut segments = Vec::with_capacity(self.segments.len());
        for (i, s) in self.segments.iter().enumerate() {
            for (name, end) in [("prev", s.prev), ("next", s.next)] {
                if !self.nodes.iter().any(|n| n.id == end) {
                    return Err(Error::DanglingReference(format!("segments[{i}].{name} = {end} names no node")));
                }
            }
            let a = nodes.iter().find(|n| n.id == s.prev).expect("checked").coord;
            let b = nodes.iter().find(|n| n.id == s.next).expect("checked").coord;
            let measured = (b[0] - a[0]).hypot(b[1] - a[1]);
            segments.push(Segment {
                id: s.id,
                node_prev: s.prev,
                node_next: s.next,
                length_m: s.length_m.unwrap_or(measured),
                width_m: s.width_m,
                current_density: s.current_density,
                orientation: s.orientation,
            });
        }
        build_tree(segments, nodes)
    }

    pub fn from_tree(tree: &InterconnectTree) -> Self {
        TreeConfig {
            nodes: tree
                .nodes()
                .iter()
                .map(|n| NodeConfig {
                    id: n.id,
                    x_m: n.coord[0],
                    y_m: n.coord[1],
                })
                .collect(),
            segments: tree
                .segments()
                .iter()
                .map(|s| SegmentConfig {
                    id: s.id,
                    prev: s.node_prev,
                    next: s.node_next,
                    width_m: s.width_m,
                    current_density: s.current_density,
                    orientation: s.orientation,
                    length_m: None,
                })
                .collect(),
        }
    }
}

/// Probe specification: fractions along every segment at the given times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub times_s: Vec<f64>,
    /// Fractions of each segment's length; empty means both ends plus 9 interior points.
    pub fractions: Vec<f64>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            times_s: log_times(1e5, 1e8, 10),
            fractions: Vec::new(),
        }
    }
}

impl ProbeConfig {
    pub fn probe_set(&self, tree: &InterconnectTree) -> ProbeSet {
        if self.fractions.is_empty() {
            return ProbeSet::uniform(tree, 9, self.times_s.clone());
        }
        let points = tree
            .segments()
            .iter()
            .flat_map(|s| self.fractions.iter().map(move |&f| (s.id, f * s.length_m)))
            .collect();
        ProbeSet {
            times_s: self.times_s.clone(),
            points,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub nodes: Vec<NodeConfig>,
    #[serde(default)]
    pub segments: Vec<SegmentConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_tree: Option<RandomTreeSpec>,
    #[serde(default)]
    pub material: MaterialParams,
    #[serde(default)]
    pub temperature: TemperatureModel,
    #[serde(default)]
    pub scaling: ScalingFactors,
    #[serde(default)]
    pub trial: TrialConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub fdm: FdmConfig,
    #[serde(default)]
    pub probes: ProbeConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Overrides `training.seed` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            nodes: Vec::new(),
            segments: Vec::new(),
            tree_file: None,
            random_tree: None,
            material: MaterialParams::default(),
            temperature: TemperatureModel::default(),
            scaling: ScalingFactors::default(),
            trial: TrialConfig::default(),
            training: TrainingConfig::default(),
            fdm: FdmConfig::default(),
            probes: ProbeConfig::default(),
            output_dir: default_output_dir(),
            seed: None,
        }
    }
}

impl RunConfig {
    /// Config around an existing tree with every other block at its default.
    pub fn for_tree(tree: &InterconnectTree) -> Self {
        let t = TreeConfig::from_tree(tree);
        RunConfig {
            nodes: t.nodes,
            segments: t.segments,
            ..Default::default()
        }
    }

    /// Parse, resolve relative `tree_file` against the config's directory, and validate.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(tf) = &cfg.tree_file {
            if tf.is_relative() {
                cfg.tree_file = Some(path.parent().unwrap_or(Path::new(".")).join(tf));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse without validating. Errors carry line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.normalize();
        Ok(cfg)
    }

    /// Propagate the shared seed and scaling into the blocks that use them.
    pub fn normalize(&mut self) {
        if let Some(seed) = self.seed {
            self.training.seed = seed;
        }
        self.fdm.scaling = self.scaling;
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.normalize();
    }

    pub fn seed(&self) -> u64 {
        self.training.seed
    }

    pub fn tree(&self) -> Result<InterconnectTree> {
        let inline = !self.nodes.is_empty() || !self.segments.is_empty();
        match (&self.tree_file, inline) {
            (Some(_), true) => Err(Error::Config("give either inline nodes/segments or tree_file, not both".into())),
            (Some(path), false) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("tree_file {}: {e}", path.display())))?;
                let t: TreeConfig = serde_json::from_str(&text).map_err(|e| Error::Config(format!("tree_file: {e}")))?;
                t.build()
            }
            (None, true) => TreeConfig {
                nodes: self.nodes.clone(),
                segments: self.segments.clone(),
            }
            .build(),
            (None, false) => match &self.random_tree {
                Some(spec) => generate_random_tree(spec),
                None => Err(Error::Config("config has no tree: give nodes/segments, tree_file or random_tree".into())),
            },
        }
    }

    pub fn probe_set(&self, tree: &InterconnectTree) -> ProbeSet {
        self.probes.probe_set(tree)
    }

    /// Check every block and the tree invariants.
    pub fn validate(&self) -> Result<InterconnectTree> {
        self.material.validate()?;
        self.temperature.validate()?;
        self.scaling.validate()?;
        self.trial.validate()?;
        self.training.validate()?;
        self.fdm.validate()?;
        let tree = self.tree()?;
        for (i, &t) in self.probes.times_s.iter().enumerate() {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::field(format!("probes.times_s[{i}]"), format!("must be a non-negative time, got {t}")));
            }
            if t > self.training.t_steady_s {
                return Err(Error::field(
                    format!("probes.times_s[{i}]"),
                    format!("{t} s exceeds training.t_steady_s = {} s", self.training.t_steady_s),
                ));
            }
        }
        for (i, &f) in self.probes.fractions.iter().enumerate() {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::field(format!("probes.fractions[{i}]"), format!("must lie in [0, 1], got {f}")));
            }
        }
        Ok(tree)
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// One-line summary such as "4 segments, 1 junction, 4 terminals".
pub fn tree_summary(tree: &InterconnectTree) -> String {
    let plural = |n: usize, word: &str| format!("{n} {word}{}", if n == 1 { "" } else { "s" });
    format!(
        "{}, {}, {}",
        plural(tree.segments().len(), "segment"),
        plural(tree.junctions().count(), "junction"),
        plural(tree.terminals().count(), "terminal")
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::cross;

    const FOUR: &str = r#"{
        "nodes": [{"id":0,"x_m":0,"y_m":0},{"id":1,"x_m":1e-5,"y_m":0},{"id":2,"x_m":3e-5,"y_m":0},
                  {"id":3,"x_m":4e-5,"y_m":0},{"id":4,"x_m":5e-5,"y_m":0}],
        "segments": [{"id":0,"prev":0,"next":1,"width_m":1e-7,"j_A_per_m2":4e9},
                     {"id":1,"prev":1,"next":2,"width_m":1e-7,"j_A_per_m2":-1e9},
                     {"id":2,"prev":2,"next":3,"width_m":1e-7,"j_A_per_m2":-4e9},
                     {"id":3,"prev":3,"next":4,"width_m":1e-7,"j_A_per_m2":-1e9,"orientation":"horizontal"}],
        "seed": 7
    }"#;

    #[test]
    fn parses_inline_tree() {
        let cfg = RunConfig::from_json(FOUR).unwrap();
        let tree = cfg.validate().unwrap();
        assert_eq!(tree_summary(&tree), "4 segments, 3 junctions, 2 terminals");
        assert!((tree.segments()[1].length_m - 2e-5).abs() < 1e-18);
        assert_eq!(cfg.seed(), 7);
        assert_eq!(cfg.fdm.scaling, cfg.scaling);
    }

    #[test]
    fn cross_summary() {
        let tree = cross([1e-5; 4], [1e9; 4], [1e-7; 4]).unwrap();
        let cfg = RunConfig::for_tree(&tree);
        assert_eq!(tree_summary(&cfg.validate().unwrap()), "4 segments, 1 junction, 4 terminals");
    }

    #[test]
    fn negative_width_reports_field() {
        let bad = FOUR.replacen("\"width_m\":1e-7", "\"width_m\":-1e-7", 1);
        let err = RunConfig::from_json(&bad).unwrap().validate().unwrap_err().to_string();
        assert!(err.contains("segments[0].width_m"), "{err}");
    }

    #[test]
    fn dangling_node_reference() {
        let bad = FOUR.replace("\"next\":4", "\"next\":9");
        let err = RunConfig::from_json(&bad).unwrap().validate().unwrap_err();
        assert!(matches!(err, Error::DanglingReference(_)), "{err}");
    }

    #[test]
    fn declared_length_is_cross_checked() {
        let bad = FOUR.replace("\"j_A_per_m2\":4e9", "\"j_A_per_m2\":4e9,\"length_m\":2e-5");
        let err = RunConfig::from_json(&bad).unwrap().validate().unwrap_err();
        assert!(matches!(err, Error::GeometryMismatch { .. }), "{err}");
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = RunConfig::from_json("{\n  \"nodes\": [,]\n}").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn probes_beyond_horizon_rejected() {
        let mut cfg = RunConfig::from_json(FOUR).unwrap();
        cfg.probes.times_s.push(2e8);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::from_json(FOUR).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.set_seed(8);
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn round_trips_through_json() {
        let a = RunConfig::from_json(FOUR).unwrap();
        let b = RunConfig::from_json(&a.to_json()).unwrap();
        assert_eq!(a, b);
    }
}

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::arch::{he_init_node, ArchitectureId};
use crate::error::{Error, Result};
use crate::graph::{ModelGraph, NodeId};
use crate::seed::derive_seed;

/// Keeps re-initialized weights distinct from `build(arch, seed)` for equal seeds.
const RANDOMIZE_STREAM: u64 = 0x7261_6e64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomizationMode {
    /// Stage `s` re-initializes groups `0..=s`.
    Cascading,
    /// Stage `s` re-initializes group `s` only.
    Single,
}

impl RandomizationMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            RandomizationMode::Cascading => "cascading",
            RandomizationMode::Single => "single",
        }
    }
}

/// Ordered top-down groups of parameterized nodes plus the seed that drives
/// their re-initialization.
///
/// Each node's fresh weights depend only on `(seed, node id)`, so a node
/// re-initialized at stage 1 carries the same values at stage 2, 3, ...
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomizationPlan {
    groups: Vec<(String, Vec<NodeId>)>,
    seed: u64,
}

impl RandomizationPlan {
    pub fn new(groups: Vec<(String, Vec<NodeId>)>, seed: u64) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (name, g) in &groups {
            for &n in g {
                if !seen.insert(n) {
                    return Err(Error::invalid(format!(
                        "node {n} appears in more than one group (group '{name}')"
                    )));
                }
            }
        }
        let nonempty: Vec<&Vec<NodeId>> = groups.iter().map(|(_, g)| g).filter(|g| !g.is_empty()).collect();
        for pair in nonempty.windows(2) {
            let min_upper = pair[0].iter().min().expect("non-empty");
            let max_lower = pair[1].iter().max().expect("non-empty");
            if min_upper < max_lower {
                return Err(Error::invalid("randomization groups must be ordered top-down"));
            }
        }
        Ok(Self { groups, seed })
    }

    /// The architecture's default grouping.
    pub fn default_for(arch: &ArchitectureId, model: &ModelGraph, seed: u64) -> Result<Self> {
        Self::new(arch.default_groups(model), seed)
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            groups: self.groups.clone(),
            seed,
        }
    }

    pub fn group_name(&self, stage: usize) -> &str {
        &self.groups[stage].0
    }

    pub fn groups(&self) -> &[(String, Vec<NodeId>)] {
        &self.groups
    }

    /// Nodes re-initialized at `stage` under `mode`.
    pub fn nodes_at(&self, stage: usize, mode: RandomizationMode) -> Result<Vec<NodeId>> {
        if stage >= self.groups.len() {
            return Err(Error::invalid(format!(
                "stage {stage} out of range for {} groups",
                self.groups.len()
            )));
        }
        Ok(match mode {
            RandomizationMode::Cascading => self.groups[..=stage]
                .iter()
                .flat_map(|(_, g)| g.iter().copied())
                .collect(),
            RandomizationMode::Single => self.groups[stage].1.clone(),
        })
    }
}

/// Returns a copy of `model` with the nodes selected by `stage` re-drawn
/// from the He initializer. All other parameters are untouched.
pub fn randomize(
    model: &ModelGraph,
    plan: &RandomizationPlan,
    stage: usize,
    mode: RandomizationMode,
) -> Result<ModelGraph> {
    let nodes = plan.nodes_at(stage, mode)?;
    let params = model.parameterized_nodes();
    let mut out = model.clone();
    for node in nodes {
        if !params.contains(&node) {
            return Err(Error::invalid(format!("node {node} has no parameters to randomize")));
        }
        he_init_node(&mut out, node, derive_seed(plan.seed, &[RANDOMIZE_STREAM]))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::forward;
    use crate::tensor::Tensor;
    use crate::zoo::{build, split_at};

    fn conv_plain() -> (ArchitectureId, ModelGraph) {
        let arch = ArchitectureId::ConvPlain {
            channels: 1,
            size: 16,
            width: 2,
            classes: 3,
        };
        let m = build(&arch, 1).unwrap();
        (arch, m)
    }

    fn changed_nodes(a: &ModelGraph, b: &ModelGraph) -> BTreeSet<NodeId> {
        a.param_slots()
            .into_iter()
            .filter(|&s| a.param(s) != b.param(s))
            .map(|s| s.node)
            .collect()
    }

    #[test]
    fn empty_stage_is_identity() {
        let (_, m) = conv_plain();
        let plan = RandomizationPlan::new(vec![("none".into(), vec![])], 3).unwrap();
        let r = randomize(&m, &plan, 0, RandomizationMode::Cascading).unwrap();
        assert_eq!(r, m);
    }

    #[test]
    fn head_stage_touches_only_head() {
        let (arch, m) = conv_plain();
        let plan = RandomizationPlan::default_for(&arch, &m, 99).unwrap();
        let r = randomize(&m, &plan, 0, RandomizationMode::Cascading).unwrap();
        let changed = changed_nodes(&m, &r);
        let head: BTreeSet<NodeId> = [m.find("fc1").unwrap(), m.find("fc2").unwrap()].into();
        assert_eq!(changed, head);
    }

    #[test]
    fn cascading_sets_strictly_grow() {
        let (arch, m) = conv_plain();
        let plan = RandomizationPlan::default_for(&arch, &m, 5).unwrap();
        let mut prev: Option<BTreeSet<NodeId>> = None;
        for stage in 0..plan.len() {
            let r = randomize(&m, &plan, stage, RandomizationMode::Cascading).unwrap();
            let cur = changed_nodes(&m, &r);
            if let Some(p) = prev {
                assert!(p.is_subset(&cur) && p != cur);
            }
            prev = Some(cur);
        }
    }

    #[test]
    fn seeds_change_head_but_not_features() {
        let (arch, m) = conv_plain();
        let plan = RandomizationPlan::default_for(&arch, &m, 1).unwrap();
        let a = randomize(&m, &plan, 0, RandomizationMode::Cascading).unwrap();
        let b = randomize(&m, &plan.with_seed(2), 0, RandomizationMode::Cascading).unwrap();
        let fc2 = m.find("fc2").unwrap();
        assert_ne!(a.node(fc2).weight, b.node(fc2).weight);
        let flat = m.find("flatten").unwrap();
        let x = Tensor::filled(&[1, 16, 16], 0.5);
        let (phi_a, _) = split_at(&a, flat).unwrap();
        let (phi_m, _) = split_at(&m, flat).unwrap();
        assert_eq!(
            forward(&phi_a, &x).unwrap().logits(),
            forward(&phi_m, &x).unwrap().logits()
        );
    }

    #[test]
    fn single_mode_and_errors() {
        let (arch, m) = conv_plain();
        let plan = RandomizationPlan::default_for(&arch, &m, 1).unwrap();
        let r = randomize(&m, &plan, 1, RandomizationMode::Single).unwrap();
        assert_eq!(changed_nodes(&m, &r), [m.find("conv4").unwrap()].into());
        assert!(randomize(&m, &plan, plan.len(), RandomizationMode::Single).is_err());
        assert!(RandomizationPlan::new(vec![("a".into(), vec![1]), ("b".into(), vec![5])], 0).is_err());
        assert!(RandomizationPlan::new(vec![("a".into(), vec![5]), ("b".into(), vec![5])], 0).is_err());
    }
}

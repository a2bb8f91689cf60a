//! Recurrent-cell DAG search space.
//!
//! A cell with `n` nodes is described by one decision per node: node 1 picks
//! an activation, every later node `i` picks a predecessor `j < i` and an
//! activation. Flattened, that is `2n - 1` categorical actions.
//!
//! Canonical text form: `"tanh 1:relu 2:sigmoid"`, i.e. node 1's activation,
//! then `<pred>:<activation>` per node with 1-based predecessors.

use std::collections::BTreeSet;
use std::fmt;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Activation {
    Tanh = 0,
    Relu = 1,
    Sigmoid = 2,
    Identity = 3,
}

impl Activation {
    pub const ALL: [Activation; 4] = [
        Activation::Tanh,
        Activation::Relu,
        Activation::Sigmoid,
        Activation::Identity,
    ];
    pub const COUNT: usize = 4;

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(i: usize) -> Result<Self> {
        Activation::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Parse(format!("activation ordinal {i} out of range")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Activation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown activation {s:?}")))
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One node's decisions. `prev` is the 1-based predecessor, absent for node 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeDecision {
    pub prev: Option<usize>,
    pub act: Activation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub n_nodes: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace { n_nodes: 12 }
    }
}

impl SearchSpace {
    pub fn new(n_nodes: usize) -> Result<Self> {
        let space = SearchSpace { n_nodes };
        space.check()?;
        Ok(space)
    }

    pub fn check(&self) -> Result<()> {
        if self.n_nodes == 0 {
            return Err(Error::Config("n_nodes must be at least 1".into()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        2 * self.n_nodes - 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    Activation,
    Predecessor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SchemaStep {
    /// 1-based position in the flattened action sequence.
    pub index: usize,
    pub kind: StepKind,
    pub choices: usize,
    /// 1-based node this step decides.
    pub node: usize,
}

pub fn decision_schema(space: &SearchSpace) -> Vec<SchemaStep> {
    let mut steps = Vec::with_capacity(space.n_steps());
    for node in 1..=space.n_nodes {
        if node > 1 {
            steps.push(SchemaStep {
                index: steps.len() + 1,
                kind: StepKind::Predecessor,
                choices: node - 1,
                node,
            });
        }
        steps.push(SchemaStep {
            index: steps.len() + 1,
            kind: StepKind::Activation,
            choices: Activation::COUNT,
            node,
        });
    }
    steps
}

/// `|H| = 4^n · (n-1)!`, computed as the product of per-step choice counts.
pub fn space_size(space: &SearchSpace) -> BigUint {
    decision_schema(space)
        .iter()
        .fold(BigUint::from(1u32), |acc, s| acc * BigUint::from(s.choices))
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "ArchitectureJson", into = "ArchitectureJson")]
pub struct Architecture {
    pub n_nodes: usize,
    pub nodes: Vec<NodeDecision>,
}

impl Architecture {
    /// Every node `i >= 2` points at `i - 1`.
    pub fn chain(acts: &[Activation]) -> Self {
        let nodes = acts
            .iter()
            .enumerate()
            .map(|(i, &act)| NodeDecision {
                prev: (i > 0).then_some(i),
                act,
            })
            .collect();
        Architecture {
            n_nodes: acts.len(),
            nodes,
        }
    }

    /// Every node `i >= 2` points at node 1.
    pub fn star(acts: &[Activation]) -> Self {
        let nodes = acts
            .iter()
            .enumerate()
            .map(|(i, &act)| NodeDecision {
                prev: (i > 0).then_some(1),
                act,
            })
            .collect();
        Architecture {
            n_nodes: acts.len(),
            nodes,
        }
    }

    pub fn space(&self) -> SearchSpace {
        SearchSpace {
            n_nodes: self.n_nodes,
        }
    }

    pub fn activation(&self, node: usize) -> Activation {
        self.nodes[node - 1].act
    }

    pub fn predecessor(&self, node: usize) -> Option<usize> {
        self.nodes[node - 1].prev
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_nodes == 0 {
            return Err(Error::Architecture {
                node: 0,
                reason: "n_nodes must be at least 1".into(),
            });
        }
        if self.nodes.len() != self.n_nodes {
            return Err(Error::Architecture {
                node: 0,
                reason: format!(
                    "decision list has {} entries for {} nodes",
                    self.nodes.len(),
                    self.n_nodes
                ),
            });
        }
        for (k, d) in self.nodes.iter().enumerate() {
            let node = k + 1;
            match (node, d.prev) {
                (1, None) => {}
                (1, Some(_)) => {
                    return Err(Error::Architecture {
                        node,
                        reason: "node 1 takes no predecessor".into(),
                    })
                }
                (_, None) => {
                    return Err(Error::Architecture {
                        node,
                        reason: "missing predecessor".into(),
                    })
                }
                (_, Some(p)) if p == 0 || p >= node => {
                    return Err(Error::Architecture {
                        node,
                        reason: format!("predecessor must be < node index (got {p})"),
                    })
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn validate_for(&self, space: &SearchSpace) -> Result<()> {
        self.validate()?;
        if self.n_nodes != space.n_nodes {
            return Err(Error::Architecture {
                node: 0,
                reason: format!(
                    "architecture has {} nodes, search space has {}",
                    self.n_nodes, space.n_nodes
                ),
            });
        }
        Ok(())
    }

    /// Flattened action indices in schema order. Predecessor `p` is action `p - 1`.
    pub fn to_actions(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(2 * self.n_nodes - 1);
        for d in &self.nodes {
            if let Some(p) = d.prev {
                out.push(p - 1);
            }
            out.push(d.act.ordinal());
        }
        out
    }

    pub fn from_actions(space: &SearchSpace, actions: &[usize]) -> Result<Self> {
        let schema = decision_schema(space);
        if actions.len() != schema.len() {
            return Err(Error::Parse(format!(
                "expected {} actions, got {}",
                schema.len(),
                actions.len()
            )));
        }
        let mut nodes = Vec::with_capacity(space.n_nodes);
        let mut prev = None;
        for (step, &a) in schema.iter().zip(actions) {
            if a >= step.choices {
                return Err(Error::Architecture {
                    node: step.node,
                    reason: format!("action {a} out of range at step {}", step.index),
                });
            }
            match step.kind {
                StepKind::Predecessor => prev = Some(a + 1),
                StepKind::Activation => nodes.push(NodeDecision {
                    prev: prev.take(),
                    act: Activation::from_ordinal(a)?,
                }),
            }
        }
        Ok(Architecture {
            n_nodes: space.n_nodes,
            nodes,
        })
    }

    /// Parses the canonical text form for a given search space.
    pub fn parse(s: &str, space: &SearchSpace) -> Result<Self> {
        let tokens: Vec<&str> = s.split(' ').collect();
        if tokens.len() != space.n_nodes || tokens.iter().any(|t| t.is_empty()) {
            return Err(Error::Parse(format!(
                "expected {} space-separated tokens in {s:?}",
                space.n_nodes
            )));
        }
        let mut nodes = Vec::with_capacity(tokens.len());
        for (k, tok) in tokens.iter().enumerate() {
            let node = k + 1;
            let d = if node == 1 {
                NodeDecision {
                    prev: None,
                    act: Activation::from_name(tok)?,
                }
            } else {
                let (p, a) = tok.split_once(':').ok_or_else(|| {
                    Error::Parse(format!("token {tok:?} for node {node} is not <pred>:<act>"))
                })?;
                let p: usize = p
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad predecessor in {tok:?}")))?;
                NodeDecision {
                    prev: Some(p),
                    act: Activation::from_name(a)?,
                }
            };
            nodes.push(d);
        }
        let arch = Architecture {
            n_nodes: space.n_nodes,
            nodes,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Parses the canonical text form, taking the node count from the token count.
    pub fn parse_any(s: &str) -> Result<Self> {
        let n = s.split(' ').count();
        Architecture::parse(s, &SearchSpace { n_nodes: n })
    }

    pub fn canonical(&self) -> String {
        self.to_string()
    }

    /// Directed `(predecessor, node)` pairs.
    pub fn edge_set(&self) -> BTreeSet<(usize, usize)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(k, d)| d.prev.map(|p| (p, k + 1)))
            .collect()
    }

    /// Nodes never chosen as a predecessor.
    pub fn leaf_set(&self) -> BTreeSet<usize> {
        let used: BTreeSet<usize> = self.nodes.iter().filter_map(|d| d.prev).collect();
        (1..=self.n_nodes).filter(|i| !used.contains(i)).collect()
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, d) in self.nodes.iter().enumerate() {
            if k > 0 {
                f.write_str(" ")?;
            }
            match d.prev {
                Some(p) => write!(f, "{p}:{}", d.act)?,
                None => write!(f, "{}", d.act)?,
            }
        }
        Ok(())
    }
}

pub fn random_architecture(rng: &mut Rng, space: &SearchSpace) -> Architecture {
    let actions: Vec<usize> = decision_schema(space)
        .iter()
        .map(|s| rng.below(s.choices))
        .collect();
    Architecture::from_actions(space, &actions).expect("schema-bounded actions are valid")
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prev: Option<usize>,
    act: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchitectureJson {
    n: usize,
    nodes: Vec<NodeJson>,
}

impl From<Architecture> for ArchitectureJson {
    fn from(a: Architecture) -> Self {
        ArchitectureJson {
            n: a.n_nodes,
            nodes: a
                .nodes
                .into_iter()
                .map(|d| NodeJson {
                    prev: d.prev,
                    act: d.act.name().to_string(),
                })
                .collect(),
        }
    }
}

impl TryFrom<ArchitectureJson> for Architecture {
    type Error = Error;

    fn try_from(j: ArchitectureJson) -> Result<Self> {
        let nodes = j
            .nodes
            .into_iter()
            .map(|n| {
                Ok(NodeDecision {
                    prev: n.prev,
                    act: Activation::from_name(&n.act)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let arch = Architecture {
            n_nodes: j.n,
            nodes,
        };
        arch.validate()?;
        Ok(arch)
    }
}

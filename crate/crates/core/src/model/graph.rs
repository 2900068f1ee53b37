use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::ParamStore;
use crate::error::{Error, Result};
use crate::rng::{keyed_stream, INIT_DOMAIN};
use crate::tensor::Tensor;

/// Name by which nodes refer to the graph's input tensor.
pub const INPUT: &str = "input";

/// Separates a job-id namespace from a node id inside a hybrid.
pub const NAMESPACE_SEP: char = '/';

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OpKind {
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    Relu,
    MaxPool2d {
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
    },
    Flatten,
    EmbeddingLookup {
        vocab: usize,
        dim: usize,
    },
}

fn one() -> usize {
    1
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Dense { .. } => "dense",
            OpKind::Conv2d { .. } => "conv2d",
            OpKind::Relu => "relu",
            OpKind::MaxPool2d { .. } => "maxpool2d",
            OpKind::Flatten => "flatten",
            OpKind::EmbeddingLookup { .. } => "embedding_lookup",
        }
    }

    /// Trainable parameters this op owns, as (suffix, shape, fan-in).
    fn param_layout(&self) -> Vec<(&'static str, Vec<usize>, usize)> {
        match *self {
            OpKind::Dense {
                in_features,
                out_features,
            } => vec![
                ("weight", vec![out_features, in_features], in_features),
                ("bias", vec![out_features], in_features),
            ],
            OpKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                let fan_in = in_channels * kernel * kernel;
                vec![
                    ("weight", vec![out_channels, in_channels, kernel, kernel], fan_in),
                    ("bias", vec![out_channels], fan_in),
                ]
            }
            OpKind::EmbeddingLookup { vocab, dim } => vec![("weight", vec![vocab, dim], vocab)],
            OpKind::Relu | OpKind::MaxPool2d { .. } | OpKind::Flatten => Vec::new(),
        }
    }

    fn config_error(&self) -> Option<String> {
        let bad = match *self {
            OpKind::Dense {
                in_features,
                out_features,
            } => in_features == 0 || out_features == 0,
            OpKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0,
            OpKind::MaxPool2d { kernel, stride } => kernel == 0 || stride == 0,
            OpKind::EmbeddingLookup { vocab, dim } => vocab == 0 || dim == 0,
            OpKind::Relu | OpKind::Flatten => false,
        };
        bad.then(|| format!("{} has a zero-sized setting", self.name()))
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match *self {
            OpKind::Dense {
                in_features,
                out_features,
            } => {
                if input != [in_features] {
                    return Err(format!("[{in_features}]"));
                }
                Ok(vec![out_features])
            }
            OpKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let [c, h, w] = *input else {
                    return Err(format!("[{in_channels}, H, W]"));
                };
                if c != in_channels || h + 2 * padding < kernel || w + 2 * padding < kernel {
                    return Err(format!("[{in_channels}, H>={kernel}-2*{padding}, W]"));
                }
                Ok(vec![
                    out_channels,
                    (h + 2 * padding - kernel) / stride + 1,
                    (w + 2 * padding - kernel) / stride + 1,
                ])
            }
            OpKind::MaxPool2d { kernel, stride } => {
                let [c, h, w] = *input else {
                    return Err("[C, H, W]".into());
                };
                if h < kernel || w < kernel {
                    return Err(format!("[C, H>={kernel}, W>={kernel}]"));
                }
                Ok(vec![c, (h - kernel) / stride + 1, (w - kernel) / stride + 1])
            }
            OpKind::Relu => Ok(input.to_vec()),
            OpKind::Flatten => Ok(vec![input.iter().product()]),
            OpKind::EmbeddingLookup { dim, .. } => {
                let [len] = *input else {
                    return Err("[L]".into());
                };
                Ok(vec![len, dim])
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpNode {
    pub id: String,
    pub op: OpKind,
    pub inputs: Vec<String>,
}

impl OpNode {
    pub fn new(id: impl Into<String>, op: OpKind, input: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            op,
            inputs: vec![input.into()],
        }
    }
}

/// A trainable parameter declared by a node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub id: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
}

pub fn param_id(node: &str, suffix: &str) -> String {
    format!("{node}.{suffix}")
}

/// User-submitted model definition: a DAG of layer nodes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelGraph {
    pub name: String,
    /// Per-sample input shape; the batch dimension is implicit.
    pub input_shape: Vec<usize>,
    pub nodes: Vec<OpNode>,
    pub output: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiagnosticKind {
    EmptyGraph,
    InvalidInputShape,
    InvalidId,
    ReservedId,
    DuplicateId,
    MissingInput { missing: String },
    SelfReference,
    Arity { expected: usize, found: usize },
    Cycle { nodes: Vec<String> },
    MissingOutput { output: String },
    Unused,
    InvalidConfig(String),
    ShapeMismatch { expected: String, found: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub node: Option<String>,
    pub kind: DiagnosticKind,
}

impl Diagnostic {
    fn at(node: &str, kind: DiagnosticKind) -> Self {
        Self {
            node: Some(node.to_string()),
            kind,
        }
    }

    fn global(kind: DiagnosticKind) -> Self {
        Self { node: None, kind }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(node) = &self.node {
            write!(f, "node `{node}`: ")?;
        }
        match &self.kind {
            DiagnosticKind::EmptyGraph => write!(f, "graph has no nodes"),
            DiagnosticKind::InvalidInputShape => write!(f, "input shape must be non-empty with positive dims"),
            DiagnosticKind::InvalidId => write!(f, "ids must be non-empty and must not contain `{NAMESPACE_SEP}`"),
            DiagnosticKind::ReservedId => write!(f, "`{INPUT}` is reserved for the graph input"),
            DiagnosticKind::DuplicateId => write!(f, "duplicate node id"),
            DiagnosticKind::MissingInput { missing } => write!(f, "input `{missing}` does not exist"),
            DiagnosticKind::SelfReference => write!(f, "node consumes its own output"),
            DiagnosticKind::Arity { expected, found } => {
                write!(f, "expected {expected} input(s), found {found}")
            }
            DiagnosticKind::Cycle { nodes } => write!(f, "cycle through {}", nodes.join(" -> ")),
            DiagnosticKind::MissingOutput { output } => write!(f, "output node `{output}` does not exist"),
            DiagnosticKind::Unused => write!(f, "node does not contribute to the output"),
            DiagnosticKind::InvalidConfig(msg) => f.write_str(msg),
            DiagnosticKind::ShapeMismatch { expected, found } => {
                write!(f, "expected input shape {expected}, found {found:?}")
            }
        }
    }
}

impl ModelGraph {
    pub fn new(name: impl Into<String>, input_shape: Vec<usize>, nodes: Vec<OpNode>, output: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            input_shape,
            nodes,
            output: output.into(),
        }
    }

    /// Builds a chain where every node consumes the previous node's output.
    pub fn sequential(name: impl Into<String>, input_shape: Vec<usize>, layers: Vec<(&str, OpKind)>) -> Self {
        let mut prev = INPUT.to_string();
        let mut nodes = Vec::with_capacity(layers.len());
        for (id, op) in layers {
            nodes.push(OpNode::new(id, op, prev));
            prev = id.to_string();
        }
        Self::new(name, input_shape, nodes, prev)
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    /// Returns every violation found; an empty list means the graph is valid.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut diags = Vec::new();
        if self.nodes.is_empty() {
            diags.push(Diagnostic::global(DiagnosticKind::EmptyGraph));
            return diags;
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            diags.push(Diagnostic::global(DiagnosticKind::InvalidInputShape));
        }

        let mut seen = BTreeSet::new();
        for node in &self.nodes {
            if node.id.is_empty() || node.id.contains(NAMESPACE_SEP) {
                diags.push(Diagnostic::at(&node.id, DiagnosticKind::InvalidId));
            } else if node.id == INPUT {
                diags.push(Diagnostic::at(&node.id, DiagnosticKind::ReservedId));
            } else if !seen.insert(node.id.as_str()) {
                diags.push(Diagnostic::at(&node.id, DiagnosticKind::DuplicateId));
            }
            if let Some(msg) = node.op.config_error() {
                diags.push(Diagnostic::at(&node.id, DiagnosticKind::InvalidConfig(msg)));
            }
            if node.inputs.len() != 1 {
                diags.push(Diagnostic::at(
                    &node.id,
                    DiagnosticKind::Arity {
                        expected: 1,
                        found: node.inputs.len(),
                    },
                ));
            }
            for input in &node.inputs {
                if *input == node.id {
                    diags.push(Diagnostic::at(&node.id, DiagnosticKind::SelfReference));
                } else if input != INPUT && !self.nodes.iter().any(|n| n.id == *input) {
                    diags.push(Diagnostic::at(
                        &node.id,
                        DiagnosticKind::MissingInput {
                            missing: input.clone(),
                        },
                    ));
                }
            }
        }
        if !self.nodes.iter().any(|n| n.id == self.output) {
            diags.push(Diagnostic::global(DiagnosticKind::MissingOutput {
                output: self.output.clone(),
            }));
        }
        if !diags.is_empty() {
            return diags;
        }

        if let Err(cycle) = self.topo_order() {
            let first = cycle[0].clone();
            diags.push(Diagnostic::at(&first, DiagnosticKind::Cycle { nodes: cycle }));
            return diags;
        }

        // Every node must be an ancestor of (or be) the output.
        let mut live = BTreeSet::new();
        let mut stack = vec![self.output.as_str()];
        while let Some(id) = stack.pop() {
            if id == INPUT || !live.insert(id) {
                continue;
            }
            let node = &self.nodes[self.node_index(id).expect("checked above")];
            stack.extend(node.inputs.iter().map(String::as_str));
        }
        for node in &self.nodes {
            if !live.contains(node.id.as_str()) {
                diags.push(Diagnostic::at(&node.id, DiagnosticKind::Unused));
            }
        }
        if !diags.is_empty() {
            return diags;
        }

        if let Err(d) = self.shapes_checked() {
            diags.push(d);
        }
        diags
    }

    pub fn check(&self) -> Result<()> {
        let diagnostics = self.validate();
        if diagnostics.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidGraph {
                name: self.name.clone(),
                diagnostics,
            })
        }
    }

    /// Node indices in a topological order (stable: ties resolve by declaration order).
    /// On failure returns the ids of the nodes caught in cycles.
    pub fn topo_order(&self) -> std::result::Result<Vec<usize>, Vec<String>> {
        let index: BTreeMap<&str, usize> = self.nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
        let mut indegree = vec![0usize; self.nodes.len()];
        let mut consumers = vec![Vec::new(); self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            for input in &node.inputs {
                if let Some(&src) = index.get(input.as_str()) {
                    indegree[i] += 1;
                    consumers[src].push(i);
                }
            }
        }
        let mut ready: VecDeque<usize> = (0..self.nodes.len()).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(i) = ready.pop_front() {
            order.push(i);
            for &c in &consumers[i] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.push_back(c);
                }
            }
        }
        if order.len() == self.nodes.len() {
            Ok(order)
        } else {
            Err(self
                .nodes
                .iter()
                .enumerate()
                .filter(|(i, _)| indegree[*i] > 0)
                .map(|(_, n)| n.id.clone())
                .collect())
        }
    }

    fn shapes_checked(&self) -> std::result::Result<Vec<Vec<usize>>, Diagnostic> {
        let order = self
            .topo_order()
            .map_err(|nodes| Diagnostic::at(&nodes[0], DiagnosticKind::Cycle { nodes: nodes.clone() }))?;
        let mut shapes: Vec<Option<Vec<usize>>> = vec![None; self.nodes.len()];
        for &i in &order {
            let node = &self.nodes[i];
            let input = &node.inputs[0];
            let in_shape = if input == INPUT {
                self.input_shape.clone()
            } else {
                shapes[self.node_index(input).expect("validated")].clone().expect("topological")
            };
            let out = node.op.output_shape(&in_shape).map_err(|expected| {
                Diagnostic::at(
                    &node.id,
                    DiagnosticKind::ShapeMismatch {
                        expected,
                        found: in_shape.clone(),
                    },
                )
            })?;
            shapes[i] = Some(out);
        }
        Ok(shapes.into_iter().map(|s| s.expect("all visited")).collect())
    }

    /// Per-sample output shape of every node, indexed like `nodes`.
    pub fn infer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        self.check()?;
        self.shapes_checked().map_err(|d| Error::InvalidGraph {
            name: self.name.clone(),
            diagnostics: vec![d],
        })
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        let shapes = self.infer_shapes()?;
        Ok(shapes[self.node_index(&self.output).expect("validated")].clone())
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        self.nodes
            .iter()
            .flat_map(|node| {
                node.op.param_layout().into_iter().map(move |(suffix, shape, fan_in)| ParamSpec {
                    id: param_id(&node.id, suffix),
                    shape,
                    fan_in,
                })
            })
            .collect()
    }

    pub fn param_count(&self) -> u64 {
        self.param_specs()
            .iter()
            .map(|s| s.shape.iter().product::<usize>() as u64)
            .sum()
    }

    /// Seeded initialization. Each parameter draws from its own stream keyed by
    /// (seed, parameter id): Kaiming-uniform weights for dense and conv layers,
    /// biases uniform in ±1/sqrt(fan_in), embeddings uniform in ±1.
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        for node in &self.nodes {
            for (suffix, shape, fan_in) in node.op.param_layout() {
                let id = param_id(&node.id, suffix);
                let bound = match (&node.op, suffix) {
                    (OpKind::EmbeddingLookup { .. }, _) => 1.0,
                    (_, "bias") => 1.0 / (fan_in as f64).sqrt(),
                    _ => (6.0 / fan_in as f64).sqrt(),
                };
                let mut rng = keyed_stream(INIT_DOMAIN, seed, &[id.as_bytes()]);
                let len: usize = shape.iter().product();
                let data = (0..len)
                    .map(|_| (rng.gen_range(-bound..bound)) as f32)
                    .collect();
                store.insert(id, Tensor::from_parts(shape, data));
            }
        }
        store
    }

    /// Checks that `params` holds exactly the declared parameters with matching shapes.
    pub fn check_params(&self, params: &ParamStore) -> Result<()> {
        let specs = self.param_specs();
        for spec in &specs {
            let t = params.get(&spec.id).ok_or_else(|| Error::MissingParameter(spec.id.clone()))?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::ParameterShape {
                    id: spec.id.clone(),
                    expected: spec.shape.clone(),
                    found: t.shape().to_vec(),
                });
            }
        }
        if let Some(extra) = params.ids().find(|id| !specs.iter().any(|s| s.id == *id)) {
            return Err(Error::UnexpectedParameter(extra.to_string()));
        }
        Ok(())
    }

    /// Copy with every node id prefixed by `prefix/`.
    pub fn namespaced(&self, prefix: &str) -> ModelGraph {
        let ns = |id: &str| {
            if id == INPUT {
                id.to_string()
            } else {
                format!("{prefix}{NAMESPACE_SEP}{id}")
            }
        };
        ModelGraph {
            name: self.name.clone(),
            input_shape: self.input_shape.clone(),
            nodes: self
                .nodes
                .iter()
                .map(|n| OpNode {
                    id: ns(&n.id),
                    op: n.op.clone(),
                    inputs: n.inputs.iter().map(|i| ns(i)).collect(),
                })
                .collect(),
            output: ns(&self.output),
        }
    }

    /// Inverse of [`ModelGraph::namespaced`].
    pub fn strip_namespace(&self, prefix: &str) -> Result<ModelGraph> {
        let strip = |id: &str| -> Result<String> {
            if id == INPUT {
                return Ok(id.to_string());
            }
            strip_prefix(prefix, id)
        };
        Ok(ModelGraph {
            name: self.name.clone(),
            input_shape: self.input_shape.clone(),
            nodes: self
                .nodes
                .iter()
                .map(|n| {
                    Ok(OpNode {
                        id: strip(&n.id)?,
                        op: n.op.clone(),
                        inputs: n.inputs.iter().map(|i| strip(i)).collect::<Result<_>>()?,
                    })
                })
                .collect::<Result<_>>()?,
            output: strip(&self.output)?,
        })
    }
}

pub(crate) fn strip_prefix(prefix: &str, id: &str) -> Result<String> {
    id.strip_prefix(prefix)
        .and_then(|rest| rest.strip_prefix(NAMESPACE_SEP))
        .filter(|rest| !rest.is_empty() && !rest.contains(NAMESPACE_SEP))
        .map(str::to_string)
        .ok_or_else(|| Error::NamespaceCorruption(format!("`{id}` is not in namespace `{prefix}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(i: usize, o: usize) -> OpKind {
        OpKind::Dense {
            in_features: i,
            out_features: o,
        }
    }

    #[test]
    fn single_dense_is_valid() {
        let g = ModelGraph::sequential("one", vec![3], vec![("fc", dense(3, 2))]);
        assert!(g.validate().is_empty());
        assert_eq!(g.param_count(), 8);
    }

    #[test]
    fn missing_input_is_named() {
        let g = ModelGraph::new("m", vec![3], vec![OpNode::new("fc", dense(3, 2), "ghost")], "fc");
        let d = g.validate();
        assert!(d.iter().any(|d| d.node.as_deref() == Some("fc")
            && d.kind == DiagnosticKind::MissingInput { missing: "ghost".into() }));
    }

    #[test]
    fn two_node_cycle() {
        let g = ModelGraph::new(
            "c",
            vec![2],
            vec![OpNode::new("a", OpKind::Relu, "b"), OpNode::new("b", OpKind::Relu, "a")],
            "b",
        );
        let d = g.validate();
        assert_eq!(d.len(), 1);
        assert!(matches!(&d[0].kind, DiagnosticKind::Cycle { nodes } if nodes.len() == 2));
    }

    #[test]
    fn self_reference_and_duplicates() {
        let g = ModelGraph::new(
            "s",
            vec![2],
            vec![OpNode::new("a", OpKind::Relu, "a"), OpNode::new("a", OpKind::Relu, INPUT)],
            "a",
        );
        let kinds: Vec<_> = g.validate().into_iter().map(|d| d.kind).collect();
        assert!(kinds.contains(&DiagnosticKind::SelfReference));
        assert!(kinds.contains(&DiagnosticKind::DuplicateId));
    }

    #[test]
    fn dead_branch_is_rejected() {
        let g = ModelGraph::new(
            "d",
            vec![2],
            vec![OpNode::new("a", OpKind::Relu, INPUT), OpNode::new("b", OpKind::Relu, INPUT)],
            "a",
        );
        let d = g.validate();
        assert_eq!(d, vec![Diagnostic::at("b", DiagnosticKind::Unused)]);
    }

    #[test]
    fn shape_mismatch_names_node() {
        let g = ModelGraph::sequential("s", vec![4], vec![("fc1", dense(4, 3)), ("fc2", dense(5, 1))]);
        let d = g.validate();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].node.as_deref(), Some("fc2"));
        assert!(matches!(d[0].kind, DiagnosticKind::ShapeMismatch { .. }));
    }

    #[test]
    fn conv_pool_shapes() {
        let g = ModelGraph::sequential(
            "cnn",
            vec![1, 28, 28],
            vec![
                (
                    "c1",
                    OpKind::Conv2d {
                        in_channels: 1,
                        out_channels: 6,
                        kernel: 5,
                        stride: 1,
                        padding: 0,
                    },
                ),
                ("p1", OpKind::MaxPool2d { kernel: 2, stride: 2 }),
                ("f", OpKind::Flatten),
            ],
        );
        let shapes = g.infer_shapes().unwrap();
        assert_eq!(shapes, vec![vec![6, 24, 24], vec![6, 12, 12], vec![864]]);
    }

    #[test]
    fn init_is_keyed_by_param_id_not_position() {
        let a = ModelGraph::sequential("a", vec![3], vec![("x", dense(3, 3)), ("y", dense(3, 2))]);
        let b = ModelGraph::sequential("b", vec![3], vec![("z", dense(3, 3)), ("y", dense(3, 2))]);
        let pa = a.init_params(9);
        let pb = b.init_params(9);
        assert!(pa.get("y.weight").unwrap().bits_eq(pb.get("y.weight").unwrap()));
        assert!(!pa.get("x.weight").unwrap().bits_eq(pb.get("z.weight").unwrap()));
    }

    #[test]
    fn namespace_roundtrip() {
        let g = ModelGraph::sequential("n", vec![3], vec![("fc", dense(3, 2)), ("r", OpKind::Relu)]);
        let ns = g.namespaced("job7");
        assert_eq!(ns.nodes[1].inputs, vec!["job7/fc".to_string()]);
        assert_eq!(ns.nodes[0].inputs, vec![INPUT.to_string()]);
        assert_eq!(ns.strip_namespace("job7").unwrap(), g);
        assert!(matches!(ns.strip_namespace("job8"), Err(Error::NamespaceCorruption(_))));
    }
}

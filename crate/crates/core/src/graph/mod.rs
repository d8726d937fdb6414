//! Directed acyclic graphs of layers with reverse-mode differentiation.
//!
//! A [`Model`] owns one layer per node. Nodes are evaluated in a stable
//! topological order; gradients flowing into a node from several consumers
//! are summed.

mod weights;

use std::collections::HashMap;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::layers::{FamilyCounts, Layer, LayerKind, LayerSpec, Mode};
use crate::tensor::{seeded_rng, Tensor};

pub use weights::{decode_entries, encode_entries, WEIGHTS_MAGIC};

/// Declarative node: a layer spec plus the names of its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub name: String,
    pub layer: LayerSpec,
    pub inputs: Vec<String>,
}

impl NodeSpec {
    pub fn new(name: impl Into<String>, layer: LayerSpec, inputs: &[&str]) -> Self {
        Self {
            name: name.into(),
            layer,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Clone)]
struct Node {
    name: String,
    spec: LayerSpec,
    inputs: Vec<usize>,
    shape: Vec<usize>,
    layer: Box<dyn Layer>,
}

/// Read-only view of one node.
#[derive(Debug, Clone, Copy)]
pub struct NodeInfo<'a> {
    pub name: &'a str,
    pub spec: &'a LayerSpec,
    pub kind: LayerKind,
    /// Per-sample output shape.
    pub shape: &'a [usize],
    pub param_count: usize,
}

/// Gradients from one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    /// Keyed by qualified parameter name; frozen parameters are absent.
    pub params: IndexMap<String, Tensor>,
    /// One entry per model input.
    pub inputs: Vec<Tensor>,
}

#[derive(Clone)]
pub struct Model {
    nodes: Vec<Node>,
    inputs: Vec<usize>,
    output: usize,
    frozen: Vec<String>,
    last_batch: Option<usize>,
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

fn node_err(name: &str, e: Error) -> Error {
    match e {
        Error::Shape(m) => Error::Shape(format!("node '{name}': {m}")),
        Error::Param(m) => Error::Param(format!("node '{name}': {m}")),
        other => other,
    }
}

impl Model {
    /// Validates, sorts, shape-checks and initialises a graph.
    ///
    /// Each node draws its initial weights from `seed` mixed with a hash of
    /// its name, so renaming one node leaves the others untouched.
    pub fn from_nodes(specs: Vec<NodeSpec>, output: &str, seed: u64) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, s) in specs.iter().enumerate() {
            if s.name.is_empty() {
                return Err(Error::Graph("node names must be non-empty".into()));
            }
            if index.insert(s.name.as_str(), i).is_some() {
                return Err(Error::Graph(format!("duplicate node name '{}'", s.name)));
            }
        }
        let mut preds = Vec::with_capacity(specs.len());
        for s in &specs {
            let mut p = Vec::with_capacity(s.inputs.len());
            for name in &s.inputs {
                match index.get(name.as_str()) {
                    Some(&j) => p.push(j),
                    None => {
                        return Err(Error::Graph(format!(
                            "node '{}' reads unknown node '{name}'",
                            s.name
                        )))
                    }
                }
            }
            preds.push(p);
        }
        let out = *index
            .get(output)
            .ok_or_else(|| Error::Graph(format!("unknown output node '{output}'")))?;

        // Kahn's algorithm, always taking the earliest declared ready node.
        let n = specs.len();
        let mut indegree: Vec<usize> = preds.iter().map(|p| p.len()).collect();
        let mut succs = vec![Vec::new(); n];
        for (i, p) in preds.iter().enumerate() {
            for &j in p {
                succs[j].push(i);
            }
        }
        let mut ready: std::collections::BTreeSet<usize> =
            (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for &s in &succs[i] {
                indegree[s] -= 1;
                if indegree[s] == 0 {
                    ready.insert(s);
                }
            }
        }
        if order.len() != n {
            let stuck: Vec<&str> = (0..n)
                .filter(|&i| indegree[i] > 0)
                .map(|i| specs[i].name.as_str())
                .collect();
            return Err(Error::Graph(format!("cycle through nodes {stuck:?}")));
        }

        let mut reaches = vec![false; n];
        reaches[out] = true;
        for &i in order.iter().rev() {
            if reaches[i] {
                for &j in &preds[i] {
                    reaches[j] = true;
                }
            }
        }
        if let Some(i) = (0..n).find(|&i| !reaches[i]) {
            return Err(Error::Graph(format!(
                "node '{}' does not feed the output '{output}'",
                specs[i].name
            )));
        }

        let mut position = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            position[i] = pos;
        }
        let mut nodes: Vec<Node> = Vec::with_capacity(n);
        for &i in &order {
            let s = &specs[i];
            if matches!(s.layer, LayerSpec::Input { .. }) != s.inputs.is_empty() {
                return Err(Error::Graph(format!(
                    "node '{}': only input nodes may have no predecessors",
                    s.name
                )));
            }
            let in_shapes: Vec<Vec<usize>> =
                preds[i].iter().map(|&j| nodes[position[j]].shape.clone()).collect();
            let shape = s.layer.output_shape(&in_shapes).map_err(|e| node_err(&s.name, e))?;
            let mut rng = seeded_rng(seed ^ fnv1a(&s.name));
            let layer = s
                .layer
                .build(&in_shapes, &mut rng)
                .map_err(|e| node_err(&s.name, e))?;
            nodes.push(Node {
                name: s.name.clone(),
                spec: s.layer.clone(),
                inputs: preds[i].iter().map(|&j| position[j]).collect(),
                shape,
                layer,
            });
        }
        // Inputs keep their declaration order.
        let inputs = (0..n)
            .filter(|&i| matches!(specs[i].layer, LayerSpec::Input { .. }))
            .map(|i| position[i])
            .collect();
        Ok(Self {
            nodes,
            inputs,
            output: position[out],
            frozen: Vec::new(),
            last_batch: None,
        })
    }

    pub fn input_shapes(&self) -> Vec<&[usize]> {
        self.inputs.iter().map(|&i| self.nodes[i].shape.as_slice()).collect()
    }

    pub fn input_names(&self) -> Vec<&str> {
        self.inputs.iter().map(|&i| self.nodes[i].name.as_str()).collect()
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.nodes[self.output].shape
    }

    pub fn output_name(&self) -> &str {
        &self.nodes[self.output].name
    }

    /// Nodes in evaluation order.
    pub fn nodes(&self) -> impl Iterator<Item = NodeInfo<'_>> {
        self.nodes.iter().map(|n| NodeInfo {
            name: &n.name,
            spec: &n.spec,
            kind: n.layer.kind(),
            shape: &n.shape,
            param_count: n.layer.params().iter().map(|(_, t)| t.len()).sum(),
        })
    }

    /// Recovers the declarative form, in evaluation order.
    pub fn specs(&self) -> Vec<NodeSpec> {
        self.nodes
            .iter()
            .map(|n| NodeSpec {
                name: n.name.clone(),
                layer: n.spec.clone(),
                inputs: n.inputs.iter().map(|&j| self.nodes[j].name.clone()).collect(),
            })
            .collect()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn families(&self) -> FamilyCounts {
        let mut c = FamilyCounts::default();
        for n in &self.nodes {
            c += n.layer.families();
        }
        c
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Trainable parameters as `node.param`.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        self.nodes
            .iter()
            .flat_map(|n| {
                n.layer
                    .params()
                    .into_iter()
                    .map(move |(p, t)| (format!("{}.{p}", n.name), t))
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.nodes
            .iter_mut()
            .flat_map(|n| {
                let name = n.name.clone();
                n.layer
                    .params_mut()
                    .into_iter()
                    .map(move |(p, t)| (format!("{name}.{p}"), t))
            })
            .collect()
    }

    pub fn buffers(&self) -> Vec<(String, &Tensor)> {
        self.nodes
            .iter()
            .flat_map(|n| {
                n.layer
                    .buffers()
                    .into_iter()
                    .map(move |(p, t)| (format!("{}.{p}", n.name), t))
            })
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.nodes
            .iter_mut()
            .flat_map(|n| {
                let name = n.name.clone();
                n.layer
                    .buffers_mut()
                    .into_iter()
                    .map(move |(p, t)| (format!("{name}.{p}"), t))
            })
            .collect()
    }

    /// Parameters and buffers together, the set a weights file carries.
    pub fn state(&self) -> Vec<(String, &Tensor)> {
        self.nodes
            .iter()
            .flat_map(|n| {
                let mut s = n.layer.params();
                s.extend(n.layer.buffers());
                s.into_iter().map(move |(p, t)| (format!("{}.{p}", n.name), t))
            })
            .collect()
    }

    /// Same order as [`Model::state`].
    pub fn state_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.nodes
            .iter_mut()
            .flat_map(|n| {
                let name = n.name.clone();
                n.layer
                    .state_mut()
                    .into_iter()
                    .map(move |(p, t)| (format!("{name}.{p}"), t))
            })
            .collect()
    }

    /// Excludes every parameter whose qualified name starts with `prefix`
    /// from gradients and updates.
    pub fn freeze(&mut self, prefix: &str) {
        if !self.frozen.iter().any(|p| p == prefix) {
            self.frozen.push(prefix.to_string());
        }
    }

    pub fn unfreeze_all(&mut self) {
        self.frozen.clear();
    }

    pub fn is_frozen(&self, param: &str) -> bool {
        self.frozen.iter().any(|p| param.starts_with(p.as_str()))
    }

    fn check_inputs(&self, inputs: &[&Tensor]) -> Result<usize> {
        if inputs.len() != self.inputs.len() {
            return Err(Error::Shape(format!(
                "model takes {} input(s), got {}",
                self.inputs.len(),
                inputs.len()
            )));
        }
        let batch = inputs.first().map(|x| x.shape()[0]).unwrap_or(0);
        for (x, &i) in inputs.iter().zip(&self.inputs) {
            let node = &self.nodes[i];
            if x.rank() == 0 || x.shape()[1..] != node.shape[..] || x.shape()[0] != batch {
                return Err(Error::Shape(format!(
                    "input '{}' expects [batch, {}], got {:?}",
                    node.name,
                    node.shape
                        .iter()
                        .map(|d| d.to_string())
                        .collect::<Vec<_>>()
                        .join(", "),
                    x.shape()
                )));
            }
        }
        Ok(batch)
    }

    /// Train-mode forward pass, caching for [`Model::backward`].
    pub fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor> {
        self.forward_mode(inputs, Mode::Train)
    }

    pub fn forward_mode(&mut self, inputs: &[&Tensor], mode: Mode) -> Result<Tensor> {
        let batch = self.check_inputs(inputs)?;
        let mut values: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (x, &i) in inputs.iter().zip(&self.inputs) {
            values[i] = Some((*x).clone());
        }
        for i in 0..self.nodes.len() {
            if values[i].is_some() {
                continue;
            }
            let node = &mut self.nodes[i];
            let args: Vec<&Tensor> = node
                .inputs
                .iter()
                .map(|&j| values[j].as_ref().expect("topological order"))
                .collect();
            let y = node.layer.forward(&args, mode).map_err(|e| node_err(&node.name, e))?;
            values[i] = Some(y);
        }
        self.last_batch = Some(batch);
        Ok(values[self.output].take().expect("output evaluated"))
    }

    /// Eval-mode forward pass with no side effects.
    pub fn predict(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        self.check_inputs(inputs)?;
        let mut values: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (x, &i) in inputs.iter().zip(&self.inputs) {
            values[i] = Some((*x).clone());
        }
        for i in 0..self.nodes.len() {
            if values[i].is_some() {
                continue;
            }
            let node = &self.nodes[i];
            let args: Vec<&Tensor> = node
                .inputs
                .iter()
                .map(|&j| values[j].as_ref().expect("topological order"))
                .collect();
            values[i] = Some(node.layer.infer(&args).map_err(|e| node_err(&node.name, e))?);
        }
        Ok(values[self.output].take().expect("output evaluated"))
    }

    /// Back-propagates `grad` (shaped like the last forward output).
    pub fn backward(&mut self, grad: &Tensor) -> Result<Gradients> {
        let batch = self
            .last_batch
            .take()
            .ok_or_else(|| Error::State("backward called without a preceding forward".into()))?;
        let mut want = vec![batch];
        want.extend_from_slice(&self.nodes[self.output].shape);
        if grad.shape() != want.as_slice() {
            return Err(Error::Shape(format!(
                "output gradient shape {:?}, expected {want:?}",
                grad.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[self.output] = Some(grad.clone());
        let mut params = Vec::new();
        for i in (0..self.nodes.len()).rev() {
            if self.inputs.contains(&i) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let node = &mut self.nodes[i];
            let back = node.layer.backward(&g).map_err(|e| node_err(&node.name, e))?;
            for ((pname, _), pg) in node.layer.params().into_iter().zip(back.params) {
                params.push((format!("{}.{pname}", node.name), pg));
            }
            let preds = node.inputs.clone();
            for (j, dx) in preds.into_iter().zip(back.inputs) {
                match &mut grads[j] {
                    Some(acc) => acc.add_assign(&dx)?,
                    slot => *slot = Some(dx),
                }
            }
        }
        // Report in `params()` order.
        let mut by_name: IndexMap<String, Tensor> = IndexMap::new();
        for (name, t) in params {
            if !self.is_frozen(&name) {
                by_name.insert(name, t);
            }
        }
        let mut ordered = IndexMap::with_capacity(by_name.len());
        for (name, _) in self.params() {
            if let Some(t) = by_name.swap_remove(&name) {
                ordered.insert(name, t);
            }
        }
        let inputs = self
            .inputs
            .iter()
            .map(|&i| {
                grads[i].take().unwrap_or_else(|| {
                    let mut s = vec![batch];
                    s.extend_from_slice(&self.nodes[i].shape);
                    Tensor::zeros(&s)
                })
            })
            .collect();
        Ok(Gradients {
            params: ordered,
            inputs,
        })
    }

    /// Copies every state tensor whose name and shape match in `other`.
    /// Returns the number copied.
    pub fn copy_matching_state(&mut self, other: &Model) -> usize {
        self.copy_prefixed_state(other, "")
    }

    /// Like [`Model::copy_matching_state`], restricted to names starting with `prefix`.
    pub fn copy_prefixed_state(&mut self, other: &Model, prefix: &str) -> usize {
        let src: HashMap<String, &Tensor> = other.state().into_iter().collect();
        let mut copied = 0;
        for (name, t) in self.state_mut() {
            if !name.starts_with(prefix) {
                continue;
            }
            if let Some(s) = src.get(&name) {
                if s.shape() == t.shape() {
                    *t = (*s).clone();
                    copied += 1;
                }
            }
        }
        copied
    }
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("nodes", &self.nodes.iter().map(|n| &n.name).collect::<Vec<_>>())
            .field("output", &self.nodes[self.output].name)
            .finish()
    }
}

/// Handle to a node added through a [`GraphBuilder`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Incremental graph construction with eager shape checking and auto-naming.
#[derive(Debug, Default, Clone)]
pub struct GraphBuilder {
    specs: Vec<NodeSpec>,
    shapes: Vec<Vec<usize>>,
    counters: HashMap<String, usize>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn input(&mut self, name: &str, shape: &[usize]) -> Result<NodeId> {
        self.add_named(name, LayerSpec::Input { shape: shape.to_vec() }, &[])
    }

    /// Adds a node named `<tag>_<n>`, counting per tag from 1.
    pub fn add(&mut self, spec: LayerSpec, inputs: &[NodeId]) -> Result<NodeId> {
        self.add_prefixed("", spec, inputs)
    }

    /// Like [`GraphBuilder::add`] with names `<prefix><tag>_<n>`.
    pub fn add_prefixed(&mut self, prefix: &str, spec: LayerSpec, inputs: &[NodeId]) -> Result<NodeId> {
        let stem = format!("{prefix}{}", spec.tag());
        let name = loop {
            let c = self.counters.entry(stem.clone()).or_insert(0);
            *c += 1;
            let candidate = format!("{stem}_{c}");
            if !self.specs.iter().any(|s| s.name == candidate) {
                break candidate;
            }
        };
        self.add_named(&name, spec, inputs)
    }

    pub fn add_named(&mut self, name: &str, spec: LayerSpec, inputs: &[NodeId]) -> Result<NodeId> {
        if self.specs.iter().any(|s| s.name == name) {
            return Err(Error::Graph(format!("duplicate node name '{name}'")));
        }
        let in_shapes: Vec<Vec<usize>> = inputs.iter().map(|id| self.shapes[id.0].clone()).collect();
        let shape = spec.output_shape(&in_shapes).map_err(|e| node_err(name, e))?;
        self.specs.push(NodeSpec {
            name: name.to_string(),
            layer: spec,
            inputs: inputs.iter().map(|id| self.specs[id.0].name.clone()).collect(),
        });
        self.shapes.push(shape);
        Ok(NodeId(self.specs.len() - 1))
    }

    /// Appends `specs` one after another starting from `from`.
    pub fn chain(
        &mut self,
        from: NodeId,
        specs: impl IntoIterator<Item = LayerSpec>,
    ) -> Result<NodeId> {
        let mut at = from;
        for s in specs {
            at = self.add(s, &[at])?;
        }
        Ok(at)
    }

    pub fn shape_of(&self, id: NodeId) -> &[usize] {
        &self.shapes[id.0]
    }

    pub fn name_of(&self, id: NodeId) -> &str {
        &self.specs[id.0].name
    }

    pub fn into_specs(self) -> Vec<NodeSpec> {
        self.specs
    }

    pub fn build(self, output: NodeId, seed: u64) -> Result<Model> {
        let out = self.specs[output.0].name.clone();
        Model::from_nodes(self.specs, &out, seed)
    }
}

//! Static computation graph with reverse-mode differentiation.
//!
//! A [`Graph`] is built once (for example, one recurrent model unrolled over a
//! fixed window length) and then evaluated many times by a [`Session`] with
//! different leaf bindings. Nodes can only reference nodes created before
//! them, so insertion order is a topological order and the backward sweep
//! simply walks the node list in reverse.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::ndcore::ops::{self, Backend};
use crate::ndcore::Tensor;

/// Named tensors bound to graph leaves (parameters and inputs).
pub type Bindings = BTreeMap<String, Tensor>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafKind {
    Input,
    Param,
}

#[derive(Debug, Clone)]
pub enum Op {
    Leaf { name: String, kind: LeafKind },
    Linear { x: NodeId, w: NodeId },
    AddBias { x: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    OneMinus { a: NodeId },
    Sigmoid { a: NodeId },
    Tanh { a: NodeId },
    SigmoidMix { a: NodeId, b: NodeId, logit: NodeId },
    SoftmaxMix { states: Vec<NodeId>, logits: NodeId },
    ZerosRows { like: NodeId, cols: usize },
    Mse { pred: NodeId, target: NodeId },
}

impl Op {
    fn label(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Linear { .. } => "linear",
            Op::AddBias { .. } => "add_bias",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::OneMinus { .. } => "one_minus",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Tanh { .. } => "tanh",
            Op::SigmoidMix { .. } => "sigmoid_mix",
            Op::SoftmaxMix { .. } => "softmax_mix",
            Op::ZerosRows { .. } => "zeros_rows",
            Op::Mse { .. } => "mse",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Op>,
    leaves: HashMap<String, NodeId>,
    outputs: BTreeMap<String, NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0]
    }

    fn push(&mut self, op: Op) -> NodeId {
        self.nodes.push(op);
        NodeId(self.nodes.len() - 1)
    }

    fn leaf(&mut self, name: &str, kind: LeafKind) -> NodeId {
        if let Some(&id) = self.leaves.get(name) {
            return id;
        }
        let id = self.push(Op::Leaf {
            name: name.to_string(),
            kind,
        });
        self.leaves.insert(name.to_string(), id);
        id
    }

    /// Leaf that receives data; repeated names resolve to the same node.
    pub fn input(&mut self, name: &str) -> NodeId {
        self.leaf(name, LeafKind::Input)
    }

    /// Leaf that holds a trainable tensor.
    pub fn param(&mut self, name: &str) -> NodeId {
        self.leaf(name, LeafKind::Param)
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId) -> NodeId {
        self.push(Op::Linear { x, w })
    }
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> NodeId {
        self.push(Op::AddBias { x, b })
    }
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add { a, b })
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul { a, b })
    }
    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        self.push(Op::OneMinus { a })
    }
    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sigmoid { a })
    }
    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh { a })
    }
    pub fn sigmoid_mix(&mut self, a: NodeId, b: NodeId, logit: NodeId) -> NodeId {
        self.push(Op::SigmoidMix { a, b, logit })
    }
    pub fn softmax_mix(&mut self, states: Vec<NodeId>, logits: NodeId) -> NodeId {
        self.push(Op::SoftmaxMix { states, logits })
    }
    pub fn zeros_rows(&mut self, like: NodeId, cols: usize) -> NodeId {
        self.push(Op::ZerosRows { like, cols })
    }
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> NodeId {
        self.push(Op::Mse { pred, target })
    }

    pub fn mark_output(&mut self, name: &str, id: NodeId) {
        self.outputs.insert(name.to_string(), id);
    }

    pub fn output_id(&self, name: &str) -> Result<NodeId> {
        self.outputs
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownOutput(name.to_string()))
    }

    /// Names of all leaves of the given kind, sorted.
    pub fn leaf_names(&self, kind: LeafKind) -> Vec<String> {
        let mut names: Vec<String> = self
            .nodes
            .iter()
            .filter_map(|op| match op {
                Op::Leaf { name, kind: k } if *k == kind => Some(name.clone()),
                _ => None,
            })
            .collect();
        names.sort();
        names
    }
}

impl Backend for Graph {
    type Value = NodeId;

    fn linear(&mut self, x: &NodeId, w: &NodeId) -> Result<NodeId> {
        Ok(Graph::linear(self, *x, *w))
    }
    fn add_bias(&mut self, x: &NodeId, b: &NodeId) -> Result<NodeId> {
        Ok(Graph::add_bias(self, *x, *b))
    }
    fn add(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        Ok(Graph::add(self, *a, *b))
    }
    fn mul(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        Ok(Graph::mul(self, *a, *b))
    }
    fn one_minus(&mut self, a: &NodeId) -> Result<NodeId> {
        Ok(Graph::one_minus(self, *a))
    }
    fn sigmoid(&mut self, a: &NodeId) -> Result<NodeId> {
        Ok(Graph::sigmoid(self, *a))
    }
    fn tanh(&mut self, a: &NodeId) -> Result<NodeId> {
        Ok(Graph::tanh(self, *a))
    }
    fn sigmoid_mix(&mut self, a: &NodeId, b: &NodeId, logit: &NodeId) -> Result<NodeId> {
        Ok(Graph::sigmoid_mix(self, *a, *b, *logit))
    }
    fn softmax_mix(&mut self, states: &[NodeId], logits: &NodeId) -> Result<NodeId> {
        Ok(Graph::softmax_mix(self, states.to_vec(), *logits))
    }
    fn zeros_rows(&mut self, like: &NodeId, cols: usize) -> Result<NodeId> {
        Ok(Graph::zeros_rows(self, *like, cols))
    }
}

/// Gradients of a scalar output with respect to every leaf.
#[derive(Debug, Clone, Default)]
pub struct Gradients(BTreeMap<String, Tensor>);

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.0.iter()
    }

    pub fn insert(&mut self, name: String, grad: Tensor) {
        self.0.insert(name, grad);
    }

    pub fn into_inner(self) -> BTreeMap<String, Tensor> {
        self.0
    }

    /// Squared L2 norm over the named tensors only.
    pub fn norm_squared<'a>(&self, names: impl IntoIterator<Item = &'a String>) -> f64 {
        names
            .into_iter()
            .filter_map(|n| self.0.get(n))
            .map(Tensor::sum_squares)
            .sum()
    }
}

/// Forward cache for one evaluation of a graph.
pub struct Session<'g> {
    graph: &'g Graph,
    values: Vec<Option<Tensor>>,
    evaluated: bool,
}

impl<'g> Session<'g> {
    pub fn new(graph: &'g Graph) -> Self {
        Self {
            graph,
            values: Vec::new(),
            evaluated: false,
        }
    }

    fn value(&self, id: NodeId) -> &Tensor {
        self.values[id.0].as_ref().expect("evaluated in order")
    }

    /// Runs the forward pass and returns every marked output.
    pub fn evaluate(&mut self, bindings: &Bindings) -> Result<BTreeMap<String, Tensor>> {
        self.evaluated = false;
        self.values.clear();
        self.values.reserve(self.graph.nodes.len());
        for (i, op) in self.graph.nodes.iter().enumerate() {
            let out = self.forward_node(op, bindings).map_err(|e| match e {
                Error::Shape { context, detail } => Error::Shape {
                    context: format!("node {i} ({}) [{context}]", op.label()),
                    detail,
                },
                other => other,
            })?;
            self.values.push(Some(out));
        }
        self.evaluated = true;
        Ok(self
            .graph
            .outputs
            .iter()
            .map(|(name, id)| (name.clone(), self.value(*id).clone()))
            .collect())
    }

    fn forward_node(&self, op: &Op, bindings: &Bindings) -> Result<Tensor> {
        let v = |id: &NodeId| self.value(*id);
        match op {
            Op::Leaf { name, .. } => bindings
                .get(name)
                .cloned()
                .ok_or_else(|| Error::MissingBinding(name.clone())),
            Op::Linear { x, w } => ops::linear(v(x), v(w)),
            Op::AddBias { x, b } => ops::add_bias(v(x), v(b)),
            Op::Add { a, b } => ops::add(v(a), v(b)),
            Op::Mul { a, b } => ops::mul(v(a), v(b)),
            Op::OneMinus { a } => Ok(ops::one_minus(v(a))),
            Op::Sigmoid { a } => Ok(ops::sigmoid(v(a))),
            Op::Tanh { a } => Ok(ops::tanh(v(a))),
            Op::SigmoidMix { a, b, logit } => ops::sigmoid_mix(v(a), v(b), v(logit)),
            Op::SoftmaxMix { states, logits } => {
                let s: Vec<&Tensor> = states.iter().map(|id| self.value(*id)).collect();
                ops::softmax_mix(&s, v(logits))
            }
            Op::ZerosRows { like, cols } => ops::zeros_rows(v(like), *cols),
            Op::Mse { pred, target } => ops::mse(v(pred), v(target)),
        }
    }

    /// Value of any marked output from the last evaluation.
    pub fn output(&self, name: &str) -> Result<&Tensor> {
        if !self.evaluated {
            return Err(Error::NotEvaluated);
        }
        Ok(self.value(self.graph.output_id(name)?))
    }

    /// Back-propagates from a one-element output. Every leaf gets a
    /// gradient; leaves the output does not depend on get zeros.
    pub fn backward(&self, output: &str) -> Result<Gradients> {
        if !self.evaluated {
            return Err(Error::NotEvaluated);
        }
        let root = self.graph.output_id(output)?;
        let seed_val = self.value(root);
        if seed_val.len() != 1 {
            return Err(Error::Shape {
                context: format!("backward from `{output}`"),
                detail: format!("seed must hold one value, shape {:?}", seed_val.shape()),
            });
        }
        let n = root.0 + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[root.0] = Some(Tensor::filled(seed_val.shape(), 1.0));

        fn acc(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
            match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for i in (0..n).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let op = &self.graph.nodes[i];
            let y = self.value(NodeId(i));
            match op {
                Op::Leaf { .. } => {
                    grads[i] = Some(dy);
                }
                Op::Linear { x, w } => {
                    let (dx, dw) = ops::linear_backward(self.value(*x), self.value(*w), &dy);
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *w, dw);
                }
                Op::AddBias { x, b } => {
                    acc(&mut grads, *b, ops::sum_rows(&dy));
                    acc(&mut grads, *x, dy);
                }
                Op::Add { a, b } => {
                    acc(&mut grads, *a, dy.clone());
                    acc(&mut grads, *b, dy);
                }
                Op::Mul { a, b } => {
                    let da = ops::mul(&dy, self.value(*b))?;
                    let db = ops::mul(&dy, self.value(*a))?;
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::OneMinus { a } => {
                    acc(&mut grads, *a, dy.map(|g| -g));
                }
                Op::Sigmoid { a } => {
                    let mut d = dy;
                    for (g, s) in d.data_mut().iter_mut().zip(y.data()) {
                        *g *= s * (1.0 - s);
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Tanh { a } => {
                    let mut d = dy;
                    for (g, t) in d.data_mut().iter_mut().zip(y.data()) {
                        *g *= 1.0 - t * t;
                    }
                    acc(&mut grads, *a, d);
                }
                Op::SigmoidMix { a, b, logit } => {
                    let (da, db, dl) = ops::sigmoid_mix_backward(
                        self.value(*a),
                        self.value(*b),
                        self.value(*logit),
                        &dy,
                    );
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                    acc(&mut grads, *logit, dl);
                }
                Op::SoftmaxMix { states, logits } => {
                    let s: Vec<&Tensor> = states.iter().map(|id| self.value(*id)).collect();
                    let (ds, dl) = ops::softmax_mix_backward(&s, self.value(*logits), y, &dy);
                    for (id, d) in states.iter().zip(ds) {
                        acc(&mut grads, *id, d);
                    }
                    acc(&mut grads, *logits, dl);
                }
                Op::ZerosRows { .. } => {}
                Op::Mse { pred, target } => {
                    let (dp, dt) =
                        ops::mse_backward(self.value(*pred), self.value(*target), dy.data()[0]);
                    acc(&mut grads, *pred, dp);
                    acc(&mut grads, *target, dt);
                }
            }
        }

        let mut out = Gradients::default();
        for (name, id) in &self.graph.leaves {
            let g = match grads.get_mut(id.0).and_then(Option::take) {
                Some(g) => g,
                None => Tensor::zeros(self.value(*id).shape()),
            };
            out.insert(name.clone(), g);
        }
        Ok(out)
    }
}

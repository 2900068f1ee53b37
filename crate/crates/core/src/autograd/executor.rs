use serde::{Deserialize, Serialize};

use super::kernels::{self, ConvGeom, PoolGeom};
use super::params::{Gradients, ParamStore};
use crate::error::{Error, Result};
use crate::model::{param_id, ModelGraph, OpKind, INPUT};
use crate::tensor::{Scalar, Tensor};

/// Loss criterion applied to a graph's output.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    #[default]
    SoftmaxCrossEntropy,
}

/// Activations recorded by a forward pass.
struct Tape<T> {
    params_version: u64,
    input: Tensor<T>,
    acts: Vec<Option<Tensor<T>>>,
    pool_argmax: Vec<Option<Vec<usize>>>,
    token_ids: Vec<Option<Vec<usize>>>,
    output_grad: Option<Tensor<T>>,
}

/// Runs forward and backward passes over one model graph.
///
/// The executor keeps the activations of the most recent forward pass. A
/// backward pass is only accepted while the parameters it is given are at the
/// same version as during that forward pass.
pub struct Executor<T: Scalar = f32> {
    graph: ModelGraph,
    order: Vec<usize>,
    /// Producer node of each node's input; `None` for the graph input.
    source: Vec<Option<usize>>,
    output: usize,
    tape: Option<Tape<T>>,
}

impl<T: Scalar> Executor<T> {
    pub fn new(graph: &ModelGraph) -> Result<Self> {
        graph.check()?;
        Ok(Self::from_checked(graph))
    }

    /// For graphs validated elsewhere, such as namespaced sub-model graphs
    /// whose ids carry a job prefix.
    pub(crate) fn from_checked(graph: &ModelGraph) -> Self {
        let order = graph.topo_order().expect("validated graph is acyclic");
        let source = graph
            .nodes
            .iter()
            .map(|n| {
                let input = &n.inputs[0];
                (input != INPUT).then(|| graph.node_index(input).expect("validated"))
            })
            .collect();
        let output = graph.node_index(&graph.output).expect("validated");
        Self {
            graph: graph.clone(),
            order,
            source,
            output,
            tape: None,
        }
    }

    pub fn graph(&self) -> &ModelGraph {
        &self.graph
    }

    /// Output of the most recent forward pass.
    pub fn output(&self) -> Option<&Tensor<T>> {
        self.tape.as_ref().and_then(|t| t.acts[self.output].as_ref())
    }

    fn param<'p>(params: &'p ParamStore<T>, node: &str, suffix: &str, shape: &[usize]) -> Result<&'p Tensor<T>> {
        let id = param_id(node, suffix);
        let t = params.get(&id).ok_or_else(|| Error::MissingParameter(id.clone()))?;
        if t.shape() != shape {
            return Err(Error::ParameterShape {
                id,
                expected: shape.to_vec(),
                found: t.shape().to_vec(),
            });
        }
        Ok(t)
    }

    pub fn forward(&mut self, params: &ParamStore<T>, batch: &Tensor<T>) -> Result<&Tensor<T>> {
        self.tape = None;
        if batch.rank() != self.graph.input_shape.len() + 1 || batch.shape()[1..] != self.graph.input_shape[..] {
            let consumer = self
                .graph
                .nodes
                .iter()
                .find(|n| n.inputs[0] == INPUT)
                .map(|n| n.id.clone())
                .unwrap_or_else(|| INPUT.to_string());
            let mut expected = vec![batch.batch()];
            expected.extend(&self.graph.input_shape);
            return Err(Error::ShapeMismatch {
                node: consumer,
                expected,
                found: batch.shape().to_vec(),
            });
        }

        let count = self.graph.nodes.len();
        let mut tape = Tape {
            params_version: params.version(),
            input: batch.clone(),
            acts: vec![None; count],
            pool_argmax: vec![None; count],
            token_ids: vec![None; count],
            output_grad: None,
        };
        let n = batch.batch();

        for &i in &self.order {
            let node = &self.graph.nodes[i];
            let x = match self.source[i] {
                Some(src) => tape.acts[src].as_ref().expect("topological order"),
                None => &tape.input,
            };
            let xs = &x.shape()[1..];
            let out_sample = node.op.output_shape(xs).expect("shapes checked at construction");
            let mut out_shape = vec![n];
            out_shape.extend(&out_sample);

            let y = match node.op {
                OpKind::Dense {
                    in_features,
                    out_features,
                } => {
                    let w = Self::param(params, &node.id, "weight", &[out_features, in_features])?;
                    let b = Self::param(params, &node.id, "bias", &[out_features])?;
                    kernels::dense_forward(x.data(), w.data(), b.data(), n, in_features, out_features)
                }
                OpKind::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let w = Self::param(params, &node.id, "weight", &[out_channels, in_channels, kernel, kernel])?;
                    let b = Self::param(params, &node.id, "bias", &[out_channels])?;
                    let geom = ConvGeom {
                        n,
                        c: in_channels,
                        h: xs[1],
                        w: xs[2],
                        oc: out_channels,
                        k: kernel,
                        stride,
                        pad: padding,
                    };
                    kernels::conv2d_forward(x.data(), w.data(), b.data(), geom)
                }
                OpKind::Relu => kernels::relu_forward(x.data()),
                OpKind::MaxPool2d { kernel, stride } => {
                    let geom = PoolGeom {
                        n,
                        c: xs[0],
                        h: xs[1],
                        w: xs[2],
                        k: kernel,
                        stride,
                    };
                    let (y, arg) = kernels::maxpool2d_forward(x.data(), geom);
                    tape.pool_argmax[i] = Some(arg);
                    y
                }
                OpKind::Flatten => x.data().to_vec(),
                OpKind::EmbeddingLookup { vocab, dim } => {
                    let table = Self::param(params, &node.id, "weight", &[vocab, dim])?;
                    let ids = x
                        .data()
                        .iter()
                        .map(|&v| {
                            let f = v.as_f64();
                            if f.fract() == 0.0 && f >= 0.0 && (f as usize) < vocab {
                                Ok(f as usize)
                            } else {
                                Err(Error::InvalidToken {
                                    node: node.id.clone(),
                                    value: f as f32,
                                    vocab,
                                })
                            }
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let y = kernels::embedding_forward(&ids, table.data(), dim);
                    tape.token_ids[i] = Some(ids);
                    y
                }
            };
            tape.acts[i] = Some(Tensor::from_parts(out_shape, y));
        }
        self.tape = Some(tape);
        Ok(self.output().expect("just computed"))
    }

    /// Computes the criterion on the last output and stores its gradient for [`Executor::backward`].
    /// `targets` holds one class index per sample.
    pub fn loss(&mut self, criterion: Criterion, targets: &Tensor<T>) -> Result<T> {
        let tape = self.tape.as_mut().ok_or(Error::BackwardBeforeForward)?;
        let out = tape.acts[self.output].as_ref().expect("forward ran");
        match criterion {
            Criterion::SoftmaxCrossEntropy => {
                if out.rank() != 2 || targets.len() != out.batch() {
                    return Err(Error::ShapeMismatch {
                        node: self.graph.output.clone(),
                        expected: vec![targets.len(), out.shape().get(1).copied().unwrap_or(0)],
                        found: out.shape().to_vec(),
                    });
                }
                let classes = out.shape()[1];
                let labels = class_labels(targets, classes)?;
                let (loss, grad) = kernels::softmax_cross_entropy(out.data(), &labels, classes);
                tape.output_grad = Some(Tensor::from_parts(out.shape().to_vec(), grad));
                Ok(loss)
            }
        }
    }

    /// Backpropagates the stored loss gradient and returns one gradient per parameter.
    pub fn backward(&mut self, params: &ParamStore<T>) -> Result<Gradients<T>> {
        let tape = self.tape.as_ref().ok_or(Error::BackwardBeforeForward)?;
        if tape.params_version != params.version() {
            return Err(Error::StaleForward);
        }
        let seed = tape.output_grad.clone().ok_or(Error::NoLoss)?;
        self.propagate(params, seed)
    }

    /// Backpropagates an explicit gradient of some scalar w.r.t. the graph output.
    pub fn backward_with(&mut self, params: &ParamStore<T>, output_grad: Tensor<T>) -> Result<Gradients<T>> {
        let tape = self.tape.as_ref().ok_or(Error::BackwardBeforeForward)?;
        if tape.params_version != params.version() {
            return Err(Error::StaleForward);
        }
        let out = tape.acts[self.output].as_ref().expect("forward ran");
        if out.shape() != output_grad.shape() {
            return Err(Error::ShapeMismatch {
                node: self.graph.output.clone(),
                expected: out.shape().to_vec(),
                found: output_grad.shape().to_vec(),
            });
        }
        self.propagate(params, output_grad)
    }

    fn propagate(&self, params: &ParamStore<T>, seed: Tensor<T>) -> Result<Gradients<T>> {
        let tape = self.tape.as_ref().expect("checked by caller");
        let mut node_grads: Vec<Option<Tensor<T>>> = vec![None; self.graph.nodes.len()];
        node_grads[self.output] = Some(seed);
        let mut grads = Gradients::new();

        for &i in self.order.iter().rev() {
            let Some(dy) = node_grads[i].take() else { continue };
            let node = &self.graph.nodes[i];
            let x = match self.source[i] {
                Some(src) => tape.acts[src].as_ref().expect("recorded"),
                None => &tape.input,
            };
            let n = x.batch();
            let xs = &x.shape()[1..];
            let needs_dx = self.source[i].is_some();

            let dx = match node.op {
                OpKind::Dense {
                    in_features,
                    out_features,
                } => {
                    let w = Self::param(params, &node.id, "weight", &[out_features, in_features])?;
                    let (dx, dw, db) =
                        kernels::dense_backward(x.data(), w.data(), dy.data(), n, in_features, out_features);
                    grads.insert(param_id(&node.id, "weight"), Tensor::from_parts(w.shape().to_vec(), dw));
                    grads.insert(param_id(&node.id, "bias"), Tensor::from_parts(vec![out_features], db));
                    dx
                }
                OpKind::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let w = Self::param(params, &node.id, "weight", &[out_channels, in_channels, kernel, kernel])?;
                    let geom = ConvGeom {
                        n,
                        c: in_channels,
                        h: xs[1],
                        w: xs[2],
                        oc: out_channels,
                        k: kernel,
                        stride,
                        pad: padding,
                    };
                    let (dx, dw, db) = kernels::conv2d_backward(x.data(), w.data(), dy.data(), geom);
                    grads.insert(param_id(&node.id, "weight"), Tensor::from_parts(w.shape().to_vec(), dw));
                    grads.insert(param_id(&node.id, "bias"), Tensor::from_parts(vec![out_channels], db));
                    dx
                }
                OpKind::Relu => kernels::relu_backward(x.data(), dy.data()),
                OpKind::MaxPool2d { .. } => {
                    let arg = tape.pool_argmax[i].as_ref().expect("recorded");
                    kernels::maxpool2d_backward(x.len(), arg, dy.data())
                }
                OpKind::Flatten => dy.into_data(),
                OpKind::EmbeddingLookup { vocab, dim } => {
                    let ids = tape.token_ids[i].as_ref().expect("recorded");
                    let dt = kernels::embedding_backward(ids, dy.data(), vocab, dim);
                    grads.insert(param_id(&node.id, "weight"), Tensor::from_parts(vec![vocab, dim], dt));
                    // Token ids are not differentiable.
                    continue;
                }
            };

            if let (true, Some(src)) = (needs_dx, self.source[i]) {
                let dx = Tensor::from_parts(x.shape().to_vec(), dx);
                node_grads[src] = Some(match node_grads[src].take() {
                    None => dx,
                    Some(mut acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(dx.data()) {
                            *a = *a + *b;
                        }
                        acc
                    }
                });
            }
        }
        Ok(grads)
    }
}

/// Converts a tensor of class indices into `usize` labels.
pub fn class_labels<T: Scalar>(targets: &Tensor<T>, classes: usize) -> Result<Vec<usize>> {
    targets
        .data()
        .iter()
        .map(|&v| {
            let f = v.as_f64();
            if f.fract() == 0.0 && f >= 0.0 && (f as usize) < classes {
                Ok(f as usize)
            } else {
                Err(Error::InvalidTarget {
                    value: f as f32,
                    classes,
                })
            }
        })
        .collect()
}

/// Index of the largest logit in each row (first on ties).
pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let classes = logits.shape().get(1).copied().unwrap_or(1);
    logits
        .data()
        .chunks(classes)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

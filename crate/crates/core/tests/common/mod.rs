//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

pub mod gradcheck;
pub mod reference;
pub mod sched;

use hybridnn::autograd::{train_step, Criterion, Executor, ParamStore};
use hybridnn::dataset::DatasetStore;
use hybridnn::memory::{estimate_model, CostModelConfig, MemoryEstimate, TimeProfile};
use hybridnn::model::{HyperParams, ModelGraph, OpKind, OpNode, OptimizerChoice, TrainingJob, INPUT};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Parameters after every optimizer step of a plain training loop.
pub fn standalone_trajectory(job: &TrainingJob, store: &DatasetStore) -> Vec<ParamStore> {
    let ds = store.get(&job.dataset).unwrap();
    let mut ex = Executor::new(&job.model).unwrap();
    let mut params = job.initial_params.clone();
    let mut opt = job.hyper.optimizer_state();
    let mut out = Vec::new();
    for epoch in 0..job.hyper.epochs {
        opt.set_epoch(epoch);
        for b in ds.batches(job.hyper.batch_size, epoch, job.hyper.seed).unwrap() {
            train_step(&mut ex, &mut params, &mut opt, Criterion::SoftmaxCrossEntropy, &b.inputs, &b.targets).unwrap();
            out.push(params.clone());
        }
    }
    out
}

/// Random valid graph: a chain of 1 to 6 layers over a vector, image or token
/// input, listed in shuffled node order with random ids.
pub fn random_graph(r: &mut ChaCha8Rng, name: &str) -> ModelGraph {
    let mut layers: Vec<OpKind> = Vec::new();
    let input_shape: Vec<usize>;
    let mut shape: Vec<usize>;
    match r.gen_range(0..3) {
        0 => {
            input_shape = vec![r.gen_range(1..8)];
            shape = input_shape.clone();
        }
        1 => {
            let (c, h, w) = (r.gen_range(1..3), r.gen_range(4..9), r.gen_range(4..9));
            input_shape = vec![c, h, w];
            shape = input_shape.clone();
            for _ in 0..r.gen_range(0..3) {
                let op = if r.gen_bool(0.5) {
                    let k = r.gen_range(1..4);
                    OpKind::Conv2d {
                        in_channels: shape[0],
                        out_channels: r.gen_range(1..4),
                        kernel: k,
                        stride: r.gen_range(1..3),
                        padding: r.gen_range(0..2),
                    }
                } else if r.gen_bool(0.5) {
                    OpKind::MaxPool2d {
                        kernel: r.gen_range(1..3),
                        stride: r.gen_range(1..3),
                    }
                } else {
                    OpKind::Relu
                };
                match reference::out_shape(&op, &shape) {
                    Some(s) => {
                        shape = s;
                        layers.push(op);
                    }
                    None => break,
                }
            }
            layers.push(OpKind::Flatten);
            shape = vec![shape.iter().product()];
        }
        _ => {
            let len = r.gen_range(1..6);
            let dim = r.gen_range(1..5);
            input_shape = vec![len];
            layers.push(OpKind::EmbeddingLookup {
                vocab: r.gen_range(2..20),
                dim,
            });
            layers.push(OpKind::Flatten);
            shape = vec![len * dim];
        }
    }
    for _ in 0..r.gen_range(1..4) {
        let out = r.gen_range(1..10);
        layers.push(OpKind::Dense {
            in_features: shape[0],
            out_features: out,
        });
        shape = vec![out];
        if r.gen_bool(0.5) {
            layers.push(OpKind::Relu);
        }
    }
    let mut prev = INPUT.to_string();
    let mut nodes = Vec::new();
    for (i, op) in layers.into_iter().enumerate() {
        let id = format!("{}_{i}_{}", op.name(), r.gen_range(0..1000));
        nodes.push(OpNode::new(id.clone(), op, prev));
        prev = id;
    }
    nodes.shuffle(r);
    ModelGraph::new(name, input_shape, nodes, prev)
}

/// Memory figures computed by hand from the graph: a row per job.
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerRow {
    pub params: u64,
    pub activations: u64,
    pub weights_grads: u64,
    pub io: u64,
    pub dataset: u64,
    pub unreleased: u64,
    pub total: u64,
}

pub const EPHEMERAL: u64 = 900 << 20;
pub const CONTEXT: u64 = 300 << 20;
pub const FRAGMENTATION: f64 = 1.1;

pub fn ledger_row(graph: &ModelGraph, batch: u64, dataset: u64) -> LedgerRow {
    let (params, activations) = reference::count(graph);
    let weights_grads = params * 2 * 4;
    let io = batch * 4 * activations;
    let unreleased = weights_grads + io + dataset;
    let reserved = (EPHEMERAL as f64 * FRAGMENTATION).round() as u64;
    LedgerRow {
        params,
        activations,
        weights_grads,
        io,
        dataset,
        unreleased,
        total: unreleased + reserved + CONTEXT,
    }
}

pub fn ledger_shared() -> u64 {
    (EPHEMERAL as f64 * FRAGMENTATION).round() as u64 + CONTEXT
}

pub struct Workload {
    pub graphs: Vec<ModelGraph>,
    pub hypers: Vec<HyperParams>,
    pub data: Vec<u64>,
}

/// 1 to 6 random graphs with random batch sizes and dataset sizes.
pub fn random_workload(seed: u64) -> Workload {
    let mut r = rng(seed);
    let n = r.gen_range(1..7);
    let graphs = (0..n).map(|i| random_graph(&mut r, &format!("m{i}"))).collect();
    let hypers = (0..n)
        .map(|_| HyperParams::new(r.gen_range(1..6), r.gen_range(1..512), 0.1, OptimizerChoice::Sgd))
        .collect();
    let data = (0..n).map(|_| r.gen_range(0..50_000_000)).collect();
    Workload { graphs, hypers, data }
}

pub fn estimates(w: &Workload, config: &CostModelConfig) -> Vec<MemoryEstimate> {
    w.graphs
        .iter()
        .zip(&w.hypers)
        .zip(&w.data)
        .map(|((g, h), &d)| estimate_model(g, h, d, config).unwrap())
        .collect()
}

pub fn ledger_rows(w: &Workload) -> Vec<LedgerRow> {
    w.graphs
        .iter()
        .zip(&w.hypers)
        .zip(&w.data)
        .map(|((g, h), &d)| ledger_row(g, h.batch_size as u64, d))
        .collect()
}

pub fn random_time_profiles(seed: u64) -> Vec<TimeProfile> {
    let mut r = rng(seed);
    (0..r.gen_range(1..8))
        .map(|_| TimeProfile {
            param_count: r.gen_range(1..10_000_000),
            samples: r.gen_range(1..100_000),
            batch_size: r.gen_range(1..512),
            epochs: r.gen_range(1..100),
        })
        .collect()
}

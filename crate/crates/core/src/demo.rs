//! Small built-in models and synthetic datasets used by the examples, the
//! tests and `unnd demo`.

use std::path::{Path, PathBuf};

use rand::Rng;

use crate::dataset::Dataset;
use crate::error::Result;
use crate::model::{HyperParams, ModelGraph, OpKind, OptimizerChoice};
use crate::rng::keyed_stream;
use crate::tensor::Tensor;

const DEMO_DOMAIN: &str = "hybridnn/demo";

fn dense(in_features: usize, out_features: usize) -> OpKind {
    OpKind::Dense {
        in_features,
        out_features,
    }
}

/// Two dense layers, 4 features, 2 classes.
pub fn mlp2() -> ModelGraph {
    ModelGraph::sequential(
        "mlp2",
        vec![4],
        vec![("fc1", dense(4, 16)), ("relu1", OpKind::Relu), ("fc2", dense(16, 2))],
    )
}

/// Three dense layers, 6 features, 4 classes.
pub fn mlp3() -> ModelGraph {
    ModelGraph::sequential(
        "mlp3",
        vec![6],
        vec![
            ("fc1", dense(6, 16)),
            ("relu1", OpKind::Relu),
            ("fc2", dense(16, 16)),
            ("relu2", OpKind::Relu),
            ("fc3", dense(16, 4)),
        ],
    )
}

/// One convolution and one pooling stage over 1x8x8 images, 2 classes.
pub fn tiny_cnn() -> ModelGraph {
    ModelGraph::sequential(
        "tiny_cnn",
        vec![1, 8, 8],
        vec![
            (
                "conv1",
                OpKind::Conv2d {
                    in_channels: 1,
                    out_channels: 4,
                    kernel: 3,
                    stride: 1,
                    padding: 0,
                },
            ),
            ("relu1", OpKind::Relu),
            ("pool1", OpKind::MaxPool2d { kernel: 2, stride: 2 }),
            ("flat", OpKind::Flatten),
            ("fc", dense(36, 2)),
        ],
    )
}

/// Token classifier: embedding, flatten, dense. Sequences of 5 tokens, vocab 12, 2 classes.
pub fn token_bag() -> ModelGraph {
    ModelGraph::sequential(
        "token_bag",
        vec![5],
        vec![
            ("embed", OpKind::EmbeddingLookup { vocab: 12, dim: 4 }),
            ("flat", OpKind::Flatten),
            ("fc", dense(20, 2)),
        ],
    )
}

/// LeNet-style network over 1x28x28 images with 44,470 trainable parameters.
pub fn lenet_class() -> ModelGraph {
    let conv = |i, o| OpKind::Conv2d {
        in_channels: i,
        out_channels: o,
        kernel: 5,
        stride: 1,
        padding: 0,
    };
    let pool = || OpKind::MaxPool2d { kernel: 2, stride: 2 };
    ModelGraph::sequential(
        "lenet",
        vec![1, 28, 28],
        vec![
            ("conv1", conv(1, 6)),
            ("relu1", OpKind::Relu),
            ("pool1", pool()),
            ("conv2", conv(6, 16)),
            ("relu2", OpKind::Relu),
            ("pool2", pool()),
            ("flat", OpKind::Flatten),
            ("fc1", dense(256, 154)),
            ("relu3", OpKind::Relu),
            ("fc2", dense(154, 14)),
            ("relu4", OpKind::Relu),
            ("fc3", dense(14, 10)),
        ],
    )
}

/// Linearly separable 2-class points in [-1, 1]^4.
pub fn two_class_data(seed: u64, train: usize, test: usize) -> Vec<u8> {
    points(seed, "two_class", 4, train, test, |x| (x[0] + x[1] - x[2] > 0.0) as u8 as f32)
}

/// 4-class points in [-1, 1]^6, labelled by the quadrant of the first two features.
pub fn four_class_data(seed: u64, train: usize, test: usize) -> Vec<u8> {
    points(seed, "four_class", 6, train, test, |x| {
        (2 * (x[0] > 0.0) as u8 + (x[1] > 0.0) as u8) as f32
    })
}

/// 8x8 images holding a horizontal (class 0) or vertical (class 1) bar plus noise.
pub fn bar_images(seed: u64, train: usize, test: usize) -> Vec<u8> {
    let mut rng = keyed_stream(DEMO_DOMAIN, seed, &[b"bars"]);
    let mut make = |n: usize| {
        let mut xs = Vec::with_capacity(n * 64);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let vertical = rng.gen_bool(0.5);
            let pos = rng.gen_range(0..8);
            for r in 0..8 {
                for c in 0..8 {
                    let on = if vertical { c == pos } else { r == pos };
                    xs.push(on as u8 as f32 + rng.gen_range(-0.2f32..0.2));
                }
            }
            ys.push(vertical as u8 as f32);
        }
        (Tensor::from_parts(vec![n, 1, 8, 8], xs), Tensor::from_vec(ys))
    };
    let (tx, ty) = make(train);
    let (vx, vy) = make(test);
    Dataset::encode(&tx, &ty, &vx, &vy).expect("demo dataset encodes")
}

/// Token sequences; class 1 when token 0 appears.
pub fn token_data(seed: u64, train: usize, test: usize) -> Vec<u8> {
    let mut rng = keyed_stream(DEMO_DOMAIN, seed, &[b"tokens"]);
    let mut make = |n: usize| {
        let mut xs = Vec::with_capacity(n * 5);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let row: Vec<f32> = (0..5).map(|_| rng.gen_range(0..12) as f32).collect();
            ys.push(row.contains(&0.0) as u8 as f32);
            xs.extend(row);
        }
        (Tensor::from_parts(vec![n, 5], xs), Tensor::from_vec(ys))
    };
    let (tx, ty) = make(train);
    let (vx, vy) = make(test);
    Dataset::encode(&tx, &ty, &vx, &vy).expect("demo dataset encodes")
}

fn points(seed: u64, tag: &str, dim: usize, train: usize, test: usize, label: impl Fn(&[f32]) -> f32) -> Vec<u8> {
    let mut rng = keyed_stream(DEMO_DOMAIN, seed, &[tag.as_bytes()]);
    let mut make = |n: usize| {
        let xs: Vec<f32> = (0..n * dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let ys: Vec<f32> = xs.chunks(dim).map(&label).collect();
        (Tensor::from_parts(vec![n, dim], xs), Tensor::from_vec(ys))
    };
    let (tx, ty) = make(train);
    let (vx, vy) = make(test);
    Dataset::encode(&tx, &ty, &vx, &vy).expect("demo dataset encodes")
}

/// One ready-to-submit demo job.
#[derive(Clone, Debug)]
pub struct DemoJob {
    pub job_id: &'static str,
    pub graph: ModelGraph,
    pub dataset: Vec<u8>,
    pub hyper: HyperParams,
}

/// The three toy jobs: 2-layer MLP, 3-layer MLP and tiny CNN.
pub fn three_jobs() -> Vec<DemoJob> {
    vec![
        DemoJob {
            job_id: "mlp2",
            graph: mlp2(),
            dataset: two_class_data(1, 256, 64),
            hyper: HyperParams::new(3, 32, 0.1, OptimizerChoice::Sgd).with_seed(11),
        },
        DemoJob {
            job_id: "mlp3",
            graph: mlp3(),
            dataset: four_class_data(2, 256, 64),
            hyper: HyperParams::new(4, 32, 0.01, OptimizerChoice::Adam).with_seed(22),
        },
        DemoJob {
            job_id: "cnn",
            graph: tiny_cnn(),
            dataset: bar_images(3, 128, 32),
            hyper: HyperParams::new(5, 16, 0.05, OptimizerChoice::Sgd)
                .with_momentum(0.9)
                .with_milestones(vec![3], 0.5)
                .with_seed(33),
        },
    ]
}

/// Paths of one demo job's input files.
#[derive(Clone, Debug)]
pub struct DemoFiles {
    pub job_id: &'static str,
    pub model: PathBuf,
    pub dataset: PathBuf,
    pub hyper: PathBuf,
}

/// Writes each demo job as a JSON graph, a dataset file and a hyper-parameter
/// document under `dir`.
pub fn write_inputs(dir: &Path, jobs: &[DemoJob]) -> Result<Vec<DemoFiles>> {
    std::fs::create_dir_all(dir)?;
    jobs.iter()
        .map(|j| {
            let files = DemoFiles {
                job_id: j.job_id,
                model: dir.join(format!("{}.model.json", j.job_id)),
                dataset: dir.join(format!("{}.data.unnd", j.job_id)),
                hyper: dir.join(format!("{}.hyper.json", j.job_id)),
            };
            std::fs::write(&files.model, serde_json::to_vec_pretty(&j.graph)?)?;
            std::fs::write(&files.dataset, &j.dataset)?;
            std::fs::write(&files.hyper, j.hyper.to_json())?;
            Ok(files)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graphs_validate() {
        for g in [mlp2(), mlp3(), tiny_cnn(), token_bag(), lenet_class()] {
            assert!(g.validate().is_empty(), "{}: {:?}", g.name, g.validate());
        }
    }

    #[test]
    fn lenet_param_count() {
        assert_eq!(lenet_class().param_count(), 44470);
        assert_eq!(lenet_class().output_shape().unwrap(), vec![10]);
    }

    #[test]
    fn datasets_decode() {
        for bytes in [two_class_data(0, 8, 4), four_class_data(0, 8, 4), bar_images(0, 8, 4), token_data(0, 8, 4)] {
            Dataset::decode(&bytes).unwrap();
        }
        assert_eq!(two_class_data(5, 8, 4), two_class_data(5, 8, 4));
    }
}

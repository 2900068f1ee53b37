//! Merges an MLP, a CNN and a token model into one hybrid, routes a batch to
//! each sub-model and separates one back out.

use hybridnn::dataset::DatasetHash;
use hybridnn::demo;
use hybridnn::model::{HyperParams, OptimizerChoice, TrainingJob};
use hybridnn::separator::separate;
use hybridnn::unifier::HybridModel;
use hybridnn::Tensor;

fn main() -> hybridnn::Result<()> {
    let hyper = HyperParams::new(1, 8, 0.1, OptimizerChoice::Sgd);
    let graphs = [("vision", demo::tiny_cnn()), ("tabular", demo::mlp3()), ("text", demo::token_bag())];
    let jobs = graphs
        .into_iter()
        .enumerate()
        .map(|(i, (id, g))| TrainingJob::new(id, g, DatasetHash::of(id.as_bytes()), hyper.clone(), i as u64))
        .collect::<hybridnn::Result<Vec<_>>>()?;

    let hybrid = HybridModel::merge(&jobs)?;
    println!("{} nodes, {} edges", hybrid.node_ids().len(), hybrid.edges().len());
    for (from, to) in hybrid.edges().iter().take(6) {
        println!("  {from} -> {to}");
    }

    for job in &jobs {
        let mut shape = vec![2];
        shape.extend(&job.model.input_shape);
        let batch = Tensor::zeros(shape);
        let out = hybrid.route(&job.job_id, &batch)?;
        println!("{:8} input {:?} -> output {:?}", job.job_id, batch.shape(), out.shape());
    }

    let (graph, params) = separate(&hybrid, "text")?;
    assert_eq!(graph, jobs[2].model);
    println!("separated `{}` with {} parameter tensors", graph.name, params.len());
    Ok(())
}

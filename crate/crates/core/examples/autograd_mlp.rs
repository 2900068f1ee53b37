//! Trains the two-layer demo MLP with the bare autograd engine.

use hybridnn::autograd::{evaluate, train_step, Criterion, Executor};
use hybridnn::dataset::Dataset;
use hybridnn::demo;
use hybridnn::model::{HyperParams, OptimizerChoice};

fn main() -> hybridnn::Result<()> {
    let graph = demo::mlp2();
    let data = Dataset::decode(&demo::two_class_data(1, 256, 64))?;
    let hyper = HyperParams::new(5, 32, 0.1, OptimizerChoice::Sgd).with_seed(11);

    let mut ex = Executor::new(&graph)?;
    let mut params = graph.init_params(hyper.seed);
    let mut opt = hyper.optimizer_state();
    println!("{} parameters", graph.param_count());

    for epoch in 0..hyper.epochs {
        opt.set_epoch(epoch);
        let mut loss = 0.0;
        let mut seen = 0;
        for b in data.batches(hyper.batch_size, epoch, hyper.seed)? {
            let out = train_step(&mut ex, &mut params, &mut opt, Criterion::SoftmaxCrossEntropy, &b.inputs, &b.targets)?;
            loss += out.loss as f64 * out.samples as f64;
            seen += out.samples;
        }
        println!("epoch {epoch}: loss {:.4}", loss / seen as f64);
    }

    let (mut correct, mut total) = (0, 0);
    for b in data.test_batches(64) {
        let out = evaluate(&mut ex, &params, Criterion::SoftmaxCrossEntropy, &b.inputs, &b.targets)?;
        correct += out.correct;
        total += out.samples;
    }
    println!("test accuracy {:.1}%", 100.0 * correct as f64 / total as f64);
    Ok(())
}

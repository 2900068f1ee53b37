//! Naive reference forward passes, written directly from the layer
//! definitions without sharing code with the library.

use hybridnn::model::{ModelGraph, OpKind, INPUT};

pub fn out_shape(op: &OpKind, s: &[usize]) -> Option<Vec<usize>> {
    match *op {
        OpKind::Dense {
            in_features,
            out_features,
        } => (s == [in_features]).then(|| vec![out_features]),
        OpKind::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        } => {
            let [c, h, w] = *s else { return None };
            if c != in_channels || h + 2 * padding < kernel || w + 2 * padding < kernel {
                return None;
            }
            Some(vec![
                out_channels,
                (h + 2 * padding - kernel) / stride + 1,
                (w + 2 * padding - kernel) / stride + 1,
            ])
        }
        OpKind::MaxPool2d { kernel, stride } => {
            let [c, h, w] = *s else { return None };
            if h < kernel || w < kernel {
                return None;
            }
            Some(vec![c, (h - kernel) / stride + 1, (w - kernel) / stride + 1])
        }
        OpKind::Relu => Some(s.to_vec()),
        OpKind::Flatten => Some(vec![s.iter().product()]),
        OpKind::EmbeddingLookup { dim, .. } => {
            let [len] = *s else { return None };
            Some(vec![len, dim])
        }
    }
}

/// (trainable parameters, input + node output elements per sample).
pub fn count(g: &ModelGraph) -> (u64, u64) {
    let mut shapes: Vec<(String, Vec<usize>)> = vec![(INPUT.to_string(), g.input_shape.clone())];
    let mut params = 0u64;
    let mut pending: Vec<_> = g.nodes.iter().collect();
    while !pending.is_empty() {
        let before = pending.len();
        pending.retain(|n| {
            let Some((_, s)) = shapes.iter().find(|(id, _)| *id == n.inputs[0]) else {
                return true;
            };
            let out = out_shape(&n.op, s).expect("valid graph");
            params += match n.op {
                OpKind::Dense {
                    in_features,
                    out_features,
                } => (in_features * out_features + out_features) as u64,
                OpKind::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => (out_channels * in_channels * kernel * kernel + out_channels) as u64,
                OpKind::EmbeddingLookup { vocab, dim } => (vocab * dim) as u64,
                _ => 0,
            };
            shapes.push((n.id.clone(), out));
            false
        });
        assert!(pending.len() < before, "graph is not a DAG");
    }
    let acts = shapes.iter().map(|(_, s)| s.iter().product::<usize>() as u64).sum();
    (params, acts)
}

pub fn dense(x: &[f64], w: &[f64], b: &[f64], n: usize, inf: usize, outf: usize) -> Vec<f64> {
    let mut y = vec![0.0; n * outf];
    for s in 0..n {
        for o in 0..outf {
            y[s * outf + o] = b[o] + (0..inf).map(|i| w[o * inf + i] * x[s * inf + i]).sum::<f64>();
        }
    }
    y
}

#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub oc: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub fn oh(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }
    pub fn ow(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }
}

pub fn conv(x: &[f64], wt: &[f64], b: &[f64], g: Conv) -> Vec<f64> {
    let (oh, ow) = (g.oh(), g.ow());
    let at = |s: usize, c: usize, i: isize, j: isize| -> f64 {
        if i < 0 || j < 0 || i >= g.h as isize || j >= g.w as isize {
            0.0
        } else {
            x[((s * g.c + c) * g.h + i as usize) * g.w + j as usize]
        }
    };
    let mut y = Vec::new();
    for s in 0..g.n {
        for o in 0..g.oc {
            for r in 0..oh {
                for q in 0..ow {
                    let mut acc = b[o];
                    for c in 0..g.c {
                        for ki in 0..g.k {
                            for kj in 0..g.k {
                                let i = (r * g.stride + ki) as isize - g.pad as isize;
                                let j = (q * g.stride + kj) as isize - g.pad as isize;
                                acc += wt[((o * g.c + c) * g.k + ki) * g.k + kj] * at(s, c, i, j);
                            }
                        }
                    }
                    y.push(acc);
                }
            }
        }
    }
    y
}

pub fn maxpool(x: &[f64], n: usize, c: usize, h: usize, w: usize, k: usize, stride: usize) -> Vec<f64> {
    let (oh, ow) = ((h - k) / stride + 1, (w - k) / stride + 1);
    let mut y = Vec::new();
    for plane in 0..n * c {
        for r in 0..oh {
            for q in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for i in 0..k {
                    for j in 0..k {
                        m = m.max(x[plane * h * w + (r * stride + i) * w + q * stride + j]);
                    }
                }
                y.push(m);
            }
        }
    }
    y
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

pub fn embedding(ids: &[usize], table: &[f64], dim: usize) -> Vec<f64> {
    ids.iter().flat_map(|&i| table[i * dim..(i + 1) * dim].to_vec()).collect()
}

/// Mean softmax cross-entropy.
pub fn cross_entropy(logits: &[f64], targets: &[usize], classes: usize) -> f64 {
    let mut total = 0.0;
    for (row, &t) in logits.chunks(classes).zip(targets) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[t];
    }
    total / targets.len() as f64
}

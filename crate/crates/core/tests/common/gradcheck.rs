//! Central finite differences on the reference forward passes against the
//! library's backward kernels, in f64.

use hybridnn::autograd::kernels::{self, ConvGeom, PoolGeom};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::reference::{self as r, Conv};

pub const H: f64 = 1e-3;
pub const TOL: f64 = 1e-4;
pub const INSTANCES: usize = 20;

#[derive(Debug, Clone)]
pub struct OpCheck {
    pub op: &'static str,
    pub instances: usize,
    pub compared: usize,
    pub max_rel: f64,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.instances == INSTANCES && self.compared > 0 && self.max_rel <= TOL
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn uniform(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Central difference of `f` w.r.t. every coordinate of `x`.
pub fn numeric(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + H;
            let up = f(&p);
            p[i] = x[i] - H;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Default)]
struct Acc {
    compared: usize,
    max_rel: f64,
}

impl Acc {
    fn add(&mut self, analytic: &[f64], numeric: &[f64]) {
        assert_eq!(analytic.len(), numeric.len());
        for (&a, &n) in analytic.iter().zip(numeric) {
            self.compared += 1;
            self.max_rel = self.max_rel.max(rel_err(a, n));
        }
    }

    fn done(self, op: &'static str) -> OpCheck {
        OpCheck {
            op,
            instances: INSTANCES,
            compared: self.compared,
            max_rel: self.max_rel,
        }
    }
}

pub fn dense(rng: &mut ChaCha8Rng) -> OpCheck {
    let mut acc = Acc::default();
    for _ in 0..INSTANCES {
        let (n, inf, outf) = (rng.gen_range(1..4), rng.gen_range(1..6), rng.gen_range(1..5));
        let (x, w, b) = (uniform(rng, n * inf), uniform(rng, outf * inf), uniform(rng, outf));
        let dy = uniform(rng, n * outf);
        let (dx, dw, db) = kernels::dense_backward(&x, &w, &dy, n, inf, outf);
        acc.add(&dx, &numeric(&x, |x| dot(&dy, &r::dense(x, &w, &b, n, inf, outf))));
        acc.add(&dw, &numeric(&w, |w| dot(&dy, &r::dense(&x, w, &b, n, inf, outf))));
        acc.add(&db, &numeric(&b, |b| dot(&dy, &r::dense(&x, &w, b, n, inf, outf))));
    }
    acc.done("dense")
}

pub fn random_conv(rng: &mut ChaCha8Rng) -> Conv {
    loop {
        let g = Conv {
            n: rng.gen_range(1..3),
            c: rng.gen_range(1..4),
            h: rng.gen_range(3..7),
            w: rng.gen_range(3..7),
            oc: rng.gen_range(1..4),
            k: rng.gen_range(1..4),
            stride: rng.gen_range(1..3),
            pad: rng.gen_range(0..2),
        };
        if g.k <= g.h + 2 * g.pad && g.k <= g.w + 2 * g.pad {
            return g;
        }
    }
}

fn geom(g: Conv) -> ConvGeom {
    ConvGeom {
        n: g.n,
        c: g.c,
        h: g.h,
        w: g.w,
        oc: g.oc,
        k: g.k,
        stride: g.stride,
        pad: g.pad,
    }
}

pub fn conv2d(rng: &mut ChaCha8Rng) -> OpCheck {
    let mut acc = Acc::default();
    for _ in 0..INSTANCES {
        let g = random_conv(rng);
        let x = uniform(rng, g.n * g.c * g.h * g.w);
        let w = uniform(rng, g.oc * g.c * g.k * g.k);
        let b = uniform(rng, g.oc);
        let dy = uniform(rng, g.n * g.oc * g.oh() * g.ow());
        assert_eq!(kernels::conv2d_forward(&x, &w, &b, geom(g)).len(), dy.len());
        let (dx, dw, db) = kernels::conv2d_backward(&x, &w, &dy, geom(g));
        acc.add(&dx, &numeric(&x, |x| dot(&dy, &r::conv(x, &w, &b, g))));
        acc.add(&dw, &numeric(&w, |w| dot(&dy, &r::conv(&x, w, &b, g))));
        acc.add(&db, &numeric(&b, |b| dot(&dy, &r::conv(&x, &w, b, g))));
    }
    acc.done("conv2d")
}

/// Values at least 0.05 away from zero, so a step of `H` never crosses the kink.
pub fn relu(rng: &mut ChaCha8Rng) -> OpCheck {
    let mut acc = Acc::default();
    for _ in 0..INSTANCES {
        let len = rng.gen_range(1..20);
        let x: Vec<f64> = (0..len)
            .map(|_| rng.gen_range(0.05..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        let dy = uniform(rng, len);
        let dx = kernels::relu_backward(&x, &dy);
        acc.add(&dx, &numeric(&x, |x| dot(&dy, &r::relu(x))));
    }
    acc.done("relu")
}

/// Distinct values on a 0.01 grid, so a step of `H` never changes a window's maximum.
pub fn maxpool2d(rng: &mut ChaCha8Rng) -> OpCheck {
    let mut acc = Acc::default();
    for _ in 0..INSTANCES {
        let (n, c, h, w) = (rng.gen_range(1..3), rng.gen_range(1..3), rng.gen_range(2..7), rng.gen_range(2..7));
        let k = rng.gen_range(1..=h.min(w).min(3));
        let stride = rng.gen_range(1..3);
        let g = PoolGeom { n, c, h, w, k, stride };
        let mut x: Vec<f64> = (0..n * c * h * w).map(|i| i as f64 * 0.01 - 0.5).collect();
        x.shuffle(rng);
        let dy = uniform(rng, n * c * g.oh() * g.ow());
        let (_, arg) = kernels::maxpool2d_forward(&x, g);
        let dx = kernels::maxpool2d_backward(x.len(), &arg, &dy);
        acc.add(&dx, &numeric(&x, |x| dot(&dy, &r::maxpool(x, n, c, h, w, k, stride))));
    }
    acc.done("maxpool2d")
}

/// Flatten only reshapes, so it is checked in context: conv, flatten, dense,
/// cross-entropy, differentiated w.r.t. the convolution weights.
pub fn flatten(rng: &mut ChaCha8Rng) -> OpCheck {
    let mut acc = Acc::default();
    for _ in 0..INSTANCES {
        let g = random_conv(rng);
        let feat = g.oc * g.oh() * g.ow();
        let classes = rng.gen_range(2..5);
        let x = uniform(rng, g.n * g.c * g.h * g.w);
        let cw = uniform(rng, g.oc * g.c * g.k * g.k);
        let cb = uniform(rng, g.oc);
        let dw = uniform(rng, classes * feat);
        let db = uniform(rng, classes);
        let targets: Vec<usize> = (0..g.n).map(|_| rng.gen_range(0..classes)).collect();
        // library path: conv forward, flatten is the identity on the buffer
        let conv_out = kernels::conv2d_forward(&x, &cw, &cb, geom(g));
        let logits = kernels::dense_forward(&conv_out, &dw, &db, g.n, feat, classes);
        let (_, dlogits) = kernels::softmax_cross_entropy(&logits, &targets, classes);
        let (dflat, _, _) = kernels::dense_backward(&conv_out, &dw, &dlogits, g.n, feat, classes);
        let (_, dcw, dcb) = kernels::conv2d_backward(&x, &cw, &dflat, geom(g));
        let loss = |cw: &[f64], cb: &[f64]| {
            let y = r::conv(&x, cw, cb, g);
            r::cross_entropy(&r::dense(&y, &dw, &db, g.n, feat, classes), &targets, classes)
        };
        acc.add(&dcw, &numeric(&cw, |cw| loss(cw, &cb)));
        acc.add(&dcb, &numeric(&cb, |cb| loss(&cw, cb)));
    }
    acc.done("flatten")
}

pub fn embedding(rng: &mut ChaCha8Rng) -> OpCheck {
    let mut acc = Acc::default();
    for _ in 0..INSTANCES {
        let (vocab, dim, count) = (rng.gen_range(1..8), rng.gen_range(1..5), rng.gen_range(1..10));
        let ids: Vec<usize> = (0..count).map(|_| rng.gen_range(0..vocab)).collect();
        let table = uniform(rng, vocab * dim);
        let dy = uniform(rng, count * dim);
        assert_eq!(kernels::embedding_forward(&ids, &table, dim), r::embedding(&ids, &table, dim));
        let dt = kernels::embedding_backward(&ids, &dy, vocab, dim);
        acc.add(&dt, &numeric(&table, |t| dot(&dy, &r::embedding(&ids, t, dim))));
    }
    acc.done("embedding_lookup")
}

pub fn softmax_cross_entropy(rng: &mut ChaCha8Rng) -> OpCheck {
    let mut acc = Acc::default();
    for _ in 0..INSTANCES {
        let (n, classes) = (rng.gen_range(1..5), rng.gen_range(2..7));
        let logits: Vec<f64> = uniform(rng, n * classes).iter().map(|v| v * 3.0).collect();
        let targets: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let (loss, grad) = kernels::softmax_cross_entropy(&logits, &targets, classes);
        assert!(rel_err(loss, r::cross_entropy(&logits, &targets, classes)) < 1e-12);
        acc.add(&grad, &numeric(&logits, |z| r::cross_entropy(z, &targets, classes)));
    }
    acc.done("softmax_cross_entropy")
}

pub fn all_ops(rng: &mut ChaCha8Rng) -> Vec<OpCheck> {
    vec![
        dense(rng),
        conv2d(rng),
        relu(rng),
        maxpool2d(rng),
        flatten(rng),
        embedding(rng),
        softmax_cross_entropy(rng),
    ]
}

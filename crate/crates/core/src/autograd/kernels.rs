//! Forward and backward kernels for the supported op kinds.
//!
//! All loops run sequentially in a fixed order. Reductions over the batch
//! accumulate in ascending sample index, so the same inputs always produce
//! bit-identical outputs.

use crate::tensor::Scalar;

/// `y[s, o] = b[o] + sum_i w[o, i] * x[s, i]`
pub fn dense_forward<T: Scalar>(x: &[T], w: &[T], b: &[T], n: usize, inf: usize, outf: usize) -> Vec<T> {
    let mut y = vec![T::zero(); n * outf];
    for s in 0..n {
        let xs = &x[s * inf..(s + 1) * inf];
        for o in 0..outf {
            let wo = &w[o * inf..(o + 1) * inf];
            let mut acc = b[o];
            for i in 0..inf {
                acc = acc + wo[i] * xs[i];
            }
            y[s * outf + o] = acc;
        }
    }
    y
}

/// Returns `(dx, dw, db)`.
pub fn dense_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dy: &[T],
    n: usize,
    inf: usize,
    outf: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dx = vec![T::zero(); n * inf];
    let mut dw = vec![T::zero(); outf * inf];
    let mut db = vec![T::zero(); outf];
    for s in 0..n {
        let xs = &x[s * inf..(s + 1) * inf];
        for o in 0..outf {
            let g = dy[s * outf + o];
            db[o] = db[o] + g;
            let dwo = &mut dw[o * inf..(o + 1) * inf];
            for i in 0..inf {
                dwo[i] = dwo[i] + g * xs[i];
            }
            let wo = &w[o * inf..(o + 1) * inf];
            let dxs = &mut dx[s * inf..(s + 1) * inf];
            for i in 0..inf {
                dxs[i] = dxs[i] + g * wo[i];
            }
        }
    }
    (dx, dw, db)
}

pub fn relu_forward<T: Scalar>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect()
}

pub fn relu_backward<T: Scalar>(x: &[T], dy: &[T]) -> Vec<T> {
    x.iter()
        .zip(dy)
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub oc: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn oh(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn ow(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }

    /// Input coordinate for output position `o` and kernel offset `kk`, if inside the image.
    #[inline]
    fn src(&self, o: usize, kk: usize, limit: usize) -> Option<usize> {
        let pos = (o * self.stride + kk).checked_sub(self.pad)?;
        (pos < limit).then_some(pos)
    }
}

pub fn conv2d_forward<T: Scalar>(x: &[T], wt: &[T], b: &[T], g: ConvGeom) -> Vec<T> {
    let (oh, ow, k) = (g.oh(), g.ow(), g.k);
    let mut y = vec![T::zero(); g.n * g.oc * oh * ow];
    for s in 0..g.n {
        for o in 0..g.oc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[o];
                    for c in 0..g.c {
                        for ky in 0..k {
                            let Some(iy) = g.src(oy, ky, g.h) else { continue };
                            for kx in 0..k {
                                let Some(ix) = g.src(ox, kx, g.w) else { continue };
                                let wv = wt[((o * g.c + c) * k + ky) * k + kx];
                                let xv = x[((s * g.c + c) * g.h + iy) * g.w + ix];
                                acc = acc + wv * xv;
                            }
                        }
                    }
                    y[((s * g.oc + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    y
}

/// Returns `(dx, dw, db)`.
pub fn conv2d_backward<T: Scalar>(x: &[T], wt: &[T], dy: &[T], g: ConvGeom) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (oh, ow, k) = (g.oh(), g.ow(), g.k);
    let mut dx = vec![T::zero(); x.len()];
    let mut dw = vec![T::zero(); wt.len()];
    let mut db = vec![T::zero(); g.oc];
    for s in 0..g.n {
        for o in 0..g.oc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let gv = dy[((s * g.oc + o) * oh + oy) * ow + ox];
                    db[o] = db[o] + gv;
                    for c in 0..g.c {
                        for ky in 0..k {
                            let Some(iy) = g.src(oy, ky, g.h) else { continue };
                            for kx in 0..k {
                                let Some(ix) = g.src(ox, kx, g.w) else { continue };
                                let wi = ((o * g.c + c) * k + ky) * k + kx;
                                let xi = ((s * g.c + c) * g.h + iy) * g.w + ix;
                                dw[wi] = dw[wi] + gv * x[xi];
                                dx[xi] = dx[xi] + gv * wt[wi];
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
}

impl PoolGeom {
    pub fn oh(&self) -> usize {
        (self.h - self.k) / self.stride + 1
    }

    pub fn ow(&self) -> usize {
        (self.w - self.k) / self.stride + 1
    }
}

/// Returns the pooled values and, per output, the flat input index of the
/// maximum (first occurrence on ties).
pub fn maxpool2d_forward<T: Scalar>(x: &[T], g: PoolGeom) -> (Vec<T>, Vec<usize>) {
    let (oh, ow) = (g.oh(), g.ow());
    let len = g.n * g.c * oh * ow;
    let mut y = Vec::with_capacity(len);
    let mut arg = Vec::with_capacity(len);
    for plane in 0..g.n * g.c {
        let base = plane * g.h * g.w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * g.stride * g.w + ox * g.stride;
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let idx = base + (oy * g.stride + ky) * g.w + ox * g.stride + kx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                y.push(x[best]);
                arg.push(best);
            }
        }
    }
    (y, arg)
}

pub fn maxpool2d_backward<T: Scalar>(input_len: usize, argmax: &[usize], dy: &[T]) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (&idx, &g) in argmax.iter().zip(dy) {
        dx[idx] = dx[idx] + g;
    }
    dx
}

/// `y[s, l, :] = table[ids[s, l], :]`
pub fn embedding_forward<T: Scalar>(ids: &[usize], table: &[T], dim: usize) -> Vec<T> {
    let mut y = Vec::with_capacity(ids.len() * dim);
    for &id in ids {
        y.extend_from_slice(&table[id * dim..(id + 1) * dim]);
    }
    y
}

pub fn embedding_backward<T: Scalar>(ids: &[usize], dy: &[T], vocab: usize, dim: usize) -> Vec<T> {
    let mut dt = vec![T::zero(); vocab * dim];
    for (pos, &id) in ids.iter().enumerate() {
        for d in 0..dim {
            dt[id * dim + d] = dt[id * dim + d] + dy[pos * dim + d];
        }
    }
    dt
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], targets: &[usize], classes: usize) -> (T, Vec<T>) {
    let n = targets.len();
    let inv_n = T::one() / T::of_f64(n as f64);
    let mut total = T::zero();
    let mut grad = vec![T::zero(); logits.len()];
    for (s, &t) in targets.iter().enumerate() {
        let row = &logits[s * classes..(s + 1) * classes];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for &z in row {
            sum = sum + (z - max).exp();
        }
        total = total + (max + sum.ln() - row[t]);
        let grow = &mut grad[s * classes..(s + 1) * classes];
        for j in 0..classes {
            let p = (row[j] - max).exp() / sum;
            let target = if j == t { T::one() } else { T::zero() };
            grow[j] = (p - target) * inv_n;
        }
    }
    (total * inv_n, grad)
}

//! Layer specs, shape inference and the per-layer forward/backward kernels.
//!
//! Activations are stored per sample as `(spatial..., channels)` row-major,
//! so a batch is a contiguous `bsz x size` block.

use serde::{Deserialize, Serialize};

use super::real::{gemm, Real, View};
use crate::error::{Error, Result};

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    #[default]
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    /// Valid (unpadded) convolution; 1D or 2D (square kernel) by input rank.
    Conv {
        kernel: usize,
        channels: usize,
        #[serde(default = "one")]
        stride: usize,
    },
    Activation {
        function: Activation,
    },
    Pool {
        #[serde(default)]
        kind: PoolKind,
        width: usize,
    },
    Flatten,
    Dense {
        units: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape {
    pub spatial: Vec<usize>,
    pub channels: usize,
}

impl Shape {
    pub fn size(&self) -> usize {
        self.spatial.iter().product::<usize>() * self.channels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Op {
    Conv1d {
        k: usize,
        s: usize,
        cin: usize,
        cout: usize,
        lout: usize,
    },
    Conv2d {
        k: usize,
        s: usize,
        cin: usize,
        cout: usize,
        win: usize,
        hout: usize,
        wout: usize,
    },
    Relu,
    Pool1d {
        w: usize,
        c: usize,
        lout: usize,
    },
    Pool2d {
        w: usize,
        c: usize,
        win: usize,
        hout: usize,
        wout: usize,
    },
    Flatten,
    Dense {
        nin: usize,
        nout: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layer {
    pub op: Op,
    pub in_size: usize,
    pub out_size: usize,
    pub p_off: usize,
    pub n_params: usize,
    /// Fan-in for He initialization (0 for parameter-free layers).
    pub fan_in: usize,
    /// Number of weights before the biases.
    pub n_weights: usize,
}

fn bad(i: usize, msg: impl std::fmt::Display) -> Error {
    Error::config(format!("layer {i}: {msg}"))
}

/// Resolves shapes and parameter offsets for a layer stack.
pub(crate) fn compile(input: &Shape, specs: &[LayerSpec]) -> Result<(Vec<Layer>, Shape)> {
    let mut shape = input.clone();
    let mut layers = Vec::with_capacity(specs.len());
    let mut off = 0;
    for (i, spec) in specs.iter().enumerate() {
        let in_size = shape.size();
        let (op, next, n_weights, n_bias, fan_in) = match *spec {
            LayerSpec::Conv {
                kernel: k,
                channels: cout,
                stride: s,
            } => {
                if k == 0 || cout == 0 || s == 0 {
                    return Err(bad(i, "kernel, channels and stride must be >= 1"));
                }
                let cin = shape.channels;
                match shape.spatial[..] {
                    [l] => {
                        if l < k {
                            return Err(bad(i, format!("kernel {k} exceeds input length {l}")));
                        }
                        let lout = (l - k) / s + 1;
                        (
                            Op::Conv1d { k, s, cin, cout, lout },
                            Shape {
                                spatial: vec![lout],
                                channels: cout,
                            },
                            k * cin * cout,
                            cout,
                            k * cin,
                        )
                    }
                    [h, w] => {
                        if h < k || w < k {
                            return Err(bad(i, format!("kernel {k} exceeds input {h}x{w}")));
                        }
                        let hout = (h - k) / s + 1;
                        let wout = (w - k) / s + 1;
                        (
                            Op::Conv2d {
                                k,
                                s,
                                cin,
                                cout,
                                win: w,
                                hout,
                                wout,
                            },
                            Shape {
                                spatial: vec![hout, wout],
                                channels: cout,
                            },
                            k * k * cin * cout,
                            cout,
                            k * k * cin,
                        )
                    }
                    _ => return Err(bad(i, "convolution needs a 1D or 2D input; it follows a flatten")),
                }
            }
            LayerSpec::Activation { function: Activation::Relu } => (Op::Relu, shape.clone(), 0, 0, 0),
            LayerSpec::Pool { kind: PoolKind::Avg, width: w } => {
                if w == 0 {
                    return Err(bad(i, "pool width must be >= 1"));
                }
                let c = shape.channels;
                match shape.spatial[..] {
                    [l] => {
                        let lout = l / w;
                        if lout == 0 {
                            return Err(bad(i, format!("pool width {w} exceeds length {l}")));
                        }
                        (
                            Op::Pool1d { w, c, lout },
                            Shape {
                                spatial: vec![lout],
                                channels: c,
                            },
                            0,
                            0,
                            0,
                        )
                    }
                    [h, wi] => {
                        let (hout, wout) = (h / w, wi / w);
                        if hout == 0 || wout == 0 {
                            return Err(bad(i, format!("pool width {w} exceeds input {h}x{wi}")));
                        }
                        (
                            Op::Pool2d {
                                w,
                                c,
                                win: wi,
                                hout,
                                wout,
                            },
                            Shape {
                                spatial: vec![hout, wout],
                                channels: c,
                            },
                            0,
                            0,
                            0,
                        )
                    }
                    _ => return Err(bad(i, "pooling needs a 1D or 2D input")),
                }
            }
            LayerSpec::Flatten => (
                Op::Flatten,
                Shape {
                    spatial: vec![],
                    channels: in_size,
                },
                0,
                0,
                0,
            ),
            LayerSpec::Dense { units } => {
                if units == 0 {
                    return Err(bad(i, "dense units must be >= 1"));
                }
                if !shape.spatial.is_empty() {
                    return Err(bad(i, "dense layer needs a flat input; insert a flatten layer"));
                }
                (
                    Op::Dense {
                        nin: in_size,
                        nout: units,
                    },
                    Shape {
                        spatial: vec![],
                        channels: units,
                    },
                    in_size * units,
                    units,
                    in_size,
                )
            }
        };
        let n_params = n_weights + n_bias;
        layers.push(Layer {
            op,
            in_size,
            out_size: next.size(),
            p_off: off,
            n_params,
            fan_in,
            n_weights,
        });
        off += n_params;
        shape = next;
    }
    Ok((layers, shape))
}

impl Layer {
    /// `y = layer(x)` for a batch; `p` is this layer's parameter slice.
    pub fn forward<T: Real>(&self, p: &[T], x: &[T], y: &mut [T], bsz: usize) {
        let (ins, outs) = (self.in_size, self.out_size);
        match self.op {
            Op::Conv1d { k, s, cin, cout, lout } => {
                let (w, b) = p.split_at(self.n_weights);
                for n in 0..bsz {
                    let xs = &x[n * ins..(n + 1) * ins];
                    let ys = &mut y[n * outs..(n + 1) * outs];
                    gemm(lout, k * cin, cout, T::ONE, View::new(xs, s * cin, 1), View::new(w, cout, 1), T::ZERO, ys, cout);
                    add_bias(ys, b);
                }
            }
            Op::Conv2d {
                k,
                s,
                cin,
                cout,
                win,
                hout,
                wout,
            } => {
                let (w, b) = p.split_at(self.n_weights);
                let kkc = k * k * cin;
                let mut cols = vec![T::ZERO; hout * wout * kkc];
                for n in 0..bsz {
                    let xs = &x[n * ins..(n + 1) * ins];
                    im2col(xs, &mut cols, k, s, cin, win, hout, wout);
                    let ys = &mut y[n * outs..(n + 1) * outs];
                    gemm(hout * wout, kkc, cout, T::ONE, View::new(&cols, kkc, 1), View::new(w, cout, 1), T::ZERO, ys, cout);
                    add_bias(ys, b);
                }
            }
            Op::Relu => {
                for (o, i) in y[..bsz * outs].iter_mut().zip(&x[..bsz * ins]) {
                    *o = if *i > T::ZERO { *i } else { T::ZERO };
                }
            }
            Op::Pool1d { w, c, lout } => {
                let inv = T::from_f64(1.0 / w as f64);
                for n in 0..bsz {
                    let xs = &x[n * ins..];
                    let ys = &mut y[n * outs..(n + 1) * outs];
                    for lo in 0..lout {
                        for ch in 0..c {
                            let mut acc = T::ZERO;
                            for j in 0..w {
                                acc += xs[(lo * w + j) * c + ch];
                            }
                            ys[lo * c + ch] = acc * inv;
                        }
                    }
                }
            }
            Op::Pool2d { w, c, win, hout, wout } => {
                let inv = T::from_f64(1.0 / (w * w) as f64);
                for n in 0..bsz {
                    let xs = &x[n * ins..];
                    let ys = &mut y[n * outs..(n + 1) * outs];
                    for oy in 0..hout {
                        for ox in 0..wout {
                            for ch in 0..c {
                                let mut acc = T::ZERO;
                                for ky in 0..w {
                                    for kx in 0..w {
                                        acc += xs[((oy * w + ky) * win + ox * w + kx) * c + ch];
                                    }
                                }
                                ys[(oy * wout + ox) * c + ch] = acc * inv;
                            }
                        }
                    }
                }
            }
            Op::Flatten => y[..bsz * outs].copy_from_slice(&x[..bsz * ins]),
            Op::Dense { nin, nout } => {
                let (w, b) = p.split_at(self.n_weights);
                gemm(bsz, nin, nout, T::ONE, View::new(x, nin, 1), View::new(w, nout, 1), T::ZERO, y, nout);
                for n in 0..bsz {
                    add_bias(&mut y[n * nout..(n + 1) * nout], b);
                }
            }
        }
    }

    /// Accumulates parameter gradients into `g` and, if requested, writes the
    /// input gradient into `dx` (overwritten).
    #[allow(clippy::too_many_arguments)]
    pub fn backward<T: Real>(
        &self,
        p: &[T],
        x: &[T],
        y: &[T],
        dy: &[T],
        bsz: usize,
        g: &mut [T],
        dx: Option<&mut [T]>,
    ) {
        let (ins, outs) = (self.in_size, self.out_size);
        match self.op {
            Op::Conv1d { k, s, cin, cout, lout } => {
                let w = &p[..self.n_weights];
                let (gw, gb) = g.split_at_mut(self.n_weights);
                let kc = k * cin;
                let mut dcols = if dx.is_some() { vec![T::ZERO; lout * kc] } else { Vec::new() };
                let mut dx = dx;
                if let Some(d) = dx.as_deref_mut() {
                    d[..bsz * ins].iter_mut().for_each(|v| *v = T::ZERO);
                }
                for n in 0..bsz {
                    let xs = &x[n * ins..(n + 1) * ins];
                    let dys = &dy[n * outs..(n + 1) * outs];
                    gemm(kc, lout, cout, T::ONE, View::new(xs, 1, s * cin), View::new(dys, cout, 1), T::ONE, gw, cout);
                    col_sums(dys, cout, gb);
                    if let Some(d) = dx.as_deref_mut() {
                        gemm(lout, cout, kc, T::ONE, View::new(dys, cout, 1), View::new(w, 1, cout), T::ZERO, &mut dcols, kc);
                        let ds = &mut d[n * ins..(n + 1) * ins];
                        for lo in 0..lout {
                            let base = lo * s * cin;
                            for (t, v) in ds[base..base + kc].iter_mut().zip(&dcols[lo * kc..(lo + 1) * kc]) {
                                *t += *v;
                            }
                        }
                    }
                }
            }
            Op::Conv2d {
                k,
                s,
                cin,
                cout,
                win,
                hout,
                wout,
            } => {
                let w = &p[..self.n_weights];
                let (gw, gb) = g.split_at_mut(self.n_weights);
                let kkc = k * k * cin;
                let np = hout * wout;
                let mut cols = vec![T::ZERO; np * kkc];
                let mut dcols = if dx.is_some() { vec![T::ZERO; np * kkc] } else { Vec::new() };
                let mut dx = dx;
                if let Some(d) = dx.as_deref_mut() {
                    d[..bsz * ins].iter_mut().for_each(|v| *v = T::ZERO);
                }
                for n in 0..bsz {
                    let xs = &x[n * ins..(n + 1) * ins];
                    let dys = &dy[n * outs..(n + 1) * outs];
                    im2col(xs, &mut cols, k, s, cin, win, hout, wout);
                    gemm(kkc, np, cout, T::ONE, View::new(&cols, 1, kkc), View::new(dys, cout, 1), T::ONE, gw, cout);
                    col_sums(dys, cout, gb);
                    if let Some(d) = dx.as_deref_mut() {
                        gemm(np, cout, kkc, T::ONE, View::new(dys, cout, 1), View::new(w, 1, cout), T::ZERO, &mut dcols, kkc);
                        col2im(&dcols, &mut d[n * ins..(n + 1) * ins], k, s, cin, win, hout, wout);
                    }
                }
            }
            Op::Relu => {
                if let Some(d) = dx {
                    for ((o, yy), g) in d[..bsz * ins].iter_mut().zip(&y[..bsz * outs]).zip(&dy[..bsz * outs]) {
                        *o = if *yy > T::ZERO { *g } else { T::ZERO };
                    }
                }
            }
            Op::Pool1d { w, c, lout } => {
                if let Some(d) = dx {
                    let inv = T::from_f64(1.0 / w as f64);
                    d[..bsz * ins].iter_mut().for_each(|v| *v = T::ZERO);
                    for n in 0..bsz {
                        let ds = &mut d[n * ins..(n + 1) * ins];
                        let dys = &dy[n * outs..(n + 1) * outs];
                        for lo in 0..lout {
                            for ch in 0..c {
                                let v = dys[lo * c + ch] * inv;
                                for j in 0..w {
                                    ds[(lo * w + j) * c + ch] = v;
                                }
                            }
                        }
                    }
                }
            }
            Op::Pool2d { w, c, win, hout, wout } => {
                if let Some(d) = dx {
                    let inv = T::from_f64(1.0 / (w * w) as f64);
                    d[..bsz * ins].iter_mut().for_each(|v| *v = T::ZERO);
                    for n in 0..bsz {
                        let ds = &mut d[n * ins..(n + 1) * ins];
                        let dys = &dy[n * outs..(n + 1) * outs];
                        for oy in 0..hout {
                            for ox in 0..wout {
                                for ch in 0..c {
                                    let v = dys[(oy * wout + ox) * c + ch] * inv;
                                    for ky in 0..w {
                                        for kx in 0..w {
                                            ds[((oy * w + ky) * win + ox * w + kx) * c + ch] = v;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Flatten => {
                if let Some(d) = dx {
                    d[..bsz * ins].copy_from_slice(&dy[..bsz * outs]);
                }
            }
            Op::Dense { nin, nout } => {
                let w = &p[..self.n_weights];
                let (gw, gb) = g.split_at_mut(self.n_weights);
                gemm(nin, bsz, nout, T::ONE, View::new(x, 1, nin), View::new(dy, nout, 1), T::ONE, gw, nout);
                col_sums(&dy[..bsz * nout], nout, gb);
                if let Some(d) = dx {
                    gemm(bsz, nout, nin, T::ONE, View::new(dy, nout, 1), View::new(w, 1, nout), T::ZERO, d, nin);
                }
            }
        }
    }
}

fn add_bias<T: Real>(y: &mut [T], b: &[T]) {
    for row in y.chunks_exact_mut(b.len()) {
        for (v, bb) in row.iter_mut().zip(b) {
            *v += *bb;
        }
    }
}

fn col_sums<T: Real>(m: &[T], cols: usize, acc: &mut [T]) {
    for row in m.chunks_exact(cols) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += *v;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(x: &[T], cols: &mut [T], k: usize, s: usize, cin: usize, win: usize, hout: usize, wout: usize) {
    let kc = k * cin;
    let kkc = k * kc;
    for oy in 0..hout {
        for ox in 0..wout {
            let row = &mut cols[(oy * wout + ox) * kkc..(oy * wout + ox + 1) * kkc];
            for ky in 0..k {
                let src = ((oy * s + ky) * win + ox * s) * cin;
                row[ky * kc..(ky + 1) * kc].copy_from_slice(&x[src..src + kc]);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(cols: &[T], dx: &mut [T], k: usize, s: usize, cin: usize, win: usize, hout: usize, wout: usize) {
    let kc = k * cin;
    let kkc = k * kc;
    for oy in 0..hout {
        for ox in 0..wout {
            let row = &cols[(oy * wout + ox) * kkc..(oy * wout + ox + 1) * kkc];
            for ky in 0..k {
                let dst = ((oy * s + ky) * win + ox * s) * cin;
                for (t, v) in dx[dst..dst + kc].iter_mut().zip(&row[ky * kc..(ky + 1) * kc]) {
                    *t += *v;
                }
            }
        }
    }
}

//! Convolution and pooling over `B×C×H×W` tensors.

use rayon::prelude::*;

use super::graph::{BackwardCtx, Var};
use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::{shape_err, Real};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Avg,
    Max,
    GlobalAvg,
}

#[derive(Clone, Copy)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geom {
    fn new(c: usize, h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Result<Self> {
        if stride == 0 || kh == 0 || kw == 0 || kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(shape_err(format!(
                "window {kh}x{kw} (stride {stride}, pad {pad}) does not fit {h}x{w}"
            )));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        Ok(Geom { c, h, w, kh, kw, stride, pad, oh, ow })
    }

    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.oh * self.ow
    }

    /// Visits (col row, output position, input flat index) for every in-bounds tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        for ci in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            f(row, oy * self.ow + ox, (ci * self.h + iy as usize) * self.w + ix as usize);
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Real>(&self, x: &[T]) -> Vec<T> {
        let p = self.p();
        let mut col = vec![T::zero(); self.k() * p];
        self.for_each_tap(|row, pos, src| col[row * p + pos] = x[src]);
        col
    }

    fn col2im<T: Real>(&self, col: &[T], dx: &mut [T]) {
        let p = self.p();
        self.for_each_tap(|row, pos, dst| dx[dst] += col[row * p + pos]);
    }
}

impl<'g, T: Real> Var<'g, T> {
    /// 2-D cross-correlation with zero padding. `x: B×Cin×H×W`, `w: Cout×Cin×kh×kw`, `b: Cout`.
    pub fn conv2d(self, w: Var<'g, T>, b: Option<Var<'g, T>>, stride: usize, pad: usize) -> Result<Var<'g, T>> {
        let xs = self.shape();
        let ws = w.shape();
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
            return Err(shape_err(format!("conv2d input {xs:?}, kernel {ws:?}")));
        }
        if let Some(b) = b {
            if b.shape() != [ws[0]] {
                return Err(shape_err(format!("conv2d bias {:?} for {} outputs", b.shape(), ws[0])));
            }
        }
        let (batch, co) = (xs[0], ws[0]);
        let geom = Geom::new(xs[1], xs[2], xs[3], ws[2], ws[3], stride, pad)?;
        let (k, p) = (geom.k(), geom.p());
        let in_len = geom.c * geom.h * geom.w;
        let x = self.raw();
        let wv = w.raw();
        let bias = b.map(|b| b.raw());
        let mut value = vec![T::zero(); batch * co * p];
        value.par_chunks_mut(co * p).enumerate().for_each(|(bi, out)| {
            let col = geom.im2col(&x[bi * in_len..(bi + 1) * in_len]);
            if let Some(bias) = &bias {
                for (o, &bv) in bias.iter().enumerate() {
                    out[o * p..(o + 1) * p].iter_mut().for_each(|v| *v = bv);
                }
            }
            gemm_nn(co, k, p, &wv, &col, out);
        });
        let mut parents = vec![self, w];
        parents.extend(b);
        let has_bias = b.is_some();
        Ok(self.graph.record(
            vec![batch, co, geom.oh, geom.ow],
            value,
            &parents,
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let (x, wv, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad);
                let per_sample: Vec<(Vec<T>, Vec<T>)> = (0..batch)
                    .into_par_iter()
                    .map(|bi| {
                        let xs = &x[bi * in_len..(bi + 1) * in_len];
                        let gs = &g[bi * co * p..(bi + 1) * co * p];
                        let col = geom.im2col(xs);
                        let mut gw = vec![T::zero(); co * k];
                        gemm_nt(co, p, k, gs, &col, &mut gw);
                        let mut gcol = vec![T::zero(); k * p];
                        gemm_tn(k, co, p, wv, gs, &mut gcol);
                        let mut gx = vec![T::zero(); in_len];
                        geom.col2im(&gcol, &mut gx);
                        (gx, gw)
                    })
                    .collect();
                let mut gx = Vec::with_capacity(batch * in_len);
                let mut gw = vec![T::zero(); co * k];
                for (sx, sw) in per_sample {
                    gx.extend_from_slice(&sx);
                    gw.iter_mut().zip(&sw).for_each(|(a, &b)| *a += b);
                }
                let mut out = vec![Some(gx), Some(gw)];
                if has_bias {
                    let mut gb = vec![T::zero(); co];
                    for bi in 0..batch {
                        for (o, acc) in gb.iter_mut().enumerate() {
                            let s = (bi * co + o) * p;
                            *acc += g[s..s + p].iter().fold(T::zero(), |a, &v| a + v);
                        }
                    }
                    out.push(Some(gb));
                }
                out
            }),
        ))
    }

    /// Pooling over the two trailing axes of `B×C×H×W`. `GlobalAvg` ignores `k`/`stride`
    /// and returns `B×C`.
    pub fn pool2d(self, kind: PoolKind, k: usize, stride: usize) -> Result<Var<'g, T>> {
        let xs = self.shape();
        if xs.len() != 4 {
            return Err(shape_err(format!("pool2d on {xs:?}")));
        }
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let x = self.raw();
        if kind == PoolKind::GlobalAvg {
            let hw = h * w;
            let inv = T::one() / T::of(hw as f64);
            let value: Vec<T> = (0..b * c)
                .map(|i| x[i * hw..(i + 1) * hw].iter().fold(T::zero(), |a, &v| a + v) * inv)
                .collect();
            return Ok(self.graph.record(
                vec![b, c],
                value,
                &[self],
                Box::new(move |ctx: &BackwardCtx<'_, T>| {
                    let g = ctx.grad.iter().flat_map(|&g| std::iter::repeat(g * inv).take(hw)).collect();
                    vec![Some(g)]
                }),
            ));
        }
        let geom = Geom::new(1, h, w, k, k, stride, 0)?;
        let (oh, ow) = (geom.oh, geom.ow);
        let planes = b * c;
        // for max pooling: flat input index feeding each output
        let mut argmax = vec![0usize; planes * oh * ow];
        let mut value = vec![T::zero(); planes * oh * ow];
        let inv = T::one() / T::of((k * k) as f64);
        for pl in 0..planes {
            let base = pl * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let o = (pl * oh + oy) * ow + ox;
                    let mut best = T::neg_infinity();
                    let mut best_i = 0;
                    let mut acc = T::zero();
                    for ki in 0..k {
                        for kj in 0..k {
                            let i = base + (oy * stride + ki) * w + ox * stride + kj;
                            acc += x[i];
                            if x[i] > best {
                                best = x[i];
                                best_i = i;
                            }
                        }
                    }
                    match kind {
                        PoolKind::Max => {
                            value[o] = best;
                            argmax[o] = best_i;
                        }
                        _ => value[o] = acc * inv,
                    }
                }
            }
        }
        Ok(self.graph.record(
            vec![b, c, oh, ow],
            value,
            &[self],
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let mut gx = vec![T::zero(); planes * h * w];
                for pl in 0..planes {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let o = (pl * oh + oy) * ow + ox;
                            if kind == PoolKind::Max {
                                gx[argmax[o]] += ctx.grad[o];
                            } else {
                                for ki in 0..k {
                                    for kj in 0..k {
                                        gx[pl * h * w + (oy * stride + ki) * w + ox * stride + kj] +=
                                            ctx.grad[o] * inv;
                                    }
                                }
                            }
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }
}

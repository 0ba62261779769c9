//! Elementwise, structural and linear-algebra ops.

use super::graph::{BackwardCtx, Var};
use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::{shape_err, Real, Tensor};
use crate::error::Result;

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
}

/// Numpy-style broadcast of two shapes (aligned from the trailing axis).
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(shape_err(format!("cannot broadcast {a:?} with {b:?}"))),
        };
    }
    Ok(out)
}

/// For every flat index of `out`, the flat index into a tensor of shape `src` broadcast to it.
fn broadcast_index(src: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let offset = rank - src.len();
    let mut strides = vec![0usize; rank];
    let mut s = 1;
    for i in (0..src.len()).rev() {
        strides[i + offset] = if src[i] == 1 { 0 } else { s };
        s *= src[i];
    }
    let n: usize = out.iter().product();
    let mut idx = Vec::with_capacity(n);
    let mut counter = vec![0usize; rank];
    let mut flat = 0usize;
    for _ in 0..n {
        idx.push(flat);
        for ax in (0..rank).rev() {
            counter[ax] += 1;
            flat += strides[ax];
            if counter[ax] < out[ax] {
                break;
            }
            flat -= strides[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
    idx
}

fn reduce_to<T: Real>(grad: &[T], idx: &[usize], len: usize) -> Vec<T> {
    let mut g = vec![T::zero(); len];
    for (k, &i) in idx.iter().enumerate() {
        g[i] += grad[k];
    }
    g
}

pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut st = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        st[i] = st[i + 1] * shape[i + 1];
    }
    st
}

impl<'g, T: Real> Var<'g, T> {
    fn binary(self, other: Var<'g, T>, op: BinOp) -> Result<Var<'g, T>> {
        let (sa, sb) = (self.shape(), other.shape());
        let (a, b) = (self.raw(), other.raw());
        if sa == sb {
            let value: Vec<T> = match op {
                BinOp::Add => a.iter().zip(b.iter()).map(|(&x, &y)| x + y).collect(),
                BinOp::Sub => a.iter().zip(b.iter()).map(|(&x, &y)| x - y).collect(),
                BinOp::Mul => a.iter().zip(b.iter()).map(|(&x, &y)| x * y).collect(),
            };
            return Ok(self.graph.record(
                sa,
                value,
                &[self, other],
                Box::new(move |ctx: &BackwardCtx<'_, T>| {
                    let g = ctx.grad;
                    match op {
                        BinOp::Add => vec![Some(g.to_vec()), Some(g.to_vec())],
                        BinOp::Sub => vec![Some(g.to_vec()), Some(g.iter().map(|&x| -x).collect())],
                        BinOp::Mul => {
                            let (x, y) = (ctx.inputs[0], ctx.inputs[1]);
                            vec![
                                Some(g.iter().zip(y).map(|(&g, &y)| g * y).collect()),
                                Some(g.iter().zip(x).map(|(&g, &x)| g * x).collect()),
                            ]
                        }
                    }
                }),
            ));
        }
        let out_shape = broadcast_shape(&sa, &sb)?;
        let ia = broadcast_index(&sa, &out_shape);
        let ib = broadcast_index(&sb, &out_shape);
        let value: Vec<T> = ia
            .iter()
            .zip(&ib)
            .map(|(&i, &j)| match op {
                BinOp::Add => a[i] + b[j],
                BinOp::Sub => a[i] - b[j],
                BinOp::Mul => a[i] * b[j],
            })
            .collect();
        let (na, nb) = (a.len(), b.len());
        Ok(self.graph.record(
            out_shape,
            value,
            &[self, other],
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let g = ctx.grad;
                match op {
                    BinOp::Add => vec![Some(reduce_to(g, &ia, na)), Some(reduce_to(g, &ib, nb))],
                    BinOp::Sub => {
                        let neg: Vec<T> = g.iter().map(|&x| -x).collect();
                        vec![Some(reduce_to(g, &ia, na)), Some(reduce_to(&neg, &ib, nb))]
                    }
                    BinOp::Mul => {
                        let (x, y) = (ctx.inputs[0], ctx.inputs[1]);
                        let mut ga = vec![T::zero(); na];
                        let mut gb = vec![T::zero(); nb];
                        for k in 0..g.len() {
                            ga[ia[k]] += g[k] * y[ib[k]];
                            gb[ib[k]] += g[k] * x[ia[k]];
                        }
                        vec![Some(ga), Some(gb)]
                    }
                }
            }),
        ))
    }

    pub fn add(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, BinOp::Add)
    }

    pub fn sub(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, BinOp::Sub)
    }

    pub fn mul(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, BinOp::Mul)
    }

    /// Elementwise map with derivative expressed through input `x` and output `y`.
    fn unary(
        self,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Var<'g, T> {
        let value: Vec<T> = self.raw().iter().map(|&x| f(x)).collect();
        self.graph.record(
            self.shape(),
            value,
            &[self],
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let g = ctx
                    .grad
                    .iter()
                    .zip(ctx.inputs[0])
                    .zip(ctx.out)
                    .map(|((&g, &x), &y)| g * df(x, y))
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    pub fn relu(self) -> Var<'g, T> {
        self.unary(
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn sigmoid(self) -> Var<'g, T> {
        self.unary(
            |x| {
                if x >= T::zero() {
                    T::one() / (T::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (T::one() + e)
                }
            },
            |_, y| y * (T::one() - y),
        )
    }

    pub fn exp(self) -> Var<'g, T> {
        self.unary(|x| x.exp(), |_, y| y)
    }

    pub fn log(self) -> Var<'g, T> {
        self.unary(|x| x.ln(), |x, _| T::one() / x)
    }

    pub fn scale(self, c: T) -> Var<'g, T> {
        self.unary(move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(self, c: T) -> Var<'g, T> {
        self.unary(move |x| x + c, |_, _| T::one())
    }

    pub fn sum(self) -> Var<'g, T> {
        let x = self.raw();
        let s = x.iter().fold(T::zero(), |a, &b| a + b);
        let n = x.len();
        self.graph.record(
            vec![],
            vec![s],
            &[self],
            Box::new(move |ctx: &BackwardCtx<'_, T>| vec![Some(vec![ctx.grad[0]; n])]),
        )
    }

    pub fn mean(self) -> Var<'g, T> {
        let n = self.numel();
        self.sum().scale(T::one() / T::of(n as f64))
    }

    /// Mean over one axis; the axis is removed from the shape.
    pub fn mean_axis(self, axis: usize) -> Result<Var<'g, T>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(shape_err(format!("mean_axis {axis} on {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let x = self.raw();
        let inv = T::one() / T::of(len as f64);
        let mut value = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &x[(o * len + l) * inner..(o * len + l + 1) * inner];
                let dst = &mut value[o * inner..(o + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
            }
        }
        value.iter_mut().for_each(|v| *v *= inv);
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        Ok(self.graph.record(
            out_shape,
            value,
            &[self],
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let mut g = vec![T::zero(); outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        for i in 0..inner {
                            g[(o * len + l) * inner + i] = ctx.grad[o * inner + i] * inv;
                        }
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g, T>> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(shape_err(format!("cannot reshape {:?} to {shape:?}", self.shape())));
        }
        Ok(self.graph.record(
            shape.to_vec(),
            self.raw().to_vec(),
            &[self],
            Box::new(|ctx: &BackwardCtx<'_, T>| vec![Some(ctx.grad.to_vec())]),
        ))
    }

    /// General axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(self, perm: &[usize]) -> Result<Var<'g, T>> {
        let shape = self.shape();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(shape_err(format!("bad permutation {perm:?} for {shape:?}")));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let in_strides = strides_of(&shape);
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        // gather index: out flat k reads input flat map[k]
        let map = gather_map(&out_shape, &src_strides);
        let x = self.raw();
        let value: Vec<T> = map.iter().map(|&i| x[i]).collect();
        Ok(self.graph.record(
            out_shape,
            value,
            &[self],
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let mut g = vec![T::zero(); map.len()];
                for (k, &i) in map.iter().enumerate() {
                    g[i] = ctx.grad[k];
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'g, T>> {
        let shape = self.shape();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(shape_err(format!("narrow({axis}, {start}, {len}) on {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let full = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let x = self.raw();
        let mut value = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            value.extend_from_slice(&x[(o * full + start) * inner..(o * full + start + len) * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        Ok(self.graph.record(
            out_shape,
            value,
            &[self],
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let mut g = vec![T::zero(); outer * full * inner];
                for o in 0..outer {
                    g[(o * full + start) * inner..(o * full + start + len) * inner]
                        .copy_from_slice(&ctx.grad[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Concatenates along an existing axis.
    pub fn concat(parts: &[Var<'g, T>], axis: usize) -> Result<Var<'g, T>> {
        let first = parts.first().ok_or_else(|| shape_err("concat of nothing"))?;
        let base = first.shape();
        if axis >= base.len() {
            return Err(shape_err(format!("concat axis {axis} on {base:?}")));
        }
        let mut lens = Vec::with_capacity(parts.len());
        for p in parts {
            let s = p.shape();
            let ok = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(shape_err(format!("concat: {s:?} vs {base:?} on axis {axis}")));
            }
            lens.push(s[axis]);
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let total: usize = lens.iter().sum();
        let values: Vec<_> = parts.iter().map(|p| p.raw()).collect();
        let mut value = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &l) in values.iter().zip(&lens) {
                value.extend_from_slice(&v[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        Ok(first.graph.record(
            out_shape,
            value,
            parts,
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let mut grads: Vec<Vec<T>> =
                    lens.iter().map(|&l| Vec::with_capacity(outer * l * inner)).collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (g, &l) in grads.iter_mut().zip(&lens) {
                        g.extend_from_slice(&ctx.grad[off..off + l * inner]);
                        off += l * inner;
                    }
                }
                grads.into_iter().map(Some).collect()
            }),
        ))
    }

    /// Stacks equally shaped vars along a new axis.
    pub fn stack(parts: &[Var<'g, T>], axis: usize) -> Result<Var<'g, T>> {
        let expanded: Result<Vec<_>> = parts
            .iter()
            .map(|p| {
                let mut s = p.shape();
                if axis > s.len() {
                    return Err(shape_err(format!("stack axis {axis} on {s:?}")));
                }
                s.insert(axis, 1);
                p.reshape(&s)
            })
            .collect();
        Self::concat(&expanded?, axis)
    }

    /// 2-D matrix product.
    pub fn matmul(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err(format!("matmul {sa:?} x {sb:?}")));
        }
        self.bmm_impl(other, 1, sa[0], sa[1], sb[1], vec![sa[0], sb[1]])
    }

    /// Batched product over matching leading axes: `[..., m, k] x [..., k, n]`.
    pub fn bmm(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let (sa, sb) = (self.shape(), other.shape());
        let r = sa.len();
        if r < 2 || sb.len() != r || sa[..r - 2] != sb[..r - 2] || sa[r - 1] != sb[r - 2] {
            return Err(shape_err(format!("bmm {sa:?} x {sb:?}")));
        }
        let batch: usize = sa[..r - 2].iter().product();
        let mut out = sa[..r - 2].to_vec();
        out.extend([sa[r - 2], sb[r - 1]]);
        self.bmm_impl(other, batch, sa[r - 2], sa[r - 1], sb[r - 1], out)
    }

    fn bmm_impl(
        self,
        other: Var<'g, T>,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        out_shape: Vec<usize>,
    ) -> Result<Var<'g, T>> {
        let (a, b) = (self.raw(), other.raw());
        let mut value = vec![T::zero(); batch * m * n];
        for bi in 0..batch {
            gemm_nn(
                m,
                k,
                n,
                &a[bi * m * k..],
                &b[bi * k * n..],
                &mut value[bi * m * n..(bi + 1) * m * n],
            );
        }
        Ok(self.graph.record(
            out_shape,
            value,
            &[self, other],
            Box::new(move |ctx: &BackwardCtx<'_, T>| {
                let (a, b, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad);
                let mut ga = vec![T::zero(); batch * m * k];
                let mut gb = vec![T::zero(); batch * k * n];
                for bi in 0..batch {
                    let gs = &g[bi * m * n..(bi + 1) * m * n];
                    gemm_nt(m, n, k, gs, &b[bi * k * n..(bi + 1) * k * n], &mut ga[bi * m * k..(bi + 1) * m * k]);
                    gemm_tn(k, m, n, &a[bi * m * k..(bi + 1) * m * k], gs, &mut gb[bi * k * n..(bi + 1) * k * n]);
                }
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    /// Affine map over the last axis: `x[..., in] · w[in, out] + b[out]`.
    pub fn linear(self, w: Var<'g, T>, b: Option<Var<'g, T>>) -> Result<Var<'g, T>> {
        let s = self.shape();
        let ws = w.shape();
        let Some(&d_in) = s.last() else {
            return Err(shape_err("linear on a scalar"));
        };
        if ws.len() != 2 || ws[0] != d_in {
            return Err(shape_err(format!("linear: input {s:?}, weight {ws:?}")));
        }
        let rows = self.numel() / d_in.max(1);
        let y = self.reshape(&[rows, d_in])?.matmul(w)?;
        let y = match b {
            Some(b) => y.add(b)?,
            None => y,
        };
        let mut out = s[..s.len() - 1].to_vec();
        out.push(ws[1]);
        y.reshape(&out)
    }
}

/// Flat source index for each flat destination index of `out_shape`.
fn gather_map(out_shape: &[usize], src_strides: &[usize]) -> Vec<usize> {
    let n: usize = out_shape.iter().product();
    let rank = out_shape.len();
    let mut map = Vec::with_capacity(n);
    let mut counter = vec![0usize; rank];
    let mut flat = 0usize;
    for _ in 0..n {
        map.push(flat);
        for ax in (0..rank).rev() {
            counter[ax] += 1;
            flat += src_strides[ax];
            if counter[ax] < out_shape[ax] {
                break;
            }
            flat -= src_strides[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
    map
}

/// Convenience for tests and callers holding plain values.
pub fn matmul_values<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let g = super::Graph::new();
    let (x, y) = (g.constant(a.clone()), g.constant(b.clone()));
    Ok(x.matmul(y)?.value())
}

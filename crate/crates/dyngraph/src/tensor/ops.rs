//! Differentiable primitives. Each op computes its value eagerly, checks
//! finiteness, and (when some input needs gradients) records a closure with
//! the exact vector-Jacobian product. Binary elementwise ops broadcast
//! NumPy-style: shapes align from the right, each dim must match or be 1;
//! backward sum-reduces over broadcast dims.

use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;

use super::tape::{Tape, Var};
use super::{strides_for, Scalar, Tensor};
use crate::error::{Error, Result};

/// Kernel-level parallelism switch. Parallel reductions are order-fixed, so
/// results are bitwise identical either way; sequential mode exists for runs
/// that must not depend on a thread pool at all.
static PARALLEL: AtomicBool = AtomicBool::new(true);

pub fn set_parallel(enabled: bool) {
    PARALLEL.store(enabled, Ordering::SeqCst);
}

pub fn parallel_enabled() -> bool {
    PARALLEL.load(Ordering::SeqCst)
}

// ── broadcasting machinery ──────────────────────────────────────────────────

/// Broadcast result shape, aligning from the right.
fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::shape(op, format!("cannot broadcast {:?} with {:?}", a, b)))
            }
        };
    }
    Ok(out)
}

/// Strides for reading `shape` as if broadcast to `out_shape` (0 on expanded
/// dims, including implicit leading ones).
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let strides = strides_for(shape);
    let pad = out_shape.len() - shape.len();
    let mut out = vec![0usize; out_shape.len()];
    for i in 0..shape.len() {
        out[pad + i] = if shape[i] == 1 && out_shape[pad + i] != 1 { 0 } else { strides[i] };
    }
    out
}

/// Elementwise combine with broadcasting.
fn binary_map<S: Scalar>(
    a: &Tensor<S>,
    b: &Tensor<S>,
    out_shape: &[usize],
    f: impl Fn(S, S) -> S,
) -> Tensor<S> {
    let len: usize = out_shape.iter().product();
    let ad = a.data();
    let bd = b.data();
    // Fast paths: identical shapes, or one side is a single value.
    if a.shape() == out_shape && b.shape() == out_shape {
        let data: Vec<S> = ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::from_vec(out_shape, data).expect("shape checked");
    }
    if b.len() == 1 && a.shape() == out_shape {
        let y = bd[0];
        let data: Vec<S> = ad.iter().map(|&x| f(x, y)).collect();
        return Tensor::from_vec(out_shape, data).expect("shape checked");
    }
    if a.len() == 1 && b.shape() == out_shape {
        let x = ad[0];
        let data: Vec<S> = bd.iter().map(|&y| f(x, y)).collect();
        return Tensor::from_vec(out_shape, data).expect("shape checked");
    }
    let astr = broadcast_strides(a.shape(), out_shape);
    let bstr = broadcast_strides(b.shape(), out_shape);
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let (mut ao, mut bo) = (0usize, 0usize);
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        data.push(f(ad[ao], bd[bo]));
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            ao += astr[ax];
            bo += bstr[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
            ao -= astr[ax] * out_shape[ax];
            bo -= bstr[ax] * out_shape[ax];
        }
    }
    Tensor::from_vec(out_shape, data).expect("shape checked")
}

/// Sum `grad` (shaped like the broadcast output) down to `target` shape.
fn reduce_to_shape<S: Scalar>(grad: &Tensor<S>, target: &[usize]) -> Tensor<S> {
    if grad.shape() == target {
        return grad.clone();
    }
    let out_len: usize = target.iter().product();
    let mut out = vec![S::zero(); out_len];
    let tstr = broadcast_strides(target, grad.shape());
    let gshape = grad.shape();
    let rank = gshape.len();
    let gd = grad.data();
    let mut idx = vec![0usize; rank];
    let mut to = 0usize;
    for &g in gd {
        out[to] += g;
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            to += tstr[ax];
            if idx[ax] < gshape[ax] {
                break;
            }
            idx[ax] = 0;
            to -= tstr[ax] * gshape[ax];
        }
    }
    Tensor::from_vec(target, out).expect("shape checked")
}

/// Materialize `t` broadcast to `shape`.
fn broadcast_to<S: Scalar>(t: &Tensor<S>, shape: &[usize]) -> Tensor<S> {
    binary_map(t, &Tensor::zeros(shape), shape, |x, _| x)
}

// ── dense matmul kernels ────────────────────────────────────────────────────

/// c += a (m×k) @ b (k×n), row-major.
fn matmul_acc<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == S::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += aip * brow[j];
            }
        }
    }
}

/// c += a (m×n) @ bᵀ where b is (k×n) — i.e. contract over n.
fn matmul_nt_acc<S: Scalar>(m: usize, n: usize, k: usize, a: &[S], b: &[S], c: &mut [S]) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let crow = &mut c[i * k..(i + 1) * k];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = S::zero();
            for j in 0..n {
                acc += arow[j] * brow[j];
            }
            crow[p] += acc;
        }
    }
}

/// c += aᵀ @ g where a is (m×k), g is (m×n) — result (k×n).
fn matmul_tn_acc<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], g: &[S], c: &mut [S]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = arow[p];
            if aip == S::zero() {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += aip * grow[j];
            }
        }
    }
}

// ── elementwise ops ─────────────────────────────────────────────────────────

impl<S: Scalar> Tape<S> {
    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(S, S) -> S,
        vjp: impl Fn(&Tensor<S>, &Tensor<S>, &Tensor<S>) -> (Tensor<S>, Tensor<S>) + Send + 'static,
    ) -> Result<Var> {
        let out_shape = broadcast_shape(op, self.value(a).shape(), self.value(b).shape())?;
        let out = binary_map(self.value(a), self.value(b), &out_shape, f);
        if !self.wants_grad(&[a, b]) {
            return self.push(op, out, None);
        }
        let (av, bv) = (self.value(a).clone(), self.value(b).clone());
        let (na, nb) = (self.needs_grad(a), self.needs_grad(b));
        self.push(
            op,
            out,
            Some(Box::new(move |g| {
                let (da, db) = vjp(g, &av, &bv);
                let mut contrib = Vec::with_capacity(2);
                if na {
                    contrib.push((a.0, reduce_to_shape(&da, av.shape())));
                }
                if nb {
                    contrib.push((b.0, reduce_to_shape(&db, bv.shape())));
                }
                contrib
            })),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, |g, _, _| (g.clone(), g.clone()))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, |g, _, _| (g.clone(), g.map(|x| -x)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(
            "mul",
            a,
            b,
            |x, y| x * y,
            |g, av, bv| {
                (
                    binary_map(g, bv, g.shape(), |x, y| x * y),
                    binary_map(g, av, g.shape(), |x, y| x * y),
                )
            },
        )
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(
            "div",
            a,
            b,
            |x, y| x / y,
            |g, av, bv| {
                let da = binary_map(g, bv, g.shape(), |x, y| x / y);
                // db = -g·a/b²
                let ga = binary_map(g, av, g.shape(), |x, y| x * y);
                let db = binary_map(&ga, bv, g.shape(), |x, y| -x / (y * y));
                (da, db)
            },
        )
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary("neg", a, |x| -x, |g, _av, _y| g.map(|x| -x))
    }

    fn unary(
        &mut self,
        op: &'static str,
        a: Var,
        f: impl Fn(S) -> S,
        // vjp(grad_out, input_value, output_value) -> grad_in
        vjp: impl Fn(&Tensor<S>, &Tensor<S>, &Tensor<S>) -> Tensor<S> + Send + 'static,
    ) -> Result<Var> {
        let out = self.value(a).map(f);
        if !self.wants_grad(&[a]) {
            return self.push(op, out, None);
        }
        let av = self.value(a).clone();
        let yv = out.clone();
        self.push(op, out, Some(Box::new(move |g| vec![(a.0, vjp(g, &av, &yv))])))
    }

    pub fn add_scalar(&mut self, a: Var, c: S) -> Result<Var> {
        self.unary("add_scalar", a, |x| x + c, |g, _, _| g.clone())
    }

    pub fn mul_scalar(&mut self, a: Var, c: S) -> Result<Var> {
        self.unary("mul_scalar", a, |x| x * c, move |g, _, _| g.map(|x| x * c))
    }

    /// c − x.
    pub fn scalar_sub(&mut self, c: S, a: Var) -> Result<Var> {
        self.unary("scalar_sub", a, |x| c - x, |g, _, _| g.map(|x| -x))
    }

    /// c / x.
    pub fn scalar_div(&mut self, c: S, a: Var) -> Result<Var> {
        self.unary(
            "scalar_div",
            a,
            |x| c / x,
            move |g, av, _| binary_map(g, av, g.shape(), |gi, x| -gi * c / (x * x)),
        )
    }

    /// max(x, c): floors values at a constant. Gradient passes only where
    /// x > c (the constant region contributes zero, matching the ReLU kink
    /// convention at the boundary).
    pub fn max_scalar(&mut self, a: Var, c: S) -> Result<Var> {
        self.unary(
            "max_scalar",
            a,
            |x| if x > c { x } else { c },
            move |g, av, _| {
                binary_map(g, av, g.shape(), |gi, x| if x > c { gi } else { S::zero() })
            },
        )
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(
            "relu",
            a,
            |x| if x > S::zero() { x } else { S::zero() },
            |g, _, y| binary_map(g, y, g.shape(), |gi, yi| if yi > S::zero() { gi } else { S::zero() }),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(
            "sigmoid",
            a,
            stable_sigmoid,
            |g, _, y| binary_map(g, y, g.shape(), |gi, yi| gi * yi * (S::one() - yi)),
        )
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(
            "tanh",
            a,
            |x| x.tanh(),
            |g, _, y| binary_map(g, y, g.shape(), |gi, yi| gi * (S::one() - yi * yi)),
        )
    }

    /// Natural logarithm.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary("log", a, |x| x.ln(), |g, av, _| binary_map(g, av, g.shape(), |gi, x| gi / x))
    }

    /// |x|, with subgradient 0 at x = 0.
    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(
            "abs",
            a,
            |x| x.abs(),
            |g, av, _| {
                binary_map(g, av, g.shape(), |gi, x| {
                    if x > S::zero() {
                        gi
                    } else if x < S::zero() {
                        -gi
                    } else {
                        S::zero()
                    }
                })
            },
        )
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(
            "sqrt",
            a,
            |x| x.sqrt(),
            |g, _, y| {
                let half = S::from_f64(0.5);
                binary_map(g, y, g.shape(), |gi, yi| gi * half / yi)
            },
        )
    }

    // ── structural ops ──────────────────────────────────────────────────────

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshaped(shape)?;
        if !self.wants_grad(&[a]) {
            return self.push("reshape", out, None);
        }
        let orig = self.value(a).shape().to_vec();
        self.push(
            "reshape",
            out,
            Some(Box::new(move |g| vec![(a.0, g.reshaped(&orig).expect("same length"))])),
        )
    }

    pub fn transpose(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let out = self.value(a).permuted(perm)?;
        if !self.wants_grad(&[a]) {
            return self.push("transpose", out, None);
        }
        let mut inv = vec![0usize; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        self.push(
            "transpose",
            out,
            Some(Box::new(move |g| vec![(a.0, g.permuted(&inv).expect("valid perm"))])),
        )
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("concat", "no tensors given"));
        }
        let first = self.value(parts[0]).shape().to_vec();
        if axis >= first.len() {
            return Err(Error::invalid("concat", format!("axis {axis} out of range")));
        }
        let mut axis_total = 0usize;
        let mut sizes = Vec::with_capacity(parts.len());
        for &p in parts {
            let sh = self.value(p).shape();
            if sh.len() != first.len()
                || sh.iter().zip(&first).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::shape(
                    "concat",
                    format!("incompatible part shape {:?} vs {:?} on axis {axis}", sh, first),
                ));
            }
            sizes.push(sh[axis]);
            axis_total += sh[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = vec![S::zero(); outer * axis_total * inner];
        let mut offset = 0usize;
        for (&p, &sz) in parts.iter().zip(&sizes) {
            let src = self.value(p).data();
            for o in 0..outer {
                let dst_base = (o * axis_total + offset) * inner;
                let src_base = o * sz * inner;
                data[dst_base..dst_base + sz * inner]
                    .copy_from_slice(&src[src_base..src_base + sz * inner]);
            }
            offset += sz;
        }
        let out = Tensor::from_vec(&out_shape, data)?;
        if !self.wants_grad(parts) {
            return self.push("concat", out, None);
        }
        let part_ids: Vec<usize> = parts.iter().map(|v| v.0).collect();
        let needs: Vec<bool> = parts.iter().map(|&v| self.needs_grad(v)).collect();
        let part_shapes: Vec<Vec<usize>> =
            parts.iter().map(|&v| self.value(v).shape().to_vec()).collect();
        self.push(
            "concat",
            out,
            Some(Box::new(move |g| {
                let gd = g.data();
                let mut contribs = Vec::new();
                let mut offset = 0usize;
                for (i, sz) in sizes.iter().enumerate() {
                    if needs[i] {
                        let mut part = vec![S::zero(); outer * sz * inner];
                        for o in 0..outer {
                            let src_base = (o * axis_total + offset) * inner;
                            let dst_base = o * sz * inner;
                            part[dst_base..dst_base + sz * inner]
                                .copy_from_slice(&gd[src_base..src_base + sz * inner]);
                        }
                        contribs.push((
                            part_ids[i],
                            Tensor::from_vec(&part_shapes[i], part).expect("shape checked"),
                        ));
                    }
                    offset += sz;
                }
                contribs
            })),
        )
    }

    /// Contiguous window `[start, start+len)` along one axis.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.value(a).shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(Error::invalid(
                "slice",
                format!("window [{start}, {start}+{len}) on axis {axis} of {:?}", shape),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let axis_len = shape[axis];
        let src = self.value(a).data();
        let mut data = vec![S::zero(); outer * len * inner];
        for o in 0..outer {
            let src_base = (o * axis_len + start) * inner;
            let dst_base = o * len * inner;
            data[dst_base..dst_base + len * inner]
                .copy_from_slice(&src[src_base..src_base + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let out = Tensor::from_vec(&out_shape, data)?;
        if !self.wants_grad(&[a]) {
            return self.push("slice", out, None);
        }
        self.push(
            "slice",
            out,
            Some(Box::new(move |g| {
                let gd = g.data();
                let mut full = vec![S::zero(); outer * axis_len * inner];
                for o in 0..outer {
                    let dst_base = (o * axis_len + start) * inner;
                    let src_base = o * len * inner;
                    full[dst_base..dst_base + len * inner]
                        .copy_from_slice(&gd[src_base..src_base + len * inner]);
                }
                vec![(a.0, Tensor::from_vec(&shape, full).expect("shape checked"))]
            })),
        )
    }

    /// Insert a size-1 axis.
    pub fn unsqueeze(&mut self, a: Var, axis: usize) -> Result<Var> {
        let mut shape = self.value(a).shape().to_vec();
        if axis > shape.len() {
            return Err(Error::invalid("unsqueeze", format!("axis {axis} out of range")));
        }
        shape.insert(axis, 1);
        self.reshape(a, &shape)
    }

    /// Stack equal-shaped tensors along a new leading-position `axis`.
    pub fn stack(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let mut expanded = Vec::with_capacity(parts.len());
        for &p in parts {
            expanded.push(self.unsqueeze(p, axis)?);
        }
        self.concat(&expanded, axis)
    }

    // ── reductions ──────────────────────────────────────────────────────────

    pub fn sum_axes(&mut self, a: Var, axes: &[usize], keepdim: bool) -> Result<Var> {
        self.reduce_axes("sum_axes", a, axes, keepdim, false)
    }

    pub fn mean_axes(&mut self, a: Var, axes: &[usize], keepdim: bool) -> Result<Var> {
        self.reduce_axes("mean_axes", a, axes, keepdim, true)
    }

    fn reduce_axes(
        &mut self,
        op: &'static str,
        a: Var,
        axes: &[usize],
        keepdim: bool,
        mean: bool,
    ) -> Result<Var> {
        let shape = self.value(a).shape().to_vec();
        let rank = shape.len();
        let mut reduce = vec![false; rank];
        for &ax in axes {
            if ax >= rank {
                return Err(Error::invalid(op, format!("axis {ax} out of range for {:?}", shape)));
            }
            reduce[ax] = true;
        }
        let kept_shape: Vec<usize> =
            (0..rank).map(|i| if reduce[i] { 1 } else { shape[i] }).collect();
        let count: usize = (0..rank).filter(|&i| reduce[i]).map(|i| shape[i]).product();
        let out_len: usize = kept_shape.iter().product();
        let mut out = vec![S::zero(); out_len];
        let ostr = broadcast_strides(&kept_shape, &shape);
        let src = self.value(a).data();
        let mut idx = vec![0usize; rank];
        let mut oo = 0usize;
        for &x in src {
            out[oo] += x;
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                oo += ostr[ax];
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
                oo -= ostr[ax] * shape[ax];
            }
        }
        if mean {
            let c = S::from_f64(count as f64);
            for x in &mut out {
                *x /= c;
            }
        }
        let final_shape: Vec<usize> = if keepdim {
            kept_shape.clone()
        } else {
            (0..rank).filter(|&i| !reduce[i]).map(|i| shape[i]).collect()
        };
        let out = Tensor::from_vec(&final_shape, out)?;
        if !self.wants_grad(&[a]) {
            return self.push(op, out, None);
        }
        let scale = if mean { S::one() / S::from_f64(count as f64) } else { S::one() };
        self.push(
            op,
            out,
            Some(Box::new(move |g| {
                let gk = g.reshaped(&kept_shape).expect("same length");
                let mut full = broadcast_to(&gk, &shape);
                if scale != S::one() {
                    full = full.map(|x| x * scale);
                }
                vec![(a.0, full)]
            })),
        )
    }

    /// Sum of all elements (rank-0 result).
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let mut acc = S::zero();
        for &x in self.value(a).data() {
            acc += x;
        }
        let out = Tensor::scalar(acc);
        if !self.wants_grad(&[a]) {
            return self.push("sum_all", out, None);
        }
        let shape = self.value(a).shape().to_vec();
        self.push(
            "sum_all",
            out,
            Some(Box::new(move |g| {
                let gi = g.item();
                vec![(a.0, Tensor::full(&shape, gi))]
            })),
        )
    }

    /// Mean of all elements (rank-0 result).
    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        let s = self.sum_all(a)?;
        self.mul_scalar(s, S::one() / S::from_f64(n as f64))
    }

    /// Softmax along `axis`, shifted by the lane max for stability.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.value(a).shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::invalid("softmax", format!("axis {axis} out of range")));
        }
        let lane = shape[axis];
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(a).data();
        let mut data = vec![S::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * lane * inner + i;
                let mut mx = S::neg_infinity();
                for l in 0..lane {
                    mx = mx.max(src[base + l * inner]);
                }
                let mut denom = S::zero();
                for l in 0..lane {
                    let e = (src[base + l * inner] - mx).exp();
                    data[base + l * inner] = e;
                    denom += e;
                }
                for l in 0..lane {
                    data[base + l * inner] /= denom;
                }
            }
        }
        let out = Tensor::from_vec(&shape, data)?;
        if !self.wants_grad(&[a]) {
            return self.push("softmax", out, None);
        }
        let yv = out.clone();
        self.push(
            "softmax",
            out,
            Some(Box::new(move |g| {
                // dx = y ⊙ (g − Σ_lane g⊙y)
                let gd = g.data();
                let yd = yv.data();
                let mut dx = vec![S::zero(); gd.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * lane * inner + i;
                        let mut dot = S::zero();
                        for l in 0..lane {
                            dot += gd[base + l * inner] * yd[base + l * inner];
                        }
                        for l in 0..lane {
                            let p = base + l * inner;
                            dx[p] = yd[p] * (gd[p] - dot);
                        }
                    }
                }
                vec![(a.0, Tensor::from_vec(yv.shape(), dx).expect("shape checked"))]
            })),
        )
    }

    /// Trace over the last two (square) dims; leading dims are preserved.
    pub fn trace(&mut self, a: Var) -> Result<Var> {
        let shape = self.value(a).shape().to_vec();
        let rank = shape.len();
        if rank < 2 || shape[rank - 1] != shape[rank - 2] {
            return Err(Error::shape("trace", format!("need (..., M, M), got {:?}", shape)));
        }
        let m = shape[rank - 1];
        let lead: usize = shape[..rank - 2].iter().product();
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(lead);
        for b in 0..lead {
            let base = b * m * m;
            let mut acc = S::zero();
            for i in 0..m {
                acc += src[base + i * m + i];
            }
            data.push(acc);
        }
        let out_shape: Vec<usize> = shape[..rank - 2].to_vec();
        let out = Tensor::from_vec(&out_shape, data)?;
        if !self.wants_grad(&[a]) {
            return self.push("trace", out, None);
        }
        self.push(
            "trace",
            out,
            Some(Box::new(move |g| {
                let gd = g.data();
                let mut dx = vec![S::zero(); lead * m * m];
                for b in 0..lead {
                    let base = b * m * m;
                    for i in 0..m {
                        dx[base + i * m + i] = gd[b];
                    }
                }
                vec![(a.0, Tensor::from_vec(&shape, dx).expect("shape checked"))]
            })),
        )
    }

    // ── matrix products ─────────────────────────────────────────────────────

    /// (m×k) @ (k×n).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ash, bsh) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        if ash.len() != 2 || bsh.len() != 2 || ash[1] != bsh[0] {
            return Err(Error::shape("matmul", format!("{:?} @ {:?}", ash, bsh)));
        }
        let (m, k, n) = (ash[0], ash[1], bsh[1]);
        let mut data = vec![S::zero(); m * n];
        matmul_acc(m, k, n, self.value(a).data(), self.value(b).data(), &mut data);
        let out = Tensor::from_vec(&[m, n], data)?;
        if !self.wants_grad(&[a, b]) {
            return self.push("matmul", out, None);
        }
        let (av, bv) = (self.value(a).clone(), self.value(b).clone());
        let (na, nb) = (self.needs_grad(a), self.needs_grad(b));
        self.push(
            "matmul",
            out,
            Some(Box::new(move |g| {
                let mut contribs = Vec::with_capacity(2);
                if na {
                    let mut da = vec![S::zero(); m * k];
                    matmul_nt_acc(m, n, k, g.data(), bv.data(), &mut da);
                    contribs.push((a.0, Tensor::from_vec(&[m, k], da).expect("shape checked")));
                }
                if nb {
                    let mut db = vec![S::zero(); k * n];
                    matmul_tn_acc(m, k, n, av.data(), g.data(), &mut db);
                    contribs.push((b.0, Tensor::from_vec(&[k, n], db).expect("shape checked")));
                }
                contribs
            })),
        )
    }

    /// Batched matmul: (B,m,k) @ (B,k,n), or (B,m,k) @ (k,n) with the right
    /// operand shared across the batch.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ash, bsh) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        if ash.len() != 3 {
            return Err(Error::shape("bmm", format!("lhs must be rank 3, got {:?}", ash)));
        }
        let (bsz, m, k) = (ash[0], ash[1], ash[2]);
        let shared = match bsh.len() {
            3 if bsh[0] == bsz && bsh[1] == k => false,
            2 if bsh[0] == k => true,
            _ => return Err(Error::shape("bmm", format!("{:?} @ {:?}", ash, bsh))),
        };
        let n = *bsh.last().unwrap();
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut data = vec![S::zero(); bsz * m * n];
        let run = |chunk: (usize, &mut [S])| {
            let (i, out) = chunk;
            let asl = &ad[i * m * k..(i + 1) * m * k];
            let bsl = if shared { bd } else { &bd[i * k * n..(i + 1) * k * n] };
            matmul_acc(m, k, n, asl, bsl, out);
        };
        if parallel_enabled() && bsz > 1 && m * k * n >= 1 << 12 {
            data.par_chunks_mut(m * n).enumerate().for_each(run);
        } else {
            data.chunks_mut(m * n).enumerate().for_each(run);
        }
        let out = Tensor::from_vec(&[bsz, m, n], data)?;
        if !self.wants_grad(&[a, b]) {
            return self.push("bmm", out, None);
        }
        let (av, bv) = (self.value(a).clone(), self.value(b).clone());
        let (na, nb) = (self.needs_grad(a), self.needs_grad(b));
        self.push(
            "bmm",
            out,
            Some(Box::new(move |g| {
                let gd = g.data();
                let ad = av.data();
                let bd = bv.data();
                let mut contribs = Vec::with_capacity(2);
                if na {
                    let mut da = vec![S::zero(); bsz * m * k];
                    let run = |chunk: (usize, &mut [S])| {
                        let (i, out) = chunk;
                        let gsl = &gd[i * m * n..(i + 1) * m * n];
                        let bsl = if shared { bd } else { &bd[i * k * n..(i + 1) * k * n] };
                        matmul_nt_acc(m, n, k, gsl, bsl, out);
                    };
                    if parallel_enabled() && bsz > 1 && m * k * n >= 1 << 12 {
                        da.par_chunks_mut(m * k).enumerate().for_each(run);
                    } else {
                        da.chunks_mut(m * k).enumerate().for_each(run);
                    }
                    contribs.push((a.0, Tensor::from_vec(&[bsz, m, k], da).expect("shape ok")));
                }
                if nb {
                    if shared {
                        // Accumulate batch contributions in index order.
                        let mut db = vec![S::zero(); k * n];
                        for i in 0..bsz {
                            matmul_tn_acc(
                                m,
                                k,
                                n,
                                &ad[i * m * k..(i + 1) * m * k],
                                &gd[i * m * n..(i + 1) * m * n],
                                &mut db,
                            );
                        }
                        contribs.push((b.0, Tensor::from_vec(&[k, n], db).expect("shape ok")));
                    } else {
                        let mut db = vec![S::zero(); bsz * k * n];
                        let run = |chunk: (usize, &mut [S])| {
                            let (i, out) = chunk;
                            matmul_tn_acc(
                                m,
                                k,
                                n,
                                &ad[i * m * k..(i + 1) * m * k],
                                &gd[i * m * n..(i + 1) * m * n],
                                out,
                            );
                        };
                        if parallel_enabled() && bsz > 1 && m * k * n >= 1 << 12 {
                            db.par_chunks_mut(k * n).enumerate().for_each(run);
                        } else {
                            db.chunks_mut(k * n).enumerate().for_each(run);
                        }
                        contribs.push((b.0, Tensor::from_vec(&[bsz, k, n], db).expect("shape ok")));
                    }
                }
                contribs
            })),
        )
    }
}

fn stable_sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

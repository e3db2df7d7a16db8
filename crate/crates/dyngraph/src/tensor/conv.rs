//! Dilated causal convolution over the trailing time axis.
//!
//! Input is laid out (N, C_in, V, T): batch, channels, spatial rows, time.
//! Kernels are (C_out, C_in, 1, K) — height 1, so rows never mix. Left
//! zero-padding of (K−1)·dilation keeps the output length at T and makes the
//! op causal: `out[t]` only reads `x[t]`, `x[t−d]`, …, `x[t−(K−1)·d]`.

use rayon::prelude::*;

use super::ops::parallel_enabled;
use super::tape::{Tape, Var};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

struct Dims {
    n: usize,
    ci: usize,
    co: usize,
    v: usize,
    t: usize,
    k: usize,
    d: usize,
}

/// out[oc,v,t] += Σ_{ic,k} w[oc,ic,k]·x[ic,v,t−(K−1−k)·d] for one sample.
fn forward_one<S: Scalar>(dm: &Dims, x: &[S], w: &[S], bias: &[S], out: &mut [S]) {
    let Dims { ci, co, v, t, k, d, .. } = *dm;
    for oc in 0..co {
        let b = bias[oc];
        let out_c = &mut out[oc * v * t..(oc + 1) * v * t];
        for val in out_c.iter_mut() {
            *val = b;
        }
        for ic in 0..ci {
            let x_c = &x[ic * v * t..(ic + 1) * v * t];
            for kk in 0..k {
                let wv = w[(oc * ci + ic) * k + kk];
                if wv == S::zero() {
                    continue;
                }
                let off = (k - 1 - kk) * d;
                if off >= t {
                    continue;
                }
                for row in 0..v {
                    let xrow = &x_c[row * t..row * t + t - off];
                    let orow = &mut out_c[row * t + off..(row + 1) * t];
                    for (o, xi) in orow.iter_mut().zip(xrow) {
                        *o += wv * *xi;
                    }
                }
            }
        }
    }
}

/// dx[ic,v,t−off] += w[oc,ic,k]·dy[oc,v,t] for one sample.
fn backward_input_one<S: Scalar>(dm: &Dims, gy: &[S], w: &[S], dx: &mut [S]) {
    let Dims { ci, co, v, t, k, d, .. } = *dm;
    for ic in 0..ci {
        let dx_c = &mut dx[ic * v * t..(ic + 1) * v * t];
        for oc in 0..co {
            let gy_c = &gy[oc * v * t..(oc + 1) * v * t];
            for kk in 0..k {
                let wv = w[(oc * ci + ic) * k + kk];
                if wv == S::zero() {
                    continue;
                }
                let off = (k - 1 - kk) * d;
                if off >= t {
                    continue;
                }
                for row in 0..v {
                    let grow = &gy_c[row * t + off..(row + 1) * t];
                    let xrow = &mut dx_c[row * t..row * t + t - off];
                    for (xi, g) in xrow.iter_mut().zip(grow) {
                        *xi += wv * *g;
                    }
                }
            }
        }
    }
}

/// dw[oc,ic,k] = Σ_{n,v,t} dy[n,oc,v,t]·x[n,ic,v,t−off]; one output channel.
fn backward_weight_oc<S: Scalar>(dm: &Dims, oc: usize, x: &[S], gy: &[S], dw_oc: &mut [S]) {
    let Dims { n, ci, co, v, t, k, d } = *dm;
    for ic in 0..ci {
        for kk in 0..k {
            let off = (k - 1 - kk) * d;
            if off >= t {
                continue;
            }
            let mut acc = S::zero();
            for s in 0..n {
                let x_c = &x[(s * ci + ic) * v * t..(s * ci + ic + 1) * v * t];
                let gy_c = &gy[(s * co + oc) * v * t..(s * co + oc + 1) * v * t];
                for row in 0..v {
                    let grow = &gy_c[row * t + off..(row + 1) * t];
                    let xrow = &x_c[row * t..row * t + t - off];
                    for (g, xi) in grow.iter().zip(xrow) {
                        acc += *g * *xi;
                    }
                }
            }
            dw_oc[ic * k + kk] = acc;
        }
    }
}

impl<S: Scalar> Tape<S> {
    /// Causal dilated conv: x (N,C_in,V,T) ⊛ w (C_out,C_in,1,K) + bias (C_out).
    pub fn causal_conv2d(&mut self, x: Var, w: Var, bias: Var, dilation: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        let bs = self.value(bias).shape().to_vec();
        if xs.len() != 4 {
            return Err(Error::shape("causal_conv2d", format!("input must be (N,C,V,T), got {:?}", xs)));
        }
        if ws.len() != 4 || ws[2] != 1 {
            return Err(Error::shape(
                "causal_conv2d",
                format!("kernel must be (C_out,C_in,1,K), got {:?}", ws),
            ));
        }
        if ws[1] != xs[1] {
            return Err(Error::shape(
                "causal_conv2d",
                format!("kernel expects {} input channels, input has {}", ws[1], xs[1]),
            ));
        }
        if bs != [ws[0]] {
            return Err(Error::shape(
                "causal_conv2d",
                format!("bias must be ({},), got {:?}", ws[0], bs),
            ));
        }
        if dilation == 0 || ws[3] == 0 {
            return Err(Error::invalid("causal_conv2d", "dilation and kernel length must be ≥ 1"));
        }
        let dm = Dims { n: xs[0], ci: xs[1], co: ws[0], v: xs[2], t: xs[3], k: ws[3], d: dilation };
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let bd = self.value(bias).data();
        let sample = dm.co * dm.v * dm.t;
        let in_sample = dm.ci * dm.v * dm.t;
        let mut data = vec![S::zero(); dm.n * sample];
        let run = |(i, out): (usize, &mut [S])| {
            forward_one(&dm, &xd[i * in_sample..(i + 1) * in_sample], wd, bd, out);
        };
        if parallel_enabled() && dm.n > 1 {
            data.par_chunks_mut(sample).enumerate().for_each(run);
        } else {
            data.chunks_mut(sample).enumerate().for_each(run);
        }
        let out = Tensor::from_vec(&[dm.n, dm.co, dm.v, dm.t], data)?;
        if !self.wants_grad(&[x, w, bias]) {
            return self.push("causal_conv2d", out, None);
        }
        let (xv, wv) = (self.value(x).clone(), self.value(w).clone());
        let (nx, nw, nb) = (self.needs_grad(x), self.needs_grad(w), self.needs_grad(bias));
        let (wsh, xsh) = (ws.clone(), xs.clone());
        self.push(
            "causal_conv2d",
            out,
            Some(Box::new(move |g| {
                let gd = g.data();
                let mut contribs = Vec::with_capacity(3);
                if nx {
                    let mut dx = vec![S::zero(); xv.len()];
                    let run = |(i, dxi): (usize, &mut [S])| {
                        backward_input_one(&dm, &gd[i * sample..(i + 1) * sample], wv.data(), dxi);
                    };
                    if parallel_enabled() && dm.n > 1 {
                        dx.par_chunks_mut(in_sample).enumerate().for_each(run);
                    } else {
                        dx.chunks_mut(in_sample).enumerate().for_each(run);
                    }
                    contribs.push((x.0, Tensor::from_vec(&xsh, dx).expect("shape checked")));
                }
                if nw {
                    let mut dw = vec![S::zero(); wv.len()];
                    let per_oc = dm.ci * dm.k;
                    let run = |(oc, dwo): (usize, &mut [S])| {
                        backward_weight_oc(&dm, oc, xv.data(), gd, dwo);
                    };
                    if parallel_enabled() && dm.co > 1 {
                        dw.par_chunks_mut(per_oc).enumerate().for_each(run);
                    } else {
                        dw.chunks_mut(per_oc).enumerate().for_each(run);
                    }
                    contribs.push((w.0, Tensor::from_vec(&wsh, dw).expect("shape checked")));
                }
                if nb {
                    let mut db = vec![S::zero(); dm.co];
                    for s in 0..dm.n {
                        for oc in 0..dm.co {
                            let c = &gd[(s * dm.co + oc) * dm.v * dm.t
                                ..(s * dm.co + oc + 1) * dm.v * dm.t];
                            let mut acc = S::zero();
                            for &gi in c {
                                acc += gi;
                            }
                            db[oc] += acc;
                        }
                    }
                    contribs.push((bias.0, Tensor::from_vec(&[dm.co], db).expect("shape checked")));
                }
                contribs
            })),
        )
    }
}

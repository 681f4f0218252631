use super::{shape_err, Graph, Grads, Op, Var};
use crate::scalar::Scalar;
use crate::tensor::TensorResult;

/// `out[m×n] += a[m×k] · b[k×n]`
fn gemm<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * *bv;
            }
        }
    }
}

impl<T: Scalar> Graph<T> {
    /// Matrix product of two 2-D tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(self.data(a), self.data(b), &mut out, m, k, n);
        Ok(self.push(vec![m, n], out, Op::MatMul { a, b, m, k, n }, &[a, b]))
    }

    /// Affine map `x · wᵀ + b` with `w` stored as `[out × in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> TensorResult<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] {
            return Err(shape_err("linear", sx, sw));
        }
        if sb != [sw[0]] {
            return Err(shape_err("linear bias", sw, sb));
        }
        let (batch, inp, out) = (sx[0], sx[1], sw[0]);
        let (xd, wd, bd) = (self.data(x), self.data(w), self.data(b));
        let mut y = Vec::with_capacity(batch * out);
        for r in 0..batch {
            let xr = &xd[r * inp..(r + 1) * inp];
            for o in 0..out {
                let wr = &wd[o * inp..(o + 1) * inp];
                let dot: T = xr.iter().zip(wr).map(|(a, b)| *a * *b).sum();
                y.push(dot + bd[o]);
            }
        }
        Ok(self.push(
            vec![batch, out],
            y,
            Op::Linear { x, w, b, batch, inp, out },
            &[x, w, b],
        ))
    }
}

pub(super) fn matmul_backward<T: Scalar>(
    graph: &Graph<T>,
    a: Var,
    b: Var,
    (m, k, n): (usize, usize, usize),
    g: &[T],
    grads: &mut Grads<T>,
) {
    let (ad, bd) = (graph.data(a), graph.data(b));
    // dA = dC · Bᵀ
    graph.accumulate(grads, a, || {
        let mut d = vec![T::zero(); m * k];
        for i in 0..m {
            let grow = &g[i * n..(i + 1) * n];
            for p in 0..k {
                let brow = &bd[p * n..(p + 1) * n];
                d[i * k + p] = grow.iter().zip(brow).map(|(x, y)| *x * *y).sum();
            }
        }
        d
    });
    // dB = Aᵀ · dC
    graph.accumulate(grads, b, || {
        let mut d = vec![T::zero(); k * n];
        for i in 0..m {
            let grow = &g[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ad[i * k + p];
                let drow = &mut d[p * n..(p + 1) * n];
                for (o, gv) in drow.iter_mut().zip(grow) {
                    *o += av * *gv;
                }
            }
        }
        d
    });
}

pub(super) fn linear_backward<T: Scalar>(
    graph: &Graph<T>,
    (x, w, b): (Var, Var, Var),
    (batch, inp, out): (usize, usize, usize),
    g: &[T],
    grads: &mut Grads<T>,
) {
    let (xd, wd) = (graph.data(x), graph.data(w));
    graph.accumulate(grads, x, || {
        let mut d = vec![T::zero(); batch * inp];
        gemm(g, wd, &mut d, batch, out, inp);
        d
    });
    graph.accumulate(grads, w, || {
        let mut d = vec![T::zero(); out * inp];
        for r in 0..batch {
            let xr = &xd[r * inp..(r + 1) * inp];
            for o in 0..out {
                let gv = g[r * out + o];
                if gv == T::zero() {
                    continue;
                }
                for (dv, xv) in d[o * inp..(o + 1) * inp].iter_mut().zip(xr) {
                    *dv += gv * *xv;
                }
            }
        }
        d
    });
    graph.accumulate(grads, b, || {
        let mut d = vec![T::zero(); out];
        for row in g.chunks(out) {
            for (dv, gv) in d.iter_mut().zip(row) {
                *dv += *gv;
            }
        }
        d
    });
}

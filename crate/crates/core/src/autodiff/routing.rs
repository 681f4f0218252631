//! Ops used by sparse expert routing: top-k masking, row gather/scatter, and
//! the smoothed selection probability behind the load-balancing loss.

use std::cmp::Ordering;

use super::{shape_err, Graph, Grads, Op, Var};
use crate::scalar::{self, Scalar};
use crate::tensor::{TensorError, TensorResult};

/// Indices of `row` sorted by descending value; equal values keep index order.
pub fn descending_order<T: Scalar>(row: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap_or(Ordering::Equal));
    idx
}

/// Index of the k-th largest entry of a row once entry `i` is removed.
///
/// `order` is the row's [`descending_order`] and `rank[j]` the position of `j`
/// in it. `None` when fewer than `k` other entries exist.
pub fn kth_excluding_index(order: &[usize], rank: &[usize], k: usize, i: usize) -> Option<usize> {
    debug_assert!(k >= 1);
    if rank[i] < k {
        order.get(k).copied()
    } else {
        order.get(k - 1).copied()
    }
}

pub(crate) struct LoadProbabilityTape<T> {
    clean: Var,
    noise_std: Var,
    noisy: Var,
    threshold: Vec<Option<usize>>,
    z: Vec<T>,
}

fn expect_2d(shape: &[usize], op: &'static str) -> TensorResult<(usize, usize)> {
    match *shape {
        [r, c] => Ok((r, c)),
        _ => Err(TensorError::Dimension {
            op,
            msg: format!("expected a 2-D tensor, got {shape:?}"),
        }),
    }
}

impl<T: Scalar> Graph<T> {
    /// Keeps the `k` largest entries of each row and sets the rest to `-inf`.
    ///
    /// Returns the masked tensor and, per row, the kept column indices in
    /// descending-value order. Gradients pass through kept entries only.
    pub fn top_k_mask(&mut self, a: Var, k: usize) -> TensorResult<(Var, Vec<Vec<usize>>)> {
        let (rows, cols) = expect_2d(self.shape(a), "top_k_mask")?;
        if k == 0 || k > cols {
            return Err(TensorError::Dimension {
                op: "top_k_mask",
                msg: format!("k = {k} must lie in 1..={cols}"),
            });
        }
        let x = self.data(a);
        let mut out = vec![T::neg_infinity(); x.len()];
        let mut keep = vec![false; x.len()];
        let mut selected = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &x[r * cols..(r + 1) * cols];
            let top: Vec<usize> = descending_order(row).into_iter().take(k).collect();
            for &c in &top {
                out[r * cols + c] = row[c];
                keep[r * cols + c] = true;
            }
            selected.push(top);
        }
        let v = self.push(vec![rows, cols], out, Op::TopKMask { a, keep }, &[a]);
        Ok((v, selected))
    }

    /// Rows `rows` of a 2-D tensor, in the given order.
    pub fn index_select_rows(&mut self, a: Var, rows: &[usize]) -> TensorResult<Var> {
        let (n, width) = expect_2d(self.shape(a), "index_select_rows")?;
        if rows.is_empty() || rows.iter().any(|&r| r >= n) {
            return Err(TensorError::Dimension {
                op: "index_select_rows",
                msg: format!("row indices must be non-empty and below {n}"),
            });
        }
        let x = self.data(a);
        let mut out = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            out.extend_from_slice(&x[r * width..(r + 1) * width]);
        }
        Ok(self.push(
            vec![rows.len(), width],
            out,
            Op::IndexSelectRows {
                a,
                rows: rows.to_vec(),
                width,
            },
            &[a],
        ))
    }

    /// Zero `[n_rows × width]` tensor with each part's rows added at its row indices.
    pub fn index_add_rows(&mut self, n_rows: usize, width: usize, parts: Vec<(Var, Vec<usize>)>) -> TensorResult<Var> {
        let mut out = vec![T::zero(); n_rows * width];
        for (part, rows) in &parts {
            if self.shape(*part) != [rows.len(), width] || rows.iter().any(|&r| r >= n_rows) {
                return Err(shape_err("index_add_rows", self.shape(*part), &[rows.len(), width]));
            }
            let x = self.data(*part);
            for (j, &r) in rows.iter().enumerate() {
                for c in 0..width {
                    out[r * width + c] += x[j * width + c];
                }
            }
        }
        let inputs: Vec<Var> = parts.iter().map(|(v, _)| *v).collect();
        Ok(self.push(
            vec![n_rows, width],
            out,
            Op::IndexAddRows { parts, width },
            &inputs,
        ))
    }

    /// Flat-indexed entries of `a` as a 1-D tensor.
    pub fn gather_entries(&mut self, a: Var, entries: &[usize]) -> TensorResult<Var> {
        let n = self.value(a).numel();
        if entries.is_empty() || entries.iter().any(|&e| e >= n) {
            return Err(TensorError::Dimension {
                op: "gather_entries",
                msg: format!("entries must be non-empty and below {n}"),
            });
        }
        let x = self.data(a);
        let out = entries.iter().map(|&e| x[e]).collect();
        Ok(self.push(
            vec![entries.len()],
            out,
            Op::GatherEntries {
                a,
                entries: entries.to_vec(),
            },
            &[a],
        ))
    }

    /// Multiplies row `r` of a 2-D tensor by `s[r]`.
    pub fn scale_rows(&mut self, a: Var, s: Var) -> TensorResult<Var> {
        let (rows, width) = expect_2d(self.shape(a), "scale_rows")?;
        if self.shape(s) != [rows] {
            return Err(shape_err("scale_rows", self.shape(a), self.shape(s)));
        }
        let sv = self.data(s);
        let out = self
            .data(a)
            .iter()
            .enumerate()
            .map(|(i, v)| *v * sv[i / width])
            .collect();
        Ok(self.push(vec![rows, width], out, Op::ScaleRows { a, s, width }, &[a, s]))
    }

    /// Probability that each expert stays in the top `k` when only its own noise is redrawn.
    ///
    /// `P[r, i] = Φ((clean[r, i] − kth_excluding(noisy[r], k, i)) / noise_std[r, i])`.
    /// Where no competitor threshold exists (`k` equals the expert count) the
    /// probability is 1 and carries no gradient.
    pub fn load_probability(&mut self, clean: Var, noise_std: Var, noisy: Var, k: usize) -> TensorResult<Var> {
        let (rows, cols) = expect_2d(self.shape(clean), "load_probability")?;
        if self.shape(noise_std) != [rows, cols] || self.shape(noisy) != [rows, cols] {
            return Err(shape_err("load_probability", self.shape(clean), self.shape(noisy)));
        }
        if k == 0 || k > cols {
            return Err(TensorError::Dimension {
                op: "load_probability",
                msg: format!("k = {k} must lie in 1..={cols}"),
            });
        }
        let (c, s, h) = (self.data(clean), self.data(noise_std), self.data(noisy));
        let mut p = Vec::with_capacity(c.len());
        let mut z = Vec::with_capacity(c.len());
        let mut threshold = Vec::with_capacity(c.len());
        let mut rank = vec![0; cols];
        for r in 0..rows {
            let hrow = &h[r * cols..(r + 1) * cols];
            let order = descending_order(hrow);
            for (pos, &j) in order.iter().enumerate() {
                rank[j] = pos;
            }
            for i in 0..cols {
                let at = r * cols + i;
                match kth_excluding_index(&order, &rank, k, i) {
                    Some(j) => {
                        let zi = (c[at] - hrow[j]) / s[at];
                        p.push(scalar::normal_cdf(zi));
                        z.push(zi);
                        threshold.push(Some(r * cols + j));
                    }
                    None => {
                        p.push(T::one());
                        z.push(T::infinity());
                        threshold.push(None);
                    }
                }
            }
        }
        let tape = LoadProbabilityTape {
            clean,
            noise_std,
            noisy,
            threshold,
            z,
        };
        Ok(self.push(
            vec![rows, cols],
            p,
            Op::LoadProbability(tape),
            &[clean, noise_std, noisy],
        ))
    }
}

pub(super) fn load_probability_backward<T: Scalar>(
    graph: &Graph<T>,
    t: &LoadProbabilityTape<T>,
    g: &[T],
    grads: &mut Grads<T>,
) {
    let s = graph.data(t.noise_std);
    // dP/dz · upstream / σ, zero where no threshold exists
    let w: Vec<T> = (0..g.len())
        .map(|i| match t.threshold[i] {
            Some(_) => g[i] * scalar::normal_pdf(t.z[i]) / s[i],
            None => T::zero(),
        })
        .collect();
    graph.accumulate(grads, t.clean, || w.clone());
    graph.accumulate(grads, t.noise_std, || {
        w.iter()
            .zip(&t.z)
            .zip(&t.threshold)
            .map(|((w, z), th)| if th.is_some() { -*w * *z } else { T::zero() })
            .collect()
    });
    graph.accumulate(grads, t.noisy, || {
        let mut d = vec![T::zero(); g.len()];
        for (i, th) in t.threshold.iter().enumerate() {
            if let Some(j) = th {
                d[*j] -= w[i];
            }
        }
        d
    });
}

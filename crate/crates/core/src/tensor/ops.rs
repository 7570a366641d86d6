use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Result, Tensor, TensorError};

/// How masked L1 terms are reduced to a scalar.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Sum,
    /// Divides the masked sum by the total mask weight (after broadcasting).
    Mean,
}

// Row-parallel kernels on raw row-major buffers.

/// `a (m×k) · b (k×n)`.
pub(crate) fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    if n == 0 {
        return out;
    }
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let ar = &a[i * k..(i + 1) * k];
        for (p, &av) in ar.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let br = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    });
    out
}

/// `a (m×k) · bᵀ` where `b` is `n×k`.
pub(crate) fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut out = vec![0.0; m * n];
    if n == 0 {
        return out;
    }
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let ar = &a[i * k..(i + 1) * k];
        for (j, o) in row.iter_mut().enumerate() {
            *o = dot(ar, &b[j * k..(j + 1) * k]);
        }
    });
    out
}

/// `aᵀ · c` where `a` is `m×k` and `c` is `m×n`; result is `k×n`.
pub(crate) fn mm_tn(a: &[f64], c: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(c.len(), m * n);
    let mut out = vec![0.0; k * n];
    if n == 0 {
        return out;
    }
    out.par_chunks_mut(n).enumerate().for_each(|(r, row)| {
        for i in 0..m {
            let av = a[i * k + r];
            if av == 0.0 {
                continue;
            }
            for (o, &cv) in row.iter_mut().zip(&c[i * n..(i + 1) * n]) {
                *o += av * cv;
            }
        }
    });
    out
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Dimensions of a multi-head attention call.
#[derive(Clone, Copy, Debug)]
pub(crate) struct AttnDims {
    pub nq: usize,
    pub nk: usize,
    pub d: usize,
    pub dv: usize,
    pub heads: usize,
}

impl AttnDims {
    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    pub fn head_dv(&self) -> usize {
        self.dv / self.heads
    }
}

/// Multi-head scaled dot-product attention. Head `h` uses the `h`-th
/// contiguous column block of Q, K and V. Returns the output and, when
/// requested, the softmax weights laid out as `[head][query][key]`.
pub(crate) fn mha_forward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    dims: AttnDims,
    keep_probs: bool,
) -> (Vec<f64>, Option<Vec<f64>>) {
    let AttnDims { nq, nk, d, dv, heads } = dims;
    let hd = dims.head_dim();
    let hv = dims.head_dv();
    let scale = 1.0 / (hd as f64).sqrt();
    let mut out = vec![0.0; nq * dv];
    let mut probs = if keep_probs {
        vec![0.0; heads * nq * nk]
    } else {
        Vec::new()
    };
    // Per query row: all heads. Probabilities are written into per-row
    // scratch first and then copied to the [head][query][key] layout.
    let rows: Vec<Vec<f64>> = out
        .par_chunks_mut(dv)
        .enumerate()
        .map(|(i, orow)| {
            let mut row_probs = vec![0.0; if keep_probs { heads * nk } else { nk }];
            let mut p = vec![0.0; nk];
            for h in 0..heads {
                let qi = &q[i * d + h * hd..i * d + (h + 1) * hd];
                let mut max = f64::NEG_INFINITY;
                for (j, pj) in p.iter_mut().enumerate() {
                    let s = dot(qi, &k[j * d + h * hd..j * d + (h + 1) * hd]) * scale;
                    *pj = s;
                    max = max.max(s);
                }
                let mut z = 0.0;
                for pj in p.iter_mut() {
                    *pj = (*pj - max).exp();
                    z += *pj;
                }
                let oh = &mut orow[h * hv..(h + 1) * hv];
                for (j, pj) in p.iter_mut().enumerate() {
                    *pj /= z;
                    let vj = &v[j * dv + h * hv..j * dv + (h + 1) * hv];
                    for (o, &vv) in oh.iter_mut().zip(vj) {
                        *o += *pj * vv;
                    }
                }
                if keep_probs {
                    row_probs[h * nk..(h + 1) * nk].copy_from_slice(&p);
                }
            }
            row_probs
        })
        .collect();
    if keep_probs {
        for (i, rp) in rows.iter().enumerate() {
            for h in 0..heads {
                probs[(h * nq + i) * nk..(h * nq + i + 1) * nk]
                    .copy_from_slice(&rp[h * nk..(h + 1) * nk]);
            }
        }
        (out, Some(probs))
    } else {
        (out, None)
    }
}

/// Gradients of multi-head attention with respect to Q, K and V.
pub(crate) fn mha_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &[f64],
    d_out: &[f64],
    dims: AttnDims,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let AttnDims { nq, nk, d, dv, heads } = dims;
    let hd = dims.head_dim();
    let hv = dims.head_dv();
    let scale = 1.0 / (hd as f64).sqrt();

    // dS = P ⊙ (dP − rowsum(dP ⊙ P)), dP = dO·Vᵀ; laid out like `probs`.
    let mut ds = vec![0.0; heads * nq * nk];
    ds.par_chunks_mut(nk).enumerate().for_each(|(hi, dsrow)| {
        let (h, i) = (hi / nq, hi % nq);
        let prow = &probs[hi * nk..(hi + 1) * nk];
        let doi = &d_out[i * dv + h * hv..i * dv + (h + 1) * hv];
        let mut acc = 0.0;
        for (j, dsj) in dsrow.iter_mut().enumerate() {
            let dp = dot(doi, &v[j * dv + h * hv..j * dv + (h + 1) * hv]);
            *dsj = dp;
            acc += dp * prow[j];
        }
        for (dsj, &pj) in dsrow.iter_mut().zip(prow) {
            *dsj = pj * (*dsj - acc);
        }
    });

    let mut dq = vec![0.0; nq * d];
    dq.par_chunks_mut(d).enumerate().for_each(|(i, row)| {
        for h in 0..heads {
            let dsrow = &ds[(h * nq + i) * nk..(h * nq + i + 1) * nk];
            let out = &mut row[h * hd..(h + 1) * hd];
            for (j, &s) in dsrow.iter().enumerate() {
                if s == 0.0 {
                    continue;
                }
                for (o, &kv) in out.iter_mut().zip(&k[j * d + h * hd..j * d + (h + 1) * hd]) {
                    *o += s * scale * kv;
                }
            }
        }
    });

    let mut dk = vec![0.0; nk * d];
    let mut dvv = vec![0.0; nk * dv];
    dk.par_chunks_mut(d)
        .zip(dvv.par_chunks_mut(dv))
        .enumerate()
        .for_each(|(j, (dkrow, dvrow))| {
            for h in 0..heads {
                let dk_h = &mut dkrow[h * hd..(h + 1) * hd];
                let dv_h = &mut dvrow[h * hv..(h + 1) * hv];
                for i in 0..nq {
                    let idx = (h * nq + i) * nk + j;
                    let p = probs[idx];
                    let s = ds[idx];
                    if s != 0.0 {
                        for (o, &qv) in dk_h.iter_mut().zip(&q[i * d + h * hd..i * d + (h + 1) * hd]) {
                            *o += s * scale * qv;
                        }
                    }
                    if p != 0.0 {
                        for (o, &g) in dv_h
                            .iter_mut()
                            .zip(&d_out[i * dv + h * hv..i * dv + (h + 1) * hv])
                        {
                            *o += p * g;
                        }
                    }
                }
            }
        });
    (dq, dk, dvv)
}

fn rank2(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(TensorError::Shape(format!(
            "{what} must be rank 2, got {:?}",
            t.shape()
        )));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = rank2(a, "lhs")?;
    let (k2, n) = rank2(b, "rhs")?;
    if k != k2 {
        return Err(TensorError::Shape(format!(
            "matmul inner dims {k} vs {k2}"
        )));
    }
    Ok(Tensor::from_parts(vec![m, n], mm_nn(a.data(), b.data(), m, k, n)))
}

fn check_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<AttnDims> {
    let (nq, d) = rank2(q, "Q")?;
    let (nk, dk) = rank2(k, "K")?;
    let (nv, dv) = rank2(v, "V")?;
    if d != dk {
        return Err(TensorError::Shape(format!("Q/K inner dims {d} vs {dk}")));
    }
    if nk != nv {
        return Err(TensorError::Shape(format!("K has {nk} rows, V has {nv}")));
    }
    if nk == 0 || d == 0 {
        return Err(TensorError::Shape("attention needs at least one key".into()));
    }
    Ok(AttnDims { nq, nk, d, dv, heads: 1 })
}

/// `softmax(QKᵀ/√d)` with `d` the width of Q.
pub fn attention_weights(q: &Tensor, k: &Tensor) -> Result<Tensor> {
    let v = Tensor::zeros(vec![k.shape().first().copied().unwrap_or(0), 1]);
    let dims = check_attention(q, k, &v)?;
    let (_, probs) = mha_forward(q.data(), k.data(), v.data(), dims, true);
    Ok(Tensor::from_parts(vec![dims.nq, dims.nk], probs.unwrap_or_default()))
}

/// Single-head scaled dot-product attention `softmax(QKᵀ/√d)·V`.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let dims = check_attention(q, k, v)?;
    let (out, _) = mha_forward(q.data(), k.data(), v.data(), dims, false);
    Ok(Tensor::from_parts(vec![dims.nq, dims.dv], out))
}

/// Checks that `mask` matches the trailing dims of `a` and returns how many
/// times it repeats over the leading dims.
pub(crate) fn mask_repeats(a_shape: &[usize], mask_shape: &[usize]) -> Result<usize> {
    if mask_shape.len() > a_shape.len() || !a_shape.ends_with(mask_shape) {
        return Err(TensorError::Shape(format!(
            "mask {mask_shape:?} does not broadcast over {a_shape:?}"
        )));
    }
    Ok(a_shape[..a_shape.len() - mask_shape.len()].iter().product())
}

pub(crate) fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `Σ |a − b| · mask`, with `mask` broadcast over the leading dims of `a`.
pub fn l1_loss(a: &Tensor, b: &Tensor, mask: &Tensor) -> Result<f64> {
    l1_loss_with(a, b, mask, Reduction::Sum)
}

pub fn l1_loss_with(a: &Tensor, b: &Tensor, mask: &Tensor, reduction: Reduction) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(TensorError::Shape(format!(
            "l1 operands {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let reps = mask_repeats(a.shape(), mask.shape())?;
    let m = mask.data();
    let total: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .enumerate()
        .map(|(i, (x, y))| (x - y).abs() * m[i % m.len().max(1)])
        .sum();
    Ok(match reduction {
        Reduction::Sum => total,
        Reduction::Mean => {
            let weight = mask.sum() * reps as f64;
            if weight > 0.0 {
                total / weight
            } else {
                0.0
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: u64, n: usize) -> Vec<f64> {
        let mut s = seed ^ 0x9E37_79B9_7F4A_7C15;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    fn naive_mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        out
    }

    #[test]
    fn kernels_agree_with_triple_loop() {
        let (m, k, n) = (5, 7, 3);
        let a = lcg(1, m * k);
        let b = lcg(2, k * n);
        let want = naive_mm(&a, &b, m, k, n);
        let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(p, q)| (p - q).abs() < 1e-12);
        assert!(close(&mm_nn(&a, &b, m, k, n), &want));
        let bt = transpose_raw(&b, k, n);
        assert!(close(&mm_nt(&a, &bt, m, k, n), &want));
        let at = transpose_raw(&a, m, k);
        assert!(close(&mm_tn(&at, &b, k, m, n), &want));
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![2, 3]);
        assert!(matches!(matmul(&a, &b), Err(TensorError::Shape(_))));
    }

    #[test]
    fn single_key_returns_its_value() {
        let q = Tensor::new(vec![3, 2], lcg(3, 6)).unwrap();
        let k = Tensor::new(vec![1, 2], vec![0.3, -0.7]).unwrap();
        let v = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let out = attention(&q, &k, &v).unwrap();
        for row in out.data().chunks(3) {
            assert_eq!(row, &[1.0, 2.0, 3.0]);
        }
    }

    #[test]
    fn orthonormal_keys_select_matching_rows() {
        let scale = 40.0;
        let eye = |s: f64| {
            Tensor::from_fn(vec![3, 3], |i| if i / 3 == i % 3 { s } else { 0.0 }).unwrap()
        };
        let v = Tensor::new(vec![3, 2], lcg(4, 6)).unwrap();
        let out = attention(&eye(scale), &eye(1.0), &v).unwrap();
        // Closed form: row i weights are e^{a}/(e^{a}+2) on key i, a = scale/√3.
        let a = scale / 3f64.sqrt();
        let w_hit = a.exp() / (a.exp() + 2.0);
        let w_miss = 1.0 / (a.exp() + 2.0);
        for i in 0..3 {
            for c in 0..2 {
                let mut want = 0.0;
                for j in 0..3 {
                    want += if i == j { w_hit } else { w_miss } * v.data()[j * 2 + c];
                }
                assert!((out.data()[i * 2 + c] - want).abs() < 1e-12);
                assert!((out.data()[i * 2 + c] - v.data()[i * 2 + c]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let q = Tensor::new(vec![6, 4], lcg(5, 24)).unwrap();
        let k = Tensor::new(vec![9, 4], lcg(6, 36).iter().map(|x| 5.0 * x).collect()).unwrap();
        let w = attention_weights(&q, &k).unwrap();
        for row in w.data().chunks(9) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rejects_inner_mismatch() {
        let q = Tensor::zeros(vec![2, 3]);
        let k = Tensor::zeros(vec![2, 4]);
        let v = Tensor::zeros(vec![2, 4]);
        assert!(attention(&q, &k, &v).is_err());
    }

    #[test]
    fn l1_reference_cases() {
        let a = Tensor::full(vec![10], 3.0);
        let b = Tensor::full(vec![10], 2.0);
        let ones = Tensor::full(vec![10], 1.0);
        assert_eq!(l1_loss(&a, &a, &ones).unwrap(), 0.0);
        assert_eq!(l1_loss(&a, &b, &ones).unwrap(), 10.0);
        assert_eq!(l1_loss_with(&a, &b, &ones, Reduction::Mean).unwrap(), 1.0);
    }

    #[test]
    fn l1_mask_broadcasts_over_leading_dims() {
        let a = Tensor::new(vec![2, 2, 3], lcg(7, 12)).unwrap();
        let b = Tensor::new(vec![2, 2, 3], lcg(8, 12)).unwrap();
        let mask = Tensor::new(vec![2, 3], vec![1.0, 0.0, 0.5, 0.0, 1.0, 0.25]).unwrap();
        let mut want = 0.0;
        for lead in 0..2 {
            for r in 0..2 {
                for c in 0..3 {
                    let i = lead * 6 + r * 3 + c;
                    want += (a.data()[i] - b.data()[i]).abs() * mask.data()[r * 3 + c];
                }
            }
        }
        assert!((l1_loss(&a, &b, &mask).unwrap() - want).abs() < 1e-14);
        let bad = Tensor::zeros(vec![3, 2]);
        assert!(l1_loss(&a, &b, &bad).is_err());
    }
}

//! Forward ops and their backward rules.
//!
//! Everything the model needs and nothing more: 2-D matmul, row softmax with
//! exact masking, layer norm, embedding lookup, relative-position scores and
//! a fused softmax cross-entropy. Shapes are rank 0..2; multi-head attention
//! is expressed as per-head column slices.

use std::sync::Arc;

use super::{NumError, Result, Tensor};

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(NumError::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        _ => Err(NumError::Shape {
            op,
            lhs: t.shape().to_vec(),
            rhs: vec![],
        }),
    }
}

// Raw row-major kernels shared by forward and backward passes.

/// a[m,k] @ b[k,n]
pub(crate) fn mm(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// a[m,k] @ b[n,k]^T
pub(crate) fn mm_nt(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *o = acc;
        }
    }
    out
}

/// a[k,m]^T @ b[k,n]
pub(crate) fn mm_tn(a: &[f64], k: usize, m: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for kk in 0..k {
        let arow = &a[kk * m..(kk + 1) * m];
        let brow = &b[kk * n..(kk + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Matrix product of two rank-2 tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = dims2("matmul", a)?;
    let (k2, n) = dims2("matmul", b)?;
    if k != k2 {
        return Err(NumError::Shape {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let data = mm(a.data(), m, k, b.data(), n);
    Ok(Tensor::from_op(
        vec![m, n],
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |g, inner| {
            let a = &inner.parents[0];
            let b = &inner.parents[1];
            let da = if a.requires_grad() {
                Some(mm_nt(g, m, n, b.data(), k))
            } else {
                None
            };
            let db = if b.requires_grad() {
                Some(mm_tn(a.data(), m, k, g, n))
            } else {
                None
            };
            vec![da, db]
        }),
        "matmul",
    ))
}

/// Transpose of a rank-2 tensor.
pub fn transpose(x: &Tensor) -> Result<Tensor> {
    let (m, n) = dims2("transpose", x)?;
    let src = x.data();
    let mut data = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            data[j * m + i] = src[i * n + j];
        }
    }
    Ok(Tensor::from_op(
        vec![n, m],
        data,
        vec![x.clone()],
        Box::new(move |g, _| {
            let mut dx = vec![0.0; m * n];
            for j in 0..n {
                for i in 0..m {
                    dx[i * n + j] = g[j * m + i];
                }
            }
            vec![Some(dx)]
        }),
        "transpose",
    ))
}

/// Elementwise sum of two same-shape tensors.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(|g, _| vec![Some(g.to_vec()), Some(g.to_vec())]),
        "add",
    ))
}

/// `x[m,n] + bias[n]` broadcast over rows.
pub fn add_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (m, n) = dims2("add_bias", x)?;
    if bias.shape() != [n] {
        return Err(NumError::Shape {
            op: "add_bias",
            lhs: x.shape().to_vec(),
            rhs: bias.shape().to_vec(),
        });
    }
    let b = bias.data();
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| v + b[i % n])
        .collect();
    Ok(Tensor::from_op(
        vec![m, n],
        data,
        vec![x.clone(), bias.clone()],
        Box::new(move |g, inner| {
            let dx = Some(g.to_vec());
            let db = if inner.parents[1].requires_grad() {
                let mut acc = vec![0.0; n];
                for row in g.chunks(n) {
                    for (a, v) in acc.iter_mut().zip(row) {
                        *a += v;
                    }
                }
                Some(acc)
            } else {
                None
            };
            vec![dx, db]
        }),
        "add_bias",
    ))
}

/// Multiply every element by a constant.
pub fn scale(x: &Tensor, c: f64) -> Tensor {
    let data = x.data().iter().map(|v| v * c).collect();
    Tensor::from_op(
        x.shape().to_vec(),
        data,
        vec![x.clone()],
        Box::new(move |g, _| vec![Some(g.iter().map(|v| v * c).collect())]),
        "scale",
    )
}

/// Elementwise product of two same-shape tensors.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(|g, inner| {
            let a = &inner.parents[0];
            let b = &inner.parents[1];
            let da = if a.requires_grad() {
                Some(g.iter().zip(b.data()).map(|(gv, bv)| gv * bv).collect())
            } else {
                None
            };
            let db = if b.requires_grad() {
                Some(g.iter().zip(a.data()).map(|(gv, av)| gv * av).collect())
            } else {
                None
            };
            vec![da, db]
        }),
        "mul",
    ))
}

/// Broadcast a scalar tensor to a length-`n` vector.
pub fn broadcast_scalar(x: &Tensor, n: usize) -> Tensor {
    assert_eq!(x.len(), 1);
    let v = x.data()[0];
    Tensor::from_op(
        vec![n],
        vec![v; n],
        vec![x.clone()],
        Box::new(|g, _| vec![Some(vec![g.iter().sum()])]),
        "broadcast_scalar",
    )
}

/// Rectified linear unit.
pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|v| v.max(0.0)).collect();
    Tensor::from_op(
        x.shape().to_vec(),
        data,
        vec![x.clone()],
        Box::new(|g, inner| {
            let x = inner.parents[0].data();
            vec![Some(
                g.iter()
                    .zip(x)
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect(),
            )]
        }),
        "relu",
    )
}

/// Sum of all elements, as a scalar.
pub fn sum_all(x: &Tensor) -> Tensor {
    let s = x.data().iter().sum();
    let n = x.len();
    Tensor::from_op(
        vec![],
        vec![s],
        vec![x.clone()],
        Box::new(move |g, _| vec![Some(vec![g[0]; n])]),
        "sum_all",
    )
}

/// Mean of all elements, as a scalar.
pub fn mean_all(x: &Tensor) -> Tensor {
    let n = x.len().max(1) as f64;
    scale(&sum_all(x), 1.0 / n)
}

/// Row-wise softmax over the last dimension with an optional boolean mask.
///
/// Forbidden positions receive probability exactly 0 and the remaining
/// entries renormalize. A row with no allowed position is an error.
pub fn softmax_rows(x: &Tensor, mask: Option<&Arc<Vec<bool>>>) -> Result<Tensor> {
    let (rows, n) = match x.shape() {
        [n] => (1usize, *n),
        [r, c] => (*r, *c),
        _ => {
            return Err(NumError::Shape {
                op: "softmax_rows",
                lhs: x.shape().to_vec(),
                rhs: vec![],
            })
        }
    };
    if let Some(m) = mask {
        if m.len() != rows * n {
            return Err(NumError::Shape {
                op: "softmax_rows",
                lhs: x.shape().to_vec(),
                rhs: vec![m.len()],
            });
        }
    }
    let src = x.data();
    let mut data = vec![0.0; rows * n];
    for r in 0..rows {
        let row = &src[r * n..(r + 1) * n];
        let allowed = |j: usize| mask.map_or(true, |m| m[r * n + j]);
        let mut max = f64::NEG_INFINITY;
        for j in 0..n {
            if allowed(j) && row[j] > max {
                max = row[j];
            }
        }
        if max == f64::NEG_INFINITY {
            return Err(NumError::MaskAllForbidden { row: r });
        }
        let out = &mut data[r * n..(r + 1) * n];
        let mut sum = 0.0;
        for j in 0..n {
            if allowed(j) {
                let e = (row[j] - max).exp();
                out[j] = e;
                sum += e;
            }
        }
        for o in out.iter_mut() {
            *o /= sum;
        }
        // Exact zeros on forbidden positions regardless of rounding.
        if mask.is_some() {
            for (j, o) in out.iter_mut().enumerate() {
                if !allowed(j) {
                    *o = 0.0;
                }
            }
        }
    }
    let mask_for_back = mask.cloned();
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        data,
        vec![x.clone()],
        Box::new(move |g, inner| {
            let y = &inner.data;
            let mut dx = vec![0.0; y.len()];
            for r in 0..rows {
                let yr = &y[r * n..(r + 1) * n];
                let gr = &g[r * n..(r + 1) * n];
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                let dr = &mut dx[r * n..(r + 1) * n];
                for j in 0..n {
                    dr[j] = yr[j] * (gr[j] - dot);
                }
            }
            let _ = &mask_for_back;
            vec![Some(dx)]
        }),
        "softmax_rows",
    ))
}

const LN_EPS: f64 = 1e-5;

/// Layer normalization over the last dimension with learned gain and bias.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (rows, n) = dims2("layer_norm", x)?;
    if gain.shape() != [n] || bias.shape() != [n] {
        return Err(NumError::Shape {
            op: "layer_norm",
            lhs: x.shape().to_vec(),
            rhs: gain.shape().to_vec(),
        });
    }
    let src = x.data();
    let g = gain.data();
    let b = bias.data();
    let mut data = vec![0.0; rows * n];
    let mut xhat = vec![0.0; rows * n];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let row = &src[r * n..(r + 1) * n];
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        inv_std[r] = inv;
        for j in 0..n {
            let h = (row[j] - mean) * inv;
            xhat[r * n + j] = h;
            data[r * n + j] = h * g[j] + b[j];
        }
    }
    let xhat = Arc::new(xhat);
    let inv_std = Arc::new(inv_std);
    let xhat_b = Arc::clone(&xhat);
    let inv_b = Arc::clone(&inv_std);
    Ok(Tensor::from_op(
        vec![rows, n],
        data,
        vec![x.clone(), gain.clone(), bias.clone()],
        Box::new(move |gout, inner| {
            let gain = inner.parents[1].data();
            let nf = n as f64;
            let mut dx = vec![0.0; rows * n];
            let mut dgain = vec![0.0; n];
            let mut dbias = vec![0.0; n];
            for r in 0..rows {
                let gr = &gout[r * n..(r + 1) * n];
                let hr = &xhat_b[r * n..(r + 1) * n];
                let inv = inv_b[r];
                let mut sum_gg = 0.0;
                let mut sum_ggh = 0.0;
                for j in 0..n {
                    let gg = gr[j] * gain[j];
                    sum_gg += gg;
                    sum_ggh += gg * hr[j];
                    dgain[j] += gr[j] * hr[j];
                    dbias[j] += gr[j];
                }
                let dr = &mut dx[r * n..(r + 1) * n];
                for j in 0..n {
                    let gg = gr[j] * gain[j];
                    dr[j] = inv * (gg - sum_gg / nf - hr[j] * sum_ggh / nf);
                }
            }
            let dgain = inner.parents[1].requires_grad().then_some(dgain);
            let dbias = inner.parents[2].requires_grad().then_some(dbias);
            vec![Some(dx), dgain, dbias]
        }),
        "layer_norm",
    ))
}

/// Concatenate rank-2 tensors along the column axis.
pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
    assert!(!parts.is_empty());
    let (rows, _) = dims2("concat_cols", &parts[0])?;
    let mut widths = Vec::with_capacity(parts.len());
    let mut total = 0usize;
    for p in parts {
        let (r, c) = dims2("concat_cols", p)?;
        if r != rows {
            return Err(NumError::Shape {
                op: "concat_cols",
                lhs: parts[0].shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
        widths.push(c);
        total += c;
    }
    let mut data = vec![0.0; rows * total];
    let mut offset = 0;
    for (p, &w) in parts.iter().zip(&widths) {
        let src = p.data();
        for r in 0..rows {
            data[r * total + offset..r * total + offset + w]
                .copy_from_slice(&src[r * w..(r + 1) * w]);
        }
        offset += w;
    }
    let widths_b = widths.clone();
    Ok(Tensor::from_op(
        vec![rows, total],
        data,
        parts.to_vec(),
        Box::new(move |g, _| {
            let mut grads = Vec::with_capacity(widths_b.len());
            let mut offset = 0;
            for &w in &widths_b {
                let mut dp = vec![0.0; rows * w];
                for r in 0..rows {
                    dp[r * w..(r + 1) * w]
                        .copy_from_slice(&g[r * total + offset..r * total + offset + w]);
                }
                grads.push(Some(dp));
                offset += w;
            }
            grads
        }),
        "concat_cols",
    ))
}

/// Columns `[start, start+width)` of a rank-2 tensor.
pub fn slice_cols(x: &Tensor, start: usize, width: usize) -> Result<Tensor> {
    let (rows, n) = dims2("slice_cols", x)?;
    if start + width > n {
        return Err(NumError::Shape {
            op: "slice_cols",
            lhs: x.shape().to_vec(),
            rhs: vec![start, width],
        });
    }
    let src = x.data();
    let mut data = vec![0.0; rows * width];
    for r in 0..rows {
        data[r * width..(r + 1) * width]
            .copy_from_slice(&src[r * n + start..r * n + start + width]);
    }
    Ok(Tensor::from_op(
        vec![rows, width],
        data,
        vec![x.clone()],
        Box::new(move |g, _| {
            let mut dx = vec![0.0; rows * n];
            for r in 0..rows {
                dx[r * n + start..r * n + start + width]
                    .copy_from_slice(&g[r * width..(r + 1) * width]);
            }
            vec![Some(dx)]
        }),
        "slice_cols",
    ))
}

/// Gather rows of `table[v, d]` by token id.
pub fn embedding_lookup(ids: &[usize], table: &Tensor) -> Result<Tensor> {
    let (v, d) = dims2("embedding_lookup", table)?;
    for &id in ids {
        if id >= v {
            return Err(NumError::Invalid(format!(
                "embedding id {id} out of range for table with {v} rows"
            )));
        }
    }
    let l = ids.len();
    let src = table.data();
    let mut data = vec![0.0; l * d];
    for (i, &id) in ids.iter().enumerate() {
        data[i * d..(i + 1) * d].copy_from_slice(&src[id * d..(id + 1) * d]);
    }
    let ids_b: Arc<Vec<usize>> = Arc::new(ids.to_vec());
    Ok(Tensor::from_op(
        vec![l, d],
        data,
        vec![table.clone()],
        Box::new(move |g, _| {
            let mut dt = vec![0.0; v * d];
            for (i, &id) in ids_b.iter().enumerate() {
                for j in 0..d {
                    dt[id * d + j] += g[i * d + j];
                }
            }
            vec![Some(dt)]
        }),
        "embedding_lookup",
    ))
}

/// Relative-position attention scores (keys-only, shared across heads).
///
/// `out[i][j] = q[i] . table[clip(j - i, -k, k) + k]` for `q[l, d_k]` and a
/// `[2k+1, d_k]` table of learned relative embeddings.
pub fn rpe_scores(q: &Tensor, table: &Tensor, clip: usize) -> Result<Tensor> {
    let (l, dk) = dims2("rpe_scores", q)?;
    let (rows, dk2) = dims2("rpe_scores", table)?;
    if rows != 2 * clip + 1 || dk != dk2 {
        return Err(NumError::Shape {
            op: "rpe_scores",
            lhs: q.shape().to_vec(),
            rhs: table.shape().to_vec(),
        });
    }
    let k = clip as isize;
    let idx = move |i: usize, j: usize| -> usize {
        ((j as isize - i as isize).clamp(-k, k) + k) as usize
    };
    // P = q @ table^T, then gather by clipped relative distance.
    let p = mm_nt(q.data(), l, dk, table.data(), rows);
    let mut data = vec![0.0; l * l];
    for i in 0..l {
        for j in 0..l {
            data[i * l + j] = p[i * rows + idx(i, j)];
        }
    }
    Ok(Tensor::from_op(
        vec![l, l],
        data,
        vec![q.clone(), table.clone()],
        Box::new(move |g, inner| {
            let q = &inner.parents[0];
            let table = &inner.parents[1];
            let mut gp = vec![0.0; l * rows];
            for i in 0..l {
                for j in 0..l {
                    gp[i * rows + idx(i, j)] += g[i * l + j];
                }
            }
            let dq = if q.requires_grad() {
                Some(mm(&gp, l, rows, table.data(), dk))
            } else {
                None
            };
            let dt = if table.requires_grad() {
                Some(mm_tn(&gp, l, rows, q.data(), dk))
            } else {
                None
            };
            vec![dq, dt]
        }),
        "rpe_scores",
    ))
}

/// Summed softmax cross-entropy over rows of `logits[n, v]`, skipping the
/// ignored target id (padding). Returns a scalar; divide by
/// [`count_targets`] for the mean.
pub fn cross_entropy_sum(
    logits: &Tensor,
    targets: &Arc<Vec<usize>>,
    ignore: Option<usize>,
) -> Result<Tensor> {
    let (n, v) = dims2("cross_entropy_sum", logits)?;
    if targets.len() != n {
        return Err(NumError::Shape {
            op: "cross_entropy_sum",
            lhs: logits.shape().to_vec(),
            rhs: vec![targets.len()],
        });
    }
    let src = logits.data();
    let mut loss = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        if Some(t) == ignore {
            continue;
        }
        if t >= v {
            return Err(NumError::Invalid(format!(
                "target id {t} out of range for vocab {v}"
            )));
        }
        let row = &src[i * v..(i + 1) * v];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        loss += lse - row[t];
    }
    let targets_b = Arc::clone(targets);
    Ok(Tensor::from_op(
        vec![],
        vec![loss],
        vec![logits.clone()],
        Box::new(move |g, inner| {
            let src = inner.parents[0].data();
            let gs = g[0];
            let mut dx = vec![0.0; n * v];
            for (i, &t) in targets_b.iter().enumerate() {
                if Some(t) == ignore {
                    continue;
                }
                let row = &src[i * v..(i + 1) * v];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = row.iter().map(|x| (x - max).exp()).sum();
                let dr = &mut dx[i * v..(i + 1) * v];
                for j in 0..v {
                    dr[j] = gs * (row[j] - max).exp() / sum;
                }
                dr[t] -= gs;
            }
            vec![Some(dx)]
        }),
        "cross_entropy_sum",
    ))
}

/// Number of non-ignored targets, the divisor for mean cross-entropy.
pub fn count_targets(targets: &[usize], ignore: Option<usize>) -> usize {
    targets.iter().filter(|&&t| Some(t) != ignore).count()
}

/// Mean softmax cross-entropy (sum divided by the non-ignored count).
pub fn cross_entropy_mean(
    logits: &Tensor,
    targets: &Arc<Vec<usize>>,
    ignore: Option<usize>,
) -> Result<Tensor> {
    let count = count_targets(targets, ignore);
    if count == 0 {
        return Err(NumError::Invalid(
            "cross_entropy_mean over zero targets".into(),
        ));
    }
    Ok(scale(
        &cross_entropy_sum(logits, targets, ignore)?,
        1.0 / count as f64,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{backward, finite_diff};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{x} vs {y} (tol {tol})");
        }
    }

    #[test]
    fn matmul_ones() {
        let a = Tensor::from_vec(&[2, 3], vec![1.0; 6]);
        let b = Tensor::from_vec(&[3, 2], vec![1.0; 6]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 2]);
        assert_eq!(c.data(), &[3.0, 3.0, 3.0, 3.0]);
    }

    #[test]
    fn matmul_shape_error_reports_both_shapes() {
        let a = Tensor::from_vec(&[2, 3], vec![0.0; 6]);
        let b = Tensor::from_vec(&[2, 2], vec![0.0; 4]);
        match matmul(&a, &b) {
            Err(NumError::Shape { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 2]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn softmax_uniform() {
        let x = Tensor::from_vec(&[3], vec![0.0, 0.0, 0.0]);
        let y = softmax_rows(&x, None).unwrap();
        assert_close(y.data(), &[1.0 / 3.0; 3], 1e-15);
    }

    #[test]
    fn softmax_mask_renormalizes_and_zeroes() {
        let x = Tensor::from_vec(&[3], vec![5.0, 1.0, 1.0]);
        let mask = Arc::new(vec![false, true, true]);
        let y = softmax_rows(&x, Some(&mask)).unwrap();
        assert_eq!(y.data()[0], 0.0);
        assert_eq!(y.data()[1], 0.5);
        assert_eq!(y.data()[2], 0.5);
    }

    #[test]
    fn softmax_all_forbidden_row_is_an_error() {
        let x = Tensor::from_vec(&[2, 2], vec![0.0; 4]);
        let mask = Arc::new(vec![true, true, false, false]);
        match softmax_rows(&x, Some(&mask)) {
            Err(NumError::MaskAllForbidden { row }) => assert_eq!(row, 1),
            other => panic!("expected MaskAllForbidden, got {other:?}"),
        }
    }

    #[test]
    fn cross_entropy_closed_form_gradient() {
        // softmax([0,0]) = [1/2,1/2]; target = class 1 -> grad [0.5, -0.5]
        let logits = Tensor::param(&[1, 2], vec![0.0, 0.0]);
        let targets = Arc::new(vec![1usize]);
        let loss = cross_entropy_mean(&logits, &targets, None).unwrap();
        backward(&loss).unwrap();
        assert_close(&logits.grad().unwrap(), &[0.5, -0.5], 1e-12);
    }

    #[test]
    fn finite_diff_sum_of_squares() {
        let x = Tensor::from_vec(&[2], vec![1.0, 2.0]);
        let g = finite_diff(|t| Ok(sum_all(&mul(t, t)?)), &x, 1e-5).unwrap();
        assert_close(g.data(), &[2.0, 4.0], 1e-6);
    }

    #[test]
    fn finite_diff_constant_is_zero() {
        let x = Tensor::from_vec(&[3], vec![1.0, -1.0, 0.5]);
        let g = finite_diff(|_| Ok(Tensor::scalar(7.0)), &x, 1e-5).unwrap();
        assert_close(g.data(), &[0.0, 0.0, 0.0], 0.0);
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// max relative error between analytic and numeric gradients
    fn grad_check<F>(f: F, x: &Tensor) -> f64
    where
        F: Fn(&Tensor) -> super::Result<Tensor>,
    {
        let loss = f(x).unwrap();
        x.zero_grad();
        backward(&loss).unwrap();
        let analytic = x.grad().unwrap();
        let numeric = finite_diff(&f, x, 1e-5).unwrap();
        analytic
            .iter()
            .zip(numeric.data())
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
            .fold(0.0, f64::max)
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = Tensor::param(&[4, 3], rand_vec(&mut rng, 12));
            let err = grad_check(
                |t| {
                    let m = Tensor::from_vec(&[3, 4], (0..12).map(|i| 0.1 * i as f64).collect());
                    Ok(sum_all(&relu(&matmul(&m, t)?)))
                },
                &w,
            );
            assert!(err < 1e-4, "matmul+relu grad error {err}");

            let x = Tensor::param(&[3, 5], rand_vec(&mut rng, 15));
            let mask: Arc<Vec<bool>> = Arc::new((0..15).map(|i| i % 3 != 1 || i < 5).collect());
            let err = grad_check(|t| Ok(sum_all(&mul(&softmax_rows(t, Some(&mask))?, t)?)), &x);
            assert!(err < 1e-4, "masked softmax grad error {err}");

            let g = Tensor::param(&[4], rand_vec(&mut rng, 4));
            let xs = Tensor::from_vec(&[2, 4], rand_vec(&mut rng, 8));
            let b = Tensor::from_vec(&[4], rand_vec(&mut rng, 4));
            let err = grad_check(|t| Ok(sum_all(&layer_norm(&xs, t, &b)?)), &g);
            assert!(err < 1e-4, "layer_norm gain grad error {err}");

            let q = Tensor::param(&[4, 3], rand_vec(&mut rng, 12));
            let table = Tensor::from_vec(&[5, 3], rand_vec(&mut rng, 15));
            let err = grad_check(|t| Ok(sum_all(&rpe_scores(t, &table, 2)?)), &q);
            assert!(err < 1e-4, "rpe q grad error {err}");
        }
    }

    #[test]
    fn embedding_backward_scatters() {
        let table = Tensor::param(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let out = embedding_lookup(&[2, 0, 2], &table).unwrap();
        assert_eq!(out.data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let loss = sum_all(&out);
        backward(&loss).unwrap();
        assert_eq!(table.grad().unwrap(), vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn slice_and_concat_are_inverse() {
        let x = Tensor::from_vec(&[2, 4], (0..8).map(|v| v as f64).collect());
        let a = slice_cols(&x, 0, 2).unwrap();
        let b = slice_cols(&x, 2, 2).unwrap();
        let y = concat_cols(&[a, b]).unwrap();
        assert_eq!(y.data(), x.data());
    }
}
